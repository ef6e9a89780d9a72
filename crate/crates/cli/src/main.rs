fn main() {
    std::process::exit(sgr_cli::parse_and_dispatch(std::env::args_os()));
}

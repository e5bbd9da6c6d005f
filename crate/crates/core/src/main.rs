fn main() {
    std::process::exit(rflab::cli::run_cli(std::env::args_os()));
}

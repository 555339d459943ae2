fn main() {
    std::process::exit(iterrag_cli::run_cli(std::env::args_os()));
}

fn main() {
    std::process::exit(dgmd_cli::run_cli(std::env::args_os()));
}

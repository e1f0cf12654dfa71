fn main() {
    std::process::exit(ambigzsl_cli::run(std::env::args_os()));
}

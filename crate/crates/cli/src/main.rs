fn main() {
    std::process::exit(ergo_cli::run(std::env::args_os()));
}

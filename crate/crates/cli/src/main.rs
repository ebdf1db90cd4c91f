fn main() {
    std::process::exit(stokolmo_cli::run(std::env::args_os()));
}

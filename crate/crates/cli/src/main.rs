fn main() {
    std::process::exit(stylegen_cli::run(std::env::args_os()));
}

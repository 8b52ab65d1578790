fn main() {
    std::process::exit(diffpogan_cli::run(std::env::args_os()));
}

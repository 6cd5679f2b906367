fn main() {
    std::process::exit(ircard::cli::run(std::env::args_os()));
}

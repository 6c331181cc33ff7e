fn main() {
    std::process::exit(csode::cli::run(std::env::args_os()));
}

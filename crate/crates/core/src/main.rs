fn main() {
    std::process::exit(velopick::cli::run(std::env::args_os()));
}

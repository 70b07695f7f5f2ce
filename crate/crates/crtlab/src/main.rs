fn main() {
    std::process::exit(crtlab::cli::run(std::env::args_os()));
}

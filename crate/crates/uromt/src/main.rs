fn main() {
    std::process::exit(uromt::cli::run(std::env::args_os()));
}

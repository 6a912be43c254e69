fn main() {
    std::process::exit(adast::cli::run(std::env::args_os()));
}

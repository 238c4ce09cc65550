fn main() {
    std::process::exit(riskinv::cli::run(std::env::args_os()));
}

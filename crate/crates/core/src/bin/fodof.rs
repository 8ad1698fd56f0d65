fn main() {
    std::process::exit(fodof::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(splitproof::cli::run(std::env::args_os()));
}

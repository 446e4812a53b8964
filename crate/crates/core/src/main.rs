fn main() {
    std::process::exit(entmark::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(liabil::cli::run(std::env::args_os()));
}

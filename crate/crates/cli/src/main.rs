fn main() {
    std::process::exit(ssal::cli::run(std::env::args_os()));
}

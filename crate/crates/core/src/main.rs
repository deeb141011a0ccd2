fn main() {
    std::process::exit(flipfake::cli::run(std::env::args_os()));
}

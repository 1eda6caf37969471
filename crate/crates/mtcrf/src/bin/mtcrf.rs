fn main() {
    std::process::exit(mtcrf::cli::run(std::env::args_os()));
}

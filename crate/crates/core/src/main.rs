fn main() {
    std::process::exit(rfdm::cli::run(std::env::args_os()));
}

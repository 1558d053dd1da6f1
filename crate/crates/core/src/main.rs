fn main() {
    std::process::exit(nvsim::cli::run(std::env::args_os()));
}

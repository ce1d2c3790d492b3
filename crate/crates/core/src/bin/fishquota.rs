fn main() {
    std::process::exit(fishquota::cli::main_with_args(std::env::args().collect()));
}

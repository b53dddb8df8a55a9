fn main() {
    std::process::exit(frontierlab::cli::main_with_args(std::env::args_os()));
}

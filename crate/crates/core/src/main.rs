fn main() {
    std::process::exit(rlae::cli::main_with_args(std::env::args_os()));
}

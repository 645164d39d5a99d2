fn main() {
    std::process::exit(promptcd::cli::main_with_args(std::env::args_os()));
}

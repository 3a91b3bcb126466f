fn main() {
    std::process::exit(phantomforge::cli::main_with_args(std::env::args_os()));
}

fn main() {
    std::process::exit(paramspec::cli::main_with_args(std::env::args_os()));
}

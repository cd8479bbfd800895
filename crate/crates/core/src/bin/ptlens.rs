fn main() {
    std::process::exit(ptlens::cli::main_with_args(std::env::args_os()));
}

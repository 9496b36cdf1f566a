fn main() {
    std::process::exit(avsdf::cli::main_with_args(std::env::args_os()));
}

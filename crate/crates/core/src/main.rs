fn main() {
    std::process::exit(hyperlq::cli::main_with_args(std::env::args_os()));
}

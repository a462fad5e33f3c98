fn main() {
    std::process::exit(subscale::cli::main_with_args(std::env::args_os()));
}

fn main() {
    std::process::exit(lanetopo::cli::main_with_args(std::env::args_os()));
}

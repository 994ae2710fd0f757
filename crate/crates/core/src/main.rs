fn main() {
    std::process::exit(empc::cli::main_with_args(std::env::args_os()));
}

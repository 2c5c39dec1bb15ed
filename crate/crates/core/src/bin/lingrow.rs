fn main() {
    std::process::exit(lingrow::cli::main_with_args(std::env::args_os()));
}

fn main() {
    std::process::exit(odest::cli::main_with_args(std::env::args_os()));
}

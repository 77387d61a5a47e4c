fn main() {
    std::process::exit(onzeta::cli::main_with_args(std::env::args_os()));
}

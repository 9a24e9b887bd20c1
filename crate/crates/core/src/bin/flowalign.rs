fn main() {
    std::process::exit(flowalign::cli::main_with_args(std::env::args_os()));
}

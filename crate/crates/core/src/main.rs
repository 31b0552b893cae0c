fn main() {
    std::process::exit(tactile_flow::cli::main_with_args(std::env::args_os()));
}

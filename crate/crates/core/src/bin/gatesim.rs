fn main() {
    std::process::exit(gatecoord::cli::main_with_args(std::env::args_os()));
}

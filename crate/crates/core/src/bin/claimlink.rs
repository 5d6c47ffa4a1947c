fn main() {
    std::process::exit(claimlink::cli::main_with_args(std::env::args_os()));
}

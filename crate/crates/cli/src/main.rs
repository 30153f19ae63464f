fn main() {
    std::process::exit(lpsphere_cli::main_with_args(std::env::args_os()));
}

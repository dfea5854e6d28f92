fn main() {
    std::process::exit(mmel_cli::main_with_args(std::env::args_os()));
}

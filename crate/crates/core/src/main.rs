fn main() {
    std::process::exit(memshrink::cli::main_with_args(std::env::args_os()));
}

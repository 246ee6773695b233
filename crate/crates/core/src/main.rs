fn main() {
    std::process::exit(ifsdim::cli::main_with_args(std::env::args_os()));
}

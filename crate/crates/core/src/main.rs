fn main() {
    std::process::exit(drdid::cli::main_with(std::env::args_os()));
}

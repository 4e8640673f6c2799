fn main() {
    std::process::exit(semimarkov_hedge::cli::main_with_args(std::env::args_os()));
}

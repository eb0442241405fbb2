fn main() {
    std::process::exit(tinyaot::cli::main_with_args(std::env::args_os()));
}

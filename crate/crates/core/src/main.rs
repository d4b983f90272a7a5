fn main() {
    std::process::exit(gsp4lab::cli::main_with_args(std::env::args_os()));
}

fn main() {
    std::process::exit(shapeprior::cli::main_with_args(std::env::args_os()));
}

fn main() {
    std::process::exit(distill_lab::cli::main_with_args(std::env::args_os()));
}

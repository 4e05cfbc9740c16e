fn main() {
    std::process::exit(delay_cir::cli::main_with_args(std::env::args_os()));
}

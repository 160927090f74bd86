fn main() {
    std::process::exit(fourier_diag::cli::main_with_args(std::env::args_os()));
}

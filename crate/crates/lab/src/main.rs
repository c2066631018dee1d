fn main() {
    bplab::cli::configure_threads();
    std::process::exit(bplab::cli::main_with_args(std::env::args_os()));
}

fn main() {
    std::process::exit(vecsim_core::cli::main_with_args(std::env::args_os()));
}

fn main() {
    std::process::exit(fosr_core::cli::main_with(std::env::args_os()));
}

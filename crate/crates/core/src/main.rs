fn main() {
    std::process::exit(noise_regen::cli::main_with_args(std::env::args_os()));
}

fn main() {
    std::process::exit(semclip::cli::main_with_args(std::env::args_os()));
}

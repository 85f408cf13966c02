fn main() {
    std::process::exit(accesssim::cli::main_with(std::env::args_os()));
}

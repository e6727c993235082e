fn main() {
    std::process::exit(mvfd_cli::main_with(std::env::args_os()));
}

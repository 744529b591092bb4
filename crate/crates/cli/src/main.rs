fn main() {
    std::process::exit(satpose_cli::run(std::env::args_os()));
}

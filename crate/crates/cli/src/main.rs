fn main() {
    std::process::exit(shflow_cli::run(std::env::args_os()));
}

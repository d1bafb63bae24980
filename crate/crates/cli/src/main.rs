fn main() {
    std::process::exit(gridwatch_cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(zeco_cli::run(std::env::args_os()));
}

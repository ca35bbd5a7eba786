fn main() {
    std::process::exit(evograd::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(prenet::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(ihes::cli::run(std::env::args_os()));
}

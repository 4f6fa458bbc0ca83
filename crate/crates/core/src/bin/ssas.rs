fn main() {
    std::process::exit(ssas::cli::run(std::env::args_os()));
}

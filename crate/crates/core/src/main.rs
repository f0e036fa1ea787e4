fn main() {
    std::process::exit(freight_pricing::cli::run(std::env::args_os()));
}

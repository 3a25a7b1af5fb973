fn main() {
    std::process::exit(fibersps::cli::run());
}

fn main() {
    std::process::exit(emtrack::pipeline::cli::run());
}

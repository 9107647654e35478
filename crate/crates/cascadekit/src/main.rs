fn main() {
    std::process::exit(cascadekit::cli::run(std::env::args_os()));
}

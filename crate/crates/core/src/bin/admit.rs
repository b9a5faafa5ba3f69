fn main() {
    std::process::exit(admit_core::cli::run(std::env::args_os()));
}

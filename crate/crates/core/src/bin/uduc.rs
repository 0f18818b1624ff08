fn main() {
    std::process::exit(uduc_core::cli::run(std::env::args_os()));
}

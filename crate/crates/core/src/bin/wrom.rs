fn main() {
    std::process::exit(wrom_core::cli::run_from_args(std::env::args_os()));
}

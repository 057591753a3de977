fn main() {
    std::process::exit(driftcal::cli::main_with_args(std::env::args_os()));
}

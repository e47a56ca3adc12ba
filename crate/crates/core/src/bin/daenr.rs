fn main() {
    std::process::exit(daenr::cli::main_with_args(std::env::args_os()));
}

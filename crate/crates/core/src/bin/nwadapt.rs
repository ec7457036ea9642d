fn main() {
    std::process::exit(nwadapt::cli::main_with_args(std::env::args_os()));
}

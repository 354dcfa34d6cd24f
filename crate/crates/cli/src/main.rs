fn main() {
    std::process::exit(n2vst_cli::main_with_args(std::env::args_os()));
}

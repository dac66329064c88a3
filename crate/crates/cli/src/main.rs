fn main() {
    std::process::exit(amd_cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(hsi_cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(mopinn::cli::run_cli(std::env::args_os()));
}

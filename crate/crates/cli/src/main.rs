fn main() {
    std::process::exit(dirac_cli::run(std::env::args_os()));
}

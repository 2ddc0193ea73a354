fn main() {
    std::process::exit(syngen_cli::run(std::env::args_os()));
}

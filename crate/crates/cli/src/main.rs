fn main() {
    std::process::exit(seplab_cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(rnnctl_cli::run(std::env::args_os()));
}

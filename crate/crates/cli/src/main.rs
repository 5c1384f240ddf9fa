fn main() {
    std::process::exit(xnet_cli::run(std::env::args_os()));
}

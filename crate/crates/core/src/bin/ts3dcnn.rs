fn main() {
    std::process::exit(ts3dcnn::cli::run_cli(std::env::args_os()));
}

fn main() {
    std::process::exit(uavx_cli::run_from(std::env::args_os()));
}

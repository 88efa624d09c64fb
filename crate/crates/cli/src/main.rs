fn main() {
    std::process::exit(pvdet_cli::run(std::env::args_os()));
}

fn main() {
    drsan_cli::init_logging();
    std::process::exit(drsan_cli::dispatch(std::env::args_os()));
}

fn main() {
    std::process::exit(channel_pac::cli::run(std::env::args_os()));
}

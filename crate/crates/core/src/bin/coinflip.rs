fn main() {
    std::process::exit(coinflip::cli::run(std::env::args_os()));
}

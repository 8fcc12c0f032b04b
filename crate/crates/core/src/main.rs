fn main() {
    std::process::exit(fedfront::cli::cli_main(std::env::args_os()));
}

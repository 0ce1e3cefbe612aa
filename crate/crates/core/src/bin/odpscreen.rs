fn main() {
    std::process::exit(odpscreen::cli::run(std::env::args_os()));
}

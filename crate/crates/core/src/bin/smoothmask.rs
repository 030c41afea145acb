fn main() {
    std::process::exit(smoothmask::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(audiosplat::cli::run(std::env::args_os()));
}

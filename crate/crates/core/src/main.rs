fn main() {
    std::process::exit(semlink::cli::run(std::env::args_os()));
}

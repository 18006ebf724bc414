fn main() {
    std::process::exit(gamechurn::cli::run(std::env::args_os()));
}

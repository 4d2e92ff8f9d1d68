fn main() {
    std::process::exit(scaled_bb::cli::run(std::env::args_os()));
}

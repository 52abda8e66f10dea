fn main() {
    std::process::exit(ratealloc::cli::run(std::env::args_os()));
}

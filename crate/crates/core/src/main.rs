fn main() {
    std::process::exit(distdiff::cli::run(std::env::args_os()));
}

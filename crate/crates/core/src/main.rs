fn main() {
    std::process::exit(delaydyn::cli::run(std::env::args_os()));
}

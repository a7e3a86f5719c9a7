fn main() {
    std::process::exit(prmim::harness::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(binloc::cli::run(std::env::args_os()));
}

fn main() {
    std::process::exit(texdesc::cli::run(std::env::args_os()));
}

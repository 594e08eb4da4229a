fn main() {
    std::process::exit(psicert::cli::run(std::env::args_os()));
}

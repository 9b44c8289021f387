fn main() {
    std::process::exit(paracorona::cli::run(std::env::args_os()));
}

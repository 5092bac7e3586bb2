fn main() {
    std::process::exit(salnet::cli::run(std::env::args_os()));
}

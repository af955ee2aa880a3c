fn main() {
    std::process::exit(esi_service::cli::run(std::env::args_os()));
}

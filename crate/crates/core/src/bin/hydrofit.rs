fn main() {
    std::process::exit(hydrofit::cli::run_command(std::env::args_os()));
}

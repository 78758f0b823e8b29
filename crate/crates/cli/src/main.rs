fn main() {
    std::process::exit(onepass_cli::run_command(std::env::args_os()));
}

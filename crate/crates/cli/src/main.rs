fn main() {
    std::process::exit(memjump_cli::cli_dispatch(std::env::args_os()));
}

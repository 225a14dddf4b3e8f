fn main() {
    std::process::exit(rge_gcn::cli::run_cli(std::env::args_os()));
}

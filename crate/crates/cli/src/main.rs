fn main() {
    std::process::exit(bm_lab::run_cli(std::env::args_os()));
}

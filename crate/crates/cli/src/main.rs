fn main() {
    std::process::exit(fluidqoe_cli::dispatch(std::env::args_os()));
}

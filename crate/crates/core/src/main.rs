fn main() {
    std::process::exit(ah_fusion::cli::dispatch(std::env::args_os()));
}

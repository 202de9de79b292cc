fn main() {
    std::process::exit(cvl_core::cli::dispatch(std::env::args_os()));
}

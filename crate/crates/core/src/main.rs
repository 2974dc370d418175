fn main() {
    std::process::exit(cot_curate::cli::dispatch(std::env::args_os()));
}

fn main() {
    std::process::exit(neindex::cli::dispatch(std::env::args_os()));
}

fn main() {
    let code = lidkit::cli::dispatch(std::env::args_os());
    std::process::exit(code);
}

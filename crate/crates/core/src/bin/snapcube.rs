fn main() {
    snapcube::cli::init_logging();
    let code = snapcube::cli::run(std::env::args_os(), &mut std::io::stdout().lock());
    std::process::exit(code);
}

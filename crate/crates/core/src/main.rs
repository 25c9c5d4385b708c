fn main() {
    std::process::exit(scrape_audit::cli::run(std::env::args_os()));
}

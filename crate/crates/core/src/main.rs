fn main() {
    epigraph::cli::init_logging();
    let code = epigraph::cli::run(std::env::args_os());
    let code = if code == 0 && epigraph::cli::logged_errors() > 0 { 1 } else { code };
    std::process::exit(code);
}

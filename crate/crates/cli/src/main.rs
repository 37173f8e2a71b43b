use std::io::Write;

fn main() {
    if let Err(e) = anchorkit_cli::configure_threads() {
        eprintln!("error: {e}");
        std::process::exit(anchorkit_cli::EXIT_CONFIG);
    }
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let mut err = std::io::stderr();
    let code = anchorkit_cli::run_from(std::env::args_os(), &mut out, &mut err);
    let _ = out.flush();
    std::process::exit(code);
}

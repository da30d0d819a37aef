fn main() {
    let stdout = std::io::stdout();
    if let Err(e) = mmfed_cli::run(std::env::args_os(), &mut stdout.lock()) {
        eprintln!("mmfed: {e}");
        std::process::exit(e.exit_code());
    }
}

use clap::Parser;

fn main() {
    let cli = qrload::cli::Cli::parse();
    if let Err(e) = qrload::cli::run(cli) {
        eprintln!("qrload: {e}");
        std::process::exit(e.exit_code());
    }
}

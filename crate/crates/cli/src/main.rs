use clap::Parser;
use lorec_cli::args::Cli;

fn main() {
    let cli = Cli::parse();
    if let Err(e) = lorec_cli::run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

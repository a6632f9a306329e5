use clap::Parser;

fn main() {
    let cli = amil_cli::Cli::parse();
    if let Err(e) = amil_cli::run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.code);
    }
}

use clap::Parser;

fn main() {
    let cli = gatecam::cli::Cli::parse();
    if let Err(e) = gatecam::cli::execute(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

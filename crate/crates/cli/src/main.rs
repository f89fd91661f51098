use clap::Parser;

fn main() {
    let cli = misc_cli::commands::Cli::parse();
    if let Err(e) = misc_cli::commands::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

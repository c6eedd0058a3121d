use clap::Parser;

fn main() {
    let cli = astrolens_cli::Cli::parse();
    if let Err(e) = astrolens_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

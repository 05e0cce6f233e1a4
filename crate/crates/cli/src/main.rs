use clap::Parser;

use swapvae_cli::commands::{execute, Cli};

fn main() {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(outcome) => {
            println!("{}", outcome.out_dir.join(swapvae_cli::manifest::MANIFEST_FILE).display());
            if let Some(e) = outcome.failure {
                eprintln!("swapvae: {e}");
                std::process::exit(e.exit_code());
            }
        }
        Err(e) => {
            eprintln!("swapvae: {e}");
            std::process::exit(e.exit_code());
        }
    }
}

use std::error::Error as _;

use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = vsde_cli::Cli::parse();
    if let Err(err) = vsde_cli::run(cli) {
        let message = err.to_string();
        eprintln!("error: {message}");
        let mut source = err.source();
        while let Some(s) = source {
            let text = s.to_string();
            if !message.contains(&text) {
                eprintln!("  caused by: {text}");
            }
            source = s.source();
        }
        std::process::exit(err.exit_code());
    }
}

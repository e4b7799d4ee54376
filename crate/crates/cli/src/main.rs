use clap::Parser;
use shotcast_cli::app::{run, Cli};

fn main() {
    let result = run(Cli::parse());
    if let Err(e) = &result {
        eprintln!("error: {e}");
    }
    std::process::exit(shotcast_cli::app::exit_code(&result));
}

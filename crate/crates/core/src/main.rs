use clap::Parser;
use mvassoc::cli::{run, Cli};

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(e.category().exit_code());
    }
}

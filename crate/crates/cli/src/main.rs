use clap::Parser;
use qsnn_cli::{run, Cli};

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("qsnn: {e}");
        std::process::exit(e.exit_code());
    }
}

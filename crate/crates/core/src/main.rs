use clap::Parser;
use nqe_dqc1::cli::{init_logging, run, Cli};

fn main() {
    let cli = Cli::parse();
    init_logging();
    if let Err(e) = run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

use clap::Parser;

use transferlab::cli::{execute, Cli};

fn main() {
    std::process::exit(execute(Cli::parse()));
}

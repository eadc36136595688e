use clap::Parser;
use dfa_fusion_cli::{run, Cli};

fn main() {
    std::process::exit(run(Cli::parse()));
}

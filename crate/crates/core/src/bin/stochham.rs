use clap::Parser;
use stochastic_hamiltonian::cli::{main_with, Cli};

fn main() {
    std::process::exit(main_with(Cli::parse()));
}

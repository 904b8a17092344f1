use clap::Parser;

use pwgp_cli::args::{Cli, Command};
use pwgp_cli::{commands, exit_code, experiments};

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(args) => commands::cmd_synth(args),
        Command::Fit(args) => commands::cmd_fit(args),
        Command::Sample(args) => commands::cmd_sample(args),
        Command::Score(args) => commands::cmd_score(args),
        Command::Experiment(args) => experiments::cmd_experiment(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err}");
        std::process::exit(exit_code(&err));
    }
}

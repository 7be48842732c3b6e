use std::path::PathBuf;

use clap::{Parser, Subcommand};

use fracpass::cli::{self, Command};

#[derive(Parser)]
#[command(
    name = "fracpass",
    about = "Mountain-pass solver and experiment harness for superlinear \
             exterior-value problems with the fractional Laplacian",
    version
)]
struct Args {
    #[command(subcommand)]
    cmd: Cmd,

    /// Path to the run configuration file.
    #[arg(long, global = true, default_value = "run.cfg")]
    config: PathBuf,

    /// Output directory (overrides output.dir from the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Seed override (overrides mpt.seed from the config).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker count override (0 keeps the ambient pool).
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print the normalizing constant in both closed forms.
    Constants,
    /// Run the structural condition checkers against the configured model.
    CheckModel,
    /// Solve one mountain-pass problem and write the solution tables.
    Solve,
    /// Verify the mountain-pass geometry without solving.
    Geometry,
    /// Run the continuous-dependence sweep.
    Stability,
    /// Optimize the distributed control over the configured class.
    Control,
    /// Compute discrete eigenpairs and the unboundedness rays.
    Spectrum,
}

fn main() {
    let args = Args::parse();
    let cmd = match args.cmd {
        Cmd::Constants => Command::Constants,
        Cmd::CheckModel => Command::CheckModel,
        Cmd::Solve => Command::Solve,
        Cmd::Geometry => Command::Geometry,
        Cmd::Stability => Command::Stability,
        Cmd::Control => Command::Control,
        Cmd::Spectrum => Command::Spectrum,
    };
    let code = cli::run_from_args(cmd, &args.config, args.out, args.seed, args.workers);
    std::process::exit(code);
}

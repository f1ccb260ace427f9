use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use superskel::commands::{self, RunManifest, EXIT_CONFIG};
use superskel::config::{RunConfig, SimKind};
use superskel::Result;

/// Superprocess skeleton simulator and verification harness.
#[derive(Parser, Debug)]
#[command(name = "superskel", version)]
struct Cli {
    /// Worker threads for replicate campaigns (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check model invariants: w residual, offspring law, step size.
    Validate(Common),
    /// Solve the evolution equations and write the fields as CSV.
    Solve(Common),
    /// Simulate replicates and write event logs and snapshots.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// skeleton, superprocess or dressed (default: campaign.simulate).
        #[arg(long)]
        kind: Option<SimKind>,
    },
    /// Run the configured test battery.
    Verify(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// Config file, or the name of a built-in preset.
    #[arg(long)]
    config: String,
    /// Override a config key, e.g. --set campaign.replicates=500.
    #[arg(long = "set", value_name = "K=V")]
    sets: Vec<String>,
    /// Master seed (overrides campaign.seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides output.directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut sets = self.sets.clone();
        if let Some(seed) = self.seed {
            sets.push(format!("campaign.seed={seed}"));
        }
        RunConfig::load(&self.config, &sets)
    }
}

fn print_summary(m: &RunManifest) {
    println!("{} (config {})", m.command, &m.fingerprint[..12]);
    for r in &m.reports {
        println!("  {}", r.summary_line());
    }
    for w in &m.warnings {
        eprintln!("warning: {w}");
    }
    for o in &m.outputs {
        println!("  wrote {o}");
    }
    if let Some(r) = m.first_failure() {
        println!("first failure: {}", r.name);
    }
    println!(
        "{} in {:.1} s",
        if m.pass { "PASS" } else { "FAIL" },
        m.wall_clock_seconds
    );
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if n == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .expect("thread pool is configured once");
    }
    let (common, kind) = match &cli.command {
        Command::Validate(c) | Command::Solve(c) | Command::Verify(c) => (c, None),
        Command::Simulate { common, kind } => (common, *kind),
    };
    let result = common.load().and_then(|cfg| {
        let out = commands::output_dir(&cfg, common.out.as_deref());
        match &cli.command {
            Command::Validate(_) => commands::cmd_validate(&cfg, &out),
            Command::Solve(_) => commands::cmd_solve(&cfg, &out),
            Command::Simulate { .. } => commands::cmd_simulate(&cfg, kind, &out),
            Command::Verify(_) => commands::cmd_verify(&cfg, &out),
        }
    });
    match &result {
        Ok(m) => print_summary(m),
        Err(e) => eprintln!("error: {e}"),
    }
    ExitCode::from(commands::exit_code(&result) as u8)
}

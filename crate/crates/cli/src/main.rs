use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use shelab::experiments::{run_scenario, summarize, ExperimentConfig, Task};
use shelab::noise::NoiseRealization;
use shelab::solver::solve_fd;
use shelab::Error;

#[derive(Parser)]
#[command(name = "shelab", version, about = "Monte Carlo experiments for the vector stochastic heat equation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate replicates and record marginals, range statistics and stopping times
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Also write binary dumps of replicate 0 (noise increments and solution)
        #[arg(long)]
        dump: bool,
    },
    /// Local decomposition and oscillation ratios across rho
    Decompose(Common),
    /// Good-window search along the scale ladder
    Window(Common),
    /// Good-rectangle covers of the range
    Cover(Common),
    /// Hitting probabilities of small balls across dimensions
    Hit(Common),
    /// Oscillation tail fits
    Tails(Common),
    /// Calibrate K_tilde, the stopping level K and the u_hat constant
    Calibrate(Common),
    /// Run every task and write all tables consumed by the plotting scripts
    ReportData(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario configuration (JSON); defaults are used when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed, overriding the configuration
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicates: Option<usize>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self, tasks: &[Task]) -> shelab::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_json_file(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(r) = self.replicates {
            cfg.replicates = r;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = Some(o.clone());
        }
        cfg.tasks = tasks.to_vec();
        cfg.validate()?;
        Ok(cfg)
    }
}

fn dump_first(cfg: &ExperimentConfig) -> shelab::Result<()> {
    let Some(dir) = &cfg.out_dir else {
        return Err(Error::Config("--dump needs --out".into()));
    };
    let noise = NoiseRealization::generate(cfg.grid.build()?, cfg.d, cfg.seed, 0)?;
    noise.materialize().write_dump(&dir.join("noise_rep0.bin"))?;
    solve_fd(&cfg.solver()?, &noise)?.write_dump(&dir.join("u_rep0.bin"))
}

fn run(cli: Cli) -> shelab::Result<()> {
    let (common, tasks, dump) = match &cli.command {
        Command::Simulate { common, dump } => (common, vec![Task::Simulate], *dump),
        Command::Decompose(c) => (c, vec![Task::Decompose], false),
        Command::Window(c) => (c, vec![Task::Window], false),
        Command::Cover(c) => (c, vec![Task::Cover], false),
        Command::Hit(c) => (c, vec![Task::Hit], false),
        Command::Tails(c) => (c, vec![Task::Tails], false),
        Command::Calibrate(c) => (c, vec![Task::Calibrate], false),
        Command::ReportData(c) => (c, Task::ALL.to_vec(), false),
    };
    let cfg = common.load(&tasks)?;
    let bundle = run_scenario(&cfg)?;
    if dump {
        dump_first(&cfg)?;
    }
    print!("{}", summarize(&bundle.aggregate));
    for f in &bundle.files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}

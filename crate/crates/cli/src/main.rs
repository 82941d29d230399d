//! `fecim` command-line experiment runner.
//!
//! Exit codes: 0 on success, 1 when an experiment fails at run time, 2 when
//! the command line or configuration is invalid.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fecim::experiment::{self, parse_fraction, parse_voltage, ExperimentConfig, ExperimentId, OutputFormat};
use fecim::variation::Domain;

const OUT_DIR_ENV: &str = "FECIM_OUT_DIR";

#[derive(Parser)]
#[command(name = "fecim", version, about = "Variation-aware 1FeFET-1C compute-in-memory experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its table and manifest.
    Run(RunArgs),
    /// Check a configuration and print every problem found.
    Validate(CommonArgs),
    /// List the experiment ids.
    List,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment id; overrides the one in --config.
    experiment: Option<String>,
    /// Output directory [default: $FECIM_OUT_DIR, then the current directory].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Only print output paths.
    #[arg(long, short)]
    quiet: bool,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct CommonArgs {
    /// TOML experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// csv or json.
    #[arg(long, value_parser = |s: &str| s.parse::<OutputFormat>().map_err(|e| e.to_string()))]
    format: Option<OutputFormat>,
    /// Threshold-voltage sigma, e.g. `170mV`; repeat for a sweep.
    #[arg(long = "sigma-vth", value_parser = |s: &str| parse_voltage(s).map_err(|e| e.to_string()))]
    sigma_vth: Vec<f64>,
    /// Relative capacitance sigma, e.g. `5%`; repeat for a sweep.
    #[arg(long = "sigma-cm", value_parser = |s: &str| parse_fraction(s).map_err(|e| e.to_string()))]
    sigma_cm: Vec<f64>,
    /// charge or current; repeat for both.
    #[arg(long, value_parser = |s: &str| s.parse::<Domain>().map_err(|e| e.to_string()))]
    domain: Vec<Domain>,
    /// Monte-Carlo trials (samples per point).
    #[arg(long)]
    trials: Option<usize>,
    /// Rows per column.
    #[arg(long = "n-rows")]
    n_rows: Option<usize>,
    /// Hypervector dimensions for hdc-quality, e.g. `512,2048`.
    #[arg(long, value_delimiter = ',')]
    dims: Vec<usize>,
}

impl CommonArgs {
    fn load(&self, experiment: Option<&str>) -> Result<ExperimentConfig, String> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path).map_err(|e| e.to_string())?,
            None => ExperimentConfig::default(),
        };
        if let Some(id) = experiment {
            cfg.experiment = Some(id.parse::<ExperimentId>().map_err(|e| e.to_string())?);
        }
        if let Some(seed) = self.seed {
            cfg.seed = Some(seed);
        }
        if let Some(format) = self.format {
            cfg.format = format;
        }
        if !self.sigma_vth.is_empty() {
            cfg.plan.sigma_vth_list = self.sigma_vth.clone();
            cfg.sense_margin.sigma_vth = self.sigma_vth[0];
        }
        if !self.sigma_cm.is_empty() {
            cfg.plan.sigma_cm_list = self.sigma_cm.clone();
            cfg.worst_case.sigma_cm_list = self.sigma_cm.clone();
            cfg.sense_margin.sigma_cm = self.sigma_cm[0];
        }
        if !self.domain.is_empty() {
            cfg.transfer.domains = self.domain.clone();
            cfg.hdc.domains = self.domain.clone();
        }
        if let Some(t) = self.trials {
            cfg.plan.trials = t;
            cfg.worst_case.trials = t;
            cfg.sense_margin.trials = t;
        }
        if let Some(n) = self.n_rows {
            cfg.plan.n_rows = n;
        }
        if !self.dims.is_empty() {
            cfg.hdc.dims = self.dims.clone();
        }
        Ok(cfg)
    }
}

fn invalid(msgs: &[String]) -> ExitCode {
    for m in msgs {
        eprintln!("error: {m}");
    }
    ExitCode::from(2)
}

fn run(args: RunArgs) -> ExitCode {
    let cfg = match args.common.load(args.experiment.as_deref()) {
        Ok(c) => c,
        Err(e) => return invalid(&[e]),
    };
    let diags = cfg.validate();
    if !diags.is_empty() {
        return invalid(&diags);
    }
    let out = args
        .out
        .or_else(|| cfg.out_dir.clone())
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    match experiment::run(&cfg, &out) {
        Ok(r) => {
            println!("{}", r.data.display());
            println!("{}", r.manifest.display());
            if !args.quiet {
                println!("{}", r.summary);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => run(args),
        Command::Validate(args) => {
            let cfg = match args.load(None) {
                Ok(c) => c,
                Err(e) => return invalid(&[e]),
            };
            let diags = cfg.validate();
            if diags.is_empty() {
                println!("ok");
                ExitCode::SUCCESS
            } else {
                invalid(&diags)
            }
        }
        Command::List => {
            for id in ExperimentId::ALL {
                println!("{id}");
            }
            ExitCode::SUCCESS
        }
    }
}

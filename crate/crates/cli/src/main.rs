//! Command-line front end: simulation, fitting, model comparison,
//! assessment, and posterior summaries, all reproducible from a seed.

mod commands;
mod config;
mod outputs;

use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use hsc_core::evidence::Conditioning;
use hsc_core::mcmc::{PathMoves, Pooling, RatePrior};
use hsc_core::model::{EventKind, PopulationState};
use hsc_core::simulate::{DieOutRule, SampleSizeRule, Spacing};

/// Errors split by exit code: usage mistakes exit 2, data problems exit 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => f.write_str(m),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "hsc",
    version,
    about = "Simulation and Bayesian inference for two-compartment stem-cell kinetics"
)]
struct Cli {
    /// Flat `key = value` configuration file; explicit flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Cap worker threads. Scheduling only: results never depend on it.
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a virtual cohort and write it as a dataset.
    Simulate(SimulateArgs),
    /// Fit a model variant to a dataset by MCMC over latent event paths.
    Fit(FitArgs),
    /// Integrated likelihoods and Bayes factors from finished fits.
    Evidence(EvidenceArgs),
    /// Compare a fitted or specified model against observed animals.
    Assess(AssessArgs),
    /// Posterior summaries and trace diagnostics from draw files.
    Summarize(SummarizeArgs),
}

#[derive(Args)]
pub struct SimulateArgs {
    /// Model variant, e.g. SCD or CDAsAp.
    #[arg(long)]
    model: Option<String>,
    /// Niche cap on compartment 1 (absent = uncapped).
    #[arg(long)]
    cap: Option<u64>,
    /// Rate assignment, e.g. `lambda=0.09`; repeatable (config: `rate.<name>`).
    #[arg(long = "rate", value_name = "NAME=VALUE")]
    rates: Vec<RateAssign>,
    /// Number of virtual animals.
    #[arg(long = "n-animals")]
    n_animals: Option<usize>,
    /// Simulation horizon in weeks.
    #[arg(long)]
    horizon: Option<f64>,
    /// Biopsy cadence: `fixed:4` or `uniform:2,6` [default: uniform:2,6].
    #[arg(long)]
    spacing: Option<SpacingArg>,
    /// Cells typed per biopsy: `fixed:40` or `resample:38,45,40`.
    #[arg(long = "sample-size")]
    sample_size: Option<SampleSizeArg>,
    /// Initial counts `hsc_d,hsc_g,clone_d,clone_g` [default: 10,10,5,5].
    #[arg(long)]
    initial: Option<InitialArg>,
    /// Die-out rule: compartment1 or both.
    #[arg(long = "die-out")]
    die_out: Option<DieOutArg>,
    /// Master seed; all randomness derives from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct FitArgs {
    /// Dataset CSV (animal_id,week,sample_size,d_count).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Model variant to fit.
    #[arg(long)]
    model: Option<String>,
    /// Niche cap on compartment 1.
    #[arg(long)]
    cap: Option<u64>,
    /// Rate prior: `gamma:5,50` or `uniform:0,0.5` [default: gamma:5,50].
    #[arg(long)]
    prior: Option<PriorArg>,
    /// `pooled` (shared rates) or `per-animal`.
    #[arg(long)]
    pooling: Option<Pooling>,
    /// Total MCMC cycles.
    #[arg(long)]
    iters: Option<u64>,
    /// Cycles discarded before keeping draws.
    #[arg(long)]
    burnin: Option<u64>,
    /// Keep every n-th cycle after burn-in.
    #[arg(long)]
    thin: Option<u64>,
    /// Master seed; all randomness derives from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Latent-path horizon override (default: last observation week).
    #[arg(long)]
    horizon: Option<f64>,
    /// Initial counts `hsc_d,hsc_g,clone_d,clone_g`.
    #[arg(long)]
    initial: Option<InitialArg>,
    /// Path moves per animal per cycle: `auto` or `fixed:200`.
    #[arg(long = "path-moves")]
    path_moves: Option<PathMovesArg>,
    /// Pin a rate, e.g. `mu=0.05`; repeatable (config: `pin.<name>`).
    #[arg(long = "pin", value_name = "NAME=VALUE")]
    pins: Vec<RateAssign>,
    /// HPD mass for the written summary.
    #[arg(long)]
    mass: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct EvidenceArgs {
    /// Finished fit as `name=dir` (or a bare dir); repeatable, first is the
    /// Bayes-factor baseline.
    #[arg(long = "fit", value_name = "NAME=DIR", required = true)]
    fits: Vec<FitRef>,
    /// Conditioning: `path` or a rate name (lambda, nu, mu, eta, alpha).
    #[arg(long)]
    condition: Option<Conditioning>,
    /// Also report a trimmed estimate dropping this fraction of the smallest
    /// likelihoods.
    #[arg(long)]
    trim: Option<f64>,
    /// Dataset CSV; required when conditioning on a rate.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Master seed for the inner chains (rate conditioning).
    #[arg(long)]
    seed: Option<u64>,
    /// Inner-chain cycles per retained draw.
    #[arg(long = "inner-iters")]
    inner_iters: Option<u64>,
    /// Inner-chain burn-in.
    #[arg(long = "inner-burnin")]
    inner_burnin: Option<u64>,
    /// Inner-chain thinning.
    #[arg(long = "inner-thin")]
    inner_thin: Option<u64>,
    /// How many posterior draws of the conditioned rate to use (evenly
    /// strided through the kept draws).
    #[arg(long = "inner-draws")]
    inner_draws: Option<usize>,
    /// Heterogeneity Bayes factor: `POOLED_FIT,PER_ANIMAL_FIT` (fit names).
    #[arg(long, value_name = "POOLED,PER_ANIMAL")]
    heterogeneity: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct AssessArgs {
    /// Observed dataset CSV the virtual cohort is compared against.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Finished fit directory; the virtual cohort uses its posterior draws.
    #[arg(long)]
    fit: Option<FitRef>,
    /// Cap on posterior draws used from --fit (evenly strided).
    #[arg(long = "max-draws")]
    max_draws: Option<usize>,
    /// Model variant (alternative to --fit; rates via --rate).
    #[arg(long)]
    model: Option<String>,
    /// Niche cap on compartment 1.
    #[arg(long)]
    cap: Option<u64>,
    /// Rate assignment for --model mode; repeatable (config: `rate.<name>`).
    #[arg(long = "rate", value_name = "NAME=VALUE")]
    rates: Vec<RateAssign>,
    /// Virtual cohort size.
    #[arg(long = "n-virtual")]
    n_virtual: Option<usize>,
    /// Horizon (default: last observed week).
    #[arg(long)]
    horizon: Option<f64>,
    /// Biopsy cadence [default: uniform:2,6].
    #[arg(long)]
    spacing: Option<SpacingArg>,
    /// Cells typed per biopsy: `fixed:40`, `resample:38,45`, or `observed`
    /// (pool the observed sample sizes) [default: observed].
    #[arg(long = "sample-size")]
    sample_size: Option<SampleSizeArg>,
    /// Initial counts [default: 10,10,5,5].
    #[arg(long)]
    initial: Option<InitialArg>,
    /// Die-out rule: compartment1 or both.
    #[arg(long = "die-out")]
    die_out: Option<DieOutArg>,
    /// Master seed; all randomness derives from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct SummarizeArgs {
    /// Finished fit as `name=dir` (or a bare dir); repeatable.
    #[arg(long = "fit", value_name = "NAME=DIR", required = true)]
    fits: Vec<FitRef>,
    /// HPD mass.
    #[arg(long)]
    mass: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

/// `name=value` rate assignment.
#[derive(Debug, Clone, Copy)]
pub struct RateAssign {
    pub kind: EventKind,
    pub value: f64,
}

impl FromStr for RateAssign {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let (name, value) = s
            .split_once('=')
            .ok_or_else(|| format!("expected NAME=VALUE, found {s:?}"))?;
        let kind = EventKind::from_rate_name(name.trim())
            .ok_or_else(|| format!("unknown rate {name:?}; expected lambda, nu, mu, eta or alpha"))?;
        let value: f64 =
            value.trim().parse().map_err(|e| format!("invalid value for {name}: {e}"))?;
        Ok(RateAssign { kind, value })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PriorArg(pub RatePrior);

impl FromStr for PriorArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let (family, params) =
            s.split_once(':').ok_or_else(|| format!("expected FAMILY:PARAMS, found {s:?}"))?;
        let nums: Vec<f64> = params
            .split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|e| format!("bad number {p:?}: {e}")))
            .collect::<Result<_, _>>()?;
        match (family, nums.as_slice()) {
            ("gamma", [shape, rate]) => Ok(PriorArg(RatePrior::Gamma { shape: *shape, rate: *rate })),
            ("uniform", [low, upper]) if *low == 0.0 => {
                Ok(PriorArg(RatePrior::Uniform { upper: *upper }))
            }
            ("uniform", [_low, _upper]) => {
                Err("uniform priors start at 0; write uniform:0,<upper>".to_string())
            }
            _ => Err(format!("unknown prior {s:?}; expected gamma:<shape>,<rate> or uniform:0,<upper>")),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SpacingArg(pub Spacing);

impl FromStr for SpacingArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let (kind, params) =
            s.split_once(':').ok_or_else(|| format!("expected KIND:PARAMS, found {s:?}"))?;
        let nums: Vec<f64> = params
            .split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|e| format!("bad number {p:?}: {e}")))
            .collect::<Result<_, _>>()?;
        match (kind, nums.as_slice()) {
            ("fixed", [gap]) => Ok(SpacingArg(Spacing::Fixed(*gap))),
            ("uniform", [min, max]) => Ok(SpacingArg(Spacing::Uniform { min: *min, max: *max })),
            _ => Err(format!("unknown spacing {s:?}; expected fixed:<gap> or uniform:<min>,<max>")),
        }
    }
}

#[derive(Debug, Clone)]
pub enum SampleSizeArg {
    Rule(SampleSizeRule),
    /// Pool the positive observed sample sizes (assess only).
    Observed,
}

impl FromStr for SampleSizeArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "observed" {
            return Ok(SampleSizeArg::Observed);
        }
        let (kind, params) = s
            .split_once(':')
            .ok_or_else(|| format!("expected KIND:PARAMS or observed, found {s:?}"))?;
        match kind {
            "fixed" => {
                let n = params.trim().parse().map_err(|e| format!("bad count {params:?}: {e}"))?;
                Ok(SampleSizeArg::Rule(SampleSizeRule::Fixed(n)))
            }
            "resample" => {
                let pool: Vec<u64> = params
                    .split(',')
                    .map(|p| p.trim().parse::<u64>().map_err(|e| format!("bad count {p:?}: {e}")))
                    .collect::<Result<_, _>>()?;
                Ok(SampleSizeArg::Rule(SampleSizeRule::Resample(pool)))
            }
            _ => Err(format!(
                "unknown sample size {s:?}; expected fixed:<n>, resample:<n,...> or observed"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct InitialArg(pub PopulationState);

impl FromStr for InitialArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let nums: Vec<u64> = s
            .split(',')
            .map(|p| p.trim().parse::<u64>().map_err(|e| format!("bad count {p:?}: {e}")))
            .collect::<Result<_, _>>()?;
        match nums.as_slice() {
            [hsc_d, hsc_g, clone_d, clone_g] => {
                Ok(InitialArg(PopulationState::new(*hsc_d, *hsc_g, *clone_d, *clone_g)))
            }
            _ => Err(format!("expected four counts hsc_d,hsc_g,clone_d,clone_g, found {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PathMovesArg(pub PathMoves);

impl FromStr for PathMovesArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "auto" {
            return Ok(PathMovesArg(PathMoves::Auto));
        }
        match s.split_once(':') {
            Some(("fixed", n)) => {
                let n = n.trim().parse().map_err(|e| format!("bad count {n:?}: {e}"))?;
                Ok(PathMovesArg(PathMoves::Fixed(n)))
            }
            _ => Err(format!("expected auto or fixed:<n>, found {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DieOutArg(pub DieOutRule);

impl FromStr for DieOutArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "compartment1" => Ok(DieOutArg(DieOutRule::Compartment1)),
            "both" => Ok(DieOutArg(DieOutRule::BothCompartments)),
            _ => Err(format!("unknown die-out rule {s:?}; expected compartment1 or both")),
        }
    }
}

/// `name=dir` reference to a finished fit; a bare dir names itself.
#[derive(Debug, Clone)]
pub struct FitRef {
    pub name: String,
    pub dir: PathBuf,
}

impl FromStr for FitRef {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let (name, dir) = match s.split_once('=') {
            Some((name, dir)) => (name.to_string(), dir),
            None => (s.to_string(), s),
        };
        if name.is_empty() || dir.is_empty() {
            return Err(format!("expected NAME=DIR or DIR, found {s:?}"));
        }
        Ok(FitRef { name, dir: PathBuf::from(dir) })
    }
}

impl std::fmt::Display for FitRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let dir = self.dir.display().to_string();
        if self.name == dir {
            write!(f, "{dir}")
        } else {
            write!(f, "{}={dir}", self.name)
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        // Only affects scheduling; ignore a pool that is already running.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let overlay = match config::Overlay::load(cli.config.as_deref()) {
        Ok(o) => o,
        Err(e) => exit_with(e),
    };
    let result = match cli.command {
        Command::Simulate(args) => commands::simulate(args, &overlay),
        Command::Fit(args) => commands::fit(args, &overlay),
        Command::Evidence(args) => commands::evidence(args, &overlay),
        Command::Assess(args) => commands::assess(args, &overlay),
        Command::Summarize(args) => commands::summarize(args, &overlay),
    };
    if let Err(e) = result {
        exit_with(e);
    }
}

fn exit_with(e: CliError) -> ! {
    eprintln!("error: {e}");
    match e {
        CliError::Usage(_) => std::process::exit(2),
        CliError::Data(_) => std::process::exit(1),
    }
}

//! Data-augmentation MCMC for the hidden process.
//!
//! The sampler alternates two blocks. Given the latent paths, the per-cell
//! rates are conditionally conjugate: each active kind's likelihood
//! contribution is `rho^k * exp(-rho * S)` with `k` its event count and `S`
//! the relevant exposure integral, so a `Gamma(a, b)` prior updates to
//! `Gamma(a + k, b + S)` and a `Uniform(0, u)` prior to the same gamma
//! truncated to `(0, u)`. Given the rates, each animal's path is updated by a
//! random walk over path space (insert an event, delete an event, or move an
//! event's time) accepted by Metropolis-Hastings-Green ratios; see
//! [`propose_move`] and [`state_update_sweep`].
//!
//! Rate updates use event counts pooled over labels, since both labeled
//! subprocesses share the rates. Everything is driven by RNG streams derived
//! from `(seed, stream, animal, cycle)`, so runs are reproducible and
//! independent of worker scheduling.

use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Gamma as GammaPosterior};

use crate::dataset::DatasetError;
use crate::model::{
    EventKind, ModelError, ModelSpec, Path, PathError, PopulationState, RateVector,
};
use crate::simulate::SimulateError;

mod chain;
mod moves;

pub use chain::{
    read_draws_jsonl, run_chain, write_draws_jsonl, AnimalDraw, ChainDraws, Checkpoint, Draw,
    GibbsChain,
};
pub use moves::{
    acceptance_log_ratio, propose_move, state_update_sweep, AcceptanceStats, MoveError,
    MoveKind, MoveProposal, PathSummary,
};

#[derive(Debug, thiserror::Error)]
pub enum McmcError {
    #[error(transparent)]
    Path(#[from] PathError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Simulate(#[from] SimulateError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("invalid prior: {message}")]
    InvalidPrior { message: String },
    #[error("invalid chain configuration: {message}")]
    InvalidConfig { message: String },
    #[error("could not find a feasible starting path for animal {animal_id} in {attempts} attempts")]
    InitializationFailure { animal_id: String, attempts: u32 },
    #[error("checkpoint does not match this run: {message}")]
    CheckpointMismatch { message: String },
    #[error("draws are malformed: {message}")]
    MalformedDraws { message: String },
}

/// Prior for one per-cell rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RatePrior {
    Gamma { shape: f64, rate: f64 },
    Uniform { upper: f64 },
}

impl RatePrior {
    /// The conventional diffuse gamma prior, mean 0.1 per week.
    pub fn default_gamma() -> Self {
        RatePrior::Gamma { shape: 5.0, rate: 50.0 }
    }

    /// The conventional flat prior on `(0, 0.5)` per week.
    pub fn default_uniform() -> Self {
        RatePrior::Uniform { upper: 0.5 }
    }

    pub fn validate(&self) -> Result<(), McmcError> {
        let ok = match *self {
            RatePrior::Gamma { shape, rate } => {
                shape.is_finite() && shape > 0.0 && rate.is_finite() && rate > 0.0
            }
            RatePrior::Uniform { upper } => upper.is_finite() && upper > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(McmcError::InvalidPrior { message: format!("{self:?} has non-positive or non-finite parameters") })
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            RatePrior::Gamma { shape, rate } => shape / rate,
            RatePrior::Uniform { upper } => upper / 2.0,
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            RatePrior::Gamma { shape, rate } => rand_distr::Gamma::new(shape, 1.0 / rate)
                .expect("validated parameters")
                .sample(rng),
            RatePrior::Uniform { upper } => upper * rng.random::<f64>(),
        }
    }

    pub fn log_density(&self, x: f64) -> f64 {
        if x < 0.0 {
            return f64::NEG_INFINITY;
        }
        match *self {
            RatePrior::Gamma { shape, rate } => {
                if x == 0.0 && shape != 1.0 {
                    return if shape < 1.0 { f64::INFINITY } else { f64::NEG_INFINITY };
                }
                shape * rate.ln() - statrs::function::gamma::ln_gamma(shape) + (shape - 1.0) * x.ln()
                    - rate * x
            }
            RatePrior::Uniform { upper } => {
                if x <= upper {
                    -upper.ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    /// Draw from the conditional posterior given `k` events and exposure `s`.
    pub fn posterior_sample(&self, k: u64, s: f64, rng: &mut impl Rng) -> f64 {
        match *self {
            RatePrior::Gamma { shape, rate } => {
                rand_distr::Gamma::new(shape + k as f64, 1.0 / (rate + s))
                    .expect("posterior parameters positive")
                    .sample(rng)
            }
            RatePrior::Uniform { upper } => {
                let shape = k as f64 + 1.0;
                if s <= 0.0 {
                    // Density proportional to x^k on (0, upper).
                    return upper * rng.random::<f64>().powf(1.0 / shape);
                }
                let gamma = GammaPosterior::new(shape, s).expect("positive shape and rate");
                let mass_below = gamma.cdf(upper);
                if mass_below <= f64::MIN_POSITIVE {
                    // All representable posterior mass sits above the prior
                    // bound; the truncated draw is the bound itself.
                    return upper;
                }
                let u: f64 = rng.random();
                gamma.inverse_cdf(u * mass_below).min(upper)
            }
        }
    }
}

/// Priors for the active rates of a model variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    priors: [Option<RatePrior>; 5],
}

impl PriorSpec {
    /// The same prior, independently for every active rate.
    pub fn iid(prior: RatePrior, spec: &ModelSpec) -> Self {
        let mut priors = [None; 5];
        for kind in spec.active_kinds() {
            priors[kind.index()] = Some(prior);
        }
        PriorSpec { priors }
    }

    pub fn with(mut self, kind: EventKind, prior: RatePrior) -> Self {
        self.priors[kind.index()] = Some(prior);
        self
    }

    pub fn get(&self, kind: EventKind) -> Option<&RatePrior> {
        self.priors[kind.index()].as_ref()
    }

    pub fn validate(&self, spec: &ModelSpec) -> Result<(), McmcError> {
        for kind in EventKind::ALL {
            match (spec.is_active(kind), self.get(kind)) {
                (true, Some(prior)) => prior.validate()?,
                (true, None) => {
                    return Err(McmcError::InvalidPrior {
                        message: format!("active rate {} has no prior", kind.rate_name()),
                    })
                }
                (false, Some(_)) => {
                    return Err(McmcError::InvalidPrior {
                        message: format!("inactive rate {} has a prior", kind.rate_name()),
                    })
                }
                (false, None) => {}
            }
        }
        Ok(())
    }

    /// Prior means as a rate vector (inactive kinds 0).
    pub fn means(&self, spec: &ModelSpec) -> RateVector {
        let mut rates = RateVector::zeros();
        for kind in spec.active_kinds() {
            if let Some(p) = self.get(kind) {
                *rates.rate_mut(kind) = p.mean();
            }
        }
        rates
    }

    /// Independent draw of all active rates from the prior.
    pub fn sample_rates(&self, spec: &ModelSpec, rng: &mut impl Rng) -> RateVector {
        let mut rates = RateVector::zeros();
        for kind in spec.active_kinds() {
            if let Some(p) = self.get(kind) {
                *rates.rate_mut(kind) = p.sample(rng);
            }
        }
        rates
    }
}

/// Per-kind event counts and exposure integrals: the sufficient statistics
/// for the conditional rate updates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SufficientStats {
    pub event_counts: [u64; 5],
    /// `S_z`: integral of the compartment-1 total over the window.
    pub hsc_exposure: f64,
    /// `S_x`: integral of the compartment-2 total over the window.
    pub clone_exposure: f64,
}

impl SufficientStats {
    pub fn count(&self, kind: EventKind) -> u64 {
        self.event_counts[kind.index()]
    }

    /// The exposure integral paired with a kind's count.
    pub fn exposure_for(&self, kind: EventKind) -> f64 {
        if kind.acts_on_clones() {
            self.clone_exposure
        } else {
            self.hsc_exposure
        }
    }
}

impl std::ops::Add for SufficientStats {
    type Output = SufficientStats;
    fn add(self, rhs: SufficientStats) -> SufficientStats {
        let mut event_counts = [0u64; 5];
        for (i, c) in event_counts.iter_mut().enumerate() {
            *c = self.event_counts[i] + rhs.event_counts[i];
        }
        SufficientStats {
            event_counts,
            hsc_exposure: self.hsc_exposure + rhs.hsc_exposure,
            clone_exposure: self.clone_exposure + rhs.clone_exposure,
        }
    }
}

impl std::ops::AddAssign for SufficientStats {
    fn add_assign(&mut self, rhs: SufficientStats) {
        *self = *self + rhs;
    }
}

/// Sufficient statistics of one path.
pub fn sufficient_stats(path: &Path, spec: &ModelSpec) -> Result<SufficientStats, PathError> {
    path.validate(spec)?;
    let mut event_counts = [0u64; 5];
    for e in &path.events {
        event_counts[e.kind.index()] += 1;
    }
    let (hsc_exposure, clone_exposure) = crate::model::exposures(path, spec)?;
    Ok(SufficientStats { event_counts, hsc_exposure, clone_exposure })
}

/// Draw all active rates from their conditional posteriors.
pub fn update_rates(
    stats: &SufficientStats,
    prior: &PriorSpec,
    spec: &ModelSpec,
    rng: &mut impl Rng,
) -> Result<RateVector, McmcError> {
    prior.validate(spec)?;
    let mut rates = RateVector::zeros();
    for kind in spec.active_kinds() {
        let p = prior.get(kind).expect("validated prior for active kind");
        *rates.rate_mut(kind) = p.posterior_sample(stats.count(kind), stats.exposure_for(kind), rng);
    }
    Ok(rates)
}

/// Relative frequencies of the three path moves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoveWeights {
    pub deletion: f64,
    pub insertion: f64,
    pub shuffle: f64,
}

impl Default for MoveWeights {
    fn default() -> Self {
        MoveWeights { deletion: 1.0 / 3.0, insertion: 1.0 / 3.0, shuffle: 1.0 / 3.0 }
    }
}

impl MoveWeights {
    pub fn new(deletion: f64, insertion: f64, shuffle: f64) -> Result<Self, McmcError> {
        let w = MoveWeights { deletion, insertion, shuffle };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), McmcError> {
        let parts = [self.deletion, self.insertion, self.shuffle];
        if parts.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(McmcError::InvalidConfig {
                message: format!("move weights {self:?} must be finite and nonnegative"),
            });
        }
        if parts.iter().sum::<f64>() <= 0.0 {
            return Err(McmcError::InvalidConfig { message: "move weights sum to zero".into() });
        }
        if (self.deletion > 0.0) != (self.insertion > 0.0) {
            return Err(McmcError::InvalidConfig {
                message: "insertion and deletion weights must be both zero or both positive".into(),
            });
        }
        Ok(())
    }

    pub fn normalized(&self) -> MoveWeights {
        let total = self.deletion + self.insertion + self.shuffle;
        MoveWeights {
            deletion: self.deletion / total,
            insertion: self.insertion / total,
            shuffle: self.shuffle / total,
        }
    }
}

/// How many path moves to attempt per animal per Gibbs cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PathMoves {
    /// `max(100, 10 * current event count)`.
    #[default]
    Auto,
    Fixed(u64),
}

impl PathMoves {
    pub fn resolve(&self, n_events: usize) -> u64 {
        match *self {
            PathMoves::Auto => (10 * n_events as u64).max(100),
            PathMoves::Fixed(n) => n,
        }
    }

    pub fn validate(&self) -> Result<(), McmcError> {
        if let PathMoves::Fixed(0) = self {
            return Err(McmcError::InvalidConfig { message: "path moves per cycle must be at least 1".into() });
        }
        Ok(())
    }
}

/// Whether animals share one rate vector or carry their own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pooling {
    Pooled,
    PerAnimal,
}

impl std::fmt::Display for Pooling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Pooling::Pooled => write!(f, "pooled"),
            Pooling::PerAnimal => write!(f, "per-animal"),
        }
    }
}

impl std::str::FromStr for Pooling {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "pooled" => Ok(Pooling::Pooled),
            "per-animal" => Ok(Pooling::PerAnimal),
            other => Err(format!("unknown pooling {other:?}, expected pooled or per-animal")),
        }
    }
}

/// Settings for one Gibbs run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    /// Total Gibbs cycles, including burn-in.
    pub iterations: u64,
    /// Cycles discarded before recording starts.
    pub burn_in: u64,
    /// Keep every `thinning`-th cycle after burn-in.
    pub thinning: u64,
    pub seed: u64,
    /// Path window; defaults to the latest observation time in the data.
    pub horizon: Option<f64>,
    pub initial_state: PopulationState,
    pub move_weights: MoveWeights,
    pub path_moves: PathMoves,
    /// Rates held fixed at given values instead of being updated.
    pub pinned: Vec<(EventKind, f64)>,
}

impl ChainConfig {
    pub fn new(iterations: u64, burn_in: u64, thinning: u64, seed: u64) -> Self {
        ChainConfig {
            iterations,
            burn_in,
            thinning,
            seed,
            horizon: None,
            initial_state: PopulationState::default_initial(),
            move_weights: MoveWeights::default(),
            path_moves: PathMoves::Auto,
            pinned: Vec::new(),
        }
    }

    pub fn validate(&self, spec: &ModelSpec) -> Result<(), McmcError> {
        if self.iterations == 0 {
            return Err(McmcError::InvalidConfig { message: "iterations must be at least 1".into() });
        }
        if self.burn_in >= self.iterations {
            return Err(McmcError::InvalidConfig {
                message: format!("burn-in {} must be below iterations {}", self.burn_in, self.iterations),
            });
        }
        if self.thinning == 0 {
            return Err(McmcError::InvalidConfig { message: "thinning must be at least 1".into() });
        }
        if let Some(h) = self.horizon {
            if !h.is_finite() || h <= 0.0 {
                return Err(McmcError::InvalidConfig { message: format!("horizon {h} must be finite and positive") });
            }
        }
        if !spec.state_admissible(&self.initial_state) {
            return Err(McmcError::InvalidConfig {
                message: "initial state exceeds the niche cap".into(),
            });
        }
        self.move_weights.validate()?;
        self.path_moves.validate()?;
        let mut seen = std::collections::HashSet::new();
        for &(kind, value) in &self.pinned {
            if !spec.is_active(kind) {
                return Err(McmcError::InvalidConfig {
                    message: format!("cannot pin inactive rate {}", kind.rate_name()),
                });
            }
            if !seen.insert(kind.index()) {
                return Err(McmcError::InvalidConfig {
                    message: format!("rate {} pinned twice", kind.rate_name()),
                });
            }
            if !value.is_finite() || value < 0.0 {
                return Err(McmcError::InvalidConfig {
                    message: format!("pinned value {value} for {} must be finite and nonnegative", kind.rate_name()),
                });
            }
        }
        Ok(())
    }

    /// Number of draws a full run will keep.
    pub fn kept_draws(&self) -> u64 {
        let span = self.iterations - self.burn_in;
        span.div_ceil(self.thinning)
    }
}

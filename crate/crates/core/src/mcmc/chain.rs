//! The Gibbs sampler alternating rate updates with per-animal path sweeps.
//!
//! One cycle sweeps every animal's latent path at the current rates (animals
//! in parallel, each on its own `(seed, animal, cycle)` RNG stream), then
//! draws the rates from their conditional posteriors given the new paths: one
//! shared vector under pooled inference, or one per animal. The rate update is
//! the synchronization point, so interleaving of animal sweeps cannot affect
//! results.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::ObservationSeries;
use crate::mcmc::moves::{sweep_cached, AcceptanceStats, PathSummary};
use crate::mcmc::{update_rates, ChainConfig, McmcError, Pooling, PriorSpec, SufficientStats};
use crate::model::{ModelSpec, Path, RateVector};
use crate::rng::{derive_rng, stream};
use crate::simulate::simulate_path_with_budget;

/// Per-animal slice of one kept draw.
#[derive(Debug, Clone, PartialEq)]
pub struct AnimalDraw {
    pub animal_id: String,
    /// Per-animal rates; present only under per-animal pooling.
    pub rates: Option<RateVector>,
    pub n_events: u64,
    /// Observation log likelihood given the animal's current path.
    pub loglik: f64,
    /// Log path density at the recorded rates.
    pub log_path_density: f64,
}

/// One kept draw of the chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DrawRepr", into = "DrawRepr")]
pub struct Draw {
    /// Zero-based Gibbs cycle index this draw was recorded at.
    pub iter: u64,
    /// Shared rates; present only under pooled inference.
    pub rates: Option<RateVector>,
    pub animals: Vec<AnimalDraw>,
}

#[derive(Serialize, Deserialize, Clone)]
struct DrawRepr {
    iter: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    nu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    eta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    animals: Vec<AnimalDrawRepr>,
}

#[derive(Serialize, Deserialize, Clone)]
struct AnimalDrawRepr {
    animal_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    nu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    eta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    n_events: u64,
    loglik: f64,
    log_path_density: f64,
}

fn split_rates(rates: Option<RateVector>) -> [Option<f64>; 5] {
    match rates {
        None => [None; 5],
        Some(r) => [
            Some(r.symmetric_division),
            Some(r.commitment),
            Some(r.clonal_death),
            Some(r.asymmetric_division),
            Some(r.apoptosis),
        ],
    }
}

fn join_rates(parts: [Option<f64>; 5], context: &str) -> Result<Option<RateVector>, String> {
    let present = parts.iter().filter(|p| p.is_some()).count();
    match present {
        0 => Ok(None),
        5 => Ok(Some(RateVector {
            symmetric_division: parts[0].unwrap(),
            commitment: parts[1].unwrap(),
            clonal_death: parts[2].unwrap(),
            asymmetric_division: parts[3].unwrap(),
            apoptosis: parts[4].unwrap(),
        })),
        n => Err(format!("{context}: {n} of 5 rate fields present; need all or none")),
    }
}

impl From<Draw> for DrawRepr {
    fn from(d: Draw) -> DrawRepr {
        let [lambda, nu, mu, eta, alpha] = split_rates(d.rates);
        DrawRepr {
            iter: d.iter,
            lambda,
            nu,
            mu,
            eta,
            alpha,
            animals: d
                .animals
                .into_iter()
                .map(|a| {
                    let [lambda, nu, mu, eta, alpha] = split_rates(a.rates);
                    AnimalDrawRepr {
                        animal_id: a.animal_id,
                        lambda,
                        nu,
                        mu,
                        eta,
                        alpha,
                        n_events: a.n_events,
                        loglik: a.loglik,
                        log_path_density: a.log_path_density,
                    }
                })
                .collect(),
        }
    }
}

impl TryFrom<DrawRepr> for Draw {
    type Error = String;
    fn try_from(r: DrawRepr) -> Result<Draw, String> {
        let rates = join_rates([r.lambda, r.nu, r.mu, r.eta, r.alpha], "draw")?;
        let animals = r
            .animals
            .into_iter()
            .map(|a| {
                let rates = join_rates([a.lambda, a.nu, a.mu, a.eta, a.alpha], &a.animal_id)?;
                Ok(AnimalDraw {
                    animal_id: a.animal_id,
                    rates,
                    n_events: a.n_events,
                    loglik: a.loglik,
                    log_path_density: a.log_path_density,
                })
            })
            .collect::<Result<Vec<_>, String>>()?;
        Ok(Draw { iter: r.iter, rates, animals })
    }
}

impl Draw {
    /// Rates in effect for animal `idx` in this draw.
    pub fn rates_for(&self, idx: usize) -> Option<RateVector> {
        self.animals.get(idx).and_then(|a| a.rates).or(self.rates)
    }

    /// Total observation log likelihood across animals.
    pub fn total_loglik(&self) -> f64 {
        self.animals.iter().map(|a| a.loglik).sum()
    }
}

/// The kept draws of one run plus run metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDraws {
    pub model: ModelSpec,
    pub pooling: Pooling,
    pub prior: PriorSpec,
    pub seed: u64,
    pub horizon: f64,
    pub animal_ids: Vec<String>,
    pub draws: Vec<Draw>,
    pub acceptance: AcceptanceStats,
}

impl ChainDraws {
    /// Rebuild run output from deserialized draws (for reading a draws file
    /// back); acceptance tallies are not recoverable and are left zero.
    pub fn reconstruct(
        model: ModelSpec,
        pooling: Pooling,
        prior: PriorSpec,
        seed: u64,
        horizon: f64,
        draws: Vec<Draw>,
    ) -> Result<Self, McmcError> {
        let first = draws.first().ok_or(McmcError::MalformedDraws { message: "no draws".into() })?;
        let animal_ids: Vec<String> = first.animals.iter().map(|a| a.animal_id.clone()).collect();
        for (i, d) in draws.iter().enumerate() {
            let ids: Vec<&str> = d.animals.iter().map(|a| a.animal_id.as_str()).collect();
            if ids != animal_ids.iter().map(String::as_str).collect::<Vec<_>>() {
                return Err(McmcError::MalformedDraws {
                    message: format!("draw {i} lists different animals than the first draw"),
                });
            }
            let pooled_ok = match pooling {
                Pooling::Pooled => d.rates.is_some() && d.animals.iter().all(|a| a.rates.is_none()),
                Pooling::PerAnimal => d.rates.is_none() && d.animals.iter().all(|a| a.rates.is_some()),
            };
            if !pooled_ok {
                return Err(McmcError::MalformedDraws {
                    message: format!("draw {i} rate layout does not match {pooling} pooling"),
                });
            }
        }
        Ok(ChainDraws {
            model,
            pooling,
            prior,
            seed,
            horizon,
            animal_ids,
            draws,
            acceptance: AcceptanceStats::default(),
        })
    }

    pub fn n_animals(&self) -> usize {
        self.animal_ids.len()
    }

    pub fn n_draws(&self) -> usize {
        self.draws.len()
    }

    /// Per-draw total observation log likelihood.
    pub fn total_loglik_series(&self) -> Vec<f64> {
        self.draws.iter().map(Draw::total_loglik).collect()
    }

    /// Per-draw observation log likelihood of one animal.
    pub fn animal_loglik_series(&self, idx: usize) -> Vec<f64> {
        self.draws.iter().map(|d| d.animals[idx].loglik).collect()
    }

    /// Per-draw value of one shared rate (pooled runs).
    pub fn rate_series(&self, kind: crate::model::EventKind) -> Option<Vec<f64>> {
        if self.pooling != Pooling::Pooled {
            return None;
        }
        Some(self.draws.iter().map(|d| d.rates.expect("pooled draws carry rates").rate(kind)).collect())
    }

    /// Per-draw value of one animal's rate (per-animal runs).
    pub fn animal_rate_series(&self, kind: crate::model::EventKind, idx: usize) -> Option<Vec<f64>> {
        if self.pooling != Pooling::PerAnimal {
            return None;
        }
        Some(
            self.draws
                .iter()
                .map(|d| d.animals[idx].rates.expect("per-animal draws carry rates").rate(kind))
                .collect(),
        )
    }
}

/// Write draws as JSON lines.
pub fn write_draws_jsonl<W: Write>(draws: &[Draw], mut w: W) -> std::io::Result<()> {
    for d in draws {
        serde_json::to_writer(&mut w, d)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Read draws from JSON lines.
pub fn read_draws_jsonl<R: BufRead>(r: R) -> Result<Vec<Draw>, McmcError> {
    let mut draws = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| McmcError::MalformedDraws {
            message: format!("line {}: {e}", i + 1),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let draw: Draw = serde_json::from_str(&line).map_err(|e| McmcError::MalformedDraws {
            message: format!("line {}: {e}", i + 1),
        })?;
        draws.push(draw);
    }
    Ok(draws)
}

/// Serializable full state of a paused run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub prior: PriorSpec,
    pub pooling: Pooling,
    pub config: ChainConfig,
    pub data: Vec<ObservationSeries>,
    pub horizon: f64,
    /// Next cycle to run.
    pub cycle: u64,
    pub rates: Vec<RateVector>,
    pub paths: Vec<Path>,
    pub acceptance: AcceptanceStats,
}

#[derive(Debug)]
struct AnimalState {
    path: Path,
    summary: PathSummary,
}

/// The Gibbs sampler with explicit state, supporting stepwise runs and
/// checkpoint/resume.
#[derive(Debug)]
pub struct GibbsChain {
    spec: ModelSpec,
    prior: PriorSpec,
    pooling: Pooling,
    config: ChainConfig,
    data: Vec<ObservationSeries>,
    horizon: f64,
    cycle: u64,
    rates: Vec<RateVector>,
    animals: Vec<AnimalState>,
    acceptance: AcceptanceStats,
}

const INIT_ATTEMPTS: u32 = 500;
const INIT_EVENT_BUDGET: u64 = 200_000;

impl GibbsChain {
    pub fn new(
        data: &[ObservationSeries],
        spec: &ModelSpec,
        prior: &PriorSpec,
        pooling: Pooling,
        config: &ChainConfig,
    ) -> Result<Self, McmcError> {
        config.validate(spec)?;
        prior.validate(spec)?;
        if data.is_empty() {
            return Err(McmcError::InvalidConfig { message: "no animals in the dataset".into() });
        }
        for a in data {
            a.validate()?;
        }
        let data_span = data.iter().map(|a| a.last_week()).fold(0.0, f64::max);
        let horizon = match config.horizon {
            Some(h) => h,
            None if data_span > 0.0 => data_span,
            None => {
                return Err(McmcError::InvalidConfig {
                    message: "horizon must be given when the data has no observations".into(),
                })
            }
        };
        if data_span > horizon {
            return Err(McmcError::InvalidConfig {
                message: format!("observations reach week {data_span}, beyond the horizon {horizon}"),
            });
        }

        let mut init_rates = prior.means(spec);
        for &(kind, value) in &config.pinned {
            *init_rates.rate_mut(kind) = value;
        }
        let n_rate_slots = match pooling {
            Pooling::Pooled => 1,
            Pooling::PerAnimal => data.len(),
        };

        let animals = data
            .par_iter()
            .enumerate()
            .map(|(i, obs)| init_animal(i, obs, spec, &init_rates, config, horizon))
            .collect::<Result<Vec<_>, McmcError>>()?;

        Ok(GibbsChain {
            spec: spec.clone(),
            prior: prior.clone(),
            pooling,
            config: config.clone(),
            data: data.to_vec(),
            horizon,
            cycle: 0,
            rates: vec![init_rates; n_rate_slots],
            animals,
            acceptance: AcceptanceStats::default(),
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn acceptance(&self) -> &AcceptanceStats {
        &self.acceptance
    }

    fn rates_for(&self, animal: usize) -> &RateVector {
        match self.pooling {
            Pooling::Pooled => &self.rates[0],
            Pooling::PerAnimal => &self.rates[animal],
        }
    }

    /// Run one Gibbs cycle: sweep every path, then redraw the rates.
    pub fn step(&mut self) -> Result<(), McmcError> {
        let cycle = self.cycle;
        let seed = self.config.seed;
        let spec = &self.spec;
        let data = &self.data;
        let weights = &self.config.move_weights;
        let path_moves = self.config.path_moves;
        let pooling = self.pooling;
        let rates = &self.rates;

        let sweep_stats: Vec<AcceptanceStats> = self
            .animals
            .par_iter_mut()
            .enumerate()
            .map(|(i, st)| {
                let rate_vec = match pooling {
                    Pooling::Pooled => rates[0],
                    Pooling::PerAnimal => rates[i],
                };
                let n_moves = path_moves.resolve(st.path.n_events());
                let mut rng = derive_rng(seed, &[stream::CHAIN_SWEEP, i as u64, cycle]);
                let mut stats = AcceptanceStats::default();
                sweep_cached(
                    &mut st.path,
                    &mut st.summary,
                    &rate_vec,
                    spec,
                    &data[i],
                    weights,
                    n_moves,
                    &mut stats,
                    &mut rng,
                );
                stats
            })
            .collect();
        for s in &sweep_stats {
            self.acceptance.merge(s);
        }

        match self.pooling {
            Pooling::Pooled => {
                let mut total = SufficientStats::default();
                for st in &self.animals {
                    total += st.summary.stats();
                }
                let mut rng = derive_rng(seed, &[stream::CHAIN_RATES, cycle]);
                self.rates[0] = update_rates(&total, &self.prior, &self.spec, &mut rng)?;
                for &(kind, value) in &self.config.pinned {
                    *self.rates[0].rate_mut(kind) = value;
                }
            }
            Pooling::PerAnimal => {
                for i in 0..self.animals.len() {
                    let stats = self.animals[i].summary.stats();
                    let mut rng = derive_rng(seed, &[stream::CHAIN_RATES, cycle, i as u64]);
                    self.rates[i] = update_rates(&stats, &self.prior, &self.spec, &mut rng)?;
                    for &(kind, value) in &self.config.pinned {
                        *self.rates[i].rate_mut(kind) = value;
                    }
                }
            }
        }

        self.cycle += 1;
        Ok(())
    }

    fn current_draw(&self, iter: u64) -> Draw {
        let animals = self
            .animals
            .iter()
            .enumerate()
            .map(|(i, st)| AnimalDraw {
                animal_id: self.data[i].animal_id.clone(),
                rates: match self.pooling {
                    Pooling::Pooled => None,
                    Pooling::PerAnimal => Some(self.rates[i]),
                },
                n_events: st.summary.n_events(),
                loglik: st.summary.log_likelihood,
                log_path_density: st.summary.log_path_density(self.rates_for(i)),
            })
            .collect();
        Draw {
            iter,
            rates: match self.pooling {
                Pooling::Pooled => Some(self.rates[0]),
                Pooling::PerAnimal => None,
            },
            animals,
        }
    }

    /// Run remaining cycles, passing each kept draw to `sink`.
    pub fn run(&mut self, mut sink: impl FnMut(Draw)) -> Result<(), McmcError> {
        while self.cycle < self.config.iterations {
            self.step()?;
            let completed = self.cycle - 1;
            if completed >= self.config.burn_in
                && (completed - self.config.burn_in).is_multiple_of(self.config.thinning)
            {
                sink(self.current_draw(completed));
            }
        }
        Ok(())
    }

    /// Run remaining cycles and collect the kept draws.
    pub fn run_collect(&mut self) -> Result<ChainDraws, McmcError> {
        let mut draws = Vec::with_capacity(self.config.kept_draws() as usize);
        self.run(|d| draws.push(d))?;
        Ok(ChainDraws {
            model: self.spec.clone(),
            pooling: self.pooling,
            prior: self.prior.clone(),
            seed: self.config.seed,
            horizon: self.horizon,
            animal_ids: self.data.iter().map(|a| a.animal_id.clone()).collect(),
            draws,
            acceptance: self.acceptance,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            spec: self.spec.clone(),
            prior: self.prior.clone(),
            pooling: self.pooling,
            config: self.config.clone(),
            data: self.data.clone(),
            horizon: self.horizon,
            cycle: self.cycle,
            rates: self.rates.clone(),
            paths: self.animals.iter().map(|st| st.path.clone()).collect(),
            acceptance: self.acceptance,
        }
    }

    /// Rebuild a paused run; path summaries are recomputed and validated.
    pub fn from_checkpoint(cp: Checkpoint) -> Result<Self, McmcError> {
        cp.config.validate(&cp.spec)?;
        cp.prior.validate(&cp.spec)?;
        if cp.paths.len() != cp.data.len() {
            return Err(McmcError::CheckpointMismatch {
                message: format!("{} paths for {} animals", cp.paths.len(), cp.data.len()),
            });
        }
        let expected_slots = match cp.pooling {
            Pooling::Pooled => 1,
            Pooling::PerAnimal => cp.data.len(),
        };
        if cp.rates.len() != expected_slots {
            return Err(McmcError::CheckpointMismatch {
                message: format!("{} rate vectors for {} pooling", cp.rates.len(), cp.pooling),
            });
        }
        for r in &cp.rates {
            r.validate(&cp.spec).map_err(|e| McmcError::CheckpointMismatch { message: e.to_string() })?;
        }
        let animals = cp
            .paths
            .iter()
            .zip(&cp.data)
            .map(|(path, obs)| {
                if path.horizon != cp.horizon {
                    return Err(McmcError::CheckpointMismatch {
                        message: format!("path horizon {} differs from run horizon {}", path.horizon, cp.horizon),
                    });
                }
                let summary = PathSummary::compute(path, &cp.spec, obs)
                    .map_err(|e| McmcError::CheckpointMismatch { message: e.to_string() })?;
                if summary.log_likelihood == f64::NEG_INFINITY {
                    return Err(McmcError::CheckpointMismatch {
                        message: format!("stored path for {} has zero likelihood", obs.animal_id),
                    });
                }
                Ok(AnimalState { path: path.clone(), summary })
            })
            .collect::<Result<Vec<_>, McmcError>>()?;
        Ok(GibbsChain {
            spec: cp.spec,
            prior: cp.prior,
            pooling: cp.pooling,
            config: cp.config,
            data: cp.data,
            horizon: cp.horizon,
            cycle: cp.cycle,
            rates: cp.rates,
            animals,
            acceptance: cp.acceptance,
        })
    }
}

fn init_animal(
    index: usize,
    obs: &ObservationSeries,
    spec: &ModelSpec,
    init_rates: &RateVector,
    config: &ChainConfig,
    horizon: f64,
) -> Result<AnimalState, McmcError> {
    // Simulate at the starting rates until the data does not rule the path
    // out. Starting from a model-typical path keeps burn-in short: the event
    // count begins at the right order of magnitude instead of having to grow
    // one accepted insertion at a time.
    for attempt in 0..INIT_ATTEMPTS {
        let mut rng = derive_rng(config.seed, &[stream::CHAIN_INIT, index as u64, attempt as u64]);
        let Ok(path) = simulate_path_with_budget(
            init_rates,
            spec,
            config.initial_state,
            horizon,
            Some(INIT_EVENT_BUDGET),
            &mut rng,
        ) else {
            continue;
        };
        if let Ok(summary) = PathSummary::compute(&path, spec, obs) {
            if summary.log_likelihood.is_finite() {
                return Ok(AnimalState { path, summary });
            }
        }
    }
    // Last resort: the empty path, feasible whenever the initial state
    // already explains the data (both labels present among the initial
    // clones, typically).
    let empty = Path::empty(config.initial_state, horizon);
    if let Ok(summary) = PathSummary::compute(&empty, spec, obs) {
        if summary.log_likelihood.is_finite() {
            return Ok(AnimalState { path: empty, summary });
        }
    }
    Err(McmcError::InitializationFailure {
        animal_id: obs.animal_id.clone(),
        attempts: INIT_ATTEMPTS,
    })
}

/// Run a full chain and collect its kept draws.
pub fn run_chain(
    data: &[ObservationSeries],
    spec: &ModelSpec,
    prior: &PriorSpec,
    pooling: Pooling,
    config: &ChainConfig,
) -> Result<ChainDraws, McmcError> {
    GibbsChain::new(data, spec, prior, pooling, config)?.run_collect()
}

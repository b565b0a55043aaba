//! Exact simulation of the hidden process and of virtual cohorts.
//!
//! Paths are drawn with the direct stochastic simulation algorithm: at each
//! step the total propensity over all active `(kind, label)` channels sets an
//! exponential waiting time, and the firing channel is chosen proportionally
//! to its propensity. Observation series are then sampled on top of a realized
//! path with a configurable biopsy schedule.

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, DatasetError, ObsRecord, ObservationSeries};
use crate::model::{
    apply_event, propensity, state_trajectory, EventKind, Label, ModelError, ModelSpec, Path,
    PathError, PathEvent, PopulationState, RateVector,
};
use crate::rng::{derive_rng, stream};

/// Gap between consecutive sampling occasions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Spacing {
    Fixed(f64),
    /// Independent uniform gaps on `[min, max]`.
    Uniform { min: f64, max: f64 },
}

/// How many clones are typed at each occasion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SampleSizeRule {
    Fixed(u64),
    /// Draw uniformly from an empirical pool of observed sample sizes.
    Resample(Vec<u64>),
}

/// A biopsy schedule: occasions from time 0 (exclusive) out to `horizon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub horizon: f64,
    pub spacing: Spacing,
    pub sample_size: SampleSizeRule,
}

impl ScheduleSpec {
    pub fn validate(&self) -> Result<(), SimulateError> {
        if !self.horizon.is_finite() || self.horizon <= 0.0 {
            return Err(SimulateError::InvalidSchedule {
                message: format!("horizon {} must be finite and positive", self.horizon),
            });
        }
        match self.spacing {
            Spacing::Fixed(gap) => {
                if !gap.is_finite() || gap <= 0.0 {
                    return Err(SimulateError::InvalidSchedule {
                        message: format!("fixed gap {gap} must be finite and positive"),
                    });
                }
            }
            Spacing::Uniform { min, max } => {
                if !(min.is_finite() && max.is_finite()) || min <= 0.0 || max < min {
                    return Err(SimulateError::InvalidSchedule {
                        message: format!("uniform gap bounds [{min}, {max}] must satisfy 0 < min <= max"),
                    });
                }
            }
        }
        if let SampleSizeRule::Resample(pool) = &self.sample_size {
            if pool.is_empty() {
                return Err(SimulateError::InvalidSchedule {
                    message: "resample pool is empty".into(),
                });
            }
        }
        Ok(())
    }

    /// Draw the occasion times for one animal.
    pub fn sample_times(&self, rng: &mut impl Rng) -> Vec<f64> {
        let mut times = Vec::new();
        let mut t = 0.0;
        loop {
            let gap = match self.spacing {
                Spacing::Fixed(gap) => gap,
                Spacing::Uniform { min, max } => {
                    if min == max {
                        min
                    } else {
                        min + (max - min) * rng.random::<f64>()
                    }
                }
            };
            t += gap;
            if t > self.horizon {
                return times;
            }
            times.push(t);
        }
    }

    fn draw_sample_size(&self, rng: &mut impl Rng) -> u64 {
        match &self.sample_size {
            SampleSizeRule::Fixed(n) => *n,
            SampleSizeRule::Resample(pool) => pool[rng.random_range(0..pool.len())],
        }
    }
}

/// What counts as a died-out animal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DieOutRule {
    /// Compartment 1 (stem cells) empties at some point before the horizon.
    #[default]
    Compartment1,
    /// Both compartments are simultaneously empty at some point.
    BothCompartments,
}

#[derive(Debug, thiserror::Error)]
pub enum SimulateError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error("invalid schedule: {message}")]
    InvalidSchedule { message: String },
    #[error("simulation exceeded the event budget of {budget}")]
    EventBudgetExceeded { budget: u64 },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Simulate one path of the hidden process on `[0, horizon]`.
pub fn simulate_path(
    rates: &RateVector,
    spec: &ModelSpec,
    initial: PopulationState,
    horizon: f64,
    rng: &mut impl Rng,
) -> Result<Path, SimulateError> {
    simulate_path_with_budget(rates, spec, initial, horizon, None, rng)
}

/// As [`simulate_path`], aborting once more than `max_events` events fire.
///
/// Useful when the rates may put the process in an explosive regime.
pub fn simulate_path_with_budget(
    rates: &RateVector,
    spec: &ModelSpec,
    initial: PopulationState,
    horizon: f64,
    max_events: Option<u64>,
    rng: &mut impl Rng,
) -> Result<Path, SimulateError> {
    rates.validate(spec)?;
    if !horizon.is_finite() || horizon <= 0.0 {
        return Err(SimulateError::Path(PathError::InvalidHorizon { horizon }));
    }
    if !spec.state_admissible(&initial) {
        return Err(SimulateError::Path(PathError::CapExceeded { at: 0.0 }));
    }

    let channels: Vec<(EventKind, Label)> = spec
        .active_kinds()
        .flat_map(|k| Label::BOTH.into_iter().map(move |l| (k, l)))
        .collect();

    let mut state = initial;
    let mut t = 0.0;
    let mut events = Vec::new();
    loop {
        let total: f64 = channels.iter().map(|&(k, l)| propensity(&state, k, l, rates)).sum();
        if total <= 0.0 {
            break;
        }
        // Exponential waiting time; redraw the measure-zero corner cases that
        // would produce a non-increasing event time.
        let next = loop {
            let u: f64 = rng.random();
            let candidate = t - (1.0 - u).ln() / total;
            if candidate > t {
                break candidate;
            }
        };
        if next >= horizon {
            break;
        }
        t = next;
        let mut pick = rng.random::<f64>() * total;
        let mut chosen = None;
        for &(kind, label) in &channels {
            pick -= propensity(&state, kind, label, rates);
            if pick <= 0.0 {
                chosen = Some((kind, label));
                break;
            }
        }
        // Guard against f64 cancellation at the end of the scan.
        let (kind, label) = chosen.unwrap_or_else(|| {
            *channels
                .iter()
                .rev()
                .find(|&&(k, l)| propensity(&state, k, l, rates) > 0.0)
                .expect("total propensity positive implies a live channel")
        });
        state = apply_event(&state, kind, label, spec)?;
        events.push(PathEvent { time: t, kind, label });
        if let Some(budget) = max_events {
            if events.len() as u64 > budget {
                return Err(SimulateError::EventBudgetExceeded { budget });
            }
        }
    }
    Ok(Path { horizon, initial, events })
}

/// Sample an observation series on top of a realized path.
///
/// Occasions where compartment 2 is empty are recorded with `sample_size = 0`:
/// a biopsy then yields no clones to type.
pub fn simulate_observations(
    path: &Path,
    spec: &ModelSpec,
    schedule: &ScheduleSpec,
    animal_id: impl Into<String>,
    rng: &mut impl Rng,
) -> Result<ObservationSeries, SimulateError> {
    schedule.validate()?;
    if schedule.horizon > path.horizon {
        return Err(SimulateError::InvalidSchedule {
            message: format!(
                "schedule horizon {} exceeds path horizon {}",
                schedule.horizon, path.horizon
            ),
        });
    }
    let trajectory = state_trajectory(path, spec)?;
    let times = schedule.sample_times(rng);
    let mut records = Vec::with_capacity(times.len());
    let mut idx = 0;
    for week in times {
        while idx + 1 < trajectory.len() && trajectory[idx].end <= week {
            idx += 1;
        }
        let state = trajectory[idx].state;
        let record = match state.fraction_d() {
            None => ObsRecord { week, sample_size: 0, d_count: 0 },
            Some(p) => {
                let n = schedule.draw_sample_size(rng);
                let y = if n == 0 {
                    0
                } else {
                    Binomial::new(n, p)
                        .expect("fraction is a probability")
                        .sample(rng)
                };
                ObsRecord { week, sample_size: n, d_count: y }
            }
        };
        records.push(record);
    }
    Ok(ObservationSeries::new(animal_id, records)?)
}

/// Whether a realized path counts as died out under a rule.
pub fn died_out(path: &Path, spec: &ModelSpec, rule: DieOutRule) -> Result<bool, PathError> {
    let trajectory = state_trajectory(path, spec)?;
    Ok(trajectory.iter().any(|iv| match rule {
        DieOutRule::Compartment1 => iv.state.total_hsc() == 0,
        DieOutRule::BothCompartments => iv.state.total_hsc() == 0 && iv.state.total_clones() == 0,
    }))
}

/// One simulated animal: its hidden path, observed series, and die-out flag.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VirtualAnimal {
    pub path: Path,
    pub observations: ObservationSeries,
    pub died_out: bool,
}

impl VirtualAnimal {
    pub fn id(&self) -> &str {
        &self.observations.animal_id
    }
}

/// A simulated cohort.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CohortResult {
    pub animals: Vec<VirtualAnimal>,
}

impl CohortResult {
    pub fn die_out_rate(&self) -> f64 {
        if self.animals.is_empty() {
            return 0.0;
        }
        self.animals.iter().filter(|a| a.died_out).count() as f64 / self.animals.len() as f64
    }

    pub fn to_dataset(&self) -> Result<Dataset, DatasetError> {
        Dataset::new(self.animals.iter().map(|a| a.observations.clone()).collect())
    }
}

/// Simulate a cohort of `n_animals` i.i.d. animals.
///
/// Each animal's path and observations use RNG streams derived from
/// `(seed, animal index)`, so the result is a pure function of the arguments
/// regardless of how work is scheduled across threads.
pub fn simulate_cohort(
    rates: &RateVector,
    spec: &ModelSpec,
    initial: PopulationState,
    schedule: &ScheduleSpec,
    n_animals: usize,
    seed: u64,
    rule: DieOutRule,
) -> Result<CohortResult, SimulateError> {
    rates.validate(spec)?;
    schedule.validate()?;
    let width = (n_animals.max(1) as f64).log10().floor() as usize + 1;
    let animals = (0..n_animals)
        .into_par_iter()
        .map(|i| {
            let mut path_rng = derive_rng(seed, &[stream::SIM_PATH, i as u64]);
            let mut obs_rng = derive_rng(seed, &[stream::SIM_OBS, i as u64]);
            let path = simulate_path(rates, spec, initial, schedule.horizon, &mut path_rng)?;
            let id = format!("virtual-{:0width$}", i + 1);
            let observations = simulate_observations(&path, spec, schedule, id, &mut obs_rng)?;
            let died = died_out(&path, spec, rule)?;
            Ok(VirtualAnimal { path, observations, died_out: died })
        })
        .collect::<Result<Vec<_>, SimulateError>>()?;
    Ok(CohortResult { animals })
}

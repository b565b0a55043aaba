//! Path-space Metropolis-Hastings-Green moves.
//!
//! With the rates held fixed, an animal's latent path is updated by repeated
//! proposals of three kinds, chosen with weights `(p1, p2, p3)`:
//!
//! * **deletion**: remove a uniformly chosen event; proposal probability
//!   `p1 / N` for a path with `N` events;
//! * **insertion**: add an event with kind uniform over the `M` active kinds,
//!   label uniform over the two labels, and time uniform on `(0, T)`;
//!   proposal density `p2 / (2 M T)`;
//! * **shuffle**: redraw a uniformly chosen event's time uniformly on
//!   `(0, T)`, keeping kind and label; proposal density `p3 / (N T)`.
//!
//! Insertion and deletion change the path dimension; pairing each with its
//! reverse gives the Green ratio with unit Jacobian. The target is the path
//! density times the observation likelihood, so the log acceptance ratio
//! splits into independently computable parts: the change in the log product
//! of pre-event eligible counts, `+/- log rho` for the kind whose event count
//! changed, the change in the exposure terms, the change in the observation
//! log likelihood, and the log proposal ratio. Assembling those parts from
//! cached [`PathSummary`] values makes one proposal cost one candidate replay
//! rather than two.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::ObservationSeries;
use crate::mcmc::{McmcError, MoveWeights, SufficientStats};
use crate::model::{
    apply_event, binomial_log_pmf, EventKind, Label, ModelSpec, Path, PathError, PathEvent,
    RateVector,
};

/// The three path move families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MoveKind {
    Deletion,
    Insertion,
    Shuffle,
}

impl MoveKind {
    pub const ALL: [MoveKind; 3] = [MoveKind::Deletion, MoveKind::Insertion, MoveKind::Shuffle];

    pub fn index(self) -> usize {
        match self {
            MoveKind::Deletion => 0,
            MoveKind::Insertion => 1,
            MoveKind::Shuffle => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MoveKind::Deletion => "deletion",
            MoveKind::Insertion => "insertion",
            MoveKind::Shuffle => "shuffle",
        }
    }
}

/// A concrete proposal, carrying what the acceptance ratio needs to know.
#[derive(Debug, Clone, PartialEq)]
pub enum MoveProposal {
    Insertion { event: PathEvent },
    Deletion { index: usize, event: PathEvent },
    Shuffle { index: usize, old_time: f64, new_time: f64 },
}

impl MoveProposal {
    pub fn kind(&self) -> MoveKind {
        match self {
            MoveProposal::Insertion { .. } => MoveKind::Insertion,
            MoveProposal::Deletion { .. } => MoveKind::Deletion,
            MoveProposal::Shuffle { .. } => MoveKind::Shuffle,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MoveError {
    #[error("{attempted:?} proposed on an empty path")]
    EmptyPathMove { attempted: MoveKind },
}

/// Everything about a path the sampler reuses across proposals: sufficient
/// statistics, the log product of pre-event eligible counts, and the
/// observation log likelihood. None of it depends on the rates, so a summary
/// stays valid across rate updates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathSummary {
    pub event_counts: [u64; 5],
    pub hsc_exposure: f64,
    pub clone_exposure: f64,
    /// Sum over events of the log eligible-cell count at firing.
    pub log_eligible_product: f64,
    /// Observation log likelihood (may be `-inf`).
    pub log_likelihood: f64,
}

impl PathSummary {
    /// Replay a path once, accumulating statistics and walking the
    /// observation series in the same pass.
    pub fn compute(path: &Path, spec: &ModelSpec, obs: &ObservationSeries) -> Result<PathSummary, PathError> {
        let mut state = path.initial;
        if !spec.state_admissible(&state) {
            return Err(PathError::CapExceeded { at: 0.0 });
        }
        let mut summary = PathSummary {
            event_counts: [0; 5],
            hsc_exposure: 0.0,
            clone_exposure: 0.0,
            log_eligible_product: 0.0,
            log_likelihood: 0.0,
        };
        let mut prev = 0.0;
        let mut obs_idx = 0;
        for event in &path.events {
            if !event.time.is_finite() || event.time <= prev || event.time >= path.horizon {
                return Err(PathError::DisorderedTimes { time: event.time });
            }
            // Occasions strictly before this event see the pre-event state;
            // an occasion exactly at the event time sees the post-event state.
            observe_until(&mut summary, &state, obs, &mut obs_idx, event.time, false);
            let dt = event.time - prev;
            summary.hsc_exposure += state.total_hsc() as f64 * dt;
            summary.clone_exposure += state.total_clones() as f64 * dt;
            let eligible = state.eligible(event.kind, event.label);
            if eligible == 0 {
                return Err(PathError::EmptySubpopulation { kind: event.kind, label: event.label });
            }
            summary.log_eligible_product += (eligible as f64).ln();
            summary.event_counts[event.kind.index()] += 1;
            state = apply_event(&state, event.kind, event.label, spec)?;
            prev = event.time;
        }
        observe_until(&mut summary, &state, obs, &mut obs_idx, path.horizon, true);
        let dt = path.horizon - prev;
        if dt < 0.0 || !path.horizon.is_finite() || path.horizon <= 0.0 {
            return Err(PathError::InvalidHorizon { horizon: path.horizon });
        }
        summary.hsc_exposure += state.total_hsc() as f64 * dt;
        summary.clone_exposure += state.total_clones() as f64 * dt;
        // Occasions beyond the horizon are impossible under this path.
        if obs_idx < obs.records.len() {
            summary.log_likelihood = f64::NEG_INFINITY;
        }
        Ok(summary)
    }

    pub fn n_events(&self) -> u64 {
        self.event_counts.iter().sum()
    }

    pub fn stats(&self) -> SufficientStats {
        SufficientStats {
            event_counts: self.event_counts,
            hsc_exposure: self.hsc_exposure,
            clone_exposure: self.clone_exposure,
        }
    }

    /// Log path density under given rates, recovered from the summary.
    pub fn log_path_density(&self, rates: &RateVector) -> f64 {
        let mut log_rate_sum = 0.0;
        for kind in EventKind::ALL {
            let n = self.event_counts[kind.index()];
            if n > 0 {
                let rate = rates.rate(kind);
                if rate <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                log_rate_sum += n as f64 * rate.ln();
            }
        }
        self.log_eligible_product + log_rate_sum
            - rates.hsc_rate_sum() * self.hsc_exposure
            - rates.clonal_death * self.clone_exposure
    }
}

fn observe_until(
    summary: &mut PathSummary,
    state: &crate::model::PopulationState,
    obs: &ObservationSeries,
    obs_idx: &mut usize,
    until: f64,
    inclusive: bool,
) {
    while *obs_idx < obs.records.len() {
        let record = &obs.records[*obs_idx];
        let within = if inclusive { record.week <= until } else { record.week < until };
        if !within {
            break;
        }
        if record.sample_size > 0 {
            let term = match state.fraction_d() {
                None => f64::NEG_INFINITY,
                Some(p) => binomial_log_pmf(record.sample_size, record.d_count, p),
            };
            summary.log_likelihood += term;
        }
        *obs_idx += 1;
    }
}

/// Draw one proposal. Deletion and shuffle on an empty path return
/// [`MoveError::EmptyPathMove`], which the sweep counts as an automatic
/// rejection.
pub fn propose_move(
    path: &Path,
    spec: &ModelSpec,
    weights: &MoveWeights,
    rng: &mut impl Rng,
) -> Result<(Path, MoveProposal), MoveError> {
    let w = weights.normalized();
    let v: f64 = rng.random();
    let kind = if v < w.deletion {
        MoveKind::Deletion
    } else if v < w.deletion + w.insertion {
        MoveKind::Insertion
    } else {
        MoveKind::Shuffle
    };
    match kind {
        MoveKind::Deletion => {
            if path.events.is_empty() {
                return Err(MoveError::EmptyPathMove { attempted: kind });
            }
            let index = rng.random_range(0..path.events.len());
            let event = path.events[index];
            let mut candidate = path.clone();
            candidate.events.remove(index);
            Ok((candidate, MoveProposal::Deletion { index, event }))
        }
        MoveKind::Insertion => {
            let active: Vec<EventKind> = spec.active_kinds().collect();
            let event_kind = active[rng.random_range(0..active.len())];
            let label = Label::BOTH[rng.random_range(0..2)];
            let time = draw_interior_time(path, rng);
            let event = PathEvent { time, kind: event_kind, label };
            let mut candidate = path.clone();
            let pos = candidate.events.partition_point(|e| e.time < time);
            candidate.events.insert(pos, event);
            Ok((candidate, MoveProposal::Insertion { event }))
        }
        MoveKind::Shuffle => {
            if path.events.is_empty() {
                return Err(MoveError::EmptyPathMove { attempted: kind });
            }
            let index = rng.random_range(0..path.events.len());
            let moved = path.events[index];
            let new_time = draw_interior_time(path, rng);
            let mut candidate = path.clone();
            candidate.events.remove(index);
            let pos = candidate.events.partition_point(|e| e.time < new_time);
            candidate.events.insert(pos, PathEvent { time: new_time, ..moved });
            Ok((candidate, MoveProposal::Shuffle { index, old_time: moved.time, new_time }))
        }
    }
}

/// Uniform time in `(0, horizon)` distinct from every existing event time.
///
/// The excluded set has measure zero; redrawing keeps candidate paths strictly
/// ordered without biasing the proposal.
fn draw_interior_time(path: &Path, rng: &mut impl Rng) -> f64 {
    loop {
        let t = path.horizon * rng.random::<f64>();
        if t > 0.0 && t < path.horizon && !path.events.iter().any(|e| e.time == t) {
            return t;
        }
    }
}

/// Log Metropolis-Hastings-Green acceptance ratio for a proposal, recomputing
/// both path summaries.
///
/// The current path must be feasible with finite observation likelihood (the
/// sampler maintains this invariant); infeasible candidates return `-inf`.
pub fn acceptance_log_ratio(
    current: &Path,
    candidate: &Path,
    proposal: &MoveProposal,
    rates: &RateVector,
    spec: &ModelSpec,
    obs: &ObservationSeries,
    weights: &MoveWeights,
) -> f64 {
    let cur = match PathSummary::compute(current, spec, obs) {
        Ok(s) => s,
        Err(_) => return f64::NAN,
    };
    let cand = match PathSummary::compute(candidate, spec, obs) {
        Ok(s) => s,
        Err(_) => return f64::NEG_INFINITY,
    };
    acceptance_log_ratio_cached(&cur, &cand, proposal, rates, weights, spec, current.horizon, current.events.len())
}

/// The acceptance ratio assembled from precomputed summaries.
#[allow(clippy::too_many_arguments)]
pub(crate) fn acceptance_log_ratio_cached(
    current: &PathSummary,
    candidate: &PathSummary,
    proposal: &MoveProposal,
    rates: &RateVector,
    weights: &MoveWeights,
    spec: &ModelSpec,
    horizon: f64,
    n_current: usize,
) -> f64 {
    if candidate.log_likelihood == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let likelihood = candidate.log_likelihood - current.log_likelihood;

    // Change in the log product of pre-event eligible counts.
    let counts = candidate.log_eligible_product - current.log_eligible_product;

    // Exposure terms.
    let exposure = -rates.hsc_rate_sum() * (candidate.hsc_exposure - current.hsc_exposure)
        - rates.clonal_death * (candidate.clone_exposure - current.clone_exposure);

    // Rate factor of the event whose count changed, plus the proposal ratio.
    let w = weights.normalized();
    let m = spec.active_count() as f64;
    let n = n_current as f64;
    let dimension = match proposal {
        MoveProposal::Insertion { event } => {
            let rate = rates.rate(event.kind);
            if rate <= 0.0 {
                return f64::NEG_INFINITY;
            }
            rate.ln() + (w.deletion / w.insertion).ln() + (2.0 * m * horizon).ln() - (n + 1.0).ln()
        }
        MoveProposal::Deletion { event, .. } => {
            -rates.rate(event.kind).ln() + (w.insertion / w.deletion).ln() + n.ln()
                - (2.0 * m * horizon).ln()
        }
        MoveProposal::Shuffle { .. } => 0.0,
    };

    likelihood + counts + exposure + dimension
}

/// Tallies of proposed and accepted moves by family.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceptanceStats {
    pub proposed: [u64; 3],
    pub accepted: [u64; 3],
}

impl AcceptanceStats {
    pub fn merge(&mut self, other: &AcceptanceStats) {
        for i in 0..3 {
            self.proposed[i] += other.proposed[i];
            self.accepted[i] += other.accepted[i];
        }
    }

    pub fn rate(&self, kind: MoveKind) -> Option<f64> {
        let i = kind.index();
        if self.proposed[i] == 0 {
            None
        } else {
            Some(self.accepted[i] as f64 / self.proposed[i] as f64)
        }
    }

    pub fn total_proposed(&self) -> u64 {
        self.proposed.iter().sum()
    }
}

/// Run `n_moves` proposals on one path with fixed rates.
///
/// Returns the updated path and the acceptance tallies. The input path must be
/// feasible with finite observation likelihood.
pub fn state_update_sweep(
    path: &Path,
    rates: &RateVector,
    spec: &ModelSpec,
    obs: &ObservationSeries,
    weights: &MoveWeights,
    n_moves: u64,
    rng: &mut impl Rng,
) -> Result<(Path, AcceptanceStats), McmcError> {
    weights.validate()?;
    rates.validate(spec)?;
    let mut current = path.clone();
    let mut summary = PathSummary::compute(&current, spec, obs)?;
    if summary.log_likelihood == f64::NEG_INFINITY {
        return Err(McmcError::InvalidConfig {
            message: "sweep started from a path with zero observation likelihood".into(),
        });
    }
    let mut stats = AcceptanceStats::default();
    sweep_cached(&mut current, &mut summary, rates, spec, obs, weights, n_moves, &mut stats, rng);
    Ok((current, stats))
}

/// The sweep inner loop over a cached `(path, summary)` pair.
#[allow(clippy::too_many_arguments)]
pub(crate) fn sweep_cached(
    path: &mut Path,
    summary: &mut PathSummary,
    rates: &RateVector,
    spec: &ModelSpec,
    obs: &ObservationSeries,
    weights: &MoveWeights,
    n_moves: u64,
    stats: &mut AcceptanceStats,
    rng: &mut impl Rng,
) {
    for _ in 0..n_moves {
        match propose_move(path, spec, weights, rng) {
            Err(MoveError::EmptyPathMove { attempted }) => {
                stats.proposed[attempted.index()] += 1;
            }
            Ok((candidate, proposal)) => {
                let move_idx = proposal.kind().index();
                stats.proposed[move_idx] += 1;
                let Ok(cand_summary) = PathSummary::compute(&candidate, spec, obs) else {
                    continue;
                };
                let ratio = acceptance_log_ratio_cached(
                    summary,
                    &cand_summary,
                    &proposal,
                    rates,
                    weights,
                    spec,
                    path.horizon,
                    path.events.len(),
                );
                let u: f64 = rng.random();
                if ratio >= 0.0 || u.ln() < ratio {
                    *path = candidate;
                    *summary = cand_summary;
                    stats.accepted[move_idx] += 1;
                }
            }
        }
    }
}

//! The hidden two-compartment process and its path-space density.
//!
//! Compartment 1 holds self-renewing stem cells, compartment 2 the clones they
//! feed. Cells carry one of two inherited labels (`d` or `G`) and the two
//! labeled subprocesses evolve independently with shared per-cell rates. Five
//! event kinds can act, each a Poisson process per eligible cell:
//!
//! | kind                | rate   | effect on `(z, x)` per label          |
//! |---------------------|--------|----------------------------------------|
//! | symmetric division  | lambda | `z + 1` (unchanged at the niche cap)    |
//! | commitment          | nu     | `z - 1`, `x + 1`                        |
//! | clonal death        | mu     | `x - 1`                                 |
//! | asymmetric division | eta    | `x + 1`                                 |
//! | apoptosis           | alpha  | `z - 1`                                 |
//!
//! A model variant activates a subset of kinds. Clonal death is always active,
//! and compartment 2 must be replenishable: either both symmetric division and
//! commitment are active, or asymmetric division is.
//!
//! For a realized path `omega` with events at `t_1 < ... < t_n` on `[0, T]`,
//! writing `m_k` for the propensity of event `k` in the state just before it
//! fires (eligible-cell count of its label times its rate), the log density is
//!
//! ```text
//! log f(omega | rho) = sum_k log m_k
//!                      - (lambda + nu + alpha + eta) * S_z - mu * S_x
//! ```
//!
//! where `S_z = integral of z_d + z_G dt` and `S_x = integral of x_d + x_G dt`
//! over `[0, T]`. Infeasible paths (an event with no eligible cell, an inactive
//! kind, disordered times) have density zero, reported here as `-inf`.
//!
//! Observations sit on top of the path: typing `N` clones at time `t` yields a
//! d-count `Y ~ Binomial(N, x_d(t) / (x_d(t) + x_G(t)))`. An occasion with
//! `N > 0` while compartment 2 is empty is impossible (`-inf`); `N = 0`
//! occasions contribute nothing.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::dataset::ObservationSeries;

/// Inherited clone label. Observed counts report the d-labeled fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    D,
    G,
}

impl Label {
    pub const BOTH: [Label; 2] = [Label::D, Label::G];

    pub fn index(self) -> usize {
        match self {
            Label::D => 0,
            Label::G => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::D => "d",
            Label::G => "G",
        }
    }
}

/// The five event kinds, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    SymmetricDivision,
    Commitment,
    ClonalDeath,
    AsymmetricDivision,
    Apoptosis,
}

impl EventKind {
    /// Canonical order; model names concatenate short names in this order.
    pub const ALL: [EventKind; 5] = [
        EventKind::SymmetricDivision,
        EventKind::Commitment,
        EventKind::ClonalDeath,
        EventKind::AsymmetricDivision,
        EventKind::Apoptosis,
    ];

    pub fn index(self) -> usize {
        match self {
            EventKind::SymmetricDivision => 0,
            EventKind::Commitment => 1,
            EventKind::ClonalDeath => 2,
            EventKind::AsymmetricDivision => 3,
            EventKind::Apoptosis => 4,
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            EventKind::SymmetricDivision => "S",
            EventKind::Commitment => "C",
            EventKind::ClonalDeath => "D",
            EventKind::AsymmetricDivision => "As",
            EventKind::Apoptosis => "Ap",
        }
    }

    /// Name of the kind's rate in configuration and serialized output.
    pub fn rate_name(self) -> &'static str {
        match self {
            EventKind::SymmetricDivision => "lambda",
            EventKind::Commitment => "nu",
            EventKind::ClonalDeath => "mu",
            EventKind::AsymmetricDivision => "eta",
            EventKind::Apoptosis => "alpha",
        }
    }

    pub fn from_rate_name(name: &str) -> Option<EventKind> {
        EventKind::ALL.into_iter().find(|k| k.rate_name() == name)
    }

    /// Whether the eligible population is compartment 2 (clones) rather than
    /// compartment 1 (stem cells).
    pub fn acts_on_clones(self) -> bool {
        matches!(self, EventKind::ClonalDeath)
    }
}

/// Cell counts per label within one compartment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LabelCounts {
    pub d: u64,
    pub g: u64,
}

impl LabelCounts {
    pub fn new(d: u64, g: u64) -> Self {
        LabelCounts { d, g }
    }

    pub fn get(&self, label: Label) -> u64 {
        match label {
            Label::D => self.d,
            Label::G => self.g,
        }
    }

    pub fn get_mut(&mut self, label: Label) -> &mut u64 {
        match label {
            Label::D => &mut self.d,
            Label::G => &mut self.g,
        }
    }

    pub fn total(&self) -> u64 {
        self.d + self.g
    }
}

/// Joint state of both compartments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PopulationState {
    /// Compartment 1: stem cells (`z`).
    pub hsc: LabelCounts,
    /// Compartment 2: observable clones (`x`).
    pub clones: LabelCounts,
}

impl PopulationState {
    pub fn new(hsc_d: u64, hsc_g: u64, clones_d: u64, clones_g: u64) -> Self {
        PopulationState {
            hsc: LabelCounts::new(hsc_d, hsc_g),
            clones: LabelCounts::new(clones_d, clones_g),
        }
    }

    /// The conventional starting state: 10 stem cells and 5 clones per label.
    pub fn default_initial() -> Self {
        PopulationState::new(10, 10, 5, 5)
    }

    pub fn total_hsc(&self) -> u64 {
        self.hsc.total()
    }

    pub fn total_clones(&self) -> u64 {
        self.clones.total()
    }

    /// Size of the subpopulation a given event kind and label acts on.
    pub fn eligible(&self, kind: EventKind, label: Label) -> u64 {
        if kind.acts_on_clones() {
            self.clones.get(label)
        } else {
            self.hsc.get(label)
        }
    }

    /// Observable d fraction, if any clones remain.
    pub fn fraction_d(&self) -> Option<f64> {
        let total = self.total_clones();
        if total == 0 {
            None
        } else {
            Some(self.clones.d as f64 / total as f64)
        }
    }
}

/// A model variant: the set of active event kinds plus an optional cap on the
/// total size of compartment 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ModelSpecRepr", into = "ModelSpecRepr")]
pub struct ModelSpec {
    active: [bool; 5],
    niche_cap: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct ModelSpecRepr {
    name: String,
    niche_cap: Option<u64>,
}

impl TryFrom<ModelSpecRepr> for ModelSpec {
    type Error = ModelError;
    fn try_from(repr: ModelSpecRepr) -> Result<Self, ModelError> {
        let spec = ModelSpec::parse(&repr.name)?;
        match repr.niche_cap {
            Some(cap) => spec.with_niche_cap(cap),
            None => Ok(spec),
        }
    }
}

impl From<ModelSpec> for ModelSpecRepr {
    fn from(spec: ModelSpec) -> Self {
        ModelSpecRepr { name: spec.name(), niche_cap: spec.niche_cap }
    }
}

impl ModelSpec {
    pub fn new(kinds: &[EventKind], niche_cap: Option<u64>) -> Result<Self, ModelError> {
        let mut active = [false; 5];
        for &k in kinds {
            if active[k.index()] {
                return Err(ModelError::DuplicateEvent { kind: k });
            }
            active[k.index()] = true;
        }
        let spec = ModelSpec { active, niche_cap };
        spec.check()?;
        Ok(spec)
    }

    /// Parse a model name such as `"SCDAs"`: active short names concatenated
    /// in canonical order.
    pub fn parse(name: &str) -> Result<Self, ModelError> {
        let mut kinds = Vec::new();
        let mut rest = name;
        while !rest.is_empty() {
            // Two-character names first: 'A' begins only "As" and "Ap".
            let kind = if let Some(tail) = rest.strip_prefix("As") {
                rest = tail;
                EventKind::AsymmetricDivision
            } else if let Some(tail) = rest.strip_prefix("Ap") {
                rest = tail;
                EventKind::Apoptosis
            } else if let Some(tail) = rest.strip_prefix('S') {
                rest = tail;
                EventKind::SymmetricDivision
            } else if let Some(tail) = rest.strip_prefix('C') {
                rest = tail;
                EventKind::Commitment
            } else if let Some(tail) = rest.strip_prefix('D') {
                rest = tail;
                EventKind::ClonalDeath
            } else {
                return Err(ModelError::UnknownEventToken { name: name.into(), rest: rest.into() });
            };
            if let Some(&prev) = kinds.last() {
                if kind.index() <= EventKind::index(prev) {
                    return Err(ModelError::NonCanonicalName { name: name.into() });
                }
            }
            kinds.push(kind);
        }
        ModelSpec::new(&kinds, None)
    }

    pub fn with_niche_cap(mut self, cap: u64) -> Result<Self, ModelError> {
        if cap == 0 {
            return Err(ModelError::InvalidNicheCap);
        }
        self.niche_cap = Some(cap);
        Ok(self)
    }

    fn check(&self) -> Result<(), ModelError> {
        if !self.is_active(EventKind::ClonalDeath) {
            return Err(ModelError::MissingClonalDeath);
        }
        let replenished = (self.is_active(EventKind::SymmetricDivision)
            && self.is_active(EventKind::Commitment))
            || self.is_active(EventKind::AsymmetricDivision);
        if !replenished {
            return Err(ModelError::NoReplenishment);
        }
        if self.niche_cap == Some(0) {
            return Err(ModelError::InvalidNicheCap);
        }
        Ok(())
    }

    pub fn name(&self) -> String {
        let mut s = String::new();
        for k in self.active_kinds() {
            s.push_str(k.short_name());
        }
        s
    }

    pub fn is_active(&self, kind: EventKind) -> bool {
        self.active[kind.index()]
    }

    pub fn active_kinds(&self) -> impl Iterator<Item = EventKind> + '_ {
        EventKind::ALL.into_iter().filter(|k| self.is_active(*k))
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|a| **a).count()
    }

    pub fn niche_cap(&self) -> Option<u64> {
        self.niche_cap
    }

    /// Whether a state satisfies the cap constraint.
    pub fn state_admissible(&self, state: &PopulationState) -> bool {
        self.niche_cap.is_none_or(|cap| state.total_hsc() <= cap)
    }
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum ModelError {
    #[error("unknown event token in model name {name:?} (at {rest:?})")]
    UnknownEventToken { name: String, rest: String },
    #[error("model name {name:?} not in canonical order S, C, D, As, Ap")]
    NonCanonicalName { name: String },
    #[error("event {kind:?} listed twice")]
    DuplicateEvent { kind: EventKind },
    #[error("clonal death must be active in every model variant")]
    MissingClonalDeath,
    #[error("compartment 2 cannot be replenished: need symmetric division with commitment, or asymmetric division")]
    NoReplenishment,
    #[error("niche cap must be at least 1")]
    InvalidNicheCap,
    #[error("rate {name} for inactive event must be 0, got {value}")]
    InactiveRateNonzero { name: &'static str, value: f64 },
    #[error("rate {name} must be finite and nonnegative, got {value}")]
    InvalidRate { name: &'static str, value: f64 },
}

/// Per-cell event rates, one per kind; inactive kinds carry 0.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RateVector {
    #[serde(rename = "lambda")]
    pub symmetric_division: f64,
    #[serde(rename = "nu")]
    pub commitment: f64,
    #[serde(rename = "mu")]
    pub clonal_death: f64,
    #[serde(rename = "eta")]
    pub asymmetric_division: f64,
    #[serde(rename = "alpha")]
    pub apoptosis: f64,
}

impl RateVector {
    pub fn zeros() -> Self {
        RateVector::default()
    }

    pub fn rate(&self, kind: EventKind) -> f64 {
        match kind {
            EventKind::SymmetricDivision => self.symmetric_division,
            EventKind::Commitment => self.commitment,
            EventKind::ClonalDeath => self.clonal_death,
            EventKind::AsymmetricDivision => self.asymmetric_division,
            EventKind::Apoptosis => self.apoptosis,
        }
    }

    pub fn rate_mut(&mut self, kind: EventKind) -> &mut f64 {
        match kind {
            EventKind::SymmetricDivision => &mut self.symmetric_division,
            EventKind::Commitment => &mut self.commitment,
            EventKind::ClonalDeath => &mut self.clonal_death,
            EventKind::AsymmetricDivision => &mut self.asymmetric_division,
            EventKind::Apoptosis => &mut self.apoptosis,
        }
    }

    pub fn set(mut self, kind: EventKind, value: f64) -> Self {
        *self.rate_mut(kind) = value;
        self
    }

    /// Sum of compartment-1 per-cell rates; multiplies the `S_z` exposure.
    pub fn hsc_rate_sum(&self) -> f64 {
        self.symmetric_division + self.commitment + self.asymmetric_division + self.apoptosis
    }

    pub fn validate(&self, spec: &ModelSpec) -> Result<(), ModelError> {
        for kind in EventKind::ALL {
            let value = self.rate(kind);
            if !value.is_finite() || value < 0.0 {
                return Err(ModelError::InvalidRate { name: kind.rate_name(), value });
            }
            if !spec.is_active(kind) && value != 0.0 {
                return Err(ModelError::InactiveRateNonzero { name: kind.rate_name(), value });
            }
        }
        Ok(())
    }
}

/// One realized event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathEvent {
    pub time: f64,
    pub kind: EventKind,
    pub label: Label,
}

/// A realized trajectory of the hidden process on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub horizon: f64,
    pub initial: PopulationState,
    pub events: Vec<PathEvent>,
}

impl Path {
    pub fn empty(initial: PopulationState, horizon: f64) -> Self {
        Path { horizon, initial, events: Vec::new() }
    }

    pub fn n_events(&self) -> usize {
        self.events.len()
    }

    /// Check time ordering and feasibility under a model variant.
    pub fn validate(&self, spec: &ModelSpec) -> Result<(), PathError> {
        self.validate_times()?;
        if !spec.state_admissible(&self.initial) {
            return Err(PathError::CapExceeded { at: 0.0 });
        }
        let mut state = self.initial;
        for event in &self.events {
            state = apply_event(&state, event.kind, event.label, spec)?;
        }
        Ok(())
    }

    fn validate_times(&self) -> Result<(), PathError> {
        if !self.horizon.is_finite() || self.horizon <= 0.0 {
            return Err(PathError::InvalidHorizon { horizon: self.horizon });
        }
        let mut prev = 0.0;
        for event in &self.events {
            if !event.time.is_finite() || event.time <= prev || event.time >= self.horizon {
                return Err(PathError::DisorderedTimes { time: event.time });
            }
            prev = event.time;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum PathError {
    #[error("event kind {kind:?} is not active in this model variant")]
    InactiveEvent { kind: EventKind },
    #[error("event {kind:?}/{label:?} fired with no eligible cell")]
    EmptySubpopulation { kind: EventKind, label: Label },
    #[error("event time {time} breaks strict ordering within (0, horizon)")]
    DisorderedTimes { time: f64 },
    #[error("horizon {horizon} must be finite and positive")]
    InvalidHorizon { horizon: f64 },
    #[error("compartment 1 exceeds the niche cap at t = {at}")]
    CapExceeded { at: f64 },
    #[error("observation at week {week} lies beyond the path horizon")]
    ObservationBeyondHorizon { week: f64 },
}

/// Apply one event to a state.
///
/// Symmetric division at the niche cap leaves the state unchanged: the
/// division happens (and contributes its propensity to the path density) but
/// one daughter is lost.
pub fn apply_event(
    state: &PopulationState,
    kind: EventKind,
    label: Label,
    spec: &ModelSpec,
) -> Result<PopulationState, PathError> {
    if !spec.is_active(kind) {
        return Err(PathError::InactiveEvent { kind });
    }
    if state.eligible(kind, label) == 0 {
        return Err(PathError::EmptySubpopulation { kind, label });
    }
    let mut next = *state;
    match kind {
        EventKind::SymmetricDivision => {
            if spec.niche_cap().is_none_or(|cap| state.total_hsc() < cap) {
                *next.hsc.get_mut(label) += 1;
            }
        }
        EventKind::Commitment => {
            *next.hsc.get_mut(label) -= 1;
            *next.clones.get_mut(label) += 1;
        }
        EventKind::ClonalDeath => {
            *next.clones.get_mut(label) -= 1;
        }
        EventKind::AsymmetricDivision => {
            *next.clones.get_mut(label) += 1;
        }
        EventKind::Apoptosis => {
            *next.hsc.get_mut(label) -= 1;
        }
    }
    Ok(next)
}

/// Propensity of one event channel: eligible-cell count times per-cell rate.
pub fn propensity(state: &PopulationState, kind: EventKind, label: Label, rates: &RateVector) -> f64 {
    state.eligible(kind, label) as f64 * rates.rate(kind)
}

/// A maximal interval on which the state is constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateInterval {
    pub start: f64,
    pub end: f64,
    pub state: PopulationState,
}

/// The piecewise-constant state over `[0, horizon]`.
///
/// Returns one interval per inter-event gap (including `[0, t_1)` and
/// `[t_n, horizon]`); intervals partition the window in order.
pub fn state_trajectory(path: &Path, spec: &ModelSpec) -> Result<Vec<StateInterval>, PathError> {
    path.validate_times()?;
    if !spec.state_admissible(&path.initial) {
        return Err(PathError::CapExceeded { at: 0.0 });
    }
    let mut out = Vec::with_capacity(path.events.len() + 1);
    let mut state = path.initial;
    let mut start = 0.0;
    for event in &path.events {
        out.push(StateInterval { start, end: event.time, state });
        state = apply_event(&state, event.kind, event.label, spec)?;
        start = event.time;
    }
    out.push(StateInterval { start, end: path.horizon, state });
    Ok(out)
}

/// Integrated cell counts `(S_z, S_x)` over the path window.
pub fn exposures(path: &Path, spec: &ModelSpec) -> Result<(f64, f64), PathError> {
    let mut s_z = 0.0;
    let mut s_x = 0.0;
    for iv in state_trajectory(path, spec)? {
        let dt = iv.end - iv.start;
        s_z += iv.state.total_hsc() as f64 * dt;
        s_x += iv.state.total_clones() as f64 * dt;
    }
    Ok((s_z, s_x))
}

/// Log density of a realized path under given rates.
///
/// Returns `-inf` for infeasible paths and for events whose propensity is zero
/// at the moment they fire.
pub fn log_path_density(path: &Path, rates: &RateVector, spec: &ModelSpec) -> f64 {
    if path.validate_times().is_err() || !spec.state_admissible(&path.initial) {
        return f64::NEG_INFINITY;
    }
    let mut state = path.initial;
    let mut log_m_sum = 0.0;
    let mut s_z = 0.0;
    let mut s_x = 0.0;
    let mut prev = 0.0;
    for event in &path.events {
        let dt = event.time - prev;
        s_z += state.total_hsc() as f64 * dt;
        s_x += state.total_clones() as f64 * dt;
        let m = propensity(&state, event.kind, event.label, rates);
        if m <= 0.0 {
            return f64::NEG_INFINITY;
        }
        state = match apply_event(&state, event.kind, event.label, spec) {
            Ok(next) => next,
            Err(_) => return f64::NEG_INFINITY,
        };
        log_m_sum += m.ln();
        prev = event.time;
    }
    let dt = path.horizon - prev;
    s_z += state.total_hsc() as f64 * dt;
    s_x += state.total_clones() as f64 * dt;
    log_m_sum - rates.hsc_rate_sum() * s_z - rates.clonal_death * s_x
}

/// Log of the binomial probability mass `P(Y = k | n, p)`.
pub fn binomial_log_pmf(n: u64, k: u64, p: f64) -> f64 {
    if k > n || !(0.0..=1.0).contains(&p) {
        return f64::NEG_INFINITY;
    }
    if p == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if p == 1.0 {
        return if k == n { 0.0 } else { f64::NEG_INFINITY };
    }
    let n_f = n as f64;
    let k_f = k as f64;
    let log_choose = ln_gamma(n_f + 1.0) - ln_gamma(k_f + 1.0) - ln_gamma(n_f - k_f + 1.0);
    log_choose + k_f * p.ln() + (n_f - k_f) * (1.0 - p).ln()
}

/// Log likelihood of an animal's observed d counts given a realized path.
///
/// Each occasion at time `t` with `N > 0` typed clones contributes a binomial
/// term with success probability `x_d(t) / (x_d(t) + x_G(t))`; if compartment 2
/// is empty at such an occasion the likelihood is zero (`-inf`). Empty
/// occasions (`N = 0`) contribute nothing. Occasions after the path horizon,
/// or an infeasible path, also give `-inf`.
pub fn log_obs_likelihood(path: &Path, spec: &ModelSpec, obs: &ObservationSeries) -> f64 {
    let trajectory = match state_trajectory(path, spec) {
        Ok(t) => t,
        Err(_) => return f64::NEG_INFINITY,
    };
    log_obs_likelihood_on(&trajectory, path.horizon, obs)
}

/// As [`log_obs_likelihood`], against an already computed trajectory.
pub fn log_obs_likelihood_on(
    trajectory: &[StateInterval],
    horizon: f64,
    obs: &ObservationSeries,
) -> f64 {
    let mut total = 0.0;
    let mut idx = 0;
    for record in &obs.records {
        if record.week > horizon {
            return f64::NEG_INFINITY;
        }
        if record.sample_size == 0 {
            continue;
        }
        // Observation times are nondecreasing, so walk the trajectory once.
        // The state at time t includes every event with time <= t.
        while idx + 1 < trajectory.len() && trajectory[idx].end <= record.week {
            idx += 1;
        }
        let state = trajectory[idx].state;
        match state.fraction_d() {
            None => return f64::NEG_INFINITY,
            Some(p) => total += binomial_log_pmf(record.sample_size, record.d_count, p),
        }
        if !total.is_finite() {
            return f64::NEG_INFINITY;
        }
    }
    total
}

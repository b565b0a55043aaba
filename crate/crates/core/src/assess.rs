//! Simulation-based model assessment: virtual cohorts at chosen parameter
//! values are compared to the observed animals criterion by criterion with
//! two-sample Kolmogorov-Smirnov tests, with the cohort die-out rate as the
//! final criterion.
//!
//! The default criteria are reconstructions and the report names the registry
//! used: mean and standard deviation of the d fraction over the whole series,
//! its coefficient of variation over the early observations, and its lag-one
//! autocorrelation.

use serde::{Deserialize, Serialize};

use crate::dataset::ObservationSeries;
use crate::model::{ModelSpec, PopulationState, RateVector};
use crate::rng::{derive_u64, stream};
use crate::simulate::{simulate_cohort, CohortResult, DieOutRule, ScheduleSpec, SimulateError};

#[derive(Debug, thiserror::Error)]
pub enum AssessError {
    #[error("both samples must be nonempty")]
    EmptySample,
    #[error("samples must be finite; found {0}")]
    NonFiniteSample(f64),
    #[error("virtual cohort must have at least 2 animals, got {0}")]
    CohortTooSmall(usize),
    #[error("no parameter draws supplied")]
    NoParameterDraws,
    #[error(transparent)]
    Simulate(#[from] SimulateError),
}

/// Two-sample Kolmogorov-Smirnov result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsTest {
    pub statistic: f64,
    pub p_value: f64,
}

fn sorted(sample: &[f64]) -> Result<Vec<f64>, AssessError> {
    if sample.is_empty() {
        return Err(AssessError::EmptySample);
    }
    if let Some(&bad) = sample.iter().find(|v| !v.is_finite()) {
        return Err(AssessError::NonFiniteSample(bad));
    }
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(s)
}

/// sup |F̂_a - F̂_b| over the pooled jump points.
fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] == x {
            i += 1;
        }
        while j < b.len() && b[j] == x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    // Once one sample is exhausted its CDF stays at 1; the gap there is
    // largest at the crossover already measured, except when the other sample
    // still has mass below 1.
    if i < a.len() {
        d = d.max(1.0 - j as f64 / m);
    }
    if j < b.len() {
        d = d.max(1.0 - i as f64 / n);
    }
    d
}

/// Complement CDF of the Kolmogorov distribution.
fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let p = if lambda < 1.18 {
        // Jacobi theta form, accurate where the direct series converges slowly.
        let t = (-std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda)).exp();
        let cdf = (2.0 * std::f64::consts::PI).sqrt() / lambda
            * (t + t.powi(9) + t.powi(25) + t.powi(49));
        1.0 - cdf
    } else {
        let mut sum = 0.0;
        let mut sign = 1.0;
        for j in 1..=100 {
            let term = (-2.0 * (j as f64).powi(2) * lambda * lambda).exp();
            sum += sign * term;
            if term < 1e-16 {
                break;
            }
            sign = -sign;
        }
        2.0 * sum
    };
    p.clamp(0.0, 1.0)
}

/// Two-sample KS test with the asymptotic Kolmogorov p-value at the standard
/// effective size nm/(n+m). The p-value is approximate for samples smaller
/// than about 10.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsTest, AssessError> {
    let (a, b) = (sorted(a)?, sorted(b)?);
    let d = ks_statistic(&a, &b);
    let en = (a.len() as f64 * b.len() as f64) / (a.len() + b.len()) as f64;
    Ok(KsTest { statistic: d, p_value: kolmogorov_tail(en.sqrt() * d) })
}

/// KS test with the small-sample refinement of the asymptotic p-value
/// (effective size adjusted by 0.12 + 0.11/sqrt(en)).
pub fn ks_two_sample_refined(a: &[f64], b: &[f64]) -> Result<KsTest, AssessError> {
    let (a, b) = (sorted(a)?, sorted(b)?);
    let d = ks_statistic(&a, &b);
    let en = ((a.len() as f64 * b.len() as f64) / (a.len() + b.len()) as f64).sqrt();
    Ok(KsTest { statistic: d, p_value: kolmogorov_tail((en + 0.12 + 0.11 / en) * d) })
}

/// How many leading valid records the early-window criterion uses.
pub const EARLY_WINDOW: usize = 10;

/// A named, pure statistic of one animal's d-fraction trajectory
/// (time, fraction) with zero-sample occasions already excluded.
/// Returns `None` when the trajectory cannot support the statistic.
#[derive(Clone, Copy)]
pub struct CriterionStatistic {
    pub name: &'static str,
    pub compute: fn(&[(f64, f64)]) -> Option<f64>,
}

impl std::fmt::Debug for CriterionStatistic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CriterionStatistic").field("name", &self.name).finish()
    }
}

fn mean(values: impl ExactSizeIterator<Item = f64> + Clone) -> f64 {
    let n = values.len() as f64;
    values.sum::<f64>() / n
}

fn sample_sd(values: &[f64]) -> f64 {
    let m = mean(values.iter().copied());
    let ss: f64 = values.iter().map(|v| (v - m).powi(2)).sum();
    (ss / (values.len() as f64 - 1.0)).sqrt()
}

fn mean_fraction(traj: &[(f64, f64)]) -> Option<f64> {
    (traj.len() >= 2).then(|| mean(traj.iter().map(|&(_, p)| p)))
}

fn sd_fraction(traj: &[(f64, f64)]) -> Option<f64> {
    (traj.len() >= 2).then(|| sample_sd(&traj.iter().map(|&(_, p)| p).collect::<Vec<_>>()))
}

fn early_cv_fraction(traj: &[(f64, f64)]) -> Option<f64> {
    if traj.len() < 2 {
        return None;
    }
    let early: Vec<f64> = traj.iter().take(EARLY_WINDOW).map(|&(_, p)| p).collect();
    let m = mean(early.iter().copied());
    if m == 0.0 {
        return None;
    }
    Some(sample_sd(&early) / m)
}

fn lag1_autocorr_fraction(traj: &[(f64, f64)]) -> Option<f64> {
    if traj.len() < 3 {
        return None;
    }
    let xs: Vec<f64> = traj.iter().map(|&(_, p)| p).collect();
    let m = mean(xs.iter().copied());
    let denom: f64 = xs.iter().map(|x| (x - m).powi(2)).sum();
    if denom == 0.0 {
        return None;
    }
    let num: f64 = xs.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
    Some(num / denom)
}

/// The default registry: criteria one to four; die-out rate is the fifth.
pub fn default_criteria() -> Vec<CriterionStatistic> {
    vec![
        CriterionStatistic { name: "mean_d_fraction", compute: mean_fraction },
        CriterionStatistic { name: "sd_d_fraction", compute: sd_fraction },
        CriterionStatistic { name: "early_cv_d_fraction", compute: early_cv_fraction },
        CriterionStatistic { name: "lag1_autocorr_d_fraction", compute: lag1_autocorr_fraction },
    ]
}

/// Evaluate every registered statistic on one trajectory; `None` marks
/// insufficient data for that statistic.
pub fn compute_criteria(traj: &[(f64, f64)], registry: &[CriterionStatistic]) -> Vec<Option<f64>> {
    registry.iter().map(|c| (c.compute)(traj)).collect()
}

/// One criterion's observed-versus-virtual comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CriterionComparison {
    pub name: String,
    pub observed: Vec<f64>,
    pub simulated: Vec<f64>,
    /// Animals skipped because the statistic was undefined for them.
    pub observed_skipped: usize,
    pub simulated_skipped: usize,
    /// Absent when either side had no usable animals.
    pub ks: Option<KsTest>,
}

/// The full assessment of one model against one observed cohort.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssessmentReport {
    pub model: String,
    pub registry: Vec<String>,
    pub criteria: Vec<CriterionComparison>,
    pub die_out_rate: f64,
    pub n_virtual: usize,
}

impl AssessmentReport {
    /// CSV report: one row per criterion plus a die-out line.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("criterion,statistic,p_value\n");
        for c in &self.criteria {
            match c.ks {
                Some(ks) => out.push_str(&format!("{},{},{}\n", c.name, ks.statistic, ks.p_value)),
                None => out.push_str(&format!("{},,\n", c.name)),
            }
        }
        out.push_str(&format!("die_out_rate,{},\n", self.die_out_rate));
        out
    }
}

/// Parameter values the virtual cohort is simulated at: one vector (for
/// example posterior means), or several posterior draws dealt round-robin
/// across the cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ParameterSource {
    Single(RateVector),
    Draws(Vec<RateVector>),
}

fn simulate_assessment_cohort(
    source: &ParameterSource,
    spec: &ModelSpec,
    initial: PopulationState,
    schedule: &ScheduleSpec,
    n_virtual: usize,
    seed: u64,
    rule: DieOutRule,
) -> Result<CohortResult, AssessError> {
    match source {
        ParameterSource::Single(rates) => {
            Ok(simulate_cohort(rates, spec, initial, schedule, n_virtual, seed, rule)?)
        }
        ParameterSource::Draws(draws) => {
            if draws.is_empty() {
                return Err(AssessError::NoParameterDraws);
            }
            // Animal counts split as evenly as possible across the draws,
            // each sub-cohort on its own derived seed.
            let k = draws.len();
            let mut animals = Vec::with_capacity(n_virtual);
            for (j, rates) in draws.iter().enumerate() {
                let share = n_virtual / k + usize::from(j < n_virtual % k);
                if share == 0 {
                    continue;
                }
                let sub_seed = derive_u64(seed, &[stream::ASSESS, j as u64]);
                let sub = simulate_cohort(rates, spec, initial, schedule, share, sub_seed, rule)?;
                for (a, mut animal) in sub.animals.into_iter().enumerate() {
                    animal.observations.animal_id = format!("virtual-{:02}-{:03}", j + 1, a + 1);
                    animals.push(animal);
                }
            }
            Ok(CohortResult { animals })
        }
    }
}

/// Simulate a virtual cohort and compare it to the observed animals.
#[allow(clippy::too_many_arguments)]
pub fn assess_model(
    source: &ParameterSource,
    spec: &ModelSpec,
    observed: &[ObservationSeries],
    initial: PopulationState,
    schedule: &ScheduleSpec,
    n_virtual: usize,
    seed: u64,
    rule: DieOutRule,
) -> Result<AssessmentReport, AssessError> {
    if n_virtual < 2 {
        return Err(AssessError::CohortTooSmall(n_virtual));
    }
    let cohort = simulate_assessment_cohort(source, spec, initial, schedule, n_virtual, seed, rule)?;
    let registry = default_criteria();

    let observed_traj: Vec<Vec<(f64, f64)>> = observed.iter().map(|a| a.valid_fractions()).collect();
    let virtual_traj: Vec<Vec<(f64, f64)>> =
        cohort.animals.iter().map(|a| a.observations.valid_fractions()).collect();

    let criteria = registry
        .iter()
        .map(|criterion| {
            let collect = |trajs: &[Vec<(f64, f64)>]| {
                let mut values = Vec::new();
                let mut skipped = 0;
                for t in trajs {
                    match (criterion.compute)(t) {
                        Some(v) if v.is_finite() => values.push(v),
                        _ => skipped += 1,
                    }
                }
                (values, skipped)
            };
            let (obs_values, observed_skipped) = collect(&observed_traj);
            let (sim_values, simulated_skipped) = collect(&virtual_traj);
            let ks = ks_two_sample(&obs_values, &sim_values).ok();
            CriterionComparison {
                name: criterion.name.to_string(),
                observed: obs_values,
                simulated: sim_values,
                observed_skipped,
                simulated_skipped,
                ks,
            }
        })
        .collect();

    Ok(AssessmentReport {
        model: spec.name(),
        registry: registry.iter().map(|c| c.name.to_string()).collect(),
        criteria,
        die_out_rate: cohort.die_out_rate(),
        n_virtual,
    })
}

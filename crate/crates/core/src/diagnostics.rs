//! Posterior summaries (means and highest-posterior-density intervals),
//! convergence diagnostics (cusum series, effective sample size), and
//! prior-sensitivity comparison.

use serde::{Deserialize, Serialize};

use crate::mcmc::{ChainDraws, Pooling};
use crate::model::EventKind;

#[derive(Debug, thiserror::Error)]
pub enum DiagnosticsError {
    #[error("need at least 10 samples, got {0}")]
    TooFewSamples(usize),
    #[error("interval mass {0} must lie in (0, 1]")]
    InvalidMass(f64),
    #[error("samples must be finite")]
    NonFiniteSample,
    #[error("run has no draws")]
    NoDraws,
    #[error("expected a {expected} run, got {got}")]
    WrongPooling { expected: Pooling, got: Pooling },
    #[error("prior sensitivity needs at least 2 settings, got {0}")]
    TooFewSettings(usize),
    #[error("prior settings disagree: {0}")]
    SettingsMismatch(String),
}

/// Shortest contiguous sorted window holding at least ⌈mass·n⌉ samples.
///
/// Valid for unimodal posteriors; with heavily tied samples the window can
/// degenerate to a point.
pub fn hpd_interval(samples: &[f64], mass: f64) -> Result<(f64, f64), DiagnosticsError> {
    if samples.len() < 10 {
        return Err(DiagnosticsError::TooFewSamples(samples.len()));
    }
    if !(mass > 0.0 && mass <= 1.0) {
        return Err(DiagnosticsError::InvalidMass(mass));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(DiagnosticsError::NonFiniteSample);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let k = ((mass * n as f64).ceil() as usize).clamp(1, n);
    let mut best = (sorted[0], sorted[k - 1]);
    for i in 1..=(n - k) {
        let (lo, hi) = (sorted[i], sorted[i + k - 1]);
        if hi - lo < best.1 - best.0 {
            best = (lo, hi);
        }
    }
    Ok(best)
}

/// Partial sums of deviations from the series mean; the last entry is zero up
/// to rounding, and drifts away from zero mark nonstationary stretches.
pub fn cusum(series: &[f64]) -> Vec<f64> {
    if series.is_empty() {
        return Vec::new();
    }
    let mean = series.iter().sum::<f64>() / series.len() as f64;
    let mut acc = 0.0;
    series
        .iter()
        .map(|x| {
            acc += x - mean;
            acc
        })
        .collect()
}

/// Effective sample size by the initial-positive-sequence rule: lag sums are
/// accumulated pairwise until a pair of autocovariances turns negative.
/// A constant series counts as fully independent. Can exceed the raw draw
/// count for antithetic series.
pub fn effective_sample_size(series: &[f64]) -> f64 {
    let n = series.len();
    if n < 4 {
        return n as f64;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let autocov = |lag: usize| -> f64 {
        series[..n - lag]
            .iter()
            .zip(&series[lag..])
            .map(|(a, b)| (a - mean) * (b - mean))
            .sum::<f64>()
            / n as f64
    };
    let var = autocov(0);
    if var == 0.0 {
        return n as f64;
    }
    let mut tau = 1.0;
    let mut lag = 1;
    while lag + 1 < n / 2 {
        let pair = autocov(lag) + autocov(lag + 1);
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair / var;
        lag += 2;
    }
    n as f64 / tau
}

/// Posterior summary of one rate series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub rate: String,
    pub mean: f64,
    pub hpd_low: f64,
    pub hpd_high: f64,
    pub ess: f64,
}

fn summarize_series(rate: &str, series: &[f64], mass: f64) -> Result<RateSummary, DiagnosticsError> {
    let mean = series.iter().sum::<f64>() / series.len() as f64;
    let (hpd_low, hpd_high) = hpd_interval(series, mass)?;
    Ok(RateSummary {
        rate: rate.to_string(),
        mean,
        hpd_low,
        hpd_high,
        ess: effective_sample_size(series),
    })
}

/// Posterior summary of a run: per active rate, mean and HPD interval at the
/// given mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub model: String,
    /// Animal the rates belong to; absent for pooled runs.
    pub animal_id: Option<String>,
    pub mass: f64,
    pub rates: Vec<RateSummary>,
}

impl PosteriorSummary {
    /// Summarize the shared rates of a pooled run.
    pub fn from_pooled(draws: &ChainDraws, mass: f64) -> Result<Self, DiagnosticsError> {
        if draws.pooling != Pooling::Pooled {
            return Err(DiagnosticsError::WrongPooling {
                expected: Pooling::Pooled,
                got: draws.pooling,
            });
        }
        if draws.draws.is_empty() {
            return Err(DiagnosticsError::NoDraws);
        }
        let rates = draws
            .model
            .active_kinds()
            .map(|kind| {
                let series = draws.rate_series(kind).expect("pooled run");
                summarize_series(kind.rate_name(), &series, mass)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(PosteriorSummary { model: draws.model.name(), animal_id: None, mass, rates })
    }

    /// Summarize one animal's rates from a per-animal run.
    pub fn from_animal(draws: &ChainDraws, idx: usize, mass: f64) -> Result<Self, DiagnosticsError> {
        if draws.pooling != Pooling::PerAnimal {
            return Err(DiagnosticsError::WrongPooling {
                expected: Pooling::PerAnimal,
                got: draws.pooling,
            });
        }
        if draws.draws.is_empty() {
            return Err(DiagnosticsError::NoDraws);
        }
        let rates = draws
            .model
            .active_kinds()
            .map(|kind| {
                let series = draws.animal_rate_series(kind, idx).expect("per-animal run");
                summarize_series(kind.rate_name(), &series, mass)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(PosteriorSummary {
            model: draws.model.name(),
            animal_id: Some(draws.animal_ids[idx].clone()),
            mass,
            rates,
        })
    }

    /// CSV rows: model, rate, mean, hpd_low, hpd_high.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("model,rate,mean,hpd_low,hpd_high\n");
        for r in &self.rates {
            let model = match &self.animal_id {
                Some(id) => format!("{}[{}]", self.model, id),
                None => self.model.clone(),
            };
            out.push_str(&format!("{},{},{},{},{}\n", model, r.rate, r.mean, r.hpd_low, r.hpd_high));
        }
        out
    }
}

/// One rate under one prior setting, with the shift against the first
/// setting as the divergence summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSensitivityRow {
    pub prior: String,
    pub rate: String,
    pub mean: f64,
    pub hpd_low: f64,
    pub hpd_high: f64,
    /// |mean − mean under the first-named prior|.
    pub mean_shift: f64,
}

/// Posterior comparison of the same model and data under different priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSensitivity {
    pub model: String,
    pub baseline: String,
    pub mass: f64,
    pub rows: Vec<PriorSensitivityRow>,
}

impl PriorSensitivity {
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("prior,rate,mean,hpd_low,hpd_high,mean_shift\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.prior, r.rate, r.mean, r.hpd_low, r.hpd_high, r.mean_shift
            ));
        }
        out
    }

    /// Largest mean shift of one rate across prior settings.
    pub fn max_shift(&self, kind: EventKind) -> Option<f64> {
        self.rows
            .iter()
            .filter(|r| r.rate == kind.rate_name())
            .map(|r| r.mean_shift)
            .fold(None, |acc, v| Some(acc.map_or(v, |a: f64| a.max(v))))
    }
}

/// Compare pooled runs of the same model under at least two named priors.
pub fn prior_sensitivity(
    named_runs: &[(String, &ChainDraws)],
    mass: f64,
) -> Result<PriorSensitivity, DiagnosticsError> {
    if named_runs.len() < 2 {
        return Err(DiagnosticsError::TooFewSettings(named_runs.len()));
    }
    let model = &named_runs[0].1.model;
    for (name, run) in named_runs {
        if run.model != *model {
            return Err(DiagnosticsError::SettingsMismatch(format!(
                "setting {name} fits {}, expected {}",
                run.model.name(),
                model.name()
            )));
        }
    }
    let summaries = named_runs
        .iter()
        .map(|(name, run)| Ok((name.clone(), PosteriorSummary::from_pooled(run, mass)?)))
        .collect::<Result<Vec<_>, DiagnosticsError>>()?;
    let baseline = &summaries[0].1;
    let mut rows = Vec::new();
    for (name, summary) in &summaries {
        for (r, base) in summary.rates.iter().zip(&baseline.rates) {
            rows.push(PriorSensitivityRow {
                prior: name.clone(),
                rate: r.rate.clone(),
                mean: r.mean,
                hpd_low: r.hpd_low,
                hpd_high: r.hpd_high,
                mean_shift: (r.mean - base.mean).abs(),
            });
        }
    }
    Ok(PriorSensitivity {
        model: model.name(),
        baseline: summaries[0].0.clone(),
        mass,
        rows,
    })
}

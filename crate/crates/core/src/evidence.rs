//! Integrated likelihoods via harmonic means, Bayes factors, and the
//! heterogeneous-versus-pooled comparison.
//!
//! The basic estimator is the harmonic mean of the observation likelihoods of
//! posterior draws: log p̂ = log B − logsumexp(−ℓ_i) over the B draws with
//! finite ℓ_i. Conditioning on one rate replaces ℓ_i with the integrated
//! likelihood of an inner chain run with that rate pinned. The plain estimate
//! is always reported; an optional trimming stabilizer that drops the
//! smallest likelihoods is carried alongside, never in its place.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::ObservationSeries;
use crate::mcmc::{run_chain, ChainConfig, Pooling, PriorSpec};
use crate::model::{EventKind, ModelSpec};
use crate::rng::{derive_u64, stream};

#[derive(Debug, thiserror::Error)]
pub enum EvidenceError {
    #[error("no likelihood draws supplied")]
    NoDraws,
    #[error("every likelihood draw has zero likelihood")]
    AllImpossible,
    #[error("trim fraction {0} must lie in [0, 1)")]
    InvalidTrim(f64),
    #[error("all {0} inner conditional chains failed")]
    AllInnerChainsFailed(usize),
}

/// What the likelihood draws are conditioned on: full latent paths, or one
/// pinned rate with everything else integrated out by an inner chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Conditioning {
    Path,
    Rate(EventKind),
}

impl fmt::Display for Conditioning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Conditioning::Path => f.write_str("path"),
            Conditioning::Rate(kind) => f.write_str(kind.rate_name()),
        }
    }
}

impl FromStr for Conditioning {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "path" {
            return Ok(Conditioning::Path);
        }
        EventKind::from_rate_name(s)
            .map(Conditioning::Rate)
            .ok_or_else(|| format!("unknown conditioning {s:?}; expected path or a rate name"))
    }
}

impl From<Conditioning> for String {
    fn from(c: Conditioning) -> String {
        c.to_string()
    }
}

impl TryFrom<String> for Conditioning {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

/// Stabilized companion value: the estimate with the smallest likelihoods
/// dropped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrimmedEstimate {
    pub fraction: f64,
    pub n_trimmed: usize,
    pub log_value: f64,
}

/// One integrated-likelihood estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegratedLikelihoodEstimate {
    pub model: String,
    pub conditioning: Conditioning,
    /// log p̂ on the data scale.
    pub log_value: f64,
    /// Draws the estimate used.
    pub n_used: usize,
    /// Draws excluded: zero-likelihood draws, or failed inner chains.
    pub n_dropped: usize,
    /// Delta-method standard error of `log_value`; a Monte Carlo spread
    /// diagnostic, not a credible interval.
    pub mc_se: f64,
    pub trimmed: Option<TrimmedEstimate>,
}

/// Log of the mean of exp(values), computed as max + ln(mean of shifted
/// terms) so a constant input returns that constant exactly. Summands are
/// sorted first, making the result exactly invariant under permutations of
/// the input.
fn log_mean_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let mut shifted: Vec<f64> = values.iter().map(|v| v - max).collect();
    shifted.sort_by(f64::total_cmp);
    let sum: f64 = shifted.iter().map(|v| v.exp()).sum();
    max + (sum / values.len() as f64).ln()
}

struct HarmonicMean {
    log_value: f64,
    n_used: usize,
    n_dropped: usize,
    mc_se: f64,
}

/// Harmonic mean over the draws with finite log likelihood.
fn harmonic_mean(logliks: &[f64]) -> Result<HarmonicMean, EvidenceError> {
    if logliks.is_empty() {
        return Err(EvidenceError::NoDraws);
    }
    let finite: Vec<f64> = logliks.iter().copied().filter(|l| l.is_finite()).collect();
    let n_dropped = logliks.len() - finite.len();
    if finite.is_empty() {
        return Err(EvidenceError::AllImpossible);
    }
    let b = finite.len() as f64;
    let neg: Vec<f64> = finite.iter().map(|l| -l).collect();
    let log_mean = log_mean_exp(&neg);
    let neg2: Vec<f64> = finite.iter().map(|l| -2.0 * l).collect();
    let log_mean_sq = log_mean_exp(&neg2);
    // Var(w) = E[w^2] - E[w]^2 with w_i = 1/L_i, assembled in log space; the
    // clamp covers the rounding case where the two moments coincide.
    let ratio = (2.0 * log_mean - log_mean_sq).min(0.0);
    let log_var = log_mean_sq + (-ratio.exp()).ln_1p();
    let mc_se = if log_var == f64::NEG_INFINITY {
        0.0
    } else {
        (0.5 * log_var - log_mean).exp() / b.sqrt()
    };
    Ok(HarmonicMean { log_value: -log_mean, n_used: finite.len(), n_dropped, mc_se })
}

/// Trimmed companion: drop the smallest `fraction` of the finite draws.
fn trimmed_mean(logliks: &[f64], fraction: f64) -> Result<TrimmedEstimate, EvidenceError> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(EvidenceError::InvalidTrim(fraction));
    }
    let mut finite: Vec<f64> = logliks.iter().copied().filter(|l| l.is_finite()).collect();
    if finite.is_empty() {
        return Err(EvidenceError::AllImpossible);
    }
    finite.sort_by(f64::total_cmp);
    let n_trimmed = ((fraction * finite.len() as f64).floor() as usize).min(finite.len() - 1);
    let kept = &finite[n_trimmed..];
    let hm = harmonic_mean(kept)?;
    Ok(TrimmedEstimate { fraction, n_trimmed, log_value: hm.log_value })
}

/// Harmonic-mean estimate from raw per-draw log likelihoods.
pub fn harmonic_mean_logliks(
    model: &str,
    conditioning: Conditioning,
    logliks: &[f64],
    trim: Option<f64>,
) -> Result<IntegratedLikelihoodEstimate, EvidenceError> {
    let hm = harmonic_mean(logliks)?;
    let trimmed = trim.map(|q| trimmed_mean(logliks, q)).transpose()?;
    Ok(IntegratedLikelihoodEstimate {
        model: model.to_string(),
        conditioning,
        log_value: hm.log_value,
        n_used: hm.n_used,
        n_dropped: hm.n_dropped,
        mc_se: hm.mc_se,
        trimmed,
    })
}

/// Path-conditioned integrated likelihood of a finished run.
pub fn harmonic_mean_path(
    draws: &crate::mcmc::ChainDraws,
    trim: Option<f64>,
) -> Result<IntegratedLikelihoodEstimate, EvidenceError> {
    harmonic_mean_logliks(&draws.model.name(), Conditioning::Path, &draws.total_loglik_series(), trim)
}

/// Integrated likelihood conditioned on one rate.
///
/// For each posterior draw of the chosen rate an inner chain is run with that
/// rate pinned (fresh seed derived from the inner config's seed and the draw
/// index); the inner path-conditioned estimates are then combined by the
/// outer harmonic mean. Inner chains for distinct draws run concurrently.
/// Failed inner chains are skipped and counted in `n_dropped`.
#[allow(clippy::too_many_arguments)]
pub fn conditional_marginal(
    theta_draws: &[f64],
    which: EventKind,
    data: &[ObservationSeries],
    spec: &ModelSpec,
    prior: &PriorSpec,
    inner: &ChainConfig,
    trim: Option<f64>,
) -> Result<IntegratedLikelihoodEstimate, EvidenceError> {
    if theta_draws.is_empty() {
        return Err(EvidenceError::NoDraws);
    }
    let inner_logs: Vec<Option<f64>> = theta_draws
        .par_iter()
        .enumerate()
        .map(|(i, &theta)| {
            let mut cfg = inner.clone();
            cfg.pinned.retain(|(kind, _)| *kind != which);
            cfg.pinned.push((which, theta));
            cfg.seed = derive_u64(inner.seed, &[stream::EVIDENCE_INNER, i as u64]);
            let out = run_chain(data, spec, prior, Pooling::Pooled, &cfg).ok()?;
            let hm = harmonic_mean(&out.total_loglik_series()).ok()?;
            Some(hm.log_value)
        })
        .collect();
    let values: Vec<f64> = inner_logs.iter().copied().flatten().collect();
    if values.is_empty() {
        return Err(EvidenceError::AllInnerChainsFailed(theta_draws.len()));
    }
    let n_failed = theta_draws.len() - values.len();
    let hm = harmonic_mean(&values)?;
    let trimmed = trim.map(|q| trimmed_mean(&values, q)).transpose()?;
    Ok(IntegratedLikelihoodEstimate {
        model: spec.name(),
        conditioning: Conditioning::Rate(which),
        log_value: hm.log_value,
        n_used: hm.n_used,
        n_dropped: hm.n_dropped + n_failed,
        mc_se: hm.mc_se,
        trimmed,
    })
}

/// Bayes factor of A over B from two estimates on the same data.
pub fn bayes_factor(a: &IntegratedLikelihoodEstimate, b: &IntegratedLikelihoodEstimate) -> f64 {
    (a.log_value - b.log_value).exp()
}

/// Heterogeneous-versus-pooled comparison for one model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeterogeneityComparison {
    /// Sum of per-animal log evidences (independent animals).
    pub log_heterogeneous: f64,
    pub log_pooled: f64,
    pub log_bayes_factor: f64,
}

impl HeterogeneityComparison {
    /// Bayes factor heterogeneous over pooled.
    pub fn bayes_factor(&self) -> f64 {
        self.log_bayes_factor.exp()
    }
}

/// Compare a set of single-animal fits against one pooled fit of the same
/// model on the same animals.
pub fn heterogeneity_compare(
    per_animal: &[IntegratedLikelihoodEstimate],
    pooled: &IntegratedLikelihoodEstimate,
) -> HeterogeneityComparison {
    let log_heterogeneous: f64 = per_animal.iter().map(|e| e.log_value).sum();
    HeterogeneityComparison {
        log_heterogeneous,
        log_pooled: pooled.log_value,
        log_bayes_factor: log_heterogeneous - pooled.log_value,
    }
}

/// Long-form CSV report: one row per estimate, with a Bayes factor against
/// the named baseline model under the same conditioning when available.
pub fn evidence_report_csv(
    estimates: &[IntegratedLikelihoodEstimate],
    baseline: Option<&str>,
) -> String {
    let mut out = String::from(
        "model,conditioning,log_evidence,mc_se,n_used,n_dropped,log_evidence_trimmed,bf_vs_baseline\n",
    );
    for est in estimates {
        let trimmed = est
            .trimmed
            .map(|t| t.log_value.to_string())
            .unwrap_or_default();
        let bf = baseline
            .and_then(|base| {
                estimates
                    .iter()
                    .find(|e| e.model == base && e.conditioning == est.conditioning)
            })
            .map(|base| bayes_factor(est, base).to_string())
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            est.model, est.conditioning, est.log_value, est.mc_se, est.n_used, est.n_dropped, trimmed, bf
        ));
    }
    out
}

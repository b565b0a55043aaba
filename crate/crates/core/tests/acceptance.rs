//! Acceptance gate for the library: reported die-out behavior of the fitted
//! variants, exactness of the sampler's acceptance ratio and conjugate
//! updates, prior reproduction of the full Gibbs loop, estimator oracles,
//! and a brute-force density check on every small path.
//!
//! Each test prints a single `acceptance: <name>: PASS|FAIL` line (shown with
//! `--nocapture`) and then asserts, so the suite doubles as a checklist.

use hsc_core::dataset::ObservationSeries;
use hsc_core::diagnostics::hpd_interval;
use hsc_core::evidence::{harmonic_mean_logliks, Conditioning};
use hsc_core::mcmc::{
    acceptance_log_ratio, propose_move, sufficient_stats, update_rates, ChainConfig, GibbsChain,
    MoveProposal, MoveWeights, PathMoves, Pooling, PriorSpec, RatePrior, SufficientStats,
};
use hsc_core::model::{
    log_obs_likelihood, log_path_density, EventKind, Label, ModelSpec, Path, PathEvent,
    PopulationState, RateVector,
};
use hsc_core::rng::{derive_rng, derive_u64};
use hsc_core::simulate::{
    simulate_cohort, simulate_observations, simulate_path_with_budget, DieOutRule,
    SampleSizeRule, ScheduleSpec, Spacing,
};
use rand::Rng;
use rand_distr::Distribution;

fn check(name: &str, pass: bool, details: &str) {
    println!("acceptance: {name}: {} ({details})", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{name}: {details}");
}

fn rates_of(pairs: &[(EventKind, f64)]) -> RateVector {
    let mut r = RateVector::zeros();
    for &(k, v) in pairs {
        r = r.set(k, v);
    }
    r
}

fn cohort_die_out_rate(
    spec: &ModelSpec,
    rates: &RateVector,
    horizon: f64,
    n_animals: usize,
    seed: u64,
) -> f64 {
    let schedule = ScheduleSpec {
        horizon,
        spacing: Spacing::Fixed(horizon / 10.0),
        sample_size: SampleSizeRule::Fixed(20),
    };
    simulate_cohort(
        rates,
        spec,
        PopulationState::default_initial(),
        &schedule,
        n_animals,
        seed,
        DieOutRule::Compartment1,
    )
    .unwrap()
    .die_out_rate()
}

/// The commitment-only variant at its reported posterior means is expected to
/// lose compartment 1 in essentially every virtual animal by week 100.
///
/// Without symmetric division each compartment-1 cell leaves independently at
/// rate `nu + alpha` = 0.01164 per week, so extinction of all twenty by
/// t = 100 has probability (1 - exp(-1.164))^20, about 6e-4, and the observed
/// rate here is 0. The companion test below shows the same variant does reach
/// near-certain die-out once the horizon passes roughly 550 weeks. The bound
/// asserted here is kept as stated and the test is expected to fail.
#[test]
fn extinction_prone_variant_reaches_the_reported_die_out_by_week_100() {
    let spec = ModelSpec::parse("CDAsAp").unwrap();
    let rates = rates_of(&[
        (EventKind::Commitment, 0.00738),
        (EventKind::ClonalDeath, 0.05969),
        (EventKind::AsymmetricDivision, 0.03338),
        (EventKind::Apoptosis, 0.00426),
    ]);
    let rate = cohort_die_out_rate(&spec, &rates, 100.0, 500, 1001);
    check(
        "commitment-only variant die-out by week 100 >= 0.96",
        rate >= 0.96,
        &format!(
            "observed {rate:.4}; per-cell exit rate 0.01164/week makes 20-cell extinction \
             by week 100 a ~6e-4 event, so the stated horizon cannot produce this rate"
        ),
    );
}

/// Same variant and rates, horizon long enough for the per-cell exit clock.
#[test]
fn extinction_prone_variant_dies_out_given_a_long_enough_horizon() {
    let spec = ModelSpec::parse("CDAsAp").unwrap();
    let rates = rates_of(&[
        (EventKind::Commitment, 0.00738),
        (EventKind::ClonalDeath, 0.05969),
        (EventKind::AsymmetricDivision, 0.03338),
        (EventKind::Apoptosis, 0.00426),
    ]);
    let rate = cohort_die_out_rate(&spec, &rates, 700.0, 500, 1002);
    check(
        "commitment-only variant die-out by week 700 >= 0.96",
        rate >= 0.96,
        &format!("observed {rate:.4}"),
    );
}

/// The self-renewing variant at its reported posterior means persists.
#[test]
fn self_renewing_variant_persists_through_week_100() {
    let spec = ModelSpec::parse("SDAsAp").unwrap();
    let rates = rates_of(&[
        (EventKind::SymmetricDivision, 0.0659),
        (EventKind::ClonalDeath, 0.04538),
        (EventKind::AsymmetricDivision, 0.00136),
        (EventKind::Apoptosis, 0.00142),
    ]);
    let rate = cohort_die_out_rate(&spec, &rates, 100.0, 500, 1003);
    check(
        "self-renewing variant die-out by week 100 <= 0.02",
        rate <= 0.02,
        &format!("observed {rate:.4}"),
    );
}

/// The four-event variant fitted to the transplanted animal sits near the
/// reported 14% die-out, within the binomial noise band for 50 animals.
#[test]
fn committed_variant_die_out_stays_in_the_reported_band() {
    let spec = ModelSpec::parse("SCDAs").unwrap();
    let rates = rates_of(&[
        (EventKind::SymmetricDivision, 0.093),
        (EventKind::Commitment, 0.079),
        (EventKind::ClonalDeath, 0.193),
        (EventKind::AsymmetricDivision, 0.078),
    ]);
    let rate = cohort_die_out_rate(&spec, &rates, 100.0, 50, 1004);
    check(
        "four-event variant die-out within 0.14 +/- 0.15",
        (rate - 0.14).abs() <= 0.15,
        &format!("observed {rate:.4}"),
    );
}

/// The sampler's factored acceptance ratio must agree with a from-scratch
/// recomputation: full path density difference, full observation likelihood
/// difference, and the proposal-density correction assembled independently.
#[test]
fn factored_acceptance_ratio_matches_direct_recomputation() {
    let variants: [(&str, &[(EventKind, f64)]); 5] = [
        ("SCD", &[
            (EventKind::SymmetricDivision, 0.09),
            (EventKind::Commitment, 0.08),
            (EventKind::ClonalDeath, 0.14),
        ]),
        ("SCDAp", &[
            (EventKind::SymmetricDivision, 0.11),
            (EventKind::Commitment, 0.06),
            (EventKind::ClonalDeath, 0.12),
            (EventKind::Apoptosis, 0.03),
        ]),
        ("CDAsAp", &[
            (EventKind::Commitment, 0.05),
            (EventKind::ClonalDeath, 0.10),
            (EventKind::AsymmetricDivision, 0.09),
            (EventKind::Apoptosis, 0.04),
        ]),
        ("SDAsAp", &[
            (EventKind::SymmetricDivision, 0.08),
            (EventKind::ClonalDeath, 0.09),
            (EventKind::AsymmetricDivision, 0.07),
            (EventKind::Apoptosis, 0.02),
        ]),
        ("SCDAs", &[
            (EventKind::SymmetricDivision, 0.093),
            (EventKind::Commitment, 0.079),
            (EventKind::ClonalDeath, 0.193),
            (EventKind::AsymmetricDivision, 0.078),
        ]),
    ];

    let direct = |cur: &Path,
                  cand: &Path,
                  proposal: &MoveProposal,
                  rates: &RateVector,
                  spec: &ModelSpec,
                  obs: &ObservationSeries,
                  w: &MoveWeights| {
        let cand_path = log_path_density(cand, rates, spec);
        let cand_obs = log_obs_likelihood(cand, spec, obs);
        if cand_path == f64::NEG_INFINITY || cand_obs == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        let cur_path = log_path_density(cur, rates, spec);
        let cur_obs = log_obs_likelihood(cur, spec, obs);
        let m = spec.active_count() as f64;
        let n = cur.events.len() as f64;
        let proposal_term = match proposal {
            MoveProposal::Insertion { .. } => {
                (w.deletion / w.insertion).ln() + (2.0 * m * cur.horizon).ln() - (n + 1.0).ln()
            }
            MoveProposal::Deletion { .. } => {
                (w.insertion / w.deletion).ln() + n.ln() - (2.0 * m * cur.horizon).ln()
            }
            MoveProposal::Shuffle { .. } => 0.0,
        };
        (cand_path - cur_path) + (cand_obs - cur_obs) + proposal_term
    };

    let mut n_compared = 0u64;
    let mut n_finite = 0u64;
    let mut worst: f64 = 0.0;
    for (v, (name, pairs)) in variants.iter().enumerate() {
        let spec = ModelSpec::parse(name).unwrap();
        let rates = rates_of(pairs);
        let weights = if v % 2 == 0 {
            MoveWeights::default()
        } else {
            MoveWeights { deletion: 0.25, insertion: 0.5, shuffle: 0.25 }
        };
        let mut rng = derive_rng(7_100 + v as u64, &[]);
        let mut path = simulate_path_with_budget(
            &rates,
            &spec,
            PopulationState::default_initial(),
            8.0,
            Some(100_000),
            &mut rng,
        )
        .unwrap();
        let schedule = ScheduleSpec {
            horizon: 8.0,
            spacing: Spacing::Fixed(2.0),
            sample_size: SampleSizeRule::Fixed(10),
        };
        let obs = simulate_observations(&path, &spec, &schedule, "probe", &mut rng).unwrap();

        for _ in 0..2_100 {
            let Ok((candidate, proposal)) = propose_move(&path, &spec, &weights, &mut rng) else {
                continue;
            };
            let factored =
                acceptance_log_ratio(&path, &candidate, &proposal, &rates, &spec, &obs, &weights);
            let from_scratch = direct(&path, &candidate, &proposal, &rates, &spec, &obs, &weights);
            n_compared += 1;
            if factored == f64::NEG_INFINITY || from_scratch == f64::NEG_INFINITY {
                assert_eq!(
                    factored, from_scratch,
                    "one form rejects outright and the other does not"
                );
            } else {
                n_finite += 1;
                worst = worst.max((factored - from_scratch).abs());
            }
            // Evolve the path with the usual Metropolis rule so later
            // proposals see a spread of configurations.
            if factored >= 0.0 || rng.random::<f64>().ln() < factored {
                path = candidate;
            }
        }
    }
    assert!(n_compared >= 10_000, "only {n_compared} proposals compared");
    assert!(n_finite >= 5_000, "only {n_finite} finite comparisons");
    check(
        "factored acceptance ratio within 1e-9 of direct recomputation",
        worst < 1e-9,
        &format!("max |difference| {worst:.3e} over {n_compared} proposals"),
    );
}

fn prior_reproduction(prior: RatePrior, seed: u64, label: &str) {
    let spec = ModelSpec::parse("SCDAsAp").unwrap();
    let prior_spec = PriorSpec::iid(prior, &spec);
    let kinds: Vec<EventKind> = spec.active_kinds().collect();

    let burn_in = 500u64;
    let thinning = 5u64;
    let kept = 100_000u64;
    let mut config = ChainConfig::new(burn_in + kept * thinning, burn_in, thinning, seed);
    config.horizon = Some(2.0);
    config.initial_state = PopulationState::new(1, 1, 1, 1);
    config.path_moves = PathMoves::Fixed(60);

    let data = vec![ObservationSeries::new("blank", vec![]).unwrap()];
    let mut chain = GibbsChain::new(&data, &spec, &prior_spec, Pooling::Pooled, &config).unwrap();
    let mut series: Vec<Vec<f64>> = vec![Vec::with_capacity(kept as usize); kinds.len()];
    chain
        .run(|draw| {
            let rates = draw.rates.expect("pooled draws carry shared rates");
            for (slot, &kind) in series.iter_mut().zip(&kinds) {
                slot.push(rates.rate(kind));
            }
        })
        .unwrap();
    assert_eq!(series[0].len() as u64, kept);

    let mut worst_p = 1.0f64;
    let mut details = String::new();
    for (i, &kind) in kinds.iter().enumerate() {
        let mut rng = derive_rng(seed, &[9_900, i as u64]);
        let reference: Vec<f64> = (0..kept).map(|_| prior_spec.get(kind).unwrap().sample(&mut rng)).collect();
        let ks = hsc_core::assess::ks_two_sample(&series[i], &reference).unwrap();
        worst_p = worst_p.min(ks.p_value);
        details.push_str(&format!("{}: p={:.4} ", kind.rate_name(), ks.p_value));
    }
    check(
        &format!("no-data chain reproduces the {label} prior at p > 0.01"),
        worst_p > 0.01,
        details.trim_end(),
    );
}

/// A chain run against an animal with no typed samples must return its prior:
/// this drives every path move and both conjugate updates jointly.
#[test]
fn no_data_chain_reproduces_the_gamma_prior() {
    prior_reproduction(RatePrior::Gamma { shape: 5.0, rate: 50.0 }, 42_001, "Gamma(5, 50)");
}

#[test]
fn no_data_chain_reproduces_the_uniform_prior() {
    prior_reproduction(RatePrior::Uniform { upper: 0.5 }, 42_002, "Uniform(0, 0.5)");
}

/// Conditional posterior CDF by composite Simpson integration of the
/// unnormalized density, for comparison against sampled rate updates.
struct IntegratedPosterior {
    step: f64,
    cdf: Vec<f64>,
}

impl IntegratedPosterior {
    fn new(prior: &RatePrior, k: u64, exposure: f64) -> Self {
        let (upper, log_density): (f64, Box<dyn Fn(f64) -> f64>) = match *prior {
            RatePrior::Gamma { shape, rate } => {
                let a = shape + k as f64;
                let b = rate + exposure;
                ((a + 15.0 * a.sqrt().max(1.0)) / b, Box::new(move |x: f64| {
                    if x == 0.0 {
                        if a == 1.0 { 0.0 } else { f64::NEG_INFINITY }
                    } else {
                        (a - 1.0) * x.ln() - b * x
                    }
                }))
            }
            RatePrior::Uniform { upper } => {
                let kk = k as f64;
                (upper, Box::new(move |x: f64| {
                    if x == 0.0 {
                        if k == 0 { 0.0 } else { f64::NEG_INFINITY }
                    } else {
                        kk * x.ln() - exposure * x
                    }
                }))
            }
        };

        let n = 40_000usize; // even number of Simpson panels
        let step = upper / n as f64;
        let values: Vec<f64> = (0..=n).map(|i| log_density(step * i as f64)).collect();
        let peak = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let d: Vec<f64> = values.iter().map(|v| (v - peak).exp()).collect();
        let mut cdf = vec![0.0; n + 1];
        for j in (2..=n).step_by(2) {
            cdf[j] = cdf[j - 2] + step / 3.0 * (d[j - 2] + 4.0 * d[j - 1] + d[j]);
            // Odd grid points get the trapezoid fill-in; only used for lookup.
            cdf[j - 1] = cdf[j - 2] + step / 2.0 * (d[j - 2] + d[j - 1]);
        }
        let total = cdf[n];
        for c in &mut cdf {
            *c /= total;
        }
        IntegratedPosterior { step, cdf }
    }

    fn eval(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        let pos = x / self.step;
        let i = (pos.floor() as usize).min(self.cdf.len() - 2);
        let frac = pos - i as f64;
        (self.cdf[i] + frac * (self.cdf[i + 1] - self.cdf[i])).min(1.0)
    }
}

/// Rate updates against five randomized sufficient-statistics settings,
/// including a uniform prior and zero-exposure corners, must match the
/// numerically integrated conditional posterior.
#[test]
fn conjugate_updates_match_numerically_integrated_posteriors() {
    let spec = ModelSpec::parse("SCD").unwrap();
    let mut setup_rng = derive_rng(6_001, &[]);
    let mut worst = 0.0f64;
    let mut details = String::new();
    for setting in 0..5u64 {
        let uniform_prior = setting >= 3;
        let prior = if uniform_prior {
            RatePrior::Uniform { upper: setup_rng.random_range(0.2..0.8) }
        } else {
            RatePrior::Gamma {
                shape: setup_rng.random_range(1.2..8.0),
                rate: setup_rng.random_range(10.0..60.0),
            }
        };
        let k = setup_rng.random_range(0..10u64);
        // Force one zero-exposure corner in each prior family.
        let exposure =
            if setting == 1 || setting == 4 { 0.0 } else { setup_rng.random_range(5.0..50.0) };

        let mut stats = SufficientStats::default();
        stats.event_counts[EventKind::SymmetricDivision.index()] = k;
        stats.hsc_exposure = exposure;
        let prior_spec = PriorSpec::iid(prior, &spec);

        let n_draws = 10_000usize;
        let mut rng = derive_rng(6_100 + setting, &[]);
        let mut draws: Vec<f64> = (0..n_draws)
            .map(|_| {
                update_rates(&stats, &prior_spec, &spec, &mut rng)
                    .unwrap()
                    .rate(EventKind::SymmetricDivision)
            })
            .collect();
        draws.sort_by(f64::total_cmp);

        let reference = IntegratedPosterior::new(&prior, k, exposure);
        let mut dev = 0.0f64;
        for (i, &x) in draws.iter().enumerate() {
            let f = reference.eval(x);
            dev = dev.max((f - i as f64 / n_draws as f64).abs());
            dev = dev.max((f - (i + 1) as f64 / n_draws as f64).abs());
        }
        worst = worst.max(dev);
        details.push_str(&format!("setting {setting} (k={k}, S={exposure:.1}): {dev:.4} "));
    }
    check(
        "conjugate updates within 0.02 of integrated posterior quantiles",
        worst < 0.02,
        details.trim_end(),
    );
}

/// Nightly-scale coverage check: pooled fits on synthetic cohorts from known
/// rates must bracket the generating values with close to nominal frequency.
#[test]
#[ignore = "hours-scale statistical check, run on demand"]
fn synthetic_cohorts_recover_the_generating_rates() {
    let spec = ModelSpec::parse("SCD").unwrap();
    let truth = rates_of(&[
        (EventKind::SymmetricDivision, 0.09),
        (EventKind::Commitment, 0.08),
        (EventKind::ClonalDeath, 0.14),
    ]);
    let schedule = ScheduleSpec {
        horizon: 100.0,
        spacing: Spacing::Uniform { min: 2.0, max: 6.0 },
        sample_size: SampleSizeRule::Fixed(50),
    };
    let prior = PriorSpec::iid(RatePrior::default_gamma(), &spec);

    let reps = 20;
    let mut covered_s = 0;
    let mut covered_c = 0;
    for rep in 0..reps {
        let sim_seed = derive_u64(88_000, &[rep]);
        let cohort = simulate_cohort(
            &truth,
            &spec,
            PopulationState::default_initial(),
            &schedule,
            6,
            sim_seed,
            DieOutRule::Compartment1,
        )
        .unwrap();
        let data = cohort.to_dataset().unwrap();

        let mut config = ChainConfig::new(3_500, 1_000, 5, derive_u64(88_001, &[rep]));
        config.path_moves = PathMoves::Fixed(2_000);
        let mut chain =
            GibbsChain::new(&data.animals, &spec, &prior, Pooling::Pooled, &config).unwrap();
        let draws = chain.run_collect().unwrap();

        let lambda = draws.rate_series(EventKind::SymmetricDivision).unwrap();
        let nu = draws.rate_series(EventKind::Commitment).unwrap();
        let (lo, hi) = hpd_interval(&lambda, 0.95).unwrap();
        if (lo..=hi).contains(&truth.rate(EventKind::SymmetricDivision)) {
            covered_s += 1;
        }
        let (lo, hi) = hpd_interval(&nu, 0.95).unwrap();
        if (lo..=hi).contains(&truth.rate(EventKind::Commitment)) {
            covered_c += 1;
        }
    }
    check(
        "95% HPD covers generating rates in at least 90% of synthetic refits",
        covered_s >= 18 && covered_c >= 18,
        &format!("symmetric division {covered_s}/{reps}, commitment {covered_c}/{reps}"),
    );
}

/// The harmonic-mean estimator returns a constant likelihood exactly, and on
/// a conjugate toy problem it lands within 2% of the closed-form marginal.
#[test]
fn harmonic_mean_is_exact_on_degenerate_and_conjugate_toys() {
    let constant = -123.456789;
    let est =
        harmonic_mean_logliks("toy", Conditioning::Path, &[constant; 1_000], None).unwrap();
    assert_eq!(est.log_value, constant, "constant likelihood must come back exactly");

    // One Poisson count with mean rate*window under a Gamma(a, b) prior has a
    // closed-form marginal; b well above the window keeps the reciprocal
    // likelihood light-tailed.
    let mut worst_rel = 0.0f64;
    let mut details = format!("constant case exact at {constant}; ");
    for (case, (a, b, window, count)) in [(5.0f64, 50.0f64, 5.0f64, 2u64), (5.0, 50.0, 10.0, 7u64)]
        .into_iter()
        .enumerate()
    {
        use statrs::function::gamma::ln_gamma;
        let log_marginal = ln_gamma(a + count as f64) - ln_gamma(a)
            - ln_gamma(count as f64 + 1.0)
            + a * b.ln()
            + count as f64 * window.ln()
            - (a + count as f64) * (b + window).ln();

        let posterior =
            rand_distr::Gamma::new(a + count as f64, 1.0 / (b + window)).unwrap();
        let mut rng = derive_rng(8_200 + case as u64, &[]);
        let logliks: Vec<f64> = (0..4_000_000)
            .map(|_| {
                let theta: f64 = posterior.sample(&mut rng);
                count as f64 * (theta * window).ln() - theta * window
                    - ln_gamma(count as f64 + 1.0)
            })
            .collect();
        let est = harmonic_mean_logliks("toy", Conditioning::Path, &logliks, None).unwrap();
        let rel = ((est.log_value - log_marginal).exp() - 1.0).abs();
        worst_rel = worst_rel.max(rel);
        details.push_str(&format!("case {case}: relative error {rel:.5} "));
    }
    check(
        "harmonic mean within 2% of closed-form conjugate marginal",
        worst_rel < 0.02,
        details.trim_end(),
    );
}

/// Independent replay of a path against hand-coded transition rules: tracks
/// both label populations, rejects ineligible events, and integrates the
/// total intensity interval by interval.
mod oracle {
    use super::*;

    #[derive(Clone, Copy)]
    pub struct State {
        pub hsc: [u64; 2],
        pub clones: [u64; 2],
    }

    fn lab(label: Label) -> usize {
        match label {
            Label::D => 0,
            Label::G => 1,
        }
    }

    fn apply(state: State, kind: EventKind, label: Label) -> Option<State> {
        let l = lab(label);
        let mut next = state;
        match kind {
            EventKind::SymmetricDivision => {
                if state.hsc[l] == 0 {
                    return None;
                }
                next.hsc[l] += 1;
            }
            EventKind::Commitment => {
                if state.hsc[l] == 0 {
                    return None;
                }
                next.hsc[l] -= 1;
                next.clones[l] += 1;
            }
            EventKind::ClonalDeath => {
                if state.clones[l] == 0 {
                    return None;
                }
                next.clones[l] -= 1;
            }
            EventKind::AsymmetricDivision => {
                if state.hsc[l] == 0 {
                    return None;
                }
                next.clones[l] += 1;
            }
            EventKind::Apoptosis => {
                if state.hsc[l] == 0 {
                    return None;
                }
                next.hsc[l] -= 1;
            }
        }
        Some(next)
    }

    fn eligible(state: State, kind: EventKind, label: Label) -> u64 {
        let l = lab(label);
        match kind {
            EventKind::ClonalDeath => state.clones[l],
            _ => state.hsc[l],
        }
    }

    fn total_intensity(state: State, rates: &RateVector, kinds: &[EventKind]) -> f64 {
        let mut total = 0.0;
        for &kind in kinds {
            for label in [Label::D, Label::G] {
                total += rates.rate(kind) * eligible(state, kind, label) as f64;
            }
        }
        total
    }

    /// `ln` density of the event history under the given rates, replaying the
    /// path one interval at a time, or `-inf` if any event is infeasible.
    pub fn log_density(
        initial: State,
        events: &[(f64, EventKind, Label)],
        horizon: f64,
        rates: &RateVector,
        kinds: &[EventKind],
    ) -> f64 {
        let mut state = initial;
        let mut t = 0.0;
        let mut log_density = 0.0;
        for &(time, kind, label) in events {
            if time <= t || time >= horizon {
                return f64::NEG_INFINITY;
            }
            log_density -= (time - t) * total_intensity(state, rates, kinds);
            let n = eligible(state, kind, label);
            if n == 0 || rates.rate(kind) <= 0.0 {
                return f64::NEG_INFINITY;
            }
            log_density += (rates.rate(kind) * n as f64).ln();
            state = match apply(state, kind, label) {
                Some(s) => s,
                None => return f64::NEG_INFINITY,
            };
            t = time;
        }
        log_density - (horizon - t) * total_intensity(state, rates, kinds)
    }
}

/// Every path with up to three events on a small horizon, with event times
/// drawn from a fixed grid, must match the brute-force replay to 1e-10;
/// infeasible paths must be rejected by both sides.
#[test]
fn few_event_path_densities_match_a_brute_force_integrator() {
    let spec = ModelSpec::parse("SCDAsAp").unwrap();
    let rates = rates_of(&[
        (EventKind::SymmetricDivision, 0.12),
        (EventKind::Commitment, 0.08),
        (EventKind::ClonalDeath, 0.20),
        (EventKind::AsymmetricDivision, 0.06),
        (EventKind::Apoptosis, 0.03),
    ]);
    let kinds: Vec<EventKind> = spec.active_kinds().collect();
    let horizon = 2.0;
    let grid = [0.3, 0.9, 1.5];
    let initial = PopulationState::new(1, 1, 1, 1);
    let oracle_initial = oracle::State { hsc: [1, 1], clones: [1, 1] };

    let channels: Vec<(EventKind, Label)> = kinds
        .iter()
        .flat_map(|&k| [Label::D, Label::G].map(|l| (k, l)))
        .collect();

    // Index tuples over channels for each path length, with every increasing
    // time subset of the grid.
    let mut cases: Vec<Vec<(f64, EventKind, Label)>> = vec![Vec::new()];
    for len in 1..=3usize {
        let mut picks = vec![0usize; len];
        loop {
            // Every strictly increasing combination of `len` grid times.
            let times: Vec<Vec<f64>> = match len {
                1 => grid.iter().map(|&t| vec![t]).collect(),
                2 => (0..3)
                    .flat_map(|i| ((i + 1)..3).map(move |j| vec![grid[i], grid[j]]))
                    .collect(),
                _ => vec![grid.to_vec()],
            };
            for ts in times {
                cases.push(
                    ts.iter()
                        .zip(&picks)
                        .map(|(&t, &p)| (t, channels[p].0, channels[p].1))
                        .collect(),
                );
            }
            // Odometer increment over channel indices.
            let mut i = len;
            loop {
                if i == 0 {
                    break;
                }
                i -= 1;
                picks[i] += 1;
                if picks[i] < channels.len() {
                    break;
                }
                picks[i] = 0;
                if i == 0 {
                    break;
                }
            }
            if picks.iter().all(|&p| p == 0) {
                break;
            }
        }
    }

    let mut n_feasible = 0u64;
    let mut n_infeasible = 0u64;
    let mut worst = 0.0f64;
    for events in &cases {
        let path = Path {
            horizon,
            initial,
            events: events
                .iter()
                .map(|&(time, kind, label)| PathEvent { time, kind, label })
                .collect(),
        };
        let implementation = log_path_density(&path, &rates, &spec);
        let reference =
            oracle::log_density(oracle_initial, events, horizon, &rates, &kinds);
        if reference == f64::NEG_INFINITY {
            n_infeasible += 1;
            assert_eq!(
                implementation,
                f64::NEG_INFINITY,
                "implementation accepts a path the replay rejects: {events:?}"
            );
        } else {
            n_feasible += 1;
            worst = worst.max((implementation - reference).abs());
        }
    }
    assert!(n_feasible >= 300, "enumeration produced only {n_feasible} feasible paths");
    assert!(n_infeasible >= 100, "enumeration produced only {n_infeasible} infeasible paths");
    check(
        "small-path densities within 1e-10 of brute-force replay",
        worst < 1e-10,
        &format!("max |difference| {worst:.3e} over {n_feasible} feasible paths ({n_infeasible} infeasible agreed)"),
    );
}

/// The sufficient statistics feeding the conjugate updates must match the
/// density identity: scaling all rates by `c` moves the log density by
/// `n ln c - (c - 1) * (hsc-rate sum * S_z + mu * S_x)`.
#[test]
fn sufficient_statistics_agree_with_the_density_identity() {
    let spec = ModelSpec::parse("SCDAs").unwrap();
    let rates = rates_of(&[
        (EventKind::SymmetricDivision, 0.093),
        (EventKind::Commitment, 0.079),
        (EventKind::ClonalDeath, 0.193),
        (EventKind::AsymmetricDivision, 0.078),
    ]);
    let mut rng = derive_rng(3_300, &[]);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let path = simulate_path_with_budget(
            &rates,
            &spec,
            PopulationState::default_initial(),
            12.0,
            Some(100_000),
            &mut rng,
        )
        .unwrap();
        let stats = sufficient_stats(&path, &spec).unwrap();
        let c = 1.7;
        let mut scaled = RateVector::zeros();
        for kind in spec.active_kinds() {
            scaled = scaled.set(kind, c * rates.rate(kind));
        }
        let lhs = log_path_density(&path, &scaled, &spec) - log_path_density(&path, &rates, &spec);
        let exposure_term = rates.hsc_rate_sum() * stats.hsc_exposure
            + rates.rate(EventKind::ClonalDeath) * stats.clone_exposure;
        let rhs = path.events.len() as f64 * c.ln() - (c - 1.0) * exposure_term;
        worst = worst.max((lhs - rhs).abs() / (1.0 + rhs.abs()));
    }
    check(
        "sufficient statistics satisfy the rate-scaling identity",
        worst < 1e-9,
        &format!("max relative deviation {worst:.3e}"),
    );
}

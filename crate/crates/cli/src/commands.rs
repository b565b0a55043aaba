//! The five subcommands. Each resolves its settings (flags over config
//! file), runs the corresponding library pipeline, and writes its outputs
//! plus a manifest under `--out`.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use hsc_core::dataset::{load_dataset, write_dataset, Dataset};
use hsc_core::diagnostics::{cusum, prior_sensitivity, PosteriorSummary};
use hsc_core::evidence::{
    bayes_factor, conditional_marginal, evidence_report_csv, harmonic_mean_logliks,
    harmonic_mean_path, heterogeneity_compare, Conditioning, IntegratedLikelihoodEstimate,
};
use hsc_core::mcmc::{
    read_draws_jsonl, run_chain, write_draws_jsonl, AcceptanceStats, ChainConfig, ChainDraws,
    McmcError, PathMoves, Pooling, PriorSpec, RatePrior,
};
use hsc_core::model::{EventKind, ModelSpec, PopulationState, RateVector};
use hsc_core::simulate::{
    simulate_cohort, DieOutRule, SampleSizeRule, ScheduleSpec, Spacing,
};

use crate::config::{resolve, resolve_or, resolve_required, Overlay};
use crate::outputs::{OutDir, Settings};
use crate::{
    AssessArgs, CliError, EvidenceArgs, FitArgs, FitRef, InitialArg, PathMovesArg, PriorArg,
    RateAssign, SampleSizeArg, SimulateArgs, SpacingArg, SummarizeArgs,
};

const DEFAULT_SPACING: Spacing = Spacing::Uniform { min: 2.0, max: 6.0 };

fn build_spec(name: &str, cap: Option<u64>) -> Result<ModelSpec, CliError> {
    let parsed = ModelSpec::parse(name).map_err(|e| CliError::Usage(e.to_string()))?;
    match cap {
        None => Ok(parsed),
        Some(_) => {
            let kinds: Vec<EventKind> = parsed.active_kinds().collect();
            ModelSpec::new(&kinds, cap).map_err(|e| CliError::Usage(e.to_string()))
        }
    }
}

/// Rates from `rate.<name>` config keys overridden by `--rate` assignments.
fn build_rates(
    spec: &ModelSpec,
    overlay: &Overlay,
    cli: &[RateAssign],
) -> Result<RateVector, CliError> {
    let mut rates = RateVector::zeros();
    for (name, text) in overlay.with_prefix("rate.") {
        let kind = EventKind::from_rate_name(name)
            .ok_or_else(|| CliError::Usage(format!("unknown rate `rate.{name}` in config")))?;
        let value: f64 = text
            .parse()
            .map_err(|e| CliError::Usage(format!("invalid value for `rate.{name}`: {e}")))?;
        rates = rates.set(kind, value);
    }
    for assign in cli {
        rates = rates.set(assign.kind, assign.value);
    }
    rates.validate(spec).map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(rates)
}

fn pins_from(overlay: &Overlay, cli: &[RateAssign]) -> Result<Vec<(EventKind, f64)>, CliError> {
    let mut pins: Vec<(EventKind, f64)> = Vec::new();
    for (name, text) in overlay.with_prefix("pin.") {
        let kind = EventKind::from_rate_name(name)
            .ok_or_else(|| CliError::Usage(format!("unknown rate `pin.{name}` in config")))?;
        let value: f64 = text
            .parse()
            .map_err(|e| CliError::Usage(format!("invalid value for `pin.{name}`: {e}")))?;
        pins.push((kind, value));
    }
    for assign in cli {
        pins.retain(|(kind, _)| *kind != assign.kind);
        pins.push((assign.kind, assign.value));
    }
    Ok(pins)
}

fn load_data(path: &Path) -> Result<Dataset, CliError> {
    load_dataset(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn map_mcmc(e: McmcError) -> CliError {
    match e {
        McmcError::InvalidConfig { .. } | McmcError::InvalidPrior { .. } => {
            CliError::Usage(e.to_string())
        }
        other => CliError::Data(other.to_string()),
    }
}

fn spacing_text(s: &Spacing) -> String {
    match s {
        Spacing::Fixed(gap) => format!("fixed:{gap}"),
        Spacing::Uniform { min, max } => format!("uniform:{min},{max}"),
    }
}

fn sample_size_text(rule: &SampleSizeRule) -> String {
    match rule {
        SampleSizeRule::Fixed(n) => format!("fixed:{n}"),
        SampleSizeRule::Resample(pool) => {
            let items: Vec<String> = pool.iter().map(u64::to_string).collect();
            format!("resample:{}", items.join(","))
        }
    }
}

fn initial_text(state: &PopulationState) -> String {
    format!("{},{},{},{}", state.hsc.d, state.hsc.g, state.clones.d, state.clones.g)
}

fn prior_text(prior: &RatePrior) -> String {
    match prior {
        RatePrior::Gamma { shape, rate } => format!("gamma:{shape},{rate}"),
        RatePrior::Uniform { upper } => format!("uniform:0,{upper}"),
    }
}

fn die_out_text(rule: DieOutRule) -> &'static str {
    match rule {
        DieOutRule::Compartment1 => "compartment1",
        DieOutRule::BothCompartments => "both",
    }
}

fn push_rates(settings: &mut Settings, spec: &ModelSpec, rates: &RateVector) {
    for kind in spec.active_kinds() {
        settings.push(&format!("rate.{}", kind.rate_name()), rates.rate(kind));
    }
}

/// Evenly strided indices into `0..total` of size `min(want, total)`.
fn stride(total: usize, want: usize) -> Vec<usize> {
    if want == 0 || total == 0 {
        return Vec::new();
    }
    if want >= total {
        return (0..total).collect();
    }
    (0..want).map(|i| i * total / want).collect()
}

pub fn simulate(args: SimulateArgs, overlay: &Overlay) -> Result<(), CliError> {
    let model = resolve_required(args.model, overlay, "model")?;
    let cap = resolve(args.cap, overlay, "cap")?;
    let spec = build_spec(&model, cap)?;
    let rates = build_rates(&spec, overlay, &args.rates)?;
    let n_animals = resolve_required(args.n_animals, overlay, "n-animals")?;
    let horizon = resolve_required(args.horizon, overlay, "horizon")?;
    let spacing = resolve_or(args.spacing, overlay, "spacing", SpacingArg(DEFAULT_SPACING))?.0;
    let sample_size = match resolve_required(args.sample_size, overlay, "sample-size")? {
        SampleSizeArg::Rule(rule) => rule,
        SampleSizeArg::Observed => {
            return Err(CliError::Usage(
                "sample-size `observed` needs observed data; it is only available in assess"
                    .to_string(),
            ))
        }
    };
    let initial = resolve_or(
        args.initial,
        overlay,
        "initial",
        InitialArg(PopulationState::default_initial()),
    )?
    .0;
    let rule = resolve(args.die_out, overlay, "die-out")?.map(|d| d.0).unwrap_or_default();
    let seed = resolve_required(args.seed, overlay, "seed")?;

    let schedule = ScheduleSpec { horizon, spacing, sample_size };
    let cohort = simulate_cohort(&rates, &spec, initial, &schedule, n_animals, seed, rule)
        .map_err(|e| CliError::Data(e.to_string()))?;

    let out = OutDir::create(&args.out)?;
    let dataset = cohort.to_dataset().map_err(|e| CliError::Data(e.to_string()))?;
    write_dataset(out.path("dataset.csv"), &dataset)
        .map_err(|e| CliError::Data(e.to_string()))?;

    let mut cohort_csv = String::from("animal_id,died_out,n_events\n");
    for animal in &cohort.animals {
        writeln!(cohort_csv, "{},{},{}", animal.id(), animal.died_out, animal.path.n_events())
            .expect("string write");
    }
    out.write("cohort.csv", &cohort_csv)?;

    let mut settings = Settings::default();
    settings.push("model", spec.name());
    settings.push_opt("cap", cap);
    push_rates(&mut settings, &spec, &rates);
    settings.push("n-animals", n_animals);
    settings.push("horizon", horizon);
    settings.push("spacing", spacing_text(&schedule.spacing));
    settings.push("sample-size", sample_size_text(&schedule.sample_size));
    settings.push("initial", initial_text(&initial));
    settings.push("die-out", die_out_text(rule));
    settings.push("seed", seed);
    out.write_manifest("simulate", settings.entries())?;

    println!(
        "simulated {} animals over {} weeks; die-out rate {}",
        n_animals,
        horizon,
        cohort.die_out_rate()
    );
    Ok(())
}

/// Everything needed to reinterpret `draws.jsonl`, written next to it.
#[derive(Serialize, Deserialize)]
struct FitMeta {
    model: ModelSpec,
    pooling: Pooling,
    prior: PriorSpec,
    seed: u64,
    horizon: f64,
    animal_ids: Vec<String>,
    acceptance: AcceptanceStats,
    chain: ChainConfig,
}

fn save_fit(out: &OutDir, draws: &ChainDraws, chain: &ChainConfig) -> Result<(), CliError> {
    let meta = FitMeta {
        model: draws.model.clone(),
        pooling: draws.pooling,
        prior: draws.prior.clone(),
        seed: draws.seed,
        horizon: draws.horizon,
        animal_ids: draws.animal_ids.clone(),
        acceptance: draws.acceptance,
        chain: chain.clone(),
    };
    let json = serde_json::to_string_pretty(&meta)
        .map_err(|e| CliError::Data(format!("cannot serialize fit metadata: {e}")))?;
    out.write("fit.json", json)?;
    let mut buf = Vec::new();
    write_draws_jsonl(&draws.draws, &mut buf)
        .map_err(|e| CliError::Data(format!("cannot serialize draws: {e}")))?;
    out.write("draws.jsonl", &buf)
}

fn load_fit(dir: &Path) -> Result<(FitMeta, ChainDraws), CliError> {
    let meta_path = dir.join("fit.json");
    let text = std::fs::read_to_string(&meta_path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", meta_path.display())))?;
    let meta: FitMeta = serde_json::from_str(&text)
        .map_err(|e| CliError::Data(format!("{}: {e}", meta_path.display())))?;
    let draws_path = dir.join("draws.jsonl");
    let file = std::fs::File::open(&draws_path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", draws_path.display())))?;
    let draws = read_draws_jsonl(std::io::BufReader::new(file))
        .map_err(|e| CliError::Data(format!("{}: {e}", draws_path.display())))?;
    let mut chain = ChainDraws::reconstruct(
        meta.model.clone(),
        meta.pooling,
        meta.prior.clone(),
        meta.seed,
        meta.horizon,
        draws,
    )
    .map_err(|e| CliError::Data(format!("{}: {e}", draws_path.display())))?;
    if chain.animal_ids != meta.animal_ids {
        return Err(CliError::Data(format!(
            "{}: draws list different animals than fit.json",
            draws_path.display()
        )));
    }
    chain.acceptance = meta.acceptance;
    Ok((meta, chain))
}

fn summaries_of(draws: &ChainDraws, mass: f64) -> Result<Vec<PosteriorSummary>, CliError> {
    let summaries = match draws.pooling {
        Pooling::Pooled => vec![PosteriorSummary::from_pooled(draws, mass)],
        Pooling::PerAnimal => (0..draws.n_animals())
            .map(|idx| PosteriorSummary::from_animal(draws, idx, mass))
            .collect(),
    };
    summaries
        .into_iter()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Data(e.to_string()))
}

fn summaries_csv(summaries: &[PosteriorSummary]) -> String {
    let mut out = String::new();
    for (i, summary) in summaries.iter().enumerate() {
        let block = summary.to_csv_string();
        if i == 0 {
            out.push_str(&block);
        } else if let Some((_, rows)) = block.split_once('\n') {
            out.push_str(rows);
        }
    }
    out
}

pub fn fit(args: FitArgs, overlay: &Overlay) -> Result<(), CliError> {
    let data_path = resolve_required(args.data, overlay, "data")?;
    let model = resolve_required(args.model, overlay, "model")?;
    let cap = resolve(args.cap, overlay, "cap")?;
    let spec = build_spec(&model, cap)?;
    let prior_arg =
        resolve_or(args.prior, overlay, "prior", PriorArg(RatePrior::default_gamma()))?.0;
    let pooling = resolve_or(args.pooling, overlay, "pooling", Pooling::Pooled)?;
    let iters = resolve_or(args.iters, overlay, "iters", 5_000)?;
    let burnin = resolve_or(args.burnin, overlay, "burnin", 1_000)?;
    let thin = resolve_or(args.thin, overlay, "thin", 5)?;
    let seed = resolve_required(args.seed, overlay, "seed")?;
    let horizon = resolve(args.horizon, overlay, "horizon")?;
    let initial = resolve(args.initial, overlay, "initial")?;
    let path_moves = resolve_or(args.path_moves, overlay, "path-moves", PathMovesArg(PathMoves::Auto))?.0;
    let pins = pins_from(overlay, &args.pins)?;
    let mass = resolve_or(args.mass, overlay, "mass", 0.95)?;

    let dataset = load_data(&data_path)?;
    let prior = PriorSpec::iid(prior_arg, &spec);
    let mut config = ChainConfig::new(iters, burnin, thin, seed);
    config.horizon = horizon;
    if let Some(InitialArg(state)) = initial {
        config.initial_state = state;
    }
    config.path_moves = path_moves;
    config.pinned = pins.clone();

    let draws = run_chain(&dataset.animals, &spec, &prior, pooling, &config).map_err(map_mcmc)?;

    let out = OutDir::create(&args.out)?;
    save_fit(&out, &draws, &config)?;
    let summaries = summaries_of(&draws, mass)?;
    out.write("summary.csv", summaries_csv(&summaries))?;

    let mut settings = Settings::default();
    settings.push("data", data_path.display());
    settings.push("model", spec.name());
    settings.push_opt("cap", cap);
    settings.push("prior", prior_text(&prior_arg));
    settings.push("pooling", pooling);
    settings.push("iters", iters);
    settings.push("burnin", burnin);
    settings.push("thin", thin);
    settings.push("seed", seed);
    settings.push_opt("horizon", horizon);
    settings.push("initial", initial_text(&config.initial_state));
    settings.push(
        "path-moves",
        match path_moves {
            PathMoves::Auto => "auto".to_string(),
            PathMoves::Fixed(n) => format!("fixed:{n}"),
        },
    );
    for (kind, value) in &pins {
        settings.push(&format!("pin.{}", kind.rate_name()), value);
    }
    settings.push("mass", mass);
    out.write_manifest("fit", settings.entries())?;

    println!(
        "fitted {} ({}) to {} animals: {} kept draws",
        draws.model.name(),
        draws.pooling,
        draws.n_animals(),
        draws.n_draws()
    );
    Ok(())
}

fn named_fits(refs: &[FitRef]) -> Result<Vec<(String, FitMeta, ChainDraws)>, CliError> {
    let mut fits = Vec::with_capacity(refs.len());
    for fit_ref in refs {
        if fits.iter().any(|(name, _, _)| name == &fit_ref.name) {
            return Err(CliError::Usage(format!("duplicate fit name {:?}", fit_ref.name)));
        }
        let (meta, draws) = load_fit(&fit_ref.dir)?;
        fits.push((fit_ref.name.clone(), meta, draws));
    }
    Ok(fits)
}

pub fn evidence(args: EvidenceArgs, overlay: &Overlay) -> Result<(), CliError> {
    let condition = resolve_or(args.condition, overlay, "condition", Conditioning::Path)?;
    let trim = resolve(args.trim, overlay, "trim")?;
    let fits = named_fits(&args.fits)?;

    let mut estimates: Vec<IntegratedLikelihoodEstimate> = Vec::with_capacity(fits.len());
    let mut inner_settings: Option<(u64, u64, u64, u64, usize, String)> = None;
    match condition {
        Conditioning::Path => {
            for (_, _, draws) in &fits {
                estimates
                    .push(harmonic_mean_path(draws, trim).map_err(|e| CliError::Data(e.to_string()))?);
            }
        }
        Conditioning::Rate(kind) => {
            let data_path = resolve_required(args.data, overlay, "data")?;
            let seed = resolve_required(args.seed, overlay, "seed")?;
            let inner_iters = resolve_or(args.inner_iters, overlay, "inner-iters", 2_000)?;
            let inner_burnin = resolve_or(args.inner_burnin, overlay, "inner-burnin", 500)?;
            let inner_thin = resolve_or(args.inner_thin, overlay, "inner-thin", 5)?;
            let inner_draws = resolve_or(args.inner_draws, overlay, "inner-draws", 50)?;
            let dataset = load_data(&data_path)?;
            for (name, meta, draws) in &fits {
                if draws.pooling != Pooling::Pooled {
                    return Err(CliError::Usage(format!(
                        "fit {name:?} is per-animal; conditioning on a rate needs pooled fits"
                    )));
                }
                if dataset.animals.iter().map(|a| &a.animal_id).ne(draws.animal_ids.iter()) {
                    return Err(CliError::Usage(format!(
                        "fit {name:?} was run on different animals than {}",
                        data_path.display()
                    )));
                }
                let series = draws.rate_series(kind).expect("pooled fit");
                if series.is_empty() {
                    return Err(CliError::Data(format!("fit {name:?} has no draws")));
                }
                let thetas: Vec<f64> =
                    stride(series.len(), inner_draws).into_iter().map(|i| series[i]).collect();
                let mut inner = meta.chain.clone();
                inner.iterations = inner_iters;
                inner.burn_in = inner_burnin;
                inner.thinning = inner_thin;
                inner.seed = seed;
                inner.horizon = Some(meta.horizon);
                let estimate = conditional_marginal(
                    &thetas,
                    kind,
                    &dataset.animals,
                    &meta.model,
                    &meta.prior,
                    &inner,
                    trim,
                )
                .map_err(|e| CliError::Data(e.to_string()))?;
                estimates.push(estimate);
            }
            inner_settings = Some((
                seed,
                inner_iters,
                inner_burnin,
                inner_thin,
                inner_draws,
                data_path.display().to_string(),
            ));
        }
    }

    let out = OutDir::create(&args.out)?;
    let baseline = estimates.first().map(|e| e.model.clone());
    out.write("evidence.csv", evidence_report_csv(&estimates, baseline.as_deref()))?;

    let heterogeneity = resolve(args.heterogeneity, overlay, "heterogeneity")?;
    if let Some(pair) = &heterogeneity {
        let (pooled_name, per_animal_name) = pair.split_once(',').ok_or_else(|| {
            CliError::Usage("heterogeneity takes two fit names: POOLED,PER_ANIMAL".to_string())
        })?;
        let find = |wanted: &str| {
            fits.iter()
                .find(|(name, _, _)| name == wanted)
                .ok_or_else(|| CliError::Usage(format!("no fit named {wanted:?} was given")))
        };
        let (_, _, pooled) = find(pooled_name.trim())?;
        let (_, _, per_animal) = find(per_animal_name.trim())?;
        if pooled.pooling != Pooling::Pooled || per_animal.pooling != Pooling::PerAnimal {
            return Err(CliError::Usage(
                "heterogeneity expects a pooled fit first and a per-animal fit second".to_string(),
            ));
        }
        if pooled.model != per_animal.model || pooled.animal_ids != per_animal.animal_ids {
            return Err(CliError::Usage(
                "heterogeneity fits must share the model and the animals".to_string(),
            ));
        }
        let pooled_estimate =
            harmonic_mean_path(pooled, trim).map_err(|e| CliError::Data(e.to_string()))?;
        let per_animal_estimates: Vec<IntegratedLikelihoodEstimate> = (0..per_animal.n_animals())
            .map(|idx| {
                harmonic_mean_logliks(
                    &per_animal.model.name(),
                    Conditioning::Path,
                    &per_animal.animal_loglik_series(idx),
                    trim,
                )
            })
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::Data(e.to_string()))?;
        let comparison = heterogeneity_compare(&per_animal_estimates, &pooled_estimate);
        out.write(
            "heterogeneity.csv",
            format!(
                "log_heterogeneous,log_pooled,log_bayes_factor\n{},{},{}\n",
                comparison.log_heterogeneous, comparison.log_pooled, comparison.log_bayes_factor
            ),
        )?;
    }

    let mut settings = Settings::default();
    for fit_ref in &args.fits {
        settings.push("fit", fit_ref);
    }
    settings.push("condition", condition);
    settings.push_opt("trim", trim);
    if let Some((seed, iters, burnin, thin, draws, data)) = inner_settings {
        settings.push("data", data);
        settings.push("seed", seed);
        settings.push("inner-iters", iters);
        settings.push("inner-burnin", burnin);
        settings.push("inner-thin", thin);
        settings.push("inner-draws", draws);
    }
    settings.push_opt("heterogeneity", heterogeneity);
    out.write_manifest("evidence", settings.entries())?;

    for est in &estimates {
        let bf = baseline
            .as_deref()
            .filter(|_| Some(&est.model) != baseline.as_ref())
            .map(|base| {
                let base_est = estimates.iter().find(|e| e.model == base).expect("baseline exists");
                format!("; BF vs {base}: {:.4}", bayes_factor(est, base_est))
            })
            .unwrap_or_default();
        println!("{} [{}]: log evidence {:.4}{bf}", est.model, est.conditioning, est.log_value);
    }
    Ok(())
}

pub fn assess(args: AssessArgs, overlay: &Overlay) -> Result<(), CliError> {
    use hsc_core::assess::{assess_model, ParameterSource};

    let data_path = resolve_required(args.data, overlay, "data")?;
    let dataset = load_data(&data_path)?;
    let n_virtual = resolve_required(args.n_virtual, overlay, "n-virtual")?;
    let seed = resolve_required(args.seed, overlay, "seed")?;
    let initial = resolve_or(
        args.initial,
        overlay,
        "initial",
        InitialArg(PopulationState::default_initial()),
    )?
    .0;
    let rule = resolve(args.die_out, overlay, "die-out")?.map(|d| d.0).unwrap_or_default();
    let horizon = resolve_or(args.horizon, overlay, "horizon", dataset.horizon())?;
    let spacing = resolve_or(args.spacing, overlay, "spacing", SpacingArg(DEFAULT_SPACING))?.0;
    let sample_size = match resolve_or(
        args.sample_size,
        overlay,
        "sample-size",
        SampleSizeArg::Observed,
    )? {
        SampleSizeArg::Rule(rule) => rule,
        SampleSizeArg::Observed => {
            let pool: Vec<u64> = dataset
                .animals
                .iter()
                .flat_map(|a| a.records.iter())
                .map(|r| r.sample_size)
                .filter(|&n| n > 0)
                .collect();
            if pool.is_empty() {
                return Err(CliError::Usage(
                    "sample-size `observed` needs at least one positive observed sample size"
                        .to_string(),
                ));
            }
            SampleSizeRule::Resample(pool)
        }
    };
    let max_draws = resolve_or(args.max_draws, overlay, "max-draws", 50)?;
    let cap = resolve(args.cap, overlay, "cap")?;
    let fit_ref = resolve(args.fit, overlay, "fit")?;
    let model_flag: Option<String> = resolve(args.model, overlay, "model")?;

    let (spec, source) = match (&fit_ref, model_flag) {
        (Some(fit_ref), None) => {
            let (_, draws) = load_fit(&fit_ref.dir)?;
            if draws.pooling != Pooling::Pooled {
                return Err(CliError::Usage(
                    "assessing from a fit needs a pooled fit (per-animal draws do not define one cohort)"
                        .to_string(),
                ));
            }
            let vectors: Vec<RateVector> = stride(draws.n_draws(), max_draws)
                .into_iter()
                .map(|i| draws.draws[i].rates.expect("pooled draws carry rates"))
                .collect();
            if vectors.is_empty() {
                return Err(CliError::Data(format!("fit {:?} has no draws", fit_ref.name)));
            }
            (draws.model.clone(), ParameterSource::Draws(vectors))
        }
        (None, Some(model)) => {
            let spec = build_spec(&model, cap)?;
            let rates = build_rates(&spec, overlay, &args.rates)?;
            (spec, ParameterSource::Single(rates))
        }
        (Some(_), Some(_)) => {
            return Err(CliError::Usage("give either --fit or --model, not both".to_string()))
        }
        (None, None) => {
            return Err(CliError::Usage("one of --fit or --model is required".to_string()))
        }
    };

    let schedule = ScheduleSpec { horizon, spacing, sample_size };
    let report = assess_model(
        &source,
        &spec,
        &dataset.animals,
        initial,
        &schedule,
        n_virtual,
        seed,
        rule,
    )
    .map_err(|e| CliError::Data(e.to_string()))?;

    let out = OutDir::create(&args.out)?;
    out.write("assess.csv", report.to_csv_string())?;

    // Either `fit` or `model` appears, never both, so the manifest doubles
    // as a config file that re-runs this command.
    let mut settings = Settings::default();
    settings.push("data", data_path.display());
    match (&fit_ref, &source) {
        (Some(fit_ref), _) => {
            settings.push("fit", fit_ref);
            settings.push("max-draws", max_draws);
        }
        (None, ParameterSource::Single(rates)) => {
            settings.push("model", spec.name());
            settings.push_opt("cap", cap);
            push_rates(&mut settings, &spec, rates);
        }
        (None, ParameterSource::Draws(_)) => unreachable!("draws come from a fit"),
    }
    settings.push("n-virtual", n_virtual);
    settings.push("horizon", horizon);
    settings.push("spacing", spacing_text(&schedule.spacing));
    settings.push("sample-size", sample_size_text(&schedule.sample_size));
    settings.push("initial", initial_text(&initial));
    settings.push("die-out", die_out_text(rule));
    settings.push("seed", seed);
    out.write_manifest("assess", settings.entries())?;

    println!(
        "assessed {} against {} observed animals with {} virtual ones; die-out rate {}",
        report.model,
        dataset.animals.len(),
        report.n_virtual,
        report.die_out_rate
    );
    Ok(())
}

pub fn summarize(args: SummarizeArgs, overlay: &Overlay) -> Result<(), CliError> {
    let mass = resolve_or(args.mass, overlay, "mass", 0.95)?;
    let fits = named_fits(&args.fits)?;

    let mut summary_csv = String::from("fit,model,rate,mean,hpd_low,hpd_high,ess\n");
    let mut cusum_csv = String::from("fit,series,index,value\n");
    for (name, _, draws) in &fits {
        for summary in summaries_of(draws, mass)? {
            let label = match &summary.animal_id {
                Some(id) => format!("{}[{}]", summary.model, id),
                None => summary.model.clone(),
            };
            for rate in &summary.rates {
                writeln!(
                    summary_csv,
                    "{name},{label},{},{},{},{},{}",
                    rate.rate, rate.mean, rate.hpd_low, rate.hpd_high, rate.ess
                )
                .expect("string write");
            }
        }
        let mut series: Vec<(String, Vec<f64>)> =
            vec![("total_loglik".to_string(), draws.total_loglik_series())];
        if draws.pooling == Pooling::Pooled {
            for kind in draws.model.active_kinds() {
                series.push((
                    kind.rate_name().to_string(),
                    draws.rate_series(kind).expect("pooled fit"),
                ));
            }
        }
        for (series_name, values) in series {
            for (i, v) in cusum(&values).into_iter().enumerate() {
                writeln!(cusum_csv, "{name},{series_name},{i},{v}").expect("string write");
            }
        }
    }

    let out = OutDir::create(&args.out)?;
    out.write("summary.csv", &summary_csv)?;
    out.write("cusum.csv", &cusum_csv)?;

    // Prior-sensitivity table when several fits share one model, pooled.
    let all_pooled_same_model = fits.len() >= 2
        && fits.iter().all(|(_, _, d)| d.pooling == Pooling::Pooled)
        && fits.iter().all(|(_, _, d)| d.model == fits[0].2.model);
    if all_pooled_same_model {
        let named: Vec<(String, &ChainDraws)> =
            fits.iter().map(|(name, _, draws)| (name.clone(), draws)).collect();
        let sensitivity =
            prior_sensitivity(&named, mass).map_err(|e| CliError::Data(e.to_string()))?;
        out.write("sensitivity.csv", sensitivity.to_csv_string())?;
    }

    let mut settings = Settings::default();
    for fit_ref in &args.fits {
        settings.push("fit", fit_ref);
    }
    settings.push("mass", mass);
    out.write_manifest("summarize", settings.entries())?;

    println!("summarized {} fit(s) at mass {mass}", fits.len());
    Ok(())
}

use std::path::Path;

use balancekit::analysis::check_compatibility;
use balancekit::diagnostics::{write_balance_csv, write_balance_plot_data};
use balancekit::estimate::write_estimates_csv;
use balancekit::sim::monte_carlo::{write_replicate_estimates, write_summary_csv, write_table_csv};
use balancekit::sim::truth::write_ternary_csv;
use balancekit::sim::{default_roster, ternary_grid, DgpSpec, McOptions};
use balancekit::tilt::{inverse_sum, write_weights};
use balancekit::variance::write_bootstrap_replicates;
use balancekit::{
    analyze, balance_report, effective_sample_size, fit_multinomial, load_sample, optimal_alpha,
    write_matrix, write_sample, AnalysisOptions, ContrastSpec, Error, Execution, FitOptions,
    GpsModel, ObservationalSample, Result, SampleSchema, TiltScheme, TrimThreshold, VarianceSpec,
    WeightSet, WeightedSample,
};
use serde_json::json;

use crate::args::{
    BalanceArgs, Cli, DesignArgs, EstimateArgs, FitArgs, FitFlags, GenerateArgs, InputArgs,
    SimulateArgs, TernaryArgs, TrimArgs,
};
use crate::output::OutputDir;

fn load(input: &InputArgs, outcome: Option<&str>) -> Result<ObservationalSample> {
    let mut schema = SampleSchema::new(&input.treatment_col);
    schema.outcome = outcome.map(str::to_owned);
    schema.covariates = input.covariates.clone();
    schema.labels = input.labels.clone();
    let sample = load_sample(&input.input, &schema)?;
    log::info!(
        "loaded {} units, {} groups, {} covariates from {}",
        sample.n(),
        sample.n_groups(),
        sample.n_covariates(),
        input.input.display()
    );
    Ok(sample)
}

fn fit_options(f: &FitFlags) -> FitOptions {
    FitOptions {
        max_iter: f.max_iter,
        grad_tol: f.grad_tol,
        ridge: f.ridge,
    }
}

fn design(d: &DesignArgs) -> Result<DgpSpec> {
    let mut spec = match &d.scenario {
        Some(path) => {
            if !path.exists() {
                return Err(Error::MissingFile(path.clone()));
            }
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            DgpSpec::from_json(&text)?
        }
        None => DgpSpec::preset(&d.preset)?,
    };
    if let Some(n) = d.n {
        spec.n = n;
        spec.validate()?;
    }
    Ok(spec)
}

fn groups_json(sample: &ObservationalSample) -> serde_json::Value {
    sample
        .label_mapping()
        .into_iter()
        .map(|(g, label)| json!({ "group": g, "label": label, "n": sample.group_sizes()[g - 1] }))
        .collect()
}

fn not_converged(model: &GpsModel) -> Error {
    Error::NotConverged {
        iterations: model.iterations,
        gradient_norm: model.final_gradient_norm.unwrap_or(f64::NAN),
    }
}

fn fit_report(model: &GpsModel) -> serde_json::Value {
    json!({
        "converged": model.converged,
        "iterations": model.iterations,
        "final_gradient_norm": model.final_gradient_norm,
        "log_likelihood": model.log_likelihood,
        "trace": model.trace,
        "warnings": model.warnings,
    })
}

fn score_header(sample: &ObservationalSample, prefix: &str) -> Vec<String> {
    sample
        .labels()
        .iter()
        .map(|l| format!("{prefix}{l}"))
        .collect()
}

/// Writes weights, balance tables, plot data and effective sample sizes.
fn write_diagnostics(
    out: &mut OutputDir,
    input: &ObservationalSample,
    ws: &WeightedSample,
) -> Result<()> {
    let weights_path = out.file("weights.csv")?;
    out.file("weights.json")?;
    write_weights(weights_path, &ws.weights, &ws.sample)?;
    let weighted = balance_report(&ws.sample, &ws.weights)?;
    write_balance_csv(out.file("balance.csv")?, &weighted)?;
    let mut crude = balance_report(input, &WeightSet::uniform(input.n(), input.n_groups()))?;
    crude.scheme = "unweighted".into();
    write_balance_plot_data(out.file("balance_plot.csv")?, &[crude, weighted.clone()])?;
    let ess = effective_sample_size(&ws.weights, ws.sample.groups())?;
    out.write_json(
        "ess.json",
        &json!({
            "labels": ws.sample.labels(),
            "per_group": ess.per_group,
            "total": ess.total,
            "n_kept": ess.n_kept,
        }),
    )?;
    let flagged = weighted.flagged();
    if !flagged.is_empty() {
        log::warn!(
            "covariates above the balance threshold {}: {}",
            weighted.threshold,
            flagged.join(", ")
        );
    }
    Ok(())
}

fn trim_json(trim: &Option<TrimThreshold>, n_input: usize, units: &[usize]) -> serde_json::Value {
    match trim {
        Some(t) => json!({
            "alpha": t.alpha,
            "satisfied": t.satisfied,
            "kept_fraction": t.kept_fraction,
            "n_input": n_input,
            "n_kept": units.len(),
        }),
        None => serde_json::Value::Null,
    }
}

pub fn generate(a: &GenerateArgs, cli: &Cli) -> Result<()> {
    let spec = design(&a.design)?;
    let dgp = spec.build()?;
    let data = dgp.generate(a.seed)?;
    let mut out = OutputDir::create(
        &a.out,
        &a.design
            .scenario
            .iter()
            .map(|p| p.as_path())
            .collect::<Vec<_>>(),
    )?;
    write_sample(
        &data.sample,
        out.file("sample.csv")?,
        "treatment",
        Some("y"),
    )?;
    write_matrix(
        out.file("true_scores.csv")?,
        &score_header(&data.sample, "e_"),
        data.true_scores.scores(),
    )?;
    write_matrix(
        out.file("potential_outcomes.csv")?,
        &score_header(&data.sample, "y_"),
        data.potential_outcomes.view(),
    )?;
    out.write_json(
        "design.json",
        &json!({ "spec": dgp.spec, "alpha": dgp.alpha, "covariance": dgp.covariance }),
    )?;
    out.finish(
        "generate",
        a,
        cli.workers,
        &[("data", a.seed), ("calibration", spec.calibration_seed)],
        json!({ "groups": groups_json(&data.sample) }),
    )
}

pub fn fit(a: &FitArgs, cli: &Cli) -> Result<()> {
    let sample = load(&a.input, None)?;
    let model = fit_multinomial(&sample, &fit_options(&a.fit))?;
    let scores = model.predict(sample.covariates())?;
    let mut out = OutputDir::create(&a.out, &[a.input.input.as_path()])?;
    model.save(out.file("model.json")?)?;
    write_matrix(
        out.file("scores.csv")?,
        &score_header(&sample, "e_"),
        scores.scores(),
    )?;
    let mut report = fit_report(&model);
    report["groups"] = groups_json(&sample);
    out.write_json("convergence.json", &report)?;
    out.finish("fit", a, cli.workers, &[], json!({}))?;
    if !model.converged {
        return Err(not_converged(&model));
    }
    Ok(())
}

pub fn balance(a: &BalanceArgs, cli: &Cli) -> Result<()> {
    let scheme: TiltScheme = a.scheme.parse()?;
    let sample = load(&a.input, None)?;
    let fit = fit_options(&a.fit);
    let model = match &a.model {
        Some(path) => {
            if !path.exists() {
                return Err(Error::MissingFile(path.clone()));
            }
            let model = GpsModel::load(path)?;
            if model.covariate_names != sample.covariate_names()
                || model.n_groups != sample.n_groups()
            {
                return Err(Error::InvalidInput(format!(
                    "model {} was fitted on covariates [{}] with {} groups; the sample has [{}] with {} groups",
                    path.display(),
                    model.covariate_names.join(", "),
                    model.n_groups,
                    sample.covariate_names().join(", "),
                    sample.n_groups()
                )));
            }
            model
        }
        None => fit_multinomial(&sample, &fit)?,
    };
    let ws = balancekit::analysis::weigh_fitted(&sample, &scheme, model, &fit)?;
    let mut inputs = vec![a.input.input.as_path()];
    inputs.extend(a.model.as_deref());
    let mut out = OutputDir::create(&a.out, &inputs)?;
    write_diagnostics(&mut out, &sample, &ws)?;
    out.finish(
        "balance",
        a,
        cli.workers,
        &[],
        json!({
            "scheme": scheme.to_string(),
            "groups": groups_json(&sample),
            "fit": fit_report(&ws.model),
            "trim": trim_json(&ws.trim, sample.n(), &ws.units),
        }),
    )?;
    if !ws.converged() {
        return Err(not_converged(&ws.model));
    }
    Ok(())
}

pub fn trim(a: &TrimArgs, cli: &Cli) -> Result<()> {
    let sample = load(&a.input, a.outcome_col.as_deref())?;
    let model = fit_multinomial(&sample, &fit_options(&a.fit))?;
    let scores = model.predict(sample.covariates())?;
    let sums: Vec<f64> = scores
        .scores()
        .outer_iter()
        .map(|r| inverse_sum(&r.to_vec()))
        .collect();
    let threshold = match a.alpha {
        Some(alpha) if alpha.is_finite() && alpha > 0.0 => TrimThreshold {
            alpha,
            kept_fraction: sums.iter().filter(|&&s| s <= alpha).count() as f64 / sums.len() as f64,
            satisfied: true,
        },
        Some(alpha) => {
            return Err(Error::InvalidInput(format!(
                "trimming threshold must be positive, got {alpha}"
            )))
        }
        None => optimal_alpha(&scores)?,
    };
    let units: Vec<usize> = (0..sample.n())
        .filter(|&i| sums[i] <= threshold.alpha)
        .collect();
    let kept = sample.subset(&units)?;
    let mut out = OutputDir::create(&a.out, &[a.input.input.as_path()])?;
    write_sample(
        &kept,
        out.file("trimmed.csv")?,
        &a.input.treatment_col,
        a.outcome_col.as_deref(),
    )?;
    let per_group: Vec<usize> = (0..sample.n_groups())
        .map(|g| kept.groups().iter().filter(|&&k| k == g).count())
        .collect();
    let mut report = trim_json(&Some(threshold), sample.n(), &units);
    report["kept_per_group"] = json!(per_group);
    report["kept_units"] = json!(units.iter().map(|i| i + 1).collect::<Vec<_>>());
    report["fit"] = fit_report(&model);
    out.write_json("trim.json", &report)?;
    out.finish(
        "trim",
        a,
        cli.workers,
        &[],
        json!({ "groups": groups_json(&sample) }),
    )?;
    if !model.converged {
        return Err(not_converged(&model));
    }
    Ok(())
}

fn parse_contrasts(raw: &[String], n_groups: usize) -> Result<Option<Vec<ContrastSpec>>> {
    if raw.is_empty() {
        return Ok(None);
    }
    raw.iter()
        .map(|s| {
            let a = s
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| {
                    Error::InvalidInput(format!("cannot parse contrast `{s}` as numbers"))
                })?;
            if a.len() != n_groups {
                return Err(Error::InvalidInput(format!(
                    "contrast `{s}` has {} coefficients but the sample has {n_groups} groups",
                    a.len()
                )));
            }
            Ok(ContrastSpec::new(a, s.clone()))
        })
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

pub fn estimate(a: &EstimateArgs, cli: &Cli) -> Result<()> {
    let scheme: TiltScheme = a.scheme.parse()?;
    let variance: VarianceSpec = a.variance.parse()?;
    check_compatibility(&scheme, variance)?;
    if matches!(variance, VarianceSpec::Bootstrap { .. }) && a.seed.is_none() {
        return Err(Error::InvalidInput(
            "--seed is required with the bootstrap".into(),
        ));
    }
    let sample = load(&a.input, Some(&a.outcome_col))?;
    let opts = AnalysisOptions {
        fit: fit_options(&a.fit),
        variance,
        seed: a.seed,
        exec: Execution::from_workers(cli.workers),
        contrasts: parse_contrasts(&a.contrast, sample.n_groups())?,
        ..AnalysisOptions::default()
    };
    let result = analyze(&sample, &scheme, &opts)?;
    let ws = &result.weighted;
    let mut out = OutputDir::create(&a.out, &[a.input.input.as_path()])?;
    write_estimates_csv(
        out.file("estimates.csv")?,
        &result.estimates,
        sample.labels(),
    )?;
    out.write_json(
        "estimates.json",
        &json!({
            "scheme": scheme.to_string(),
            "variance": variance.to_string(),
            "groups": groups_json(&sample),
            "group_means": result.means,
            "estimates": result.estimates,
            "trim": trim_json(&ws.trim, sample.n(), &ws.units),
            "fit": fit_report(&ws.model),
            "bootstrap_redraws": result.bootstrap.as_ref().map(|b| b.redraws),
        }),
    )?;
    write_diagnostics(&mut out, &sample, ws)?;
    if let Some(boot) = &result.bootstrap {
        write_bootstrap_replicates(out.file("bootstrap_replicates.csv")?, boot)?;
    }
    let seeds: Vec<(&str, u64)> = a.seed.map(|s| ("bootstrap", s)).into_iter().collect();
    out.finish("estimate", a, cli.workers, &seeds, json!({}))?;
    if !ws.converged() {
        return Err(not_converged(&ws.model));
    }
    Ok(())
}

pub fn simulate(a: &SimulateArgs, cli: &Cli) -> Result<()> {
    let spec = design(&a.design)?;
    let gmw: VarianceSpec = a.gmw_interval.parse()?;
    if gmw == VarianceSpec::Sandwich {
        check_compatibility(&TiltScheme::Matching, gmw)?;
    }
    if a.reps == 0 {
        return Err(Error::InvalidInput("--reps must be at least 1".into()));
    }
    let mut opts = McOptions::new(a.reps, a.seed);
    opts.exec = Execution::from_workers(cli.workers);
    opts.fit = fit_options(&a.fit);
    opts.roster = default_roster(gmw);
    opts.truth_draws = a.truth_draws;
    let result = balancekit::sim::run_monte_carlo(&spec, &opts)?;
    let inputs: Vec<&Path> = a.design.scenario.iter().map(|p| p.as_path()).collect();
    let mut out = OutputDir::create(&a.out, &inputs)?;
    write_table_csv(out.file("table.csv")?, &result)?;
    write_summary_csv(out.file("summary.csv")?, &result)?;
    write_replicate_estimates(out.file("replicates.csv")?, &result)?;
    out.finish(
        "simulate",
        a,
        cli.workers,
        &[
            ("monte_carlo", a.seed),
            ("calibration", spec.calibration_seed),
        ],
        json!({
            "design": result.design,
            "runtime_seconds": result.runtime_seconds,
            "succeeded": result.succeeded,
            "failed": result.failures.len(),
            "failures": result.failures,
            "alpha": result.alpha,
            "covariance": result.covariance,
            "trim_fraction": result.trim_fraction,
        }),
    )
}

pub fn ternary(a: &TernaryArgs, cli: &Cli) -> Result<()> {
    let grid = ternary_grid(a.resolution)?;
    let mut out = OutputDir::create(&a.out, &[])?;
    write_ternary_csv(out.file("ternary.csv")?, &grid)?;
    out.finish("ternary", a, cli.workers, &[], json!({}))
}

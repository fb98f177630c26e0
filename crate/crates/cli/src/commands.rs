use std::path::Path;

use log::info;
use serde::Serialize;
use serde_json::{json, Value};

use nbs_core::cost::CostFamily;
use nbs_core::data::{ingest_csv, write_csv, SchemaMapping};
use nbs_core::inference::{
    bootstrap_pipeline, coefficient_test, BootstrapConfig, BootstrapResult, CiMethod, TestResult,
};
use nbs_core::models::ModelDocument;
use nbs_core::nbs::{CedCurve, PrimaryRange, QuantileMode, OMEGA_TERM};
use nbs_core::pipeline::{
    estimate, estimate_with_models, fit_outcome_models, parse_profiles, CensoringSpec, PipelineEstimate, Profile,
};
use nbs_core::sim::{
    generate_analogue_data, generate_scenario_data, reports_to_text, run_study, write_reports_csv, Confounding,
    ConfoundingLevel, ScenarioConfig,
};
use nbs_core::{rng, Dataset, Formula, PipelineSpec};

use crate::args::*;
use crate::error::CliError;
use crate::output::{read_text, write_atomic, OutDir};

const BOOT_SEED_TAG: u64 = 0x424f_4f54;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn parse_list(text: &str, what: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| usage(format!("{what}: not a number: {s:?}")))
        })
        .collect()
}

fn parse_range(text: &str) -> Result<PrimaryRange, CliError> {
    match parse_list(text, "--primary-range")?.as_slice() {
        [lower, upper] if lower <= upper => Ok(PrimaryRange {
            lower: *lower,
            upper: *upper,
        }),
        _ => Err(usage("--primary-range expects \"lower,upper\" with lower <= upper")),
    }
}

fn formula(text: &str, flag: &str) -> Result<Formula, CliError> {
    Formula::parse(text).map_err(|e| usage(format!("{flag}: {e}")))
}

fn load_dataset(model: &ModelArgs) -> Result<(Dataset, SchemaMapping), CliError> {
    let mapping = SchemaMapping::from_json(&read_text(&model.schema, "schema")?)
        .map_err(|e| usage(format!("{}: {e}", model.schema.display())))?;
    let data = ingest_csv(&model.data, &mapping).map_err(|e| usage(format!("{}: {e}", model.data.display())))?;
    info!("read {} records from {}", data.len(), model.data.display());
    Ok((data, mapping))
}

/// Defaults, then the config file, then flags.
fn resolve_spec(model: &ModelArgs) -> Result<PipelineSpec, CliError> {
    let mut spec = match &model.config {
        Some(p) => serde_json::from_str::<PipelineSpec>(&read_text(p, "config")?)
            .map_err(|e| usage(format!("{}: {e}", p.display())))?,
        None => PipelineSpec::default(),
    };
    if let Some(s) = &model.survival {
        spec.survival_formula = formula(s, "--survival")?;
    }
    if let Some(s) = &model.cost {
        spec.cost_formula = formula(s, "--cost")?;
    }
    if let Some(f) = model.cost_family {
        spec.cost_family = match f {
            CostFamilyArg::LogNormal => CostFamily::LogNormal,
            CostFamilyArg::ZeroInflated => CostFamily::ZeroInflated,
        };
    }
    if let Some(c) = model.censoring {
        spec.censoring = match c {
            CensoringArg::Km => CensoringSpec::KaplanMeier,
            CensoringArg::Cox => CensoringSpec::default(),
        };
    }
    Ok(spec)
}

pub fn simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let mut r = rng::stream(args.seed, &[]);
    let (data, params) = match args.scenario {
        Scenario::Analogue => {
            if args.censoring.is_some() || args.confounding.is_some() {
                return Err(usage(
                    "--censoring and --confounding do not apply to the analogue scenario",
                ));
            }
            if args.n < 20 {
                return Err(usage("--n must be at least 20"));
            }
            (
                generate_analogue_data(args.n, &mut r),
                json!({"scenario": "analogue", "n": args.n}),
            )
        }
        Scenario::Effect | Scenario::Null => {
            let effect = args.scenario == Scenario::Effect;
            let confounding = match &args.confounding {
                None => Confounding::None,
                Some(s) => Confounding::parse(s).ok_or_else(|| {
                    usage(format!(
                        "--confounding: expected none, survival:LEVEL or cost:LEVEL, got {s:?}"
                    ))
                })?,
            };
            if confounding != Confounding::None && !effect {
                return Err(usage("--confounding requires --scenario effect"));
            }
            let censoring = args
                .censoring
                .unwrap_or(if confounding == Confounding::None { 0.10 } else { 0.30 });
            if confounding != Confounding::None && censoring != 0.30 {
                return Err(usage("confounded scenarios use 30% censoring"));
            }
            let config = ScenarioConfig {
                confounding,
                n_sims: 1,
                ..ScenarioConfig::new(effect, args.n, censoring, args.seed)?
            };
            config.validate()?;
            (
                generate_scenario_data(&config, &mut r),
                serde_json::to_value(&config).unwrap(),
            )
        }
    };
    let mapping = SchemaMapping::for_dataset(&data);
    let mut out = OutDir::create(&args.out)?;
    out.write_with("data.csv", |w| write_csv(&data, &mapping, w).map_err(CliError::runtime))?;
    out.write_bytes("schema.json", format!("{}\n", mapping.to_json()).as_bytes())?;
    let censoring = data.censoring_fraction();
    println!(
        "wrote {} records ({:.1}% censored) to {}",
        data.len(),
        100.0 * censoring,
        args.out.display()
    );
    out.finish(
        "simulate",
        Some(args.seed),
        params,
        json!({"n": data.len(), "realized_censoring": censoring, "arm_counts": data.arm_counts()}),
    )
}

pub fn fit(args: &FitArgs) -> Result<(), CliError> {
    let (data, _) = load_dataset(&args.model)?;
    let spec = resolve_spec(&args.model)?;
    let models = fit_outcome_models(&data, &spec)?;
    let doc = ModelDocument::from_fitted(data.schema(), &models);
    let mut out = OutDir::create(&args.out)?;
    out.write_bytes("models.json", format!("{}\n", doc.to_json()).as_bytes())?;
    println!(
        "survival shape {:.4}, {} scale coefficients; {} positive cost weights",
        models.survival.shape_k,
        models.survival.scale_coefficients.len(),
        models.weights.positive_count()
    );
    out.finish(
        "fit",
        None,
        serde_json::to_value(&spec).unwrap(),
        json!({"data": args.model.data, "schema": args.model.schema}),
    )
}

#[derive(Serialize)]
struct EstimateRow {
    lambda: f64,
    profile: String,
    x: Vec<f64>,
    theta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    se: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ci_lower: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ci_upper: Option<f64>,
}

#[derive(Serialize)]
struct CoefficientRow {
    lambda: f64,
    name: String,
    estimate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    se: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ci_lower: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ci_upper: Option<f64>,
}

#[derive(Serialize)]
struct FitSummary {
    lambda: f64,
    quantile_kind: String,
    iterations: usize,
    loglik: f64,
}

#[derive(Serialize)]
struct BootstrapSummary {
    replicates: usize,
    successful: usize,
    alpha: f64,
    method: CiMethod,
    failures: Vec<String>,
}

#[derive(Serialize)]
struct Results {
    lambdas: Vec<f64>,
    profiles: Vec<Profile>,
    estimates: Vec<EstimateRow>,
    coefficients: Vec<CoefficientRow>,
    fits: Vec<FitSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bootstrap: Option<BootstrapSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    tests: Vec<TestResult>,
}

/// Hypotheses as coefficient-name lists. Each `--test` value may name terms
/// (all their columns) or single columns. Default: each non-intercept `X`
/// column alone, then all of them jointly.
fn hypotheses(point: &PipelineEstimate, requested: &[String]) -> Result<Vec<Vec<String>>, CliError> {
    let fit = &point.per_lambda[0].fit;
    let names = &fit.names;
    if requested.is_empty() {
        let xs: Vec<String> = names[1..].iter().filter(|n| *n != OMEGA_TERM).cloned().collect();
        let mut out: Vec<Vec<String>> = xs.iter().map(|n| vec![n.clone()]).collect();
        if xs.len() > 1 {
            out.push(xs);
        }
        return Ok(out);
    }
    requested
        .iter()
        .map(|h| {
            let mut cols = Vec::new();
            for label in h.split(',').map(str::trim) {
                let idx = if label == OMEGA_TERM {
                    vec![names.len() - 1]
                } else {
                    fit.design.columns_for(label)
                };
                if idx.is_empty() {
                    return Err(usage(format!(
                        "--test: no coefficient or term {label:?}; coefficients are {}",
                        names.join(", ")
                    )));
                }
                cols.extend(idx.into_iter().map(|i| names[i].clone()));
            }
            Ok(cols)
        })
        .collect()
}

fn resolve_profiles(arg: Option<&str>, data: &Dataset) -> Result<Vec<Profile>, CliError> {
    let schema = data.schema();
    let text = match arg {
        None if schema.x.is_empty() => "[{}]".to_string(),
        None => return Err(usage("--profiles is required when the schema has X columns")),
        Some(s) if s.trim_start().starts_with('[') => s.to_string(),
        Some(path) => read_text(Path::new(path), "profiles")?,
    };
    Ok(parse_profiles(&text, schema)?)
}

fn write_replicates(out: &mut OutDir, result: &BootstrapResult) -> Result<(), CliError> {
    let point = &result.point;
    let mut text = String::from("replicate,lambda");
    for n in point.coefficient_names() {
        text.push_str(&format!(",\"beta:{}\"", n.replace('"', "\"\"")));
    }
    for p in &point.profiles {
        text.push_str(&format!(",\"theta:{}\"", p.label.replace('"', "\"\"")));
    }
    text.push('\n');
    for (b, (coefs, thetas)) in result
        .replicate_coefficients
        .iter()
        .zip(&result.replicate_thetas)
        .enumerate()
    {
        for (li, l) in point.per_lambda.iter().enumerate() {
            text.push_str(&format!("{b},{}", l.lambda));
            for v in coefs[li].iter().chain(&thetas[li]) {
                text.push_str(&format!(",{v}"));
            }
            text.push('\n');
        }
    }
    out.write_bytes("replicates.csv", text.as_bytes())
}

pub fn estimate_cmd(args: &EstimateArgs) -> Result<(), CliError> {
    let (data, _) = load_dataset(&args.model)?;
    let mut spec = resolve_spec(&args.model)?;
    if let Some(p) = &args.probit {
        spec.probit_formula = formula(p, "--probit")?;
    }
    if let Some(l) = &args.lambda {
        spec.lambdas = parse_list(l, "--lambda")?;
    }
    if let Some(m) = args.m {
        spec.m_draws = m;
    }
    if let Some(n) = args.n_omega {
        spec.n_omega = n;
    }
    if let Some(q) = args.quantile {
        spec.quantile_mode = match q {
            QuantileArg::Auto => QuantileMode::Auto,
            QuantileArg::Empirical => QuantileMode::Empirical,
            QuantileArg::Regression => QuantileMode::Regression,
        };
    }
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    spec.validate()?;
    if args.bootstrap == 1 {
        return Err(usage("--bootstrap needs 0 or at least 2 replicates"));
    }
    if args.models.is_some() && args.bootstrap > 0 {
        return Err(usage(
            "--models cannot be combined with --bootstrap; replicates refit the models",
        ));
    }
    if args.replicates_csv && args.bootstrap == 0 {
        return Err(usage("--replicates-csv requires --bootstrap"));
    }
    let range = args.primary_range.as_deref().map(parse_range).transpose()?;
    let profiles = resolve_profiles(args.profiles.as_deref(), &data)?;
    let method = match args.ci {
        CiArg::Symmetric => CiMethod::Symmetric,
        CiArg::Normal => CiMethod::Normal,
    };

    let (point, boot) = if args.bootstrap > 0 {
        let config = BootstrapConfig {
            alpha: args.alpha,
            method,
            ..BootstrapConfig::new(args.bootstrap, rng::derive_seed(spec.seed, &[BOOT_SEED_TAG]))
        };
        config.validate()?;
        let result = bootstrap_pipeline(&data, &spec, &profiles, &config)?;
        (result.point.clone(), Some(result))
    } else if let Some(path) = &args.models {
        let doc = ModelDocument::from_json(&read_text(path, "models")?)?;
        if &doc.schema != data.schema() {
            return Err(usage(format!(
                "{}: model schema does not match the data schema",
                path.display()
            )));
        }
        (
            estimate_with_models(&data, &doc.survival, &doc.cost, &spec, &profiles)?,
            None,
        )
    } else {
        (estimate(&data, &spec, &profiles)?, None)
    };

    let tests = match &boot {
        Some(b) => {
            let hyps = hypotheses(&point, &args.test)?;
            let mut out = Vec::new();
            for li in 0..point.per_lambda.len() {
                for h in &hyps {
                    let refs: Vec<&str> = h.iter().map(String::as_str).collect();
                    out.push(coefficient_test(b, li, &refs)?);
                }
            }
            out
        }
        None if !args.test.is_empty() => return Err(usage("--test requires --bootstrap")),
        None => Vec::new(),
    };

    let cis = boot.as_ref().map(|b| b.theta_cis());
    let mut estimates = Vec::new();
    let mut coefficients = Vec::new();
    for (li, l) in point.per_lambda.iter().enumerate() {
        for (pi, p) in point.profiles.iter().enumerate() {
            let ci = cis.as_ref().map(|c| c[li][pi]);
            estimates.push(EstimateRow {
                lambda: l.lambda,
                profile: p.label.clone(),
                x: p.x.clone(),
                theta: l.thetas[pi],
                se: boot.as_ref().map(|b| b.theta_se(li, pi)),
                ci_lower: ci.map(|c| c.0),
                ci_upper: ci.map(|c| c.1),
            });
        }
        for (ci, name) in l.fit.names.iter().enumerate() {
            let interval = boot.as_ref().map(|b| b.coefficient_ci(li, ci));
            coefficients.push(CoefficientRow {
                lambda: l.lambda,
                name: name.clone(),
                estimate: l.fit.coefficients[ci],
                se: boot.as_ref().map(|b| b.coefficient_se(li, ci)),
                ci_lower: interval.map(|c| c.0),
                ci_upper: interval.map(|c| c.1),
            });
        }
    }
    let results = Results {
        lambdas: point.lambdas(),
        profiles: point.profiles.clone(),
        estimates,
        coefficients,
        fits: point
            .per_lambda
            .iter()
            .map(|l| FitSummary {
                lambda: l.lambda,
                quantile_kind: format!("{:?}", l.quantile_kind),
                iterations: l.fit.iterations,
                loglik: l.fit.loglik,
            })
            .collect(),
        bootstrap: boot.as_ref().map(|b| BootstrapSummary {
            replicates: b.config.n_replicates,
            successful: b.successful(),
            alpha: b.config.alpha,
            method: b.config.method,
            failures: b
                .failures
                .iter()
                .map(|f| format!("replicate {}: {}", f.replicate, f.message))
                .collect(),
        }),
        tests,
    };

    let ced = point.ced_curve(data.schema(), range, cis.as_deref());
    let mut out = OutDir::create(&args.out)?;
    out.write_json("results.json", &results)?;
    out.write_with("ced.csv", |w| ced.write_csv(w).map_err(CliError::from))?;
    out.write_bytes("ced.svg", ced.to_svg().as_bytes())?;
    if args.replicates_csv {
        if let Some(b) = &boot {
            write_replicates(&mut out, b)?;
        }
    }
    print_table(&results);
    out.finish(
        "estimate",
        Some(spec.seed),
        json!({
            "pipeline": spec,
            "profiles": profiles,
            "bootstrap": args.bootstrap,
            "alpha": args.alpha,
            "ci": format!("{:?}", method).to_lowercase(),
            "tests": args.test,
            "primary_range": range,
            "models": args.models,
        }),
        json!({"data": args.model.data, "schema": args.model.schema, "n": data.len()}),
    )
}

fn print_table(r: &Results) {
    println!(
        "{:>10}  {:<28} {:>7} {:>7} {:>17}",
        "lambda", "profile", "theta", "se", "ci"
    );
    for e in &r.estimates {
        let se = e.se.map(|s| format!("{s:.4}")).unwrap_or_else(|| "-".into());
        let ci = match (e.ci_lower, e.ci_upper) {
            (Some(l), Some(u)) => format!("[{l:.4}, {u:.4}]"),
            _ => "-".into(),
        };
        println!(
            "{:>10}  {:<28} {:>7.4} {:>7} {:>17}",
            e.lambda, e.profile, e.theta, se, ci
        );
    }
    for t in &r.tests {
        println!(
            "lambda {}: H0 {} = 0: statistic {:.4}, p = {:.4}{}",
            t.lambda,
            t.coefficients.join(", "),
            t.statistic,
            t.p_value,
            if t.reject { " (reject)" } else { "" }
        );
    }
}

fn parse_usize_list(text: &str, what: &str) -> Result<Vec<usize>, CliError> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| usage(format!("{what}: not a count: {s:?}")))
        })
        .collect()
}

pub fn replicate(args: &ReplicateArgs) -> Result<(), CliError> {
    let base = |effect: bool, n: usize, cens: f64, index: u64| -> Result<ScenarioConfig, CliError> {
        let mut c = ScenarioConfig::new(
            effect,
            n,
            cens,
            rng::derive_seed(args.seed, &[u64::from(args.table), index]),
        )?;
        c.n_sims = args.sims;
        c.n_boot = args.bootstrap;
        c.m_draws = args.m;
        c.n_omega = args.n_omega;
        c.n_oracle = args.oracle;
        Ok(c)
    };
    let mut configs = Vec::new();
    if args.table == 3 {
        if args.censoring.is_some() {
            return Err(usage("--censoring does not apply to table 3 (30% censoring)"));
        }
        let levels = match &args.confounding {
            None => ConfoundingLevel::ALL.to_vec(),
            Some(s) => s
                .split(',')
                .map(|l| {
                    ConfoundingLevel::parse(l.trim())
                        .ok_or_else(|| usage(format!("--confounding: unknown level {l:?}")))
                })
                .collect::<Result<_, _>>()?,
        };
        let ns = parse_usize_list(args.n.as_deref().unwrap_or("5000"), "--n")?;
        for &n in &ns {
            for &level in &levels {
                for conf in [Confounding::Survival(level), Confounding::Cost(level)] {
                    let mut c = base(true, n, 0.30, configs.len() as u64)?;
                    c.confounding = conf;
                    configs.push(c);
                }
            }
        }
    } else {
        if args.confounding.is_some() {
            return Err(usage("--confounding applies to table 3 only"));
        }
        let cens = parse_list(args.censoring.as_deref().unwrap_or("0.10,0.30,0.50"), "--censoring")?;
        let ns = parse_usize_list(args.n.as_deref().unwrap_or("500,5000"), "--n")?;
        for &c in &cens {
            for &n in &ns {
                configs.push(base(args.table == 1, n, c, configs.len() as u64)?);
            }
        }
    }
    for c in &configs {
        c.validate()?;
    }
    let mut reports = Vec::new();
    for c in &configs {
        info!(
            "scenario {} / {:.0}% / n={}",
            c.confounding.label(),
            c.censoring_target * 100.0,
            c.n
        );
        reports.push(run_study(c)?);
    }
    let text = reports_to_text(&reports);
    print!("{text}");
    let mut out = OutDir::create(&args.out)?;
    let stem = format!("table{}", args.table);
    out.write_with(&format!("{stem}.csv"), |w| {
        write_reports_csv(&reports, w).map_err(CliError::from)
    })?;
    out.write_bytes(&format!("{stem}.txt"), text.as_bytes())?;
    out.write_json(&format!("{stem}.json"), &reports)?;
    out.finish(
        "replicate",
        Some(args.seed),
        json!({"table": args.table, "scenarios": configs}),
        Value::Null,
    )
}

pub fn plot(args: &PlotArgs) -> Result<(), CliError> {
    let text = read_text(&args.ced, "CED CSV")?;
    let mut curve = CedCurve::read_csv(text.as_bytes())?;
    if let Some(r) = args.primary_range.as_deref().map(parse_range).transpose()? {
        for row in &mut curve.rows {
            row.in_primary_range = r.contains(row.lambda);
        }
    }
    let svg = curve.to_svg();
    write_atomic(&args.out, |w| w.write_all(svg.as_bytes()).map_err(CliError::runtime))?;
    println!("wrote {}", args.out.display());
    Ok(())
}

use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use statrs::function::gamma::gamma;

use nbs_core::cost::CostModel;
use nbs_core::data::{Arm, ColumnSpec, CostEffectivenessRecord};
use nbs_core::formula::Covariates;
use nbs_core::nbs::wilcoxon_nbs;
use nbs_core::pipeline::{estimate, fit_outcome_models, Profile};
use nbs_core::sim::{generate_scenario_data, true_thetas, ScenarioConfig};
use nbs_core::survival::{compute_ipcw, fit_censoring_km, fit_weibull};
use nbs_core::{rng, Dataset, Error, Formula, Schema};

fn record(a: usize, l: f64, z: f64, cost: Option<f64>, censored: bool) -> CostEffectivenessRecord {
    CostEffectivenessRecord {
        treatment: Arm::from_index(a).unwrap(),
        covariate_x: vec![],
        confounders_l: vec![l],
        observed_time: z,
        cost,
        survival_censored: censored,
        cost_censored: censored,
    }
}

fn l_schema() -> Schema {
    Schema::new(vec![], vec![ColumnSpec::numeric("l")])
}

fn pairwise(treated: &[f64], control: &[f64]) -> f64 {
    let mut s = 0.0;
    for t in treated {
        for c in control {
            s += if t > c {
                1.0
            } else if t == c {
                0.5
            } else {
                0.0
            };
        }
    }
    s / (treated.len() * control.len()) as f64
}

proptest! {
    #[test]
    fn rank_sum_equals_pairwise_count(
        treated in prop::collection::vec(-5i32..5, 1..40),
        control in prop::collection::vec(-5i32..5, 1..40),
    ) {
        let t: Vec<f64> = treated.iter().map(|&v| v as f64 / 2.0).collect();
        let c: Vec<f64> = control.iter().map(|&v| v as f64 / 2.0).collect();
        let got = wilcoxon_nbs(&t, &c).unwrap();
        prop_assert!((got - pairwise(&t, &c)).abs() < 1e-15);
        prop_assert!((got + wilcoxon_nbs(&c, &t).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ipcw_weights_zero_iff_censored(
        rows in prop::collection::vec((0usize..2, 0.1f64..10.0, any::<bool>()), 5..60),
    ) {
        let records: Vec<_> = rows
            .iter()
            .map(|&(a, z, c)| record(a, 0.0, z, if c { None } else { Some(10.0) }, c))
            .collect();
        let d = Dataset::new(records, l_schema(), f64::INFINITY);
        let Ok(g) = fit_censoring_km(&d) else { return Ok(()) };
        let Ok(w) = compute_ipcw(&d, &g) else { return Ok(()) };
        for (r, w) in d.records().iter().zip(&w.weights) {
            if r.cost_censored {
                prop_assert_eq!(*w, 0.0);
            } else {
                prop_assert!(*w >= 1.0);
            }
        }
    }
}

#[test]
fn weibull_draws_match_moment() {
    let d = Dataset::new(vec![record(0, 0.0, 1.0, Some(1.0), false)], l_schema(), f64::INFINITY);
    let design = nbs_core::formula::Design::build(
        &Formula::intercept_only(),
        d.schema(),
        true,
        nbs_core::formula::Allowed::ALL,
    )
    .unwrap();
    let fit = nbs_core::survival::WeibullFit::from_parts(design, 1.7, vec![0.8]);
    let c = Covariates::of_record(&d.records()[0]);
    let mut r = rng::stream(5, &[]);
    let n = 100_000;
    let mean = (0..n).map(|_| fit.sample(&c, &mut r)).sum::<f64>() / n as f64;
    let want = 0.8f64.exp() * gamma(1.0 + 1.0 / 1.7);
    assert!((mean / want - 1.0).abs() < 0.01, "{mean} vs {want}");
}

#[test]
fn exponential_data_give_unit_shape() {
    let mut r = rng::stream(9, &[]);
    let exp = Exp::new(0.5).unwrap();
    let records = (0..3000)
        .map(|i| record(i % 2, 0.0, exp.sample(&mut r), Some(1.0), false))
        .collect();
    let d = Dataset::new(records, l_schema(), f64::INFINITY);
    let fit = fit_weibull(&d, &Formula::intercept_only()).unwrap();
    assert!((fit.shape_k - 1.0).abs() < 2.0 * fit.shape_se(), "k = {}", fit.shape_k);
    assert!((fit.scale_coefficients[0] - 2f64.ln()).abs() < 2.0 * fit.standard_errors()[0]);
}

#[test]
fn duplicate_column_is_rank_deficient() {
    let schema = Schema::new(vec![], vec![ColumnSpec::numeric("l"), ColumnSpec::numeric("l2")]);
    let mut r = rng::stream(2, &[]);
    let records = (0..200)
        .map(|i| {
            let l: f64 = r.sample(StandardNormal);
            let mut rec = record(i % 2, l, 1.0 + r.random::<f64>(), Some(5.0), false);
            rec.confounders_l.push(l);
            rec
        })
        .collect();
    let d = Dataset::new(records, schema, f64::INFINITY);
    let e = fit_weibull(&d, &Formula::parse("A + l + l2").unwrap()).unwrap_err();
    assert!(e.to_string().contains("l2"), "{e}");
}

#[test]
fn ipcw_cost_fit_recovers_coefficients_at_heavy_censoring() {
    let c = ScenarioConfig::new(true, 5000, 0.50, 4).unwrap();
    let d = generate_scenario_data(&c, &mut rng::stream(4, &[]));
    let spec = c.analysis_spec(4);
    let m = fit_outcome_models(&d, &spec).unwrap();
    let CostModel::LogNormal(ipcw) = &m.cost else { panic!() };
    let truth = [4.2, 0.5, 0.002];
    let se = ipcw.standard_errors();
    for j in 0..3 {
        assert!((ipcw.mean_coefficients[j] - truth[j]).abs() < 3.0 * se[j], "coef {j}");
    }
    assert_eq!(ipcw.n_used, m.weights.positive_count());
}

#[test]
fn pipeline_recovers_oracle_thetas() {
    let c = ScenarioConfig::new(true, 4000, 0.10, 12).unwrap();
    let d = generate_scenario_data(&c, &mut rng::stream(12, &[]));
    let profiles: Vec<Profile> = [0.0, 1.0]
        .iter()
        .map(|&x| Profile {
            label: format!("x={x}"),
            x: vec![x],
        })
        .collect();
    let est = estimate(&d, &c.analysis_spec(12), &profiles).unwrap();
    let truth = true_thetas(&c, &[2.0, 12.0], &[0.0, 1.0], 200_000, 1).unwrap();
    for (li, row) in truth.iter().enumerate() {
        for (xi, want) in row.iter().enumerate() {
            let got = est.theta(li, xi);
            assert!((got - want).abs() < 0.04, "λ index {li}, x {xi}: {got} vs {want}");
        }
    }
}

#[test]
fn too_few_events_is_an_error() {
    let records = (0..10).map(|i| record(i % 2, 0.0, 1.0, None, true)).collect();
    let d = Dataset::new(records, l_schema(), f64::INFINITY);
    assert!(matches!(
        fit_weibull(&d, &Formula::intercept_only()),
        Err(Error::Fit(_))
    ));
}

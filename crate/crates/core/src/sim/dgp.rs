use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Weibull};
use rayon::prelude::*;

use super::ScenarioConfig;
use crate::data::{Arm, ColumnSpec, CostEffectivenessRecord, Dataset, Schema};
use crate::error::Result;
use crate::nbs::wilcoxon_nbs;
use crate::rng;

const SHAPE: f64 = 2.0;
const COST_SD: f64 = 0.4;
const P_X: f64 = 0.25;
const ORACLE_TAG: u64 = 0x4f52_4143;
const ORACLE_CHUNK: usize = 1 << 14;

fn expit(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn weibull<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> f64 {
    Weibull::new(scale, SHAPE)
        .expect("positive Weibull parameters")
        .sample(rng)
}

/// Every latent and observed quantity of one simulated subject.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Subject {
    pub l: f64,
    pub x: f64,
    pub u1: f64,
    pub u2: f64,
    pub a: f64,
    pub t: f64,
    pub c: f64,
    pub y: f64,
}

/// `(T, Y)` under treatment `a` at fixed `(l, x, u₁, u₂)`.
fn outcomes<R: Rng + ?Sized>(
    config: &ScenarioConfig,
    a: f64,
    l: f64,
    x: f64,
    u1: f64,
    u2: f64,
    rng: &mut R,
) -> (f64, f64) {
    let (bx, bax) = config.effect();
    let (_, eta1, _, eta2) = config.confounding.parameters();
    let t = weibull(
        (4.05 + 0.15 * a + 0.2 * l - eta1 * u1 + bx * x + bax * a * x).exp(),
        rng,
    );
    let e: f64 = rng.sample(StandardNormal);
    let y = (4.2 + 0.002 * t + 0.5 * a + eta2 * u2 + COST_SD * e).exp();
    (t, y)
}

pub(crate) fn draw_subject<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> Subject {
    let (g1, _, g2, _) = config.confounding.parameters();
    let l: f64 = rng.sample(StandardNormal);
    let x = if rng.random::<f64>() < P_X { 1.0 } else { 0.0 };
    let u1: f64 = rng.sample(StandardNormal);
    let u2: f64 = rng.sample(StandardNormal);
    let a = if rng.random::<f64>() < expit(l + g1 * u1 + g2 * u2) {
        1.0
    } else {
        0.0
    };
    let (t, y) = outcomes(config, a, l, x, u1, u2, rng);
    let c = weibull((config.gamma + 0.5 * a).exp(), rng);
    Subject {
        l,
        x,
        u1,
        u2,
        a,
        t,
        c,
        y,
    }
}

pub(crate) fn schema() -> Schema {
    Schema::new(vec![ColumnSpec::numeric("x")], vec![ColumnSpec::numeric("l")])
}

/// One dataset of `config.n` subjects. Survival and cost are censored
/// together when `C < T`; `U₁`, `U₂` are not recorded.
pub fn generate_scenario_data<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> Dataset {
    let records = (0..config.n)
        .map(|_| {
            let s = draw_subject(config, rng);
            let censored = s.c < s.t;
            CostEffectivenessRecord {
                treatment: if s.a == 1.0 { Arm::Treated } else { Arm::Control },
                covariate_x: vec![s.x],
                confounders_l: vec![s.l],
                observed_time: s.t.min(s.c),
                cost: (!censored).then_some(s.y),
                survival_censored: censored,
                cost_censored: censored,
            }
        })
        .collect();
    Dataset::new(records, schema(), f64::INFINITY)
}

/// Uncensored `(T, Y)` for `n` subjects with treatment set to `arm` and `X = x`,
/// marginal over `L`, `U₁`, `U₂`.
fn oracle_draws(config: &ScenarioConfig, arm: Arm, x: f64, n: usize, seed: u64) -> Vec<(f64, f64)> {
    let seed = rng::derive_seed(seed, &[x.to_bits()]);
    let chunks = n.div_ceil(ORACLE_CHUNK);
    (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut r = rng::stream(seed, &[ORACLE_TAG, arm.index() as u64, c as u64]);
            let len = ORACLE_CHUNK.min(n - c * ORACLE_CHUNK);
            (0..len)
                .map(|_| {
                    let l: f64 = r.sample(StandardNormal);
                    let u1: f64 = r.sample(StandardNormal);
                    let u2: f64 = r.sample(StandardNormal);
                    outcomes(config, arm.indicator(), l, x, u1, u2, &mut r)
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

/// `θ(λ | x)` by brute force: concordance of `λT − Y` between `n_oracle`
/// treated and `n_oracle` control draws.
pub fn true_theta_oracle(config: &ScenarioConfig, lambda: f64, x: f64, n_oracle: usize, seed: u64) -> Result<f64> {
    Ok(true_thetas(config, &[lambda], &[x], n_oracle, seed)?[0][0])
}

/// `[λ][x]` table of oracle values, sharing draws across `λ`.
pub fn true_thetas(
    config: &ScenarioConfig,
    lambdas: &[f64],
    xs: &[f64],
    n_oracle: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let per_x: Vec<[Vec<(f64, f64)>; 2]> = xs
        .iter()
        .map(|&x| {
            [
                oracle_draws(config, Arm::Control, x, n_oracle, seed),
                oracle_draws(config, Arm::Treated, x, n_oracle, seed),
            ]
        })
        .collect();
    lambdas
        .iter()
        .map(|&lambda| {
            per_x
                .iter()
                .map(|[control, treated]| {
                    let b = |d: &[(f64, f64)]| d.iter().map(|(t, y)| lambda * t - y).collect::<Vec<_>>();
                    wilcoxon_nbs(&b(treated), &b(control))
                })
                .collect()
        })
        .collect()
}

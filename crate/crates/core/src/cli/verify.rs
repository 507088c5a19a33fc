//! Exact verification suites behind `kcmlab verify`.

use std::sync::Arc;

use clap::ValueEnum;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use super::CliError;
use crate::exact::{
    bernoulli, build_generator, build_hat_chain, build_minimal_boundary_chain, build_taboo_chain, build_tilde_chain,
    check_simpatica, check_tec1, check_tec2, check_two_block_lemma, check_xi_drift, congestion_constant, dirac, encode,
    region_constraint, spectral_gap, vacancy_transport_path, ProductSpace, RateMatrix, TwoBlockSetup,
};
use crate::model::{BoundaryCondition, ModelSpec, Region, Volume};

/// Detailed-balance tolerance for every constructed chain.
pub const REVERSIBILITY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Reversibility,
    Hat,
    Lemmas,
    Paths,
    Simpatica,
    Xi,
    All,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: Value,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

impl SuiteReport {
    fn new(suite: Suite, checks: Vec<CheckResult>) -> Self {
        Self {
            suite,
            passed: checks.iter().all(|c| c.passed),
            checks,
        }
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn check(name: impl Into<String>, passed: bool, detail: Value) -> CheckResult {
    CheckResult {
        name: name.into(),
        passed,
        detail,
    }
}

pub fn run_suite(suite: Suite, seed: u64) -> Result<SuiteReport, CliError> {
    let checks = match suite {
        Suite::Reversibility => reversibility()?,
        Suite::Hat => hat()?,
        Suite::Lemmas => lemmas(seed)?,
        Suite::Paths => paths()?,
        Suite::Simpatica => simpatica()?,
        Suite::Xi => xi()?,
        Suite::All => {
            let mut all = Vec::new();
            for s in [
                Suite::Reversibility,
                Suite::Hat,
                Suite::Lemmas,
                Suite::Paths,
                Suite::Simpatica,
                Suite::Xi,
            ] {
                all.extend(run_suite(s, seed)?.checks);
            }
            all
        }
    };
    Ok(SuiteReport::new(suite, checks))
}

/// Volumes with at most 8 sites: segments and two small boxes.
fn small_volumes() -> Vec<Arc<Volume>> {
    let mut out: Vec<Arc<Volume>> = (2..=8).map(|n| Arc::new(Volume::segment(n).expect("segment"))).collect();
    for dims in [[2, 2], [2, 3], [2, 4]] {
        out.push(Arc::new(Volume::lattice_box(&dims).expect("box")));
    }
    out
}

fn halves(n: usize) -> Vec<usize> {
    (0..n).map(|i| usize::from(i >= n / 2)).collect()
}

pub const REVERSIBILITY_QS: [f64; 4] = [0.3, 0.5, 0.8, 0.99];

fn reversibility() -> Result<Vec<CheckResult>, CliError> {
    let kinds = ["full", "hat", "tilde", "taboo", "minimal"];
    let mut worst = [0.0f64; 5];
    let mut counts = [0usize; 5];
    for v in small_volumes() {
        let n = v.len();
        for q in REVERSIBILITY_QS {
            let spec = ModelSpec::fa1f(q)?;
            let mut record = |k: usize, chain: RateMatrix| {
                worst[k] = worst[k].max(chain.detailed_balance_residual());
                counts[k] += 1;
            };
            for bc in [BoundaryCondition::Empty, BoundaryCondition::Filled] {
                let region = Region::new(Arc::clone(&v), bc)?;
                record(0, build_generator(&region, &spec)?);
            }
            record(1, build_hat_chain(&v, &spec, &vec![0; n], 1)?);
            record(1, build_hat_chain(&v, &spec, &halves(n), 2)?);
            record(2, build_tilde_chain(&v, &spec, &halves(n), 2)?);
            let empty = Region::new(Arc::clone(&v), BoundaryCondition::Empty)?;
            record(3, build_taboo_chain(&empty, &spec, &vec![0; n], 1)?);
            if n >= 4 {
                record(3, build_taboo_chain(&empty, &spec, &halves(n), 2)?);
            }
            for &z in v.boundary() {
                record(4, build_minimal_boundary_chain(&v, z, &spec)?);
            }
        }
    }
    Ok(kinds
        .iter()
        .enumerate()
        .map(|(k, name)| {
            check(
                format!("detailed_balance_{name}"),
                worst[k] < REVERSIBILITY_TOL,
                json!({ "max_residual": worst[k], "chains": counts[k] }),
            )
        })
        .collect())
}

pub const HAT_QS: [f64; 5] = [0.3, 0.5, 0.7, 0.8, 0.9];

fn hat() -> Result<Vec<CheckResult>, CliError> {
    let v = Arc::new(Volume::segment(2)?);
    let mut out = Vec::new();
    for q in HAT_QS {
        let spec = ModelSpec::fa1f(q)?;
        let report = spectral_gap(&build_hat_chain(&v, &spec, &[0, 0], 1)?)?;
        let mut ev = report.eigenvalues.clone().unwrap_or_default();
        ev.sort_by(f64::total_cmp);
        let want = [0.0, q, 2.0 - q];
        let spectrum_ok = ev.len() == 3 && ev.iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-10);
        out.push(check(
            format!("two_site_hat_gap_q{q}"),
            (report.gap - q).abs() < 1e-10 && spectrum_ok,
            json!({ "gap": report.gap, "spectrum": ev }),
        ));
    }
    Ok(out)
}

fn lemma_batch(name: &str, results: Vec<crate::exact::LemmaCheck>) -> CheckResult {
    let applicable: Vec<_> = results.iter().filter(|r| r.applicable).collect();
    let failures = applicable.iter().filter(|r| !r.holds).count();
    let worst = applicable.iter().map(|r| r.lhs - r.rhs).fold(f64::NEG_INFINITY, f64::max);
    check(
        name,
        failures == 0,
        json!({
            "instances": results.len(),
            "applicable": applicable.len(),
            "failures": failures,
            "max_lhs_minus_rhs": worst,
        }),
    )
}

fn lemmas(seed: u64) -> Result<Vec<CheckResult>, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tec1 = (0..100)
        .map(|_| check_tec1(&ProductSpace::random_admissible(2, 2, &mut rng)))
        .collect::<Result<Vec<_>, _>>()?;
    let spec = ModelSpec::fa1f(0.8)?;
    let tec2 = (0..50)
        .map(|_| {
            let f: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
            check_tec2(3, 3, &spec, &f)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let v = Volume::segment(5)?;
    let setup = TwoBlockSetup::new(v.host(), v.sites(), v.boundary()[0], 2, &spec)?;
    let two_block = (0..50)
        .map(|_| {
            let f: Vec<f64> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
            check_two_block_lemma(&setup, &spec, &f)
        })
        .collect::<Result<Vec<_>, _>>()?;
    // below the density threshold the variance lemma must refuse to judge
    let low = check_tec2(1, 1, &ModelSpec::fa1f(0.2)?, &[0.0, 1.0, -1.0, 0.5])?;
    Ok(vec![
        lemma_batch("product_variance", tec1),
        lemma_batch("conditioned_variance", tec2),
        lemma_batch("two_block", two_block),
        check("low_density_inapplicable", !low.applicable, json!({ "hypothesis_value": low.hypothesis_value })),
    ])
}

pub const PATH_QS: [f64; 2] = [0.5, 0.8];

fn paths() -> Result<Vec<CheckResult>, CliError> {
    let v = Arc::new(Volume::segment(6)?);
    let z = v.boundary()[0];
    let region = Region::new(Arc::clone(&v), BoundaryCondition::FilledExceptAt(z))?;
    let spec = ModelSpec::fa1f(0.5)?;
    let allowed = region_constraint(&region, &spec);
    let mut out = Vec::new();
    for i in 2..=5usize {
        // x = i with x_1 = i − 1, …, x_{i−1} = 1 filled and site 0 empty
        let mut sigma = vec![1u8; v.len()];
        sigma[0] = 0;
        let chain: Vec<usize> = (1..i).map(|k| i - k).collect();
        let path = vacancy_transport_path(&sigma, i, &chain)?;
        let length = path.len() - 1;
        let legal = path.windows(2).all(|w| {
            let diffs: Vec<usize> = (0..w[0].len()).filter(|&k| w[0][k] != w[1][k]).collect();
            diffs.len() == 1 && allowed(encode(&w[0]), diffs[0])
        });
        let max_diff = path
            .iter()
            .map(|eta| eta.iter().zip(&sigma).filter(|(a, b)| a != b).count())
            .max()
            .unwrap_or(0);
        out.push(check(
            format!("transport_path_i{i}"),
            length == 4 * i - 5 && legal && max_diff <= 3,
            json!({ "length": length, "expected": 4 * i - 5, "legal": legal, "max_difference": max_diff }),
        ));
    }
    for q in PATH_QS {
        let spec = ModelSpec::fa1f(q)?;
        let setup = TwoBlockSetup::new(v.host(), v.sites(), z, 3, &spec)?;
        let r = congestion_constant(v.host(), &setup, &spec)?;
        let sharp = r.max_ratio <= r.ratio_sharp_bound * (1.0 + 1e-12);
        out.push(check(
            format!("congestion_q{q}"),
            r.k_holds && sharp && r.max_difference <= 3,
            serde_json::to_value(&r).expect("report serializes"),
        ));
    }
    Ok(out)
}

pub const SIMPATICA_TIMES: [f64; 5] = [0.5, 1.0, 2.0, 4.0, 8.0];

fn simpatica() -> Result<Vec<CheckResult>, CliError> {
    let n = 3;
    let q = 0.8;
    let v = Arc::new(Volume::segment(n)?);
    let region = Region::new(Arc::clone(&v), BoundaryCondition::Filled)?;
    let spec = ModelSpec::fa1f(q)?;
    let full = build_generator(&region, &spec)?;
    let hat = build_hat_chain(&v, &spec, &vec![0; n], 1)?;
    let taboo = build_taboo_chain(&region, &spec, &vec![0; n], 1)?;
    let f = full.tabulate(|o| f64::from(1 - o[n / 2]) - q);
    let starts: Vec<(String, Vec<f64>)> = vec![
        ("bernoulli_fill_0.8".into(), bernoulli(&full, 0.8)),
        ("bernoulli_fill_0.5".into(), bernoulli(&full, 0.5)),
        ("dirac_010".into(), dirac(&full, &[0, 1, 0])?),
        ("dirac_001".into(), dirac(&full, &[0, 0, 1])?),
    ];
    let mut out = Vec::new();
    for (name, nu) in starts {
        let r = check_simpatica(&full, &hat, &taboo, &nu, &f, &SIMPATICA_TIMES)?;
        out.push(check(
            format!("finite_volume_relaxation_{name}"),
            r.holds(),
            serde_json::to_value(&r).expect("report serializes"),
        ));
    }
    Ok(out)
}

pub const XI_PAIRS: [(f64, f64); 5] = [(0.8, 2.0), (0.75, 1.5), (0.9, 2.5), (0.6, 1.1), (0.95, 4.0)];

fn xi() -> Result<Vec<CheckResult>, CliError> {
    let n = 7;
    let region = Arc::new(Region::new(Arc::new(Volume::segment(n)?), BoundaryCondition::Empty)?);
    let times = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0];
    let starts: [(&str, Vec<u8>); 3] = [
        ("filled", vec![1; n]),
        ("one_vacancy", vec![1, 1, 1, 1, 1, 1, 0]),
        ("alternating", (0..n).map(|i| (i % 2) as u8).collect()),
    ];
    let mut out = Vec::new();
    for (q, theta) in XI_PAIRS {
        let spec = ModelSpec::fa1f(q)?;
        for (name, eta) in &starts {
            let r = check_xi_drift(&region, &spec, eta, n / 2, theta, &times)?;
            out.push(check(
                format!("xi_drift_q{q}_theta{theta}_{name}"),
                r.applicable && r.holds(),
                serde_json::to_value(&r).expect("report serializes"),
            ));
        }
    }
    let r = check_xi_drift(&region, &ModelSpec::fa1f(0.5)?, &vec![1; n], n / 2, 2.0, &times)?;
    out.push(check("xi_drift_inapplicable", !r.applicable && r.rows.is_empty(), json!({ "lambda": r.lambda })));
    Ok(out)
}

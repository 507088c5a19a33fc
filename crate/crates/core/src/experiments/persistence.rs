use std::sync::Arc;

use serde::Serialize;

use super::fit::NOISE_FLOOR;
use super::ExperimentError;
use crate::exact::{xi_asymptote, xi_drift_rate};
use crate::kmc::{estimate_xi_moment, SeriesEstimate, SimParams};
use crate::model::{kappa_bound, Configuration, InitialLaw, ModelSpec, Region};

#[derive(Debug, Clone, Serialize)]
pub struct PersistenceRow {
    pub t: f64,
    pub mean: f64,
    pub stderr: f64,
    pub bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct PersistenceReport {
    pub q: f64,
    pub theta: f64,
    pub x: usize,
    /// `θ > 1` and `q > θ/(θ+1)`.
    pub applicable: bool,
    pub lambda: f64,
    pub asymptote: f64,
    /// `θ^{ξ^x(η)}` for a fixed start, otherwise an upper bound on `E_ν θ^{ξ^x}`.
    pub start_moment: f64,
    pub series: Option<SeriesEstimate>,
    pub rows: Vec<PersistenceRow>,
    /// Mean within bound plus noise allowance at every time; `None` when inapplicable.
    pub passed: Option<bool>,
}

/// Simulated `E_ν θ^{ξ^x_t}` against `θ^{ξ^x(η)} e^{−λt} + q/(q(θ+1)−θ)`.
pub fn run_persistence(
    region: &Arc<Region>,
    spec: &ModelSpec,
    theta: f64,
    law: &InitialLaw,
    x: usize,
    params: &SimParams,
) -> Result<PersistenceReport, ExperimentError> {
    let q = spec.q();
    let applicable = theta > 1.0 && q > theta / (theta + 1.0);
    let lambda = xi_drift_rate(q, theta);
    let asymptote = xi_asymptote(q, theta);
    let start_moment = match law.fixed_configuration(region.len()) {
        Some(occ) => Configuration::new(Arc::clone(region), occ)?.xi(x).theta_pow(theta),
        None => kappa_bound(law, theta, region),
    };
    let mut report = PersistenceReport {
        q,
        theta,
        x,
        applicable,
        lambda,
        asymptote,
        start_moment,
        series: None,
        rows: Vec::new(),
        passed: None,
    };
    if !applicable {
        return Ok(report);
    }
    let series = estimate_xi_moment(theta, x, law, region, spec, params)?;
    report.rows = series
        .times
        .iter()
        .zip(series.means.iter().zip(&series.stderrs))
        .map(|(&t, (&mean, &stderr))| {
            let bound = start_moment * (-lambda * t).exp() + asymptote;
            PersistenceRow {
                t,
                mean,
                stderr,
                bound,
                holds: mean <= bound + NOISE_FLOOR * stderr,
            }
        })
        .collect();
    report.passed = Some(report.rows.iter().all(|r| r.holds));
    report.series = Some(series);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BoundaryCondition, Volume};

    fn region(n: usize) -> Arc<Region> {
        Arc::new(Region::new(Arc::new(Volume::segment(n).unwrap()), BoundaryCondition::Empty).unwrap())
    }

    #[test]
    fn inapplicable_below_threshold() {
        let r = region(10);
        let spec = ModelSpec::fa1f(0.5).unwrap();
        let params = SimParams::new(vec![1.0], 0, 10).unwrap();
        let rep = run_persistence(&r, &spec, 2.0, &InitialLaw::Dirac(vec![1; 10]), 5, &params).unwrap();
        assert!(!rep.applicable && rep.passed.is_none() && rep.rows.is_empty());
    }

    #[test]
    fn filled_segment_start_moment() {
        // ξ at the centre of a filled segment of 30 is 15 (distance to the exterior)
        let r = region(30);
        let spec = ModelSpec::fa1f(0.8).unwrap();
        let params = SimParams::new(vec![0.5, 2.0, 8.0], 11, 400).unwrap();
        let rep = run_persistence(&r, &spec, 2.0, &InitialLaw::Dirac(vec![1; 30]), 15, &params).unwrap();
        assert_eq!(rep.start_moment, 2f64.powi(15));
        assert!((rep.lambda - 0.2).abs() < 1e-12 && (rep.asymptote - 2.0).abs() < 1e-12);
        assert_eq!(rep.passed, Some(true), "{:?}", rep.rows);
    }

    #[test]
    fn bernoulli_start_uses_kappa() {
        let r = region(20);
        let spec = ModelSpec::fa1f(0.6).unwrap();
        let law = InitialLaw::Bernoulli { fill: 0.5 };
        let params = SimParams::new(vec![0.5, 1.0, 4.0], 2, 1000).unwrap();
        let rep = run_persistence(&r, &spec, 1.1, &law, 10, &params).unwrap();
        assert!((rep.start_moment - 1.0 / (1.0 - 0.55)).abs() < 1e-12);
        assert_eq!(rep.passed, Some(true), "{:?}", rep.rows);
    }
}

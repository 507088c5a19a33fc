use std::sync::Arc;

use serde::Serialize;

use super::fit::{fit_decay, DecayFits, NOISE_FLOOR};
use super::ExperimentError;
use crate::kmc::{estimate_expectation, SeriesEstimate, SimParams};
use crate::model::{InitialLaw, ModelSpec, Observable, Region};

/// R² the primary fit must reach for the decay shape to count as matched.
pub const SHAPE_R2: f64 = 0.9;

#[derive(Debug, Clone, Serialize)]
pub struct MonotoneCheck {
    /// `|m_{k+1}| ≤ |m_k| + 4·√(s_k² + s_{k+1}²)` for every `k`.
    pub monotone: bool,
    /// `|m_last| ≤ 4·s_last`.
    pub settles: bool,
    /// Largest excess of `|m_{k+1}| − |m_k|` over its noise allowance.
    pub worst_excess: f64,
}

impl MonotoneCheck {
    pub fn of(series: &SeriesEstimate) -> Self {
        let (m, s) = (&series.means, &series.stderrs);
        let mut worst_excess = f64::NEG_INFINITY;
        for k in 1..m.len() {
            let allowance = NOISE_FLOOR * s[k - 1].hypot(s[k]);
            worst_excess = worst_excess.max(m[k].abs() - m[k - 1].abs() - allowance);
        }
        let last = m.len() - 1;
        Self {
            monotone: worst_excess <= 0.0,
            settles: m[last].abs() <= NOISE_FLOOR * s[last],
            worst_excess,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RelaxationReport {
    pub q: f64,
    pub dim: f64,
    /// `q ≤ 1/2`: outside the regime where the decay law is proved.
    pub exploratory: bool,
    /// The initial law is `μ`, so the series is zero in expectation.
    pub stationary: bool,
    pub series: SeriesEstimate,
    pub fits: Option<DecayFits>,
    /// The fit for `dim` reaches [`SHAPE_R2`].
    pub shape_matched: Option<bool>,
    pub monotone: MonotoneCheck,
}

/// `E_ν f(σ_t)` on `region` with decay fits against the law for dimension `dim`.
pub fn run_relaxation(
    region: &Arc<Region>,
    spec: &ModelSpec,
    law: &InitialLaw,
    f: &Observable,
    params: &SimParams,
    dim: f64,
) -> Result<RelaxationReport, ExperimentError> {
    let series = estimate_expectation(std::slice::from_ref(f), law, region, spec, params)?.remove(0);
    let stationary = matches!(law, InitialLaw::Bernoulli { fill } if (fill - spec.p()).abs() < 1e-15);
    let fits = (!stationary).then(|| fit_decay(&series, dim));
    let shape_matched = fits
        .as_ref()
        .map(|f| f.primary(dim).is_some_and(|fit| fit.r_squared >= SHAPE_R2));
    Ok(RelaxationReport {
        q: spec.q(),
        dim,
        exploratory: spec.q() <= 0.5,
        stationary,
        monotone: MonotoneCheck::of(&series),
        series,
        fits,
        shape_matched,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BoundaryCondition, Volume};

    fn region(n: usize) -> Arc<Region> {
        Arc::new(Region::new(Arc::new(Volume::segment(n).unwrap()), BoundaryCondition::Empty).unwrap())
    }

    #[test]
    fn stationary_start_skips_fit() {
        let r = region(12);
        let spec = ModelSpec::fa1f(0.8).unwrap();
        let f = Observable::vacancy_at(6, 0.8, 12).unwrap();
        let params = SimParams::new(vec![0.5, 1.0, 2.0], 3, 4000).unwrap();
        let rep = run_relaxation(&r, &spec, &InitialLaw::Bernoulli { fill: 0.2 }, &f, &params, 1.0).unwrap();
        assert!(rep.stationary && rep.fits.is_none() && rep.shape_matched.is_none());
        for (m, s) in rep.series.means.iter().zip(&rep.series.stderrs) {
            assert!(m.abs() <= 4.0 * s, "{m} {s}");
        }
    }

    #[test]
    fn flags_exploratory_regime() {
        let r = region(10);
        let spec = ModelSpec::fa1f(0.4).unwrap();
        let f = Observable::vacancy_at(5, 0.4, 10).unwrap();
        let params = SimParams::new(vec![0.5, 1.0], 1, 200).unwrap();
        let rep = run_relaxation(&r, &spec, &InitialLaw::Bernoulli { fill: 0.9 }, &f, &params, 1.0).unwrap();
        assert!(rep.exploratory && !rep.stationary);
    }

    #[test]
    fn monotone_check_on_synthetic_series() {
        let s = SeriesEstimate {
            times: vec![0.0, 1.0, 2.0, 3.0],
            means: vec![-0.5, -0.3, 0.1, 0.001],
            stderrs: vec![0.001; 4],
            replicas: 1,
        };
        let m = MonotoneCheck::of(&s);
        assert!(m.monotone && m.settles);
        let s = SeriesEstimate {
            means: vec![-0.5, -0.3, 0.4, 0.001],
            ..s
        };
        assert!(!MonotoneCheck::of(&s).monotone);
    }
}

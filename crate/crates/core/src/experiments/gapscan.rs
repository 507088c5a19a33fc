use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use super::ExperimentError;
use crate::exact::{build_hat_chain, envelope_shape, hat_gap_pipeline, spectral_gap, PipelineReport};
use crate::model::{ModelSpec, Volume};

/// Largest volume for which the comparison with minimal-boundary gaps runs.
pub const COMPARISON_SITES: usize = 10;

#[derive(Debug, Clone, Serialize)]
pub struct GapPoint {
    pub sites: usize,
    pub q: f64,
    pub gap: f64,
    /// `q^{D+4}/log(2/q)^{D+1}`.
    pub shape: f64,
}

/// Envelope `C·shape(q)` with `C` taken as the smallest `gap/shape` over the
/// upper half of the `q` grid, then checked on the held-out lower half.
#[derive(Debug, Clone, Serialize)]
pub struct EnvelopeFit {
    pub sites: usize,
    pub c: f64,
    pub fit_qs: Vec<f64>,
    pub holdout_qs: Vec<f64>,
    pub holds_on_holdout: bool,
    /// Smallest `gap/(C·shape)` over the grid.
    pub worst_margin: f64,
    /// Gap nondecreasing along the sorted grid (reported, not required).
    pub monotone_in_q: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityRow {
    pub q: f64,
    pub min: f64,
    pub max: f64,
    pub ratio: f64,
    /// `max/min < 2`.
    pub stable: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GapScanReport {
    pub dim: u32,
    pub points: Vec<GapPoint>,
    pub envelopes: Vec<EnvelopeFit>,
    pub stability: Vec<StabilityRow>,
    /// At `q = 1` every gap lies in `[1/2, 2]`; `None` without such points.
    pub q_one_sane: Option<bool>,
    /// `ĝap ≥ min gap(L_A^z)/48` on small volumes where the hypothesis holds.
    pub comparisons: Vec<PipelineReport>,
    pub all_positive: bool,
}

fn fit_envelope(points: &[&GapPoint]) -> EnvelopeFit {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.q.total_cmp(&b.q));
    let half = pts.len() / 2;
    let (hold, fit) = pts.split_at(half);
    let c = fit.iter().map(|p| p.gap / p.shape).fold(f64::INFINITY, f64::min);
    let margin = |p: &&GapPoint| p.gap / (c * p.shape);
    EnvelopeFit {
        sites: pts[0].sites,
        c,
        fit_qs: fit.iter().map(|p| p.q).collect(),
        holdout_qs: hold.iter().map(|p| p.q).collect(),
        holds_on_holdout: hold.iter().all(|p| margin(p) >= 1.0 - 1e-12),
        worst_margin: pts.iter().map(margin).fold(f64::INFINITY, f64::min),
        monotone_in_q: pts.windows(2).all(|w| w[1].gap >= w[0].gap - 1e-10),
    }
}

/// Exact single-block `ĝap` for every volume and `q`.
pub fn run_gap_scan(volumes: &[Arc<Volume>], qs: &[f64], dim: u32) -> Result<GapScanReport, ExperimentError> {
    if volumes.is_empty() || qs.is_empty() {
        return Err(ExperimentError::BadParams("empty volume family or q grid".into()));
    }
    let cases: Vec<(usize, f64)> = (0..volumes.len()).flat_map(|v| qs.iter().map(move |&q| (v, q))).collect();
    let points: Vec<GapPoint> = cases
        .par_iter()
        .map(|&(v, q)| -> Result<GapPoint, ExperimentError> {
            let vol = &volumes[v];
            let spec = ModelSpec::fa1f(q)?;
            let chain = build_hat_chain(vol, &spec, &vec![0; vol.len()], 1)?;
            Ok(GapPoint {
                sites: vol.len(),
                q,
                gap: spectral_gap(&chain)?.gap,
                shape: envelope_shape(q, dim),
            })
        })
        .collect::<Result<_, _>>()?;

    let per_volume = |v: usize| -> Vec<&GapPoint> { points[v * qs.len()..(v + 1) * qs.len()].iter().collect() };
    let envelopes = if qs.len() >= 2 {
        (0..volumes.len())
            .map(|v| {
                let pts: Vec<&GapPoint> = per_volume(v).into_iter().filter(|p| p.shape > 0.0).collect();
                fit_envelope(&pts)
            })
            .collect()
    } else {
        Vec::new()
    };
    let stability = if volumes.len() >= 2 {
        qs.iter()
            .enumerate()
            .map(|(k, &q)| {
                let gaps = (0..volumes.len()).map(|v| points[v * qs.len() + k].gap);
                let (min, max) = gaps.fold((f64::INFINITY, 0.0f64), |(a, b), g| (a.min(g), b.max(g)));
                StabilityRow {
                    q,
                    min,
                    max,
                    ratio: max / min,
                    stable: max / min < 2.0,
                }
            })
            .collect()
    } else {
        Vec::new()
    };
    let ones: Vec<f64> = points.iter().filter(|p| p.q == 1.0).map(|p| p.gap).collect();
    let q_one_sane = (!ones.is_empty()).then(|| ones.iter().all(|g| (0.5..=2.0).contains(g)));

    let mut comparisons = Vec::new();
    for vol in volumes.iter().filter(|v| v.len() <= COMPARISON_SITES) {
        for &q in qs.iter().filter(|&&q| q > 0.0 && q < 1.0) {
            let diameter = vol.host().diameter_of(vol.sites());
            if 8.0 * (1.0 - q).powf(f64::from(diameter) / 3.0) < 0.5 {
                comparisons.push(hat_gap_pipeline(vol, &ModelSpec::fa1f(q)?, dim, usize::MAX)?);
            }
        }
    }
    Ok(GapScanReport {
        dim,
        all_positive: points.iter().all(|p| p.gap > 0.0),
        points,
        envelopes,
        stability,
        q_one_sane,
        comparisons,
    })
}

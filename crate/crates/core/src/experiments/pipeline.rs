use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::fit::NOISE_FLOOR;
use super::ExperimentError;
use crate::exact::{evaluate_inizio_bound, xi_asymptote, InizioBound};
use crate::graph::partition_cover;
use crate::kmc::{estimate_exit_a, estimate_expectation, SimParams};
use crate::model::{block_labels, kappa_bound, BoundaryCondition, InitialLaw, ModelSpec, Observable, Region, Volume};

/// Largest volume simulated; above it only the bound is assembled.
pub const MC_SITES: usize = 100_000;

/// Local function for the pipeline, placed at the centre of the volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineObservable {
    /// `1 − σ(o) − q`.
    CenteredVacancy,
    /// Truth table over sites at the given lattice offsets from the centre.
    Table { offsets: Vec<Vec<i64>>, table: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineParams {
    pub t: f64,
    pub q: f64,
    pub dim: usize,
    pub epsilon: f64,
    /// `Λ = B(o, r + speed·t)`.
    pub speed: f64,
    pub law: InitialLaw,
    pub observable: PipelineObservable,
    /// Stands in for the non-explicit constant of the bound.
    pub c: f64,
    /// Base of the `ξ` moment in the union bound on the exit probability.
    pub theta: f64,
    pub replicas: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PipelineDemoReport {
    pub t: f64,
    pub q: f64,
    pub ell: u32,
    pub radius: usize,
    pub volume: usize,
    pub blocks: usize,
    pub min_block: usize,
    pub max_block: usize,
    /// Smallest certified radius of a ball around a half-block centre.
    pub min_half_radius: u32,
    /// Block properties the partition failed to meet; empty when it is valid.
    pub partition_violations: Vec<String>,
    pub bound_only: bool,
    /// `P(σ leaves A by time t)`, which dominates `sup_{s≤t} P(σ_s ∉ A)`.
    pub exit_estimate: Option<f64>,
    pub exit_stderr: Option<f64>,
    /// `2n θ^{−ℓ/4} sup_s E θ^ξ` with the moment bounded by drift; `None` when `q ≤ θ/(θ+1)`.
    pub exit_union_bound: Option<f64>,
    pub bound: InizioBound,
    pub measured: Option<f64>,
    pub measured_stderr: Option<f64>,
    /// `|E f| + 4·stderr ≤ bound`; `None` when inapplicable or not simulated.
    pub passed: Option<bool>,
}

/// `ℓ(t)`: `εt` in one dimension, `ε (t/log t)^{1/D}` above.
pub fn block_scale(t: f64, epsilon: f64, dim: usize) -> u32 {
    let raw = if dim <= 1 {
        epsilon * t
    } else if t > std::f64::consts::E {
        epsilon * (t / t.ln()).powf(1.0 / dim as f64)
    } else {
        0.0
    };
    raw.floor().max(1.0) as u32
}

/// Builds `Λ`, partitions it at scale `ℓ(t)`, halves the blocks, estimates
/// the exit probability from `A`, assembles the finite-volume relaxation
/// bound and compares it with the measured `|E_ν f(σ_t^Λ)|`.
pub fn run_pipeline_demo(params: &PipelineParams) -> Result<PipelineDemoReport, ExperimentError> {
    let PipelineParams { t, q, dim, .. } = *params;
    if !(t > 0.0 && t.is_finite()) || dim == 0 || params.epsilon <= 0.0 || params.speed < 0.0 || params.c <= 0.0 {
        return Err(ExperimentError::BadParams("t, ε and c must be positive, dim at least 1".into()));
    }
    let spec = ModelSpec::fa1f(q)?;
    let offsets = match &params.observable {
        PipelineObservable::CenteredVacancy => vec![vec![0; dim]],
        PipelineObservable::Table { offsets, .. } => offsets.clone(),
    };
    if offsets.iter().any(|o| o.len() != dim) {
        return Err(ExperimentError::BadParams("offset dimension does not match".into()));
    }
    let r = offsets
        .iter()
        .map(|o| o.iter().map(|c| c.unsigned_abs() as usize).sum::<usize>())
        .max()
        .unwrap_or(0);
    let radius = r + (params.speed * t).ceil() as usize;
    let host_sites = (2 * radius + 5)
        .checked_pow(dim as u32)
        .ok_or_else(|| ExperimentError::BadParams("volume overflows".into()))?;
    if host_sites > 50_000_000 {
        return Err(ExperimentError::BadParams(format!("volume of {host_sites} sites cannot be built")));
    }
    let (volume, centre) = Volume::lattice_ball(dim, radius)?;
    let volume = Arc::new(volume);
    let sites = volume.len();
    let region = Arc::new(Region::new(Arc::clone(&volume), BoundaryCondition::Empty)?);
    let centre_coords = volume.host().coords_of(centre);
    let local = |o: &[i64]| -> usize {
        let c: Vec<usize> = centre_coords.iter().zip(o).map(|(&x, &d)| (x as i64 + d) as usize).collect();
        volume.local_of(volume.host().vertex_at(&c)).expect("offset lies inside the ball")
    };
    let support: Vec<usize> = offsets.iter().map(|o| local(o)).collect();
    let f = match &params.observable {
        PipelineObservable::CenteredVacancy => Observable::vacancy_at(support[0], q, sites)?,
        PipelineObservable::Table { table, .. } => Observable::new(support, table.clone(), sites)?,
    };
    let mean = f.mu_mean(&spec);
    if mean.abs() > 1e-12 {
        return Err(ExperimentError::NotCentered(mean));
    }
    params.law.validate(sites)?;

    let ell = block_scale(t, params.epsilon, dim);
    let g = volume.host();
    let partition = partition_cover(g, volume.sites(), ell)?.halve_blocks(g)?;
    let labels = block_labels(&volume, &partition)?;
    let n = partition.len();
    let (m, big_m) = (partition.min_block_size(), partition.max_block_size());
    let min_half_radius = partition
        .halves
        .as_ref()
        .map(|h| h.iter().map(|b| b.radius_plus.min(b.radius_minus)).min().unwrap_or(0))
        .unwrap_or(0);

    let theta = params.theta;
    let exit_union_bound = (theta > 1.0 && q > theta / (theta + 1.0)).then(|| {
        let kappa = kappa_bound(&params.law, theta, &region) + xi_asymptote(q, theta);
        (2.0 * n as f64 * theta.powf(-f64::from(ell / 4)) * kappa).min(1.0)
    });

    let bound_only = sites > MC_SITES;
    let (exit_estimate, exit_stderr, measured, measured_stderr) = if bound_only {
        (None, None, None, None)
    } else {
        let sim = SimParams::new(vec![t], params.seed, params.replicas)?;
        let (exited, _) = estimate_exit_a(&labels, n, &params.law, &region, &spec, &sim)?;
        let sim_f = SimParams::new(vec![t], params.seed ^ 0x9e37_79b9_7f4a_7c15, params.replicas)?;
        let series = estimate_expectation(std::slice::from_ref(&f), &params.law, &region, &spec, &sim_f)?.remove(0);
        (
            Some(exited.means[0]),
            Some(exited.stderrs[0]),
            Some(series.means[0].abs()),
            Some(series.stderrs[0]),
        )
    };
    // an MC zero is replaced by its noise allowance so the exit term is never understated
    let sup_exit = match (exit_estimate, exit_stderr) {
        (Some(p), Some(s)) => (p + NOISE_FLOOR * s).max(1.0 / params.replicas as f64).min(1.0),
        _ => exit_union_bound.unwrap_or(1.0),
    };
    let bound = evaluate_inizio_bound(n as f64, m as f64, big_m as f64, sites, t, q, sup_exit, params.c, f.sup_norm());
    let passed = match (bound.applicable, measured, measured_stderr) {
        (true, Some(v), Some(s)) => Some(v + NOISE_FLOOR * s <= bound.rhs),
        _ => None,
    };
    Ok(PipelineDemoReport {
        t,
        q,
        ell,
        radius,
        volume: sites,
        blocks: n,
        min_block: m,
        max_block: big_m,
        min_half_radius,
        partition_violations: partition.violations(g),
        bound_only,
        exit_estimate,
        exit_stderr,
        exit_union_bound,
        bound,
        measured,
        measured_stderr,
        passed,
    })
}

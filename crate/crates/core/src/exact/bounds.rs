use std::collections::BTreeSet;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use super::{
    build_hat_chain, build_minimal_boundary_chain, log_sobolev_safe_upper, spectral_gap, transient_expectation,
    ExactError, RateMatrix,
};
use crate::model::{BoundaryCondition, Configuration, ModelSpec, Region, Volume};

#[derive(Debug, Clone, Serialize)]
pub struct SimpaticaRow {
    pub t: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub p_exit: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimpaticaReport {
    /// Whether `q̂(x,y) = q(x,y)` for all `x ∈ A`, `y ∈ Â`.
    pub rates_agree: bool,
    pub hat_gap: f64,
    pub hat_pi_min: f64,
    pub alpha_hat: f64,
    pub hat_mean: f64,
    pub sup_norm: f64,
    pub rows: Vec<SimpaticaRow>,
}

impl SimpaticaReport {
    pub fn holds(&self) -> bool {
        self.rates_agree && self.rows.iter().all(|r| r.holds)
    }
}

/// Compares `|E_ν f(X_t)|` with
/// `|π̂(f)| + ‖f‖∞ (4 P_ν(A_t^c) + exp{−γ̂t/2 + e^{−2t/α̂} log(1/π̂_*)})`.
///
/// `full` is the dynamics on `Λ`, `hat` the restricted chain on `Â` and
/// `taboo` the dynamics on `A` killed on exit; all three share the site
/// order. `ν` and `f` live on the states of `full`; `π(f)` must vanish.
/// `α̂` is replaced by [`log_sobolev_safe_upper`].
pub fn check_simpatica(
    full: &RateMatrix,
    hat: &RateMatrix,
    taboo: &RateMatrix,
    nu: &[f64],
    f: &[f64],
    times: &[f64],
) -> Result<SimpaticaReport, ExactError> {
    let centre = full.expectation(f);
    if centre.abs() > 1e-12 {
        return Err(ExactError::NotCentered(centre));
    }
    let mut rates_agree = true;
    for &s in taboo.states() {
        let (i, h) = match (full.index_of(s), hat.index_of(s)) {
            (Some(i), Some(h)) => (i, h),
            _ => {
                rates_agree = false;
                continue;
            }
        };
        for x in 0..full.sites() {
            let t = s ^ (1 << x);
            if let Some(ht) = hat.index_of(t) {
                let a = hat.rate(h, ht);
                let b = full.index_of(t).map_or(0.0, |j| full.rate(i, j));
                if (a - b).abs() > 1e-15 {
                    rates_agree = false;
                }
            }
        }
    }

    let spectral = spectral_gap(hat)?;
    let hat_gap = spectral.gap;
    let hat_pi_min = spectral.pi_min;
    let alpha_hat = log_sobolev_safe_upper(hat_gap, hat_pi_min);
    let f_hat: Vec<f64> = hat
        .states()
        .iter()
        .map(|&s| full.index_of(s).map_or(0.0, |i| f[i]))
        .collect();
    let hat_mean = hat.expectation(&f_hat);
    let sup_norm = f.iter().fold(0.0, |m: f64, v| m.max(v.abs()));

    let lhs = transient_expectation(full, nu, f, times)?;
    let nu_a: Vec<f64> = taboo
        .states()
        .iter()
        .map(|&s| full.index_of(s).map_or(0.0, |i| nu[i]))
        .collect();
    let survive = transient_expectation(taboo, &nu_a, &vec![1.0; taboo.dim()], times)?;
    let total: f64 = nu.iter().sum();

    let rows = times
        .iter()
        .zip(lhs.iter().zip(&survive))
        .map(|(&t, (&l, &s))| {
            let p_exit = (total - s).clamp(0.0, 1.0);
            let mixing = (-hat_gap * t / 2.0 + (-2.0 * t / alpha_hat).exp() * (1.0 / hat_pi_min).ln()).exp();
            let rhs = hat_mean.abs() + sup_norm * (4.0 * p_exit + mixing);
            SimpaticaRow {
                t,
                lhs: l.abs(),
                rhs,
                p_exit,
                holds: l.abs() <= rhs + 1e-12,
            }
        })
        .collect();
    Ok(SimpaticaReport {
        rates_agree,
        hat_gap,
        hat_pi_min,
        alpha_hat,
        hat_mean,
        sup_norm,
        rows,
    })
}

/// Terms of the finite-speed relaxation bound
/// `c‖f‖∞ (n e^{−qm} + t sup P(σ_s ∉ A) + |Λ| e^{−t/3} + exp{−t/c + c|Λ| e^{−t/(cM)}})`.
#[derive(Debug, Clone, Serialize)]
pub struct InizioBound {
    pub applicable: bool,
    pub geometric: f64,
    pub exit: f64,
    pub speed: f64,
    pub mixing: f64,
    pub rhs: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn evaluate_inizio_bound(
    n: f64,
    m: f64,
    big_m: f64,
    volume: usize,
    t: f64,
    q: f64,
    sup_exit: f64,
    c: f64,
    sup_norm: f64,
) -> InizioBound {
    let geometric = n * (-q * m).exp();
    let exit = t * sup_exit;
    let speed = volume as f64 * (-t / 3.0).exp();
    let mixing = (-t / c + c * volume as f64 * (-t / (c * big_m)).exp()).exp();
    InizioBound {
        applicable: geometric < 0.5,
        geometric,
        exit,
        speed,
        mixing,
        rhs: c * sup_norm * (geometric + exit + speed + mixing),
    }
}

/// `λ = (θ² − 1)/θ · (q − θ/(θ+1))`.
pub fn xi_drift_rate(q: f64, theta: f64) -> f64 {
    (theta * theta - 1.0) / theta * (q - theta / (theta + 1.0))
}

/// `q / (q(θ+1) − θ)`.
pub fn xi_asymptote(q: f64, theta: f64) -> f64 {
    q / (q * (theta + 1.0) - theta)
}

#[derive(Debug, Clone, Serialize)]
pub struct XiDriftRow {
    pub t: f64,
    pub u: f64,
    pub bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct XiDriftReport {
    pub applicable: bool,
    pub lambda: f64,
    pub asymptote: f64,
    pub xi0: u32,
    pub rows: Vec<XiDriftRow>,
}

impl XiDriftReport {
    pub fn holds(&self) -> bool {
        !self.applicable || self.rows.iter().all(|r| r.holds)
    }
}

/// Exact `u(t) = E_η θ^{ξ^x_t}` against `θ^{ξ^x(η)} e^{−λt} + q/(q(θ+1)−θ)`.
/// Needs an empty exterior, `θ > 1` and `q > θ/(θ+1)`; otherwise the report
/// is marked inapplicable and carries no rows.
pub fn check_xi_drift(
    region: &Arc<Region>,
    spec: &ModelSpec,
    eta: &[u8],
    x: usize,
    theta: f64,
    times: &[f64],
) -> Result<XiDriftReport, ExactError> {
    let q = spec.q();
    let applicable = theta > 1.0
        && q > theta / (theta + 1.0)
        && *region.boundary_condition() == BoundaryCondition::Empty
        && !region.volume().boundary().is_empty();
    let start = Configuration::new(Arc::clone(region), eta.to_vec())?;
    let xi0 = start.xi(x).finite().unwrap_or(u32::MAX);
    let lambda = xi_drift_rate(q, theta);
    let asymptote = xi_asymptote(q, theta);
    if !applicable {
        return Ok(XiDriftReport {
            applicable,
            lambda,
            asymptote,
            xi0,
            rows: Vec::new(),
        });
    }
    let chain = super::build_generator(region, spec)?;
    let f = chain.tabulate(|occ| {
        Configuration::new(Arc::clone(region), occ.to_vec())
            .expect("state of the chain")
            .xi(x)
            .theta_pow(theta)
    });
    let nu = super::dirac(&chain, eta)?;
    let u = transient_expectation(&chain, &nu, &f, times)?;
    let start_term = theta.powi(xi0 as i32);
    let rows = times
        .iter()
        .zip(u)
        .map(|(&t, u)| {
            let bound = start_term * (-lambda * t).exp() + asymptote;
            XiDriftRow {
                t,
                u,
                bound,
                holds: u <= bound * (1.0 + 1e-12),
            }
        })
        .collect();
    Ok(XiDriftReport {
        applicable,
        lambda,
        asymptote,
        xi0,
        rows,
    })
}

/// Connected subsets of `sites` (host ids) with at most `max_size`
/// elements, each listed once, sorted. Stops after `limit` sets.
pub fn connected_subsets(volume: &Volume, max_size: usize, limit: usize) -> Vec<Vec<usize>> {
    let host = volume.host();
    let inside: BTreeSet<usize> = volume.sites().iter().copied().collect();
    let mut out = Vec::new();

    #[allow(clippy::too_many_arguments)]
    fn grow(
        root: usize,
        current: &mut Vec<usize>,
        candidates: Vec<usize>,
        banned: &mut BTreeSet<usize>,
        inside: &BTreeSet<usize>,
        host: &crate::graph::Graph,
        max_size: usize,
        limit: usize,
        out: &mut Vec<Vec<usize>>,
    ) {
        if out.len() >= limit {
            return;
        }
        let mut set = current.clone();
        set.sort_unstable();
        out.push(set);
        if current.len() == max_size {
            return;
        }
        let mut skipped = Vec::new();
        for (i, &w) in candidates.iter().enumerate() {
            current.push(w);
            let mut next: Vec<usize> = candidates[i + 1..].to_vec();
            for &u in host.neighbors(w) {
                if u > root
                    && inside.contains(&u)
                    && !current.contains(&u)
                    && !candidates.contains(&u)
                    && !banned.contains(&u)
                    && !next.contains(&u)
                {
                    next.push(u);
                }
            }
            grow(root, current, next, banned, inside, host, max_size, limit, out);
            current.pop();
            banned.insert(w);
            skipped.push(w);
            if out.len() >= limit {
                break;
            }
        }
        for w in skipped {
            banned.remove(&w);
        }
    }

    for &root in volume.sites() {
        let candidates: Vec<usize> = host
            .neighbors(root)
            .iter()
            .copied()
            .filter(|&u| u > root && inside.contains(&u))
            .collect();
        let mut current = vec![root];
        let mut banned = BTreeSet::new();
        grow(root, &mut current, candidates, &mut banned, &inside, host, max_size, limit, &mut out);
        if out.len() >= limit {
            break;
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct PipelineReport {
    pub q: f64,
    pub sites: usize,
    pub diameter: u32,
    /// `8 p^{diam/3}`; the comparison needs it below 1/2.
    pub hypothesis_value: f64,
    pub hypothesis_holds: bool,
    pub hat_gap: f64,
    pub min_local_gap: f64,
    pub argmin_set: Vec<usize>,
    pub argmin_z: usize,
    pub tested: usize,
    /// `ĝap ≥ min/48`, only decided when the hypothesis holds.
    pub comparison_holds: Option<bool>,
    /// `q^{D+4} / log(2/q)^{D+1}`.
    pub envelope_shape: f64,
}

/// `q^{D+4} / log(2/q)^{D+1}`.
pub fn envelope_shape(q: f64, dim: u32) -> f64 {
    q.powi(dim as i32 + 4) / (2.0 / q).ln().powi(dim as i32 + 1)
}

/// Exact `ĝap(Λ)` for the single-block restricted chain, compared with
/// `1/48` of the smallest `gap(L_A^z)` over connected `A ⊆ Λ` and `z ∈ ∂A`.
pub fn hat_gap_pipeline(
    volume: &Arc<Volume>,
    spec: &ModelSpec,
    dim: u32,
    max_subsets: usize,
) -> Result<PipelineReport, ExactError> {
    let q = spec.q();
    let n = volume.len();
    let hat = build_hat_chain(volume, spec, &vec![0; n], 1)?;
    let hat_gap = spectral_gap(&hat)?.gap;
    let diameter = volume.host().diameter_of(volume.sites());
    let hypothesis_value = 8.0 * spec.p().powf(f64::from(diameter) / 3.0);
    let hypothesis_holds = hypothesis_value < 0.5;

    let mut cases = Vec::new();
    for set in connected_subsets(volume, n, max_subsets) {
        for z in volume.host().outer_boundary(&set) {
            cases.push((set.clone(), z));
        }
    }
    let gaps: Vec<f64> = cases
        .par_iter()
        .map(|(set, z)| -> Result<f64, ExactError> {
            let sub = Arc::new(Volume::new(Arc::clone(volume.host()), set)?);
            let chain = build_minimal_boundary_chain(&sub, *z, spec)?;
            Ok(spectral_gap(&chain)?.gap)
        })
        .collect::<Result<_, _>>()?;
    let (k, &min_local_gap) = gaps
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .ok_or(ExactError::EmptyStateSpace)?;
    let comparison_holds = hypothesis_holds.then(|| hat_gap >= min_local_gap / 48.0 - 1e-12);
    Ok(PipelineReport {
        q,
        sites: n,
        diameter,
        hypothesis_value,
        hypothesis_holds,
        hat_gap,
        min_local_gap,
        argmin_set: cases[k].0.clone(),
        argmin_z: cases[k].1,
        tested: cases.len(),
        comparison_holds,
        envelope_shape: envelope_shape(q, dim),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{bernoulli, build_generator, build_taboo_chain};
    use crate::graph::Graph;

    #[test]
    fn drift_closed_forms() {
        assert!((xi_drift_rate(0.8, 2.0) - 0.2).abs() < 1e-15);
        assert!((xi_asymptote(0.8, 2.0) - 2.0).abs() < 1e-12);
        assert!((xi_drift_rate(0.75, 1.5) - 0.125).abs() < 1e-15);
        assert!((xi_asymptote(0.75, 1.5) - 2.0).abs() < 1e-12);
        assert!((xi_drift_rate(0.9, 2.5) - 0.39).abs() < 1e-12);
        assert!((xi_asymptote(0.9, 2.5) - 0.9 / 0.65).abs() < 1e-12);
    }

    #[test]
    fn xi_drift_holds_and_flags() {
        let v = Arc::new(Volume::segment(7).unwrap());
        let region = Arc::new(Region::new(v, BoundaryCondition::Empty).unwrap());
        let spec = ModelSpec::fa1f(0.8).unwrap();
        let r = check_xi_drift(&region, &spec, &[1; 7], 3, 2.0, &[0.0, 1.0, 4.0, 16.0]).unwrap();
        assert!(r.applicable && r.holds());
        assert_eq!(r.xi0, 4);
        assert!((r.rows[0].u - 16.0).abs() < 1e-12);
        let empty = check_xi_drift(&region, &spec, &[0; 7], 3, 2.0, &[0.0, 2.0]).unwrap();
        assert!(empty.rows.iter().all(|row| row.u >= 1.0 - 1e-12 && row.bound >= 1.0));
        let low = ModelSpec::fa1f(0.6).unwrap();
        assert!(!check_xi_drift(&region, &low, &[1; 7], 3, 2.0, &[1.0]).unwrap().applicable);
    }

    #[test]
    fn inizio_terms() {
        let b = evaluate_inizio_bound(10.0, 1.0, 5.0, 20, 4.0, 0.5, 0.01, 1.0, 1.0);
        assert!(!b.applicable);
        let b = evaluate_inizio_bound(2.0, 10.0, 5.0, 20, 1e4, 0.5, 0.0, 1.0, 1.0);
        assert!(b.applicable);
        assert!((b.rhs - b.geometric).abs() < 1e-12);
    }

    fn simpatica_setup(n: usize, q: f64) -> (RateMatrix, RateMatrix, RateMatrix, Vec<f64>) {
        let v = Arc::new(Volume::segment(n).unwrap());
        let region = Region::new(Arc::clone(&v), BoundaryCondition::Filled).unwrap();
        let spec = ModelSpec::fa1f(q).unwrap();
        let labels = vec![0; n];
        let full = build_generator(&region, &spec).unwrap();
        let hat = build_hat_chain(&v, &spec, &labels, 1).unwrap();
        let taboo = build_taboo_chain(&region, &spec, &labels, 1).unwrap();
        let f = full.tabulate(|o| f64::from(1 - o[n / 2]) - q);
        (full, hat, taboo, f)
    }

    #[test]
    fn simpatica_on_three_sites() {
        let (full, hat, taboo, f) = simpatica_setup(3, 0.8);
        let times = [0.5, 1.0, 2.0, 4.0, 8.0];
        let nu = bernoulli(&full, 0.2);
        let r = check_simpatica(&full, &hat, &taboo, &nu, &f, &times).unwrap();
        assert!(r.rates_agree);
        assert!(r.holds(), "{r:?}");
        let zero = vec![0.0; full.dim()];
        let r0 = check_simpatica(&full, &hat, &taboo, &nu, &zero, &times).unwrap();
        assert!(r0.rows.iter().all(|row| row.lhs == 0.0 && row.holds));
    }

    #[test]
    fn simpatica_outside_a() {
        let (full, hat, taboo, f) = simpatica_setup(3, 0.8);
        let nu = crate::exact::dirac(&full, &[1, 1, 1]).unwrap();
        let r = check_simpatica(&full, &hat, &taboo, &nu, &f, &[0.5, 2.0]).unwrap();
        assert!(r.rows.iter().all(|row| (row.p_exit - 1.0).abs() < 1e-15 && row.holds));
    }

    #[test]
    fn subsets_counted_once() {
        let v = Volume::segment(6).unwrap();
        assert_eq!(connected_subsets(&v, 6, usize::MAX).len(), 21);
        let sq = Volume::whole(Arc::new(Graph::lattice(&[2, 2], false).unwrap()));
        let sets = connected_subsets(&sq, 4, usize::MAX);
        assert_eq!(sets.len(), 13);
        let unique: BTreeSet<_> = sets.iter().cloned().collect();
        assert_eq!(unique.len(), 13);
        let sq3 = Volume::whole(Arc::new(Graph::lattice(&[3, 3], false).unwrap()));
        let all = connected_subsets(&sq3, 9, usize::MAX);
        let unique: BTreeSet<_> = all.iter().cloned().collect();
        assert_eq!(unique.len(), all.len());
        // brute force count
        let g = sq3.host();
        let brute = (1u32..512)
            .filter(|m| {
                let set: Vec<usize> = (0..9).filter(|i| m >> i & 1 == 1).collect();
                g.is_connected_subset(&set)
            })
            .count();
        assert_eq!(all.len(), brute);
    }

    #[test]
    fn pipeline_segment_of_eight() {
        let v = Arc::new(Volume::segment(8).unwrap());
        let spec = ModelSpec::fa1f(0.9).unwrap();
        let r = hat_gap_pipeline(&v, &spec, 1, 10_000).unwrap();
        assert!(r.hypothesis_holds);
        assert_eq!(r.comparison_holds, Some(true));
        assert!(r.hat_gap > 0.0 && r.min_local_gap > 0.0);
        let low = ModelSpec::fa1f(0.3).unwrap();
        let small = Arc::new(Volume::segment(4).unwrap());
        let r = hat_gap_pipeline(&small, &low, 1, 10_000).unwrap();
        assert!(!r.hypothesis_holds && r.comparison_holds.is_none());
    }

    #[test]
    fn near_unconstrained_gap() {
        // corrections are of order √p, so the approach to 1 is slow
        let v = Arc::new(Volume::segment(6).unwrap());
        let gaps: Vec<f64> = [0.99, 0.9999, 0.999_999]
            .iter()
            .map(|&q| {
                let spec = ModelSpec::fa1f(q).unwrap();
                let hat = build_hat_chain(&v, &spec, &[0; 6], 1).unwrap();
                spectral_gap(&hat).unwrap().gap
            })
            .collect();
        assert!(gaps.windows(2).all(|w| w[0] < w[1]), "{gaps:?}");
        assert!((gaps[2] - 1.0).abs() < 0.01, "{gaps:?}");
    }
}

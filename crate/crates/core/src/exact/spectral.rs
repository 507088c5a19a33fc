use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use super::{ExactError, RateMatrix};

/// Dimension up to which the full spectrum is computed densely.
pub const DENSE_LIMIT: usize = 1024;

/// Relative tolerance of the iterative solver.
pub const LANCZOS_TOL: f64 = 1e-8;

const REVERSIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectralMethod {
    Dense,
    Lanczos,
    /// Chain whose stationary law vanishes somewhere (`q ∈ {0, 1}`); the
    /// generator is triangular and the gap is the smallest nonzero exit rate.
    NonSymmetric,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectralReport {
    pub gap: f64,
    /// Full spectrum of `−Q`, ascending; dense mode only.
    pub eigenvalues: Option<Vec<f64>>,
    pub pi_min: f64,
    /// `gap⁻¹ log(1/π_min)`.
    pub log_sobolev_upper: f64,
    pub method: SpectralMethod,
    pub dim: usize,
    pub detailed_balance_residual: f64,
}

/// `γ⁻¹ log(1/π_*)`.
pub fn log_sobolev_upper(gap: f64, pi_min: f64) -> f64 {
    (1.0 / pi_min).ln() / gap
}

/// Upper bound on the log-Sobolev constant that also holds when the bound
/// above does not: the larger of it and `log(1/π_* − 1)/((1 − 2π_*)γ)`
/// (read as `2/γ` at `π_* = 1/2`).
pub fn log_sobolev_safe_upper(gap: f64, pi_min: f64) -> f64 {
    let other = if (pi_min - 0.5).abs() < 1e-12 {
        2.0 / gap
    } else {
        (1.0 / pi_min - 1.0).ln() / ((1.0 - 2.0 * pi_min) * gap)
    };
    log_sobolev_upper(gap, pi_min).max(other)
}

/// Relaxation gap of `Q`.
///
/// For conservative chains this is the smallest nonzero eigenvalue of `−Q`;
/// a second zero eigenvalue means the chain is reducible. For killed chains
/// it is the bottom of the spectrum. Reversible chains are symmetrised with
/// `√π`; above [`DENSE_LIMIT`] states a restarted Lanczos iteration with full
/// reorthogonalisation finds the extremal eigenvalue.
pub fn spectral_gap(chain: &RateMatrix) -> Result<SpectralReport, ExactError> {
    let dim = chain.dim();
    if dim < 2 {
        return Err(ExactError::TrivialChain);
    }
    let residual = chain.detailed_balance_residual();
    let conservative = chain.is_conservative();
    let pi_min = chain.min_pi();

    if pi_min <= 0.0 {
        if dim > DENSE_LIMIT {
            return Err(ExactError::TooLargeForDense(dim));
        }
        let gap = nonsymmetric_gap(chain, conservative)?;
        return Ok(SpectralReport {
            gap,
            eigenvalues: None,
            pi_min,
            log_sobolev_upper: f64::INFINITY,
            method: SpectralMethod::NonSymmetric,
            dim,
            detailed_balance_residual: residual,
        });
    }
    if residual > REVERSIBILITY_TOL {
        return Err(ExactError::NonReversible(residual));
    }

    let scale = chain.max_exit_rate().max(1e-300);
    let zero_tol = 1e-9 * scale;
    let sqrt_pi: Vec<f64> = chain.pi().iter().map(|w| w.sqrt()).collect();
    let (gap, eigenvalues, method) = if dim <= DENSE_LIMIT {
        let s = symmetrized(chain, &sqrt_pi);
        let mut ev: Vec<f64> = s.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        let gap = if conservative {
            if ev[1] < zero_tol {
                return Err(ExactError::Reducible);
            }
            ev[1]
        } else {
            ev[0]
        };
        (gap, Some(ev), SpectralMethod::Dense)
    } else {
        let deflate = conservative.then(|| normalized(&sqrt_pi));
        let kill: Vec<f64> = (0..dim).map(|i| chain.kill_rate(i)).collect();
        let apply = |x: &[f64], y: &mut [f64]| sym_apply(chain, &sqrt_pi, &kill, x, y);
        let gap = lanczos_smallest(apply, dim, deflate.as_deref(), LANCZOS_TOL);
        if conservative && gap < zero_tol {
            return Err(ExactError::Reducible);
        }
        (gap, None, SpectralMethod::Lanczos)
    };
    Ok(SpectralReport {
        gap,
        eigenvalues,
        pi_min,
        log_sobolev_upper: log_sobolev_upper(gap, pi_min),
        method,
        dim,
        detailed_balance_residual: residual,
    })
}

/// `S = D^{1/2} (−Q) D^{−1/2}` with `D = diag(π)`.
fn symmetrized(chain: &RateMatrix, sqrt_pi: &[f64]) -> DMatrix<f64> {
    let dim = chain.dim();
    let mut s = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        s[(i, i)] = chain.exit_rate(i);
        for (j, w) in chain.row(i) {
            s[(i, j)] -= w * sqrt_pi[i] / sqrt_pi[j];
        }
    }
    // remove rounding asymmetry
    let t = s.transpose();
    (s + t) * 0.5
}

fn sym_apply(chain: &RateMatrix, sqrt_pi: &[f64], kill: &[f64], x: &[f64], y: &mut [f64]) {
    for i in 0..chain.dim() {
        let mut acc = 0.0;
        let mut out = kill[i];
        for (j, w) in chain.row(i) {
            out += w;
            // S_ij = −√(π_i π_j) q(i,j) / π_j, symmetric by reversibility
            acc -= w * sqrt_pi[i] / sqrt_pi[j] * x[j];
        }
        y[i] = acc + out * x[i];
    }
}

/// At `q ∈ {0, 1}` every move changes the particle number in the same
/// direction, so ordering states by particle number makes `−Q` triangular
/// and its eigenvalues are the exit rates.
fn nonsymmetric_gap(chain: &RateMatrix, conservative: bool) -> Result<f64, ExactError> {
    let mut direction = 0i32;
    for i in 0..chain.dim() {
        let from = chain.state(i).count_ones() as i32;
        for (j, _) in chain.row(i) {
            let step = chain.state(j).count_ones() as i32 - from;
            if direction != 0 && step != direction {
                return Err(ExactError::NonReversible(f64::NAN));
            }
            direction = step;
        }
    }
    let scale = chain.max_exit_rate().max(1e-300);
    let mut rates: Vec<f64> = (0..chain.dim()).map(|i| chain.exit_rate(i)).collect();
    rates.sort_by(f64::total_cmp);
    if !conservative {
        return Ok(rates[0]);
    }
    if rates.iter().filter(|r| r.abs() < 1e-9 * scale).count() > 1 {
        return Err(ExactError::Reducible);
    }
    rates
        .into_iter()
        .find(|r| r.abs() >= 1e-9 * scale)
        .ok_or(ExactError::Reducible)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let n = dot(v, v).sqrt();
    v.iter().map(|x| x / n).collect()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += a * xi);
}

/// Smallest eigenvalue of a symmetric operator on the complement of
/// `deflate`, by explicitly restarted Lanczos.
///
/// Each cycle builds a Krylov basis of size `m` with full (twice repeated)
/// Gram-Schmidt, solves the tridiagonal problem, and restarts from the best
/// Ritz vector. Stops when the residual `β_m |y_m|` falls below
/// `tol · max(|θ|, 1)`.
pub fn lanczos_smallest(
    apply: impl Fn(&[f64], &mut [f64]),
    dim: usize,
    deflate: Option<&[f64]>,
    tol: f64,
) -> f64 {
    let budget = (1usize << 25) / dim.max(1);
    let m = budget.clamp(30, 150).min(dim);
    let project = |v: &mut Vec<f64>| {
        if let Some(d) = deflate {
            let c = dot(v, d);
            axpy(v, -c, d);
        }
    };
    let mut start: Vec<f64> = (0..dim).map(|i| 1.0 + ((i as f64) * 0.618_033_988_75).fract()).collect();
    project(&mut start);
    let mut v0 = normalized(&start);
    let mut best = f64::INFINITY;
    for _restart in 0..200 {
        let mut basis: Vec<Vec<f64>> = vec![v0.clone()];
        let mut alpha = Vec::with_capacity(m);
        let mut beta: Vec<f64> = Vec::with_capacity(m);
        let mut w = vec![0.0; dim];
        let mut last_beta = 0.0;
        for j in 0..m {
            apply(&basis[j], &mut w);
            let a = dot(&basis[j], &w);
            alpha.push(a);
            for _ in 0..2 {
                for b in &basis {
                    let c = dot(&w, b);
                    axpy(&mut w, -c, b);
                }
                project(&mut w);
            }
            let bnorm = dot(&w, &w).sqrt();
            last_beta = bnorm;
            if j + 1 == m || bnorm < 1e-12 {
                break;
            }
            beta.push(bnorm);
            basis.push(w.iter().map(|x| x / bnorm).collect());
        }
        let k = alpha.len();
        let mut t = DMatrix::zeros(k, k);
        for i in 0..k {
            t[(i, i)] = alpha[i];
            if i + 1 < k {
                t[(i, i + 1)] = beta[i];
                t[(i + 1, i)] = beta[i];
            }
        }
        let eig = SymmetricEigen::new(t);
        let (idx, theta) = eig
            .eigenvalues
            .iter()
            .copied()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("nonempty tridiagonal");
        let y = eig.eigenvectors.column(idx);
        let resid = last_beta * y[k - 1].abs();
        best = theta;
        if resid <= tol * theta.abs().max(1.0) || last_beta < 1e-12 {
            break;
        }
        let mut ritz = vec![0.0; dim];
        for (i, b) in basis.iter().enumerate() {
            axpy(&mut ritz, y[i], b);
        }
        project(&mut ritz);
        v0 = normalized(&ritz);
    }
    best
}

use super::{ExactError, RateMatrix};

/// Poisson tail mass left out of every uniformized series.
pub const TAIL_MASS: f64 = 1e-14;

/// Largest dimension for transient computations.
pub const TRANSIENT_LIMIT: usize = 1 << 16;

/// Distributions `ν e^{tQ}` at each of `times`, by uniformization.
///
/// With `Λ = max exit rate` and `P = I + Q/Λ` (substochastic when the chain
/// is killed), `ν e^{tQ} = Σ_k Pois(Λt; k) ν P^k`. The sum for each time stops
/// at the first `k > Λt` where the geometric bound on the remaining Poisson
/// mass, `w_{k+1} / (1 − Λt/(k+2))`, drops below [`TAIL_MASS`].
pub fn propagate(chain: &RateMatrix, nu: &[f64], times: &[f64]) -> Result<Vec<Vec<f64>>, ExactError> {
    let dim = chain.dim();
    if dim > TRANSIENT_LIMIT {
        return Err(ExactError::TooLargeForDense(dim));
    }
    if nu.len() != dim {
        return Err(ExactError::LengthMismatch { got: nu.len(), want: dim });
    }
    if let Some(&t) = times.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
        return Err(ExactError::BadTime(t));
    }
    let rate = chain.max_exit_rate();
    let mut out = vec![vec![0.0; dim]; times.len()];
    if rate == 0.0 {
        out.iter_mut().for_each(|o| o.copy_from_slice(nu));
        return Ok(out);
    }

    // per-time log Poisson weight and truncation index
    let lam: Vec<f64> = times.iter().map(|t| rate * t).collect();
    let cutoff: Vec<usize> = lam.iter().map(|&l| truncation_index(l)).collect();
    let kmax = cutoff.iter().copied().max().unwrap_or(0);

    let stay: Vec<f64> = (0..dim).map(|i| 1.0 - chain.exit_rate(i) / rate).collect();
    let mut v = nu.to_vec();
    let mut next = vec![0.0; dim];
    let mut log_fact = 0.0;
    for k in 0..=kmax {
        if k > 0 {
            log_fact += (k as f64).ln();
        }
        for (ti, &l) in lam.iter().enumerate() {
            if k > cutoff[ti] {
                continue;
            }
            let w = if l == 0.0 {
                if k == 0 { 1.0 } else { 0.0 }
            } else {
                (-l + k as f64 * l.ln() - log_fact).exp()
            };
            if w > 0.0 {
                axpy(&mut out[ti], w, &v);
            }
        }
        if k == kmax {
            break;
        }
        // next = v P
        for (n, (vi, s)) in next.iter_mut().zip(v.iter().zip(&stay)) {
            *n = vi * s;
        }
        for i in 0..dim {
            if v[i] == 0.0 {
                continue;
            }
            let a = v[i] / rate;
            for (j, w) in chain.row(i) {
                next[j] += a * w;
            }
        }
        std::mem::swap(&mut v, &mut next);
    }
    Ok(out)
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += a * xi);
}

/// Smallest `k` past the mode whose Poisson(`l`) tail beyond `k` is below
/// [`TAIL_MASS`].
fn truncation_index(l: f64) -> usize {
    if l == 0.0 {
        return 0;
    }
    let mut k = l.floor() as usize;
    let mut log_w = -l + k as f64 * l.ln() - ln_factorial(k);
    loop {
        // log w_{k+1}
        let next = log_w + l.ln() - ((k + 1) as f64).ln();
        let ratio = l / (k + 2) as f64;
        if ratio < 1.0 && next.exp() / (1.0 - ratio) < TAIL_MASS {
            return k;
        }
        log_w = next;
        k += 1;
    }
}

fn ln_factorial(k: usize) -> f64 {
    (1..=k).map(|i| (i as f64).ln()).sum()
}

/// `E_ν f(σ_t)` at each time. For killed chains this is the expectation on
/// survival, i.e. without renormalisation.
pub fn transient_expectation(
    chain: &RateMatrix,
    nu: &[f64],
    f: &[f64],
    times: &[f64],
) -> Result<Vec<f64>, ExactError> {
    if f.len() != chain.dim() {
        return Err(ExactError::LengthMismatch {
            got: f.len(),
            want: chain.dim(),
        });
    }
    Ok(propagate(chain, nu, times)?
        .iter()
        .map(|d| d.iter().zip(f).map(|(a, b)| a * b).sum())
        .collect())
}

/// Point mass on the state with the given occupation.
pub fn dirac(chain: &RateMatrix, occ: &[u8]) -> Result<Vec<f64>, ExactError> {
    let i = chain
        .index_of(super::encode(occ))
        .ok_or(ExactError::StateOutside)?;
    let mut nu = vec![0.0; chain.dim()];
    nu[i] = 1.0;
    Ok(nu)
}

/// Product law with `P(filled) = fill` restricted to the chain's states
/// (not renormalised).
pub fn bernoulli(chain: &RateMatrix, fill: f64) -> Vec<f64> {
    let n = chain.sites() as i32;
    chain
        .states()
        .iter()
        .map(|s| {
            let ones = s.count_ones() as i32;
            fill.powi(ones) * (1.0 - fill).powi(n - ones)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::exact::build_generator;
    use crate::model::{BoundaryCondition, ModelSpec, Region, Volume};

    fn chain(n: usize, q: f64) -> RateMatrix {
        let region = Region::new(Arc::new(Volume::segment(n).unwrap()), BoundaryCondition::Empty).unwrap();
        build_generator(&region, &ModelSpec::fa1f(q).unwrap()).unwrap()
    }

    #[test]
    fn single_spin_closed_form() {
        let q = 0.7;
        let c = chain(1, q);
        let nu = dirac(&c, &[1]).unwrap();
        let f = c.tabulate(|o| f64::from(1 - o[0]));
        let times = [0.0, 0.3, 1.0, 2.5, 10.0];
        let u = transient_expectation(&c, &nu, &f, &times).unwrap();
        for (t, v) in times.iter().zip(&u) {
            let exact = q * (1.0 - (-t).exp());
            assert!((v - exact).abs() < 1e-13, "t={t}: {v} vs {exact}");
        }
    }

    #[test]
    fn start_and_limit() {
        let c = chain(6, 0.5);
        let occ = [1, 0, 1, 1, 0, 1];
        let nu = dirac(&c, &occ).unwrap();
        let f = c.tabulate(|o| o.iter().map(|&v| f64::from(v)).product::<f64>() + f64::from(o[2]));
        let i = c.index_of(crate::exact::encode(&occ)).unwrap();
        let u = transient_expectation(&c, &nu, &f, &[0.0, 200.0]).unwrap();
        assert_eq!(u[0], f[i]);
        assert!((u[1] - c.expectation(&f)).abs() < 1e-8);
    }

    #[test]
    fn mass_is_conserved() {
        let c = chain(5, 0.3);
        let nu = bernoulli(&c, 0.5);
        for d in propagate(&c, &nu, &[0.5, 4.0, 30.0]).unwrap() {
            assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn truncation_tail_is_small() {
        for l in [0.5, 3.0, 40.0, 300.0] {
            let k = truncation_index(l);
            let tail: f64 = (k + 1..k + 2000)
                .map(|j| (-l + j as f64 * f64::ln(l) - ln_factorial(j)).exp())
                .sum();
            assert!(tail < TAIL_MASS, "l={l} k={k} tail={tail}");
            assert!(k as f64 >= l);
        }
    }

    #[test]
    fn rejects_bad_input() {
        let c = chain(2, 0.5);
        assert!(propagate(&c, &[1.0], &[1.0]).is_err());
        assert!(propagate(&c, &[1.0, 0.0, 0.0, 0.0], &[-1.0]).is_err());
    }
}

use std::collections::{BTreeSet, HashMap};

use serde::Serialize;

use super::{ExactError, TwoBlockSetup};
use crate::graph::Graph;
use crate::model::ModelSpec;

/// Path from `σ` to `σ^x` that carries a vacancy from the end of a chain of
/// filled sites to `x` and back.
///
/// `filled` lists `x_1, …, x_{i−1}` (local indices, all filled in `σ`, each
/// adjacent to the previous one and `x_1` adjacent to `x`); the caller
/// guarantees an empty `x_i` next to `x_{i−1}`, which is never flipped.
/// Writing `T_k` for the flip at `x_k`, the path has length `4i − 5`:
///
/// | step            | configuration                 |
/// |-----------------|-------------------------------|
/// | `2k+1, k ≤ i−2` | `T_{i−k−1} σ`                 |
/// | `2k, 1 ≤ k ≤ i−2` | `T_{i−k} T_{i−k−1} σ`       |
/// | `2i−2`          | `T_1 σ^x`                     |
/// | `2k+1, i−1 ≤ k ≤ 2i−4` | `T_{k−i+2} T_{k−i+3} σ^x` |
/// | `2k, i ≤ k ≤ 2i−3` | `T_{k−i+2} σ^x`            |
/// | `4i−5`          | `σ^x`                          |
///
/// With an empty chain (`i = 1`) the path is the single flip at `x`.
pub fn vacancy_transport_path(sigma: &[u8], x: usize, filled: &[usize]) -> Result<Vec<Vec<u8>>, ExactError> {
    if let Some(&v) = filled.iter().find(|&&v| sigma[v] != 1) {
        return Err(ExactError::BadChain(format!("chain site {v} is not filled")));
    }
    if filled.contains(&x) {
        return Err(ExactError::BadChain("chain passes through x".into()));
    }
    let mut sigma_x = sigma.to_vec();
    sigma_x[x] ^= 1;
    let i = filled.len() + 1;
    if i == 1 {
        return Ok(vec![sigma.to_vec(), sigma_x]);
    }
    // T_k with 1-based k
    let t = |base: &[u8], ks: &[usize]| {
        let mut c = base.to_vec();
        for &k in ks {
            c[filled[k - 1]] ^= 1;
        }
        c
    };
    let len = 4 * i - 5;
    let mut path = Vec::with_capacity(len + 1);
    path.push(sigma.to_vec());
    for j in 1..len {
        let k = j / 2;
        let next = if j % 2 == 1 {
            if k < i - 1 {
                t(sigma, &[i - k - 1])
            } else {
                t(&sigma_x, &[k + 2 - i, k + 3 - i])
            }
        } else if k < i - 1 {
            t(sigma, &[i - k, i - k - 1])
        } else if k == i - 1 {
            t(&sigma_x, &[1])
        } else {
            t(&sigma_x, &[k + 2 - i])
        };
        path.push(next);
    }
    path.push(sigma_x);
    Ok(path)
}

#[derive(Debug, Clone, Serialize)]
pub struct CongestionReport {
    pub q: f64,
    pub ell: u32,
    /// `sup_{η,x} Σ_σ μ(σ)/μ(η) 1{η ∈ Γ_x(σ)}`.
    pub k: f64,
    pub k_bound: f64,
    pub k_holds: bool,
    /// Largest `μ(σ)/μ(η)` over `η ≠ σ` on a path.
    pub max_ratio: f64,
    /// `(p/q)² max(p/q, q/p)`.
    pub ratio_bound: f64,
    pub ratio_holds: bool,
    /// `max(1, (p/q)³)`: a one-for-one swap already gives ratio 1, so this
    /// is the bound that holds for every `q`.
    pub ratio_sharp_bound: f64,
    /// Most sites where a path configuration differs from its start.
    pub max_difference: usize,
    /// `sup_{η,u}` number of `x` whose paths leave `η` by a flip at `u`.
    pub k_prime: usize,
    pub ball_bound: usize,
    pub paths: usize,
}

/// Exact congestion of the vacancy-transport paths on `Ω_A` with `z` empty.
///
/// For each `x ∈ A` and each `σ` with a vacancy among `Δ_x ∪ {z}` within
/// `ℓ` steps, `ξ(σ)` is the position of the first one and `Γ_x(σ)` is the
/// path above without its endpoint `σ^x`.
pub fn congestion_constant(g: &Graph, setup: &TwoBlockSetup, spec: &ModelSpec) -> Result<CongestionReport, ExactError> {
    let q = spec.q();
    let p = spec.p();
    if q <= 0.0 {
        return Err(ExactError::BadChain("q must be positive".into()));
    }
    let n = setup.sites.len();
    if n > 16 {
        return Err(ExactError::TooLarge { sites: n, max: 16 });
    }
    let local = |v: usize| setup.sites.binary_search(&v).ok();
    let weight = |occ: &[u8]| -> f64 { occ.iter().map(|&v| if v == 1 { p } else { q }).product() };

    let mut load: HashMap<(usize, u32), f64> = HashMap::new();
    let mut exits: HashMap<(u32, usize), BTreeSet<usize>> = HashMap::new();
    let mut max_ratio: f64 = 0.0;
    let mut max_difference = 0;
    let mut paths = 0;
    let mut occ = vec![0u8; n];
    for s in 0..1u32 << n {
        for (i, v) in occ.iter_mut().enumerate() {
            *v = ((s >> i) & 1) as u8;
        }
        let mu_s = weight(&occ);
        if mu_s == 0.0 {
            continue;
        }
        for x in 0..n {
            // first vacancy along Δ_x; z and anything past A count as empty
            let chain = &setup.chains[x];
            let Some(first) = chain.iter().position(|&v| local(v).is_none_or(|i| occ[i] == 0)) else {
                continue;
            };
            let filled: Vec<usize> = chain[..first].iter().map(|&v| local(v).expect("inside A")).collect();
            let path = vacancy_transport_path(&occ, x, &filled)?;
            paths += 1;
            let mut seen = BTreeSet::new();
            for (step, eta) in path[..path.len() - 1].iter().enumerate() {
                let code = super::encode(eta);
                let diff = eta.iter().zip(&occ).filter(|(a, b)| a != b).count();
                max_difference = max_difference.max(diff);
                let flip = path[step + 1]
                    .iter()
                    .zip(eta)
                    .position(|(a, b)| a != b)
                    .expect("consecutive configurations differ");
                exits.entry((code, flip)).or_default().insert(x);
                if !seen.insert(code) {
                    continue;
                }
                let ratio = mu_s / weight(eta);
                if code != s {
                    max_ratio = max_ratio.max(ratio);
                }
                *load.entry((x, code)).or_insert(0.0) += ratio;
            }
        }
    }
    let k = load.values().copied().fold(0.0, f64::max);
    let k_bound = 8.0 / q.powi(3);
    let ratio_bound = if p == 0.0 {
        0.0
    } else {
        (p / q).powi(2) * (p / q).max(q / p)
    };
    let k_prime = exits.values().map(BTreeSet::len).max().unwrap_or(0);
    let ball_bound = setup
        .sites
        .iter()
        .map(|&u| g.ball(u, setup.ell).len())
        .max()
        .unwrap_or(0);
    Ok(CongestionReport {
        q,
        ell: setup.ell,
        k,
        k_bound,
        k_holds: k <= k_bound,
        max_ratio,
        ratio_bound,
        ratio_holds: max_ratio <= ratio_bound * (1.0 + 1e-12),
        ratio_sharp_bound: (p / q).powi(3).max(1.0),
        max_difference,
        k_prime,
        ball_bound,
        paths,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::exact::region_constraint;
    use crate::model::{BoundaryCondition, Region, Volume};

    /// Segment `0..n` framed with `z` empty just left of site 0.
    fn region(n: usize) -> (Arc<Volume>, Region) {
        let v = Arc::new(Volume::segment(n).unwrap());
        let z = v.boundary()[0];
        let r = Region::new(Arc::clone(&v), BoundaryCondition::FilledExceptAt(z)).unwrap();
        (v, r)
    }

    fn replay_is_legal(r: &Region, path: &[Vec<u8>]) -> bool {
        let spec = ModelSpec::fa1f(0.5).unwrap();
        let c = region_constraint(r, &spec);
        path.windows(2).all(|w| {
            let diffs: Vec<usize> = (0..w[0].len()).filter(|&k| w[0][k] != w[1][k]).collect();
            diffs.len() == 1 && c(super::super::encode(&w[0]), diffs[0])
        })
    }

    #[test]
    fn lengths_and_legality() {
        // x = site i, chain i-1, …, 1 filled, site 0 empty
        for i in 2..=5usize {
            let (v, r) = region(6);
            let x = i;
            let mut sigma = vec![1u8; v.len()];
            let chain: Vec<usize> = (1..i).map(|k| x - k).collect();
            sigma[0] = 0;
            let path = vacancy_transport_path(&sigma, x, &chain).unwrap();
            assert_eq!(path.len() - 1, 4 * i - 5, "i={i}");
            assert_eq!(path[0], sigma);
            let mut end = sigma.clone();
            end[x] ^= 1;
            assert_eq!(*path.last().unwrap(), end);
            assert!(replay_is_legal(&r, &path), "i={i}");
            for eta in &path {
                assert!(eta.iter().zip(&sigma).filter(|(a, b)| a != b).count() <= 3);
            }
        }
    }

    #[test]
    fn i_two_by_hand() {
        // x = 2, x_1 = 1 filled, x_2 = 0 empty
        let sigma = vec![0, 1, 1, 1];
        let path = vacancy_transport_path(&sigma, 2, &[1]).unwrap();
        assert_eq!(path, vec![vec![0, 1, 1, 1], vec![0, 0, 1, 1], vec![0, 0, 0, 1], vec![0, 1, 0, 1]]);
    }

    #[test]
    fn single_flip_when_neighbour_empty() {
        let path = vacancy_transport_path(&[0, 1, 1], 1, &[]).unwrap();
        assert_eq!(path, vec![vec![0, 1, 1], vec![0, 0, 1]]);
        assert!(vacancy_transport_path(&[0, 0, 1], 2, &[1]).is_err());
    }

    fn congestion(n: usize, ell: u32, q: f64) -> CongestionReport {
        let v = Volume::segment(n).unwrap();
        let spec = ModelSpec::fa1f(q).unwrap();
        let z = v.boundary()[0];
        let setup = TwoBlockSetup::new(v.host(), v.sites(), z, ell, &spec).unwrap();
        congestion_constant(v.host(), &setup, &spec).unwrap()
    }

    #[test]
    fn congestion_bounds() {
        for q in [0.3, 0.5, 0.8] {
            let r = congestion(6, 3, q);
            assert!(r.k_holds, "{r:?}");
            assert!(r.max_ratio <= r.ratio_sharp_bound * (1.0 + 1e-12), "{r:?}");
            // the (p/q)² max(p/q, q/p) form misses one-for-one swaps when q > p
            assert_eq!(r.ratio_holds, q <= 0.5, "{r:?}");
            assert!(r.max_difference <= 3);
            assert!(r.k_prime <= r.ball_bound);
        }
        let one = congestion(6, 3, 1.0);
        assert!(one.k <= 8.0 && one.max_ratio <= 1.0);
    }
}

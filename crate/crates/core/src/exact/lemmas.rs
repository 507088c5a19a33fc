use std::collections::VecDeque;

use rand::Rng;
use serde::Serialize;

use super::ExactError;
use crate::graph::{Graph, UNREACHED};
use crate::model::ModelSpec;

/// Outcome of one inequality check. `holds` is only meaningful when the
/// instance is `applicable`.
#[derive(Debug, Clone, Serialize)]
pub struct LemmaCheck {
    pub applicable: bool,
    /// The quantity the hypothesis bounds.
    pub hypothesis_value: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

impl LemmaCheck {
    fn new(applicable: bool, hypothesis_value: f64, lhs: f64, rhs: f64) -> Self {
        Self {
            applicable,
            hypothesis_value,
            lhs,
            rhs,
            holds: lhs <= rhs + 1e-12,
        }
    }

    pub fn slack(&self) -> f64 {
        self.rhs - self.lhs
    }
}

fn weighted_var(w: &[f64], f: impl Fn(usize) -> f64) -> f64 {
    let mean: f64 = w.iter().enumerate().map(|(i, p)| p * f(i)).sum();
    w.iter().enumerate().map(|(i, p)| p * (f(i) - mean).powi(2)).sum()
}

fn bernoulli_weights(sites: usize, q: f64) -> Vec<f64> {
    (0..1usize << sites)
        .map(|s| {
            let ones = s.count_ones() as i32;
            (1.0 - q).powi(ones) * q.powi(sites as i32 - ones)
        })
        .collect()
}

/// Two independent blocks of bits with arbitrary laws, the weights `c_A`,
/// `c_B` (functions of their own block) and a function `g` on the product.
/// Product states are indexed `a_state | b_state << a`.
#[derive(Debug, Clone, Serialize)]
pub struct ProductSpace {
    pub a: usize,
    pub b: usize,
    pub mu_a: Vec<f64>,
    pub mu_b: Vec<f64>,
    pub c_a: Vec<f64>,
    pub c_b: Vec<f64>,
    pub g: Vec<f64>,
}

impl ProductSpace {
    /// Random laws, random weights in `[0,1]` with some set to 1, and a
    /// random `g` zeroed wherever both weights are below 1.
    pub fn random_admissible<R: Rng + ?Sized>(a: usize, b: usize, rng: &mut R) -> Self {
        let law = |k: usize, rng: &mut R| {
            let w: Vec<f64> = (0..1usize << k).map(|_| rng.random_range(0.05..1.0)).collect();
            let z: f64 = w.iter().sum();
            w.into_iter().map(|v| v / z).collect::<Vec<f64>>()
        };
        let weight = |k: usize, rng: &mut R| {
            (0..1usize << k)
                .map(|_| if rng.random_bool(0.6) { 1.0 } else { rng.random_range(0.0..1.0) })
                .collect::<Vec<f64>>()
        };
        let mu_a = law(a, rng);
        let mu_b = law(b, rng);
        let c_a = weight(a, rng);
        let c_b = weight(b, rng);
        let g = (0..1usize << (a + b))
            .map(|s| {
                let (sa, sb) = (s & ((1 << a) - 1), s >> a);
                if c_a[sa] < 1.0 && c_b[sb] < 1.0 {
                    0.0
                } else {
                    rng.random_range(-1.0..1.0)
                }
            })
            .collect();
        Self {
            a,
            b,
            mu_a,
            mu_b,
            c_a,
            c_b,
            g,
        }
    }

    fn split(&self, s: usize) -> (usize, usize) {
        (s & ((1 << self.a) - 1), s >> self.a)
    }
}

/// `Var_μ(g) ≤ 12 μ[c_B² Var_{μ_A}(g) + c_A² Var_{μ_B}(g)]
///  + 8 max(1 − μ(c_A), 1 − μ(c_B)) Var_μ(g)`
/// for `μ = μ_A ⊗ μ_B` and `(1 − c_A)(1 − c_B) g ≡ 0`.
pub fn check_tec1(sp: &ProductSpace) -> Result<LemmaCheck, ExactError> {
    let (na, nb) = (1usize << sp.a, 1usize << sp.b);
    if sp.mu_a.len() != na || sp.c_a.len() != na || sp.mu_b.len() != nb || sp.c_b.len() != nb {
        return Err(ExactError::LengthMismatch {
            got: sp.mu_a.len(),
            want: na,
        });
    }
    if sp.g.len() != na * nb {
        return Err(ExactError::LengthMismatch {
            got: sp.g.len(),
            want: na * nb,
        });
    }
    for s in 0..na * nb {
        let (sa, sb) = sp.split(s);
        if (1.0 - sp.c_a[sa]) * (1.0 - sp.c_b[sb]) * sp.g[s] != 0.0 {
            return Err(ExactError::SupportCondition(s as u32));
        }
    }
    let g = |sa: usize, sb: usize| sp.g[sa | (sb << sp.a)];
    let mu: Vec<f64> = (0..na * nb)
        .map(|s| {
            let (sa, sb) = sp.split(s);
            sp.mu_a[sa] * sp.mu_b[sb]
        })
        .collect();
    let var = weighted_var(&mu, |s| sp.g[s]);

    let mut local = 0.0;
    for sb in 0..nb {
        let v = weighted_var(&sp.mu_a, |sa| g(sa, sb));
        let cb2 = sp.c_b[sb].powi(2);
        // c_B² Var_{μ_A}(g) does not depend on the A-coordinates
        local += sp.mu_b[sb] * cb2 * v;
    }
    for sa in 0..na {
        let v = weighted_var(&sp.mu_b, |sb| g(sa, sb));
        local += sp.mu_a[sa] * sp.c_a[sa].powi(2) * v;
    }
    let mean_ca: f64 = sp.mu_a.iter().zip(&sp.c_a).map(|(m, c)| m * c).sum();
    let mean_cb: f64 = sp.mu_b.iter().zip(&sp.c_b).map(|(m, c)| m * c).sum();
    let defect = (1.0 - mean_ca).max(1.0 - mean_cb);
    Ok(LemmaCheck::new(true, defect, var, 12.0 * local + 8.0 * defect * var))
}

/// `Var_{μ̂}(f) ≤ 24 μ̂[c_B Var_{μ_A}(f̃) + c_A Var_{μ_B}(f̃)]` on
/// `Λ = A ∪ B`, `|A| = a`, `|B| = b`, where `μ̂ = μ_Λ(· | some vacancy)`,
/// `c_A` is the indicator of a vacancy in `A`, and `f̃` extends `f` by 0 to
/// the filled state. `f` is given on all `2^{a+b}` states (index
/// `a_state | b_state << a`); its value at the filled state is ignored and
/// it is centred under `μ̂` first. Applicable when
/// `max(1 − μ(c_A), 1 − μ(c_B)) < 1/16`.
pub fn check_tec2(a: usize, b: usize, spec: &ModelSpec, f: &[f64]) -> Result<LemmaCheck, ExactError> {
    let (na, nb) = (1usize << a, 1usize << b);
    if f.len() != na * nb {
        return Err(ExactError::LengthMismatch {
            got: f.len(),
            want: na * nb,
        });
    }
    let p = spec.p();
    let hypothesis_value = p.powi(a as i32).max(p.powi(b as i32));
    let applicable = hypothesis_value < 1.0 / 16.0;

    let full_a = na - 1;
    let full_b = nb - 1;
    let filled = na * nb - 1;
    let mu_a = bernoulli_weights(a, spec.q());
    let mu_b = bernoulli_weights(b, spec.q());
    let mu: Vec<f64> = (0..na * nb).map(|s| mu_a[s & full_a] * mu_b[s >> a]).collect();
    let z: f64 = 1.0 - mu[filled];
    let hat: Vec<f64> = (0..na * nb)
        .map(|s| if s == filled { 0.0 } else { mu[s] / z })
        .collect();
    let mean: f64 = hat.iter().zip(f).map(|(w, v)| w * v).sum();
    let tilde: Vec<f64> = (0..na * nb)
        .map(|s| if s == filled { 0.0 } else { f[s] - mean })
        .collect();

    let lhs = weighted_var(&hat, |s| tilde[s]);
    let var_a: Vec<f64> = (0..nb)
        .map(|sb| weighted_var(&mu_a, |sa| tilde[sa | (sb << a)]))
        .collect();
    let var_b: Vec<f64> = (0..na)
        .map(|sa| weighted_var(&mu_b, |sb| tilde[sa | (sb << a)]))
        .collect();
    let mut rhs = 0.0;
    for s in 0..na * nb {
        let (sa, sb) = (s & full_a, s >> a);
        let c_a = f64::from(u8::from(sa != full_a));
        let c_b = f64::from(u8::from(sb != full_b));
        rhs += hat[s] * (c_b * var_a[sb] + c_a * var_b[sa]);
    }
    Ok(LemmaCheck::new(applicable, hypothesis_value, lhs, 24.0 * rhs))
}

/// Distances to `z` inside the subgraph induced by `set ∪ {z}`.
fn distances_within(g: &Graph, set: &[usize], z: usize) -> Vec<u32> {
    let mut dist = vec![UNREACHED; g.vertex_count()];
    let mut allowed = vec![false; g.vertex_count()];
    set.iter().for_each(|&v| allowed[v] = true);
    dist[z] = 0;
    let mut queue = VecDeque::from([z]);
    while let Some(u) = queue.pop_front() {
        for &w in g.neighbors(u) {
            if allowed[w] && dist[w] == UNREACHED {
                dist[w] = dist[u] + 1;
                queue.push_back(w);
            }
        }
    }
    dist
}

/// Geodesic `x_1, …, x_n` from `x` toward `z` inside `set ∪ {z}`, with
/// `n = min(len, d(x,z))`; ties go to the smallest host id.
pub fn chain_toward(g: &Graph, set: &[usize], z: usize, x: usize, len: u32) -> Result<Vec<usize>, ExactError> {
    let dist = distances_within(g, set, z);
    chain_with(g, &dist, x, len)
}

fn chain_with(g: &Graph, dist: &[u32], x: usize, len: u32) -> Result<Vec<usize>, ExactError> {
    if dist[x] == UNREACHED {
        return Err(ExactError::BadChain(format!("vertex {x} cannot reach z")));
    }
    let n = len.min(dist[x]);
    let mut out = Vec::with_capacity(n as usize);
    let mut cur = x;
    for _ in 0..n {
        cur = g
            .neighbors(cur)
            .iter()
            .copied()
            .filter(|&w| dist[w] == dist[cur] - 1)
            .min()
            .expect("a geodesic step exists");
        out.push(cur);
    }
    Ok(out)
}

/// Ordering of `A` by distance to `z` and the vacancy-chain events used by
/// the two-block variance inequality.
#[derive(Debug, Clone, Serialize)]
pub struct TwoBlockSetup {
    /// Host ids of `A`, sorted; local index = position.
    pub sites: Vec<usize>,
    pub z: usize,
    pub ell: u32,
    pub distance: Vec<u32>,
    /// `Δ_x` as host ids (may end at `z`).
    pub chains: Vec<Vec<usize>>,
    /// `c̃_x ≡ 1` because `d(x,z) ≤ ℓ`.
    pub always_on: Vec<bool>,
    /// `sup_x μ(1 − c̃_x)`.
    pub delta: f64,
    /// `sup_x |{y : x ∈ Δ_y ∪ {y}}|`.
    pub overlap: usize,
}

impl TwoBlockSetup {
    pub fn new(g: &Graph, set: &[usize], z: usize, ell: u32, spec: &ModelSpec) -> Result<Self, ExactError> {
        let mut sites = set.to_vec();
        sites.sort_unstable();
        sites.dedup();
        if sites.contains(&z) || !sites.iter().any(|&v| g.neighbors(z).contains(&v)) {
            return Err(ExactError::BadChain(format!("{z} is not on the outer boundary")));
        }
        if ell == 0 {
            return Err(ExactError::BadChain("chain length must be positive".into()));
        }
        let dist = distances_within(g, &sites, z);
        let chains: Vec<Vec<usize>> = sites
            .iter()
            .map(|&x| chain_with(g, &dist, x, ell))
            .collect::<Result<_, _>>()?;
        let distance: Vec<u32> = sites.iter().map(|&x| dist[x]).collect();
        let always_on: Vec<bool> = distance.iter().map(|&d| d <= ell).collect();
        let delta = if always_on.iter().all(|&b| b) {
            0.0
        } else {
            spec.p().powi(ell as i32)
        };
        let overlap = sites
            .iter()
            .map(|&x| {
                sites
                    .iter()
                    .zip(&chains)
                    .filter(|&(&y, c)| y == x || c.contains(&x))
                    .count()
            })
            .max()
            .unwrap_or(0);
        Ok(Self {
            sites,
            z,
            ell,
            distance,
            chains,
            always_on,
            delta,
            overlap,
        })
    }

    pub fn hypothesis_value(&self) -> f64 {
        self.delta * self.overlap as f64
    }

    /// `c̃_x(σ)` for local site `x` and a state of `A` as a bitmask.
    pub fn weight(&self, x: usize, state: u32) -> bool {
        self.always_on[x]
            || self.chains[x].iter().any(|&v| {
                let i = self.sites.binary_search(&v).expect("chain stays in A before z");
                (state >> i) & 1 == 0
            })
    }
}

/// `Var_{μ_A}(f) ≤ 4 Σ_x μ_A(c̃_x Var_x f)`, with `f` on all `2^{|A|}`
/// states; applicable when `δ · overlap < 1/4`.
pub fn check_two_block_lemma(setup: &TwoBlockSetup, spec: &ModelSpec, f: &[f64]) -> Result<LemmaCheck, ExactError> {
    let n = setup.sites.len();
    if f.len() != 1 << n {
        return Err(ExactError::LengthMismatch {
            got: f.len(),
            want: 1 << n,
        });
    }
    let mu = bernoulli_weights(n, spec.q());
    let lhs = weighted_var(&mu, |s| f[s]);
    let pq = spec.p() * spec.q();
    let mut rhs = 0.0;
    for s in 0..1usize << n {
        for x in 0..n {
            if setup.weight(x, s as u32) {
                rhs += mu[s] * pq * (f[s ^ (1 << x)] - f[s]).powi(2);
            }
        }
    }
    let h = setup.hypothesis_value();
    Ok(LemmaCheck::new(h < 0.25, h, lhs, 4.0 * rhs))
}

use std::sync::Arc;

use serde::Serialize;

use super::ExactError;
use crate::model::{in_a, in_hat_a, BoundaryCondition, ModelSpec, Region, Volume};

/// Largest volume whose full state space we enumerate.
pub const MAX_SITES: usize = 20;

const ABSENT: u32 = u32::MAX;

/// Which construction produced a [`RateMatrix`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainKind {
    Full,
    Hat,
    Tilde,
    Taboo,
    Custom,
}

/// Continuous-time chain on a subset of `{0,1}^Λ`.
///
/// A state is a bitmask whose bit `i` is the occupation of local site `i`.
/// Off-diagonal rates are stored row-wise; `exit[i]` is the total rate out
/// of state `i`, which exceeds the row sum when the chain is killed on
/// leaving its state space.
#[derive(Debug, Clone)]
pub struct RateMatrix {
    kind: ChainKind,
    sites: usize,
    states: Vec<u32>,
    index: Vec<u32>,
    offsets: Vec<usize>,
    targets: Vec<u32>,
    rates: Vec<f64>,
    exit: Vec<f64>,
    pi: Vec<f64>,
}

/// Occupation vector of a bitmask state.
pub fn decode(state: u32, sites: usize) -> Vec<u8> {
    (0..sites).map(|i| ((state >> i) & 1) as u8).collect()
}

pub fn encode(occ: &[u8]) -> u32 {
    occ.iter()
        .enumerate()
        .fold(0u32, |s, (i, &v)| s | (u32::from(v) << i))
}

impl RateMatrix {
    /// Enumerates the states accepted by `include` and links every pair
    /// `σ → σ^x` with `facilitated(σ, x)` and `allow(σ, σ^x)`. Moves to
    /// excluded states are dropped, or turned into killing when `kill` is set.
    /// `π` is `μ_Λ` conditioned on the included states.
    pub fn build(
        kind: ChainKind,
        sites: usize,
        spec: &ModelSpec,
        include: impl Fn(u32) -> bool,
        facilitated: impl Fn(u32, usize) -> bool,
        allow: impl Fn(u32, u32) -> bool,
        kill: bool,
    ) -> Result<Self, ExactError> {
        if sites > MAX_SITES {
            return Err(ExactError::TooLarge { sites, max: MAX_SITES });
        }
        let full = 1usize << sites;
        let mut index = vec![ABSENT; full];
        let mut states = Vec::new();
        for s in 0..full as u32 {
            if include(s) {
                index[s as usize] = states.len() as u32;
                states.push(s);
            }
        }
        if states.is_empty() {
            return Err(ExactError::EmptyStateSpace);
        }

        let (q, p) = (spec.q(), spec.p());
        let mut offsets = Vec::with_capacity(states.len() + 1);
        offsets.push(0);
        let mut targets = Vec::new();
        let mut rates = Vec::new();
        let mut exit = Vec::with_capacity(states.len());
        let mut pi = Vec::with_capacity(states.len());
        for &s in &states {
            let mut out = 0.0;
            for x in 0..sites {
                if !facilitated(s, x) {
                    continue;
                }
                let rate = if (s >> x) & 1 == 1 { q } else { p };
                if rate == 0.0 {
                    continue;
                }
                let t = s ^ (1 << x);
                let j = index[t as usize];
                if j != ABSENT {
                    if allow(s, t) {
                        targets.push(j);
                        rates.push(rate);
                        out += rate;
                    }
                } else if kill {
                    out += rate;
                }
            }
            offsets.push(targets.len());
            exit.push(out);
            let ones = s.count_ones() as i32;
            pi.push(p.powi(ones) * q.powi(sites as i32 - ones));
        }
        let z: f64 = pi.iter().sum();
        if z > 0.0 {
            pi.iter_mut().for_each(|w| *w /= z);
        }
        Ok(Self {
            kind,
            sites,
            states,
            index,
            offsets,
            targets,
            rates,
            exit,
            pi,
        })
    }

    pub fn kind(&self) -> ChainKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn states(&self) -> &[u32] {
        &self.states
    }

    pub fn state(&self, i: usize) -> u32 {
        self.states[i]
    }

    pub fn index_of(&self, state: u32) -> Option<usize> {
        self.index
            .get(state as usize)
            .copied()
            .filter(|&i| i != ABSENT)
            .map(|i| i as usize)
    }

    /// `(target, rate)` pairs leaving state `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[i]..self.offsets[i + 1];
        self.targets[r.clone()]
            .iter()
            .zip(&self.rates[r])
            .map(|(&j, &w)| (j as usize, w))
    }

    pub fn rate(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(k, _)| k == j).map_or(0.0, |(_, w)| w)
    }

    pub fn exit_rate(&self, i: usize) -> f64 {
        self.exit[i]
    }

    pub fn max_exit_rate(&self) -> f64 {
        self.exit.iter().fold(0.0, |m: f64, &e| m.max(e))
    }

    pub fn kill_rate(&self, i: usize) -> f64 {
        (self.exit[i] - self.row(i).map(|(_, w)| w).sum::<f64>()).max(0.0)
    }

    pub fn is_conservative(&self) -> bool {
        (0..self.dim()).all(|i| self.kill_rate(i) <= 1e-12 * self.exit[i].max(1.0))
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn transition_count(&self) -> usize {
        self.targets.len()
    }

    /// Largest `|π(x)q(x,y) − π(y)q(y,x)|` over linked pairs.
    pub fn detailed_balance_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.dim() {
            for (j, w) in self.row(i) {
                let back = self.rate(j, i);
                worst = worst.max((self.pi[i] * w - self.pi[j] * back).abs());
            }
        }
        worst
    }

    /// Largest `|Σ_j Q(i,j)|` with the diagonal `−exit` included; zero up to
    /// rounding for conservative chains, the killing rate otherwise.
    pub fn row_sum_residual(&self) -> f64 {
        (0..self.dim())
            .map(|i| (self.row(i).map(|(_, w)| w).sum::<f64>() - self.exit[i]).abs())
            .fold(0.0, f64::max)
    }

    /// `(Qf)(i) = Σ_j q(i,j)(f(j) − f(i)) − k(i) f(i)`.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        (0..self.dim())
            .map(|i| {
                let mut acc = -self.kill_rate(i) * f[i];
                for (j, w) in self.row(i) {
                    acc += w * (f[j] - f[i]);
                }
                acc
            })
            .collect()
    }

    /// Function on the state space from a function of the occupation vector.
    pub fn tabulate(&self, f: impl Fn(&[u8]) -> f64) -> Vec<f64> {
        let mut occ = vec![0u8; self.sites];
        self.states
            .iter()
            .map(|&s| {
                for (i, v) in occ.iter_mut().enumerate() {
                    *v = ((s >> i) & 1) as u8;
                }
                f(&occ)
            })
            .collect()
    }

    pub fn expectation(&self, f: &[f64]) -> f64 {
        self.pi.iter().zip(f).map(|(w, v)| w * v).sum()
    }

    pub fn min_pi(&self) -> f64 {
        self.pi.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Evaluates `c_x` on bitmask states of `region`.
pub fn region_constraint<'a>(region: &'a Region, spec: &ModelSpec) -> impl Fn(u32, usize) -> bool + 'a {
    let n = region.len();
    let constraint = spec.constraint();
    let volume = Arc::clone(region.volume());
    let ext = region.exterior();
    move |s, x| {
        constraint.facilitated(&volume, x, |slot| {
            if slot < n {
                ((s >> slot) & 1) as u8
            } else {
                ext[slot - n]
            }
        })
    }
}

/// Full generator of the dynamics on `Λ` with the region's boundary.
pub fn build_generator(region: &Region, spec: &ModelSpec) -> Result<RateMatrix, ExactError> {
    RateMatrix::build(
        ChainKind::Full,
        region.len(),
        spec,
        |_| true,
        region_constraint(region, spec),
        |_, _| true,
        false,
    )
}

fn filled_region(volume: &Arc<Volume>) -> Result<Region, ExactError> {
    Ok(Region::new(Arc::clone(volume), BoundaryCondition::Filled)?)
}

fn check_labels(volume: &Volume, labels: &[usize], blocks: usize) -> Result<(), ExactError> {
    if labels.len() != volume.len() || labels.iter().any(|&b| b >= blocks) {
        return Err(ExactError::Labels);
    }
    let mut sizes = vec![0usize; blocks];
    labels.iter().for_each(|&b| sizes[b] += 1);
    match sizes.iter().position(|&k| k == 0) {
        Some(b) => Err(ExactError::EmptyBlock(b)),
        None => Ok(()),
    }
}

fn bits_in_hat_a(labels: &[usize], blocks: usize) -> impl Fn(u32) -> bool + '_ {
    move |s| in_hat_a(&decode(s, labels.len()), labels, blocks)
}

/// Restricted chain on `Â` (at least one vacancy per block).
///
/// Rates are those of the dynamics with an entirely filled exterior; a flip
/// is kept iff both endpoints lie in `Â`. Stationary law `μ_Λ(· | Â)`.
pub fn build_hat_chain(
    volume: &Arc<Volume>,
    spec: &ModelSpec,
    labels: &[usize],
    blocks: usize,
) -> Result<RateMatrix, ExactError> {
    check_labels(volume, labels, blocks)?;
    let region = filled_region(volume)?;
    RateMatrix::build(
        ChainKind::Hat,
        volume.len(),
        spec,
        bits_in_hat_a(labels, blocks),
        region_constraint(&region, spec),
        |_, _| true,
        false,
    )
}

/// Block-product chain on `Â`: constraints see only the flipping site's own
/// block, everything else counts as filled.
pub fn build_tilde_chain(
    volume: &Arc<Volume>,
    spec: &ModelSpec,
    labels: &[usize],
    blocks: usize,
) -> Result<RateMatrix, ExactError> {
    check_labels(volume, labels, blocks)?;
    let n = volume.len();
    let constraint = spec.constraint();
    let local = |s: u32, x: usize| {
        constraint.facilitated(volume, x, |slot| {
            if slot < n && labels[slot] == labels[x] {
                ((s >> slot) & 1) as u8
            } else {
                1
            }
        })
    };
    RateMatrix::build(
        ChainKind::Tilde,
        n,
        spec,
        bits_in_hat_a(labels, blocks),
        local,
        |_, _| true,
        false,
    )
}

/// Gap of each block's own restricted chain, as a standalone volume with a
/// filled exterior. `None` marks a degenerate block whose chain has no moves.
pub fn block_gaps(
    volume: &Arc<Volume>,
    spec: &ModelSpec,
    labels: &[usize],
    blocks: usize,
) -> Result<Vec<Option<f64>>, ExactError> {
    check_labels(volume, labels, blocks)?;
    (0..blocks)
        .map(|b| {
            let sites: Vec<usize> = (0..volume.len())
                .filter(|&i| labels[i] == b)
                .map(|i| volume.site(i))
                .collect();
            let sub = Arc::new(Volume::new(Arc::clone(volume.host()), &sites)?);
            let chain = build_hat_chain(&sub, spec, &vec![0; sub.len()], 1)?;
            if chain.transition_count() == 0 {
                return Ok(None);
            }
            Ok(Some(super::spectral_gap(&chain)?.gap))
        })
        .collect()
}

/// Dynamics on `A` restricted to the set `{≥ 2 vacancies per block}` with a
/// filled exterior, killed on leaving it. Surviving mass at time `t` is
/// `P(σ_s ∈ A for all s ≤ t)`.
pub fn build_taboo_chain(
    region: &Region,
    spec: &ModelSpec,
    labels: &[usize],
    blocks: usize,
) -> Result<RateMatrix, ExactError> {
    check_labels(region.volume(), labels, blocks)?;
    let n = region.len();
    RateMatrix::build(
        ChainKind::Taboo,
        n,
        spec,
        |s| in_a(&decode(s, n), labels, blocks),
        region_constraint(region, spec),
        |_, _| true,
        true,
    )
}

/// Generator `L_A^z`: exterior filled except at `z ∈ ∂A`.
pub fn build_minimal_boundary_chain(
    volume: &Arc<Volume>,
    z: usize,
    spec: &ModelSpec,
) -> Result<RateMatrix, ExactError> {
    let region = Region::new(Arc::clone(volume), BoundaryCondition::FilledExceptAt(z))?;
    build_generator(&region, spec)
}

/// `Σ_x μ(c_x Var_x f)` for the full chain of `region`, with
/// `Var_x f(σ) = pq (f(σ^x) − f(σ))²`.
pub fn local_variance_form(chain: &RateMatrix, region: &Region, spec: &ModelSpec, f: &[f64]) -> f64 {
    let c = region_constraint(region, spec);
    let pq = spec.p() * spec.q();
    let mut total = 0.0;
    for (i, &s) in chain.states().iter().enumerate() {
        for x in 0..chain.sites() {
            if !c(s, x) {
                continue;
            }
            if let Some(j) = chain.index_of(s ^ (1 << x)) {
                total += chain.pi()[i] * pq * (f[j] - f[i]).powi(2);
            }
        }
    }
    total
}

/// `½ Σ π(i) q(i,j) (f(j) − f(i))²`.
pub fn dirichlet_form(chain: &RateMatrix, f: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..chain.dim() {
        for (j, w) in chain.row(i) {
            total += chain.pi()[i] * w * (f[j] - f[i]).powi(2);
        }
    }
    0.5 * total
}

/// `⟨f, −Qf⟩_π`.
pub fn quadratic_form(chain: &RateMatrix, f: &[f64]) -> f64 {
    let qf = chain.apply(f);
    -chain.pi().iter().zip(f).zip(&qf).map(|((w, a), b)| w * a * b).sum::<f64>()
}

pub fn variance(weights: &[f64], f: &[f64]) -> f64 {
    let mean: f64 = weights.iter().zip(f).map(|(w, v)| w * v).sum();
    weights.iter().zip(f).map(|(w, v)| w * (v - mean).powi(2)).sum()
}

/// `Ent_π(f) = π(f log f) − π(f) log π(f)` for `f ≥ 0`.
pub fn entropy(weights: &[f64], f: &[f64]) -> Result<f64, ExactError> {
    if let Some(i) = f.iter().position(|&v| v < 0.0) {
        return Err(ExactError::NegativeFunction(i));
    }
    let xlogx = |v: f64| if v > 0.0 { v * v.ln() } else { 0.0 };
    let mean: f64 = weights.iter().zip(f).map(|(w, v)| w * v).sum();
    if mean == 0.0 {
        return Err(ExactError::ZeroFunction);
    }
    let ent = weights.iter().zip(f).map(|(w, &v)| w * xlogx(v)).sum::<f64>() - xlogx(mean);
    Ok(ent.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Volume;

    fn seg(n: usize) -> Arc<Volume> {
        Arc::new(Volume::segment(n).unwrap())
    }

    #[test]
    fn round_trip_encoding() {
        for s in 0..64u32 {
            assert_eq!(encode(&decode(s, 6)), s);
        }
    }

    #[test]
    fn blocked_state_has_zero_row() {
        let v = seg(4);
        let region = Region::new(v, BoundaryCondition::Filled).unwrap();
        let spec = ModelSpec::fa1f(0.5).unwrap();
        let q = build_generator(&region, &spec).unwrap();
        let full = q.index_of(0b1111).unwrap();
        assert_eq!(q.exit_rate(full), 0.0);
        assert_eq!(q.row(full).count(), 0);
    }

    #[test]
    fn detailed_balance_everywhere() {
        for &q in &[0.3, 0.5, 0.8, 0.99] {
            let spec = ModelSpec::fa1f(q).unwrap();
            for n in 1..=8 {
                let v = seg(n);
                for bc in [BoundaryCondition::Empty, BoundaryCondition::Filled] {
                    let region = Region::new(Arc::clone(&v), bc).unwrap();
                    let chain = build_generator(&region, &spec).unwrap();
                    assert!(chain.detailed_balance_residual() < 1e-12);
                    assert!(chain.row_sum_residual() < 1e-12);
                }
                let labels = vec![0; n];
                if n >= 2 {
                    let hat = build_hat_chain(&v, &spec, &labels, 1).unwrap();
                    assert!(hat.detailed_balance_residual() < 1e-12);
                    let tilde = build_tilde_chain(&v, &spec, &labels, 1).unwrap();
                    assert!(tilde.detailed_balance_residual() < 1e-12);
                }
                let z = v.boundary()[0];
                let m = build_minimal_boundary_chain(&v, z, &spec).unwrap();
                assert!(m.detailed_balance_residual() < 1e-12);
            }
        }
    }

    #[test]
    fn two_site_hat_chain_rates() {
        let q = 0.8;
        let spec = ModelSpec::fa1f(q).unwrap();
        let hat = build_hat_chain(&seg(2), &spec, &[0, 0], 1).unwrap();
        assert_eq!(hat.states(), &[0b00, 0b01, 0b10]);
        let (e, a, b) = (0, 1, 2);
        assert!((hat.rate(e, a) - (1.0 - q)).abs() < 1e-15);
        assert!((hat.rate(a, e) - q).abs() < 1e-15);
        assert!((hat.rate(e, b) - (1.0 - q)).abs() < 1e-15);
        assert_eq!(hat.rate(a, b), 0.0);
        assert_eq!(hat.rate(b, a), 0.0);
    }

    #[test]
    fn minimal_boundary_all_filled_has_one_flip() {
        let v = seg(4);
        let spec = ModelSpec::fa1f(0.8).unwrap();
        let z = v.boundary()[0];
        let chain = build_minimal_boundary_chain(&v, z, &spec).unwrap();
        let full = chain.index_of(0b1111).unwrap();
        assert_eq!(chain.row(full).count(), 1);
        let not_boundary = v.halo()[v.halo().len() - 1];
        assert!(build_minimal_boundary_chain(&v, not_boundary, &spec).is_err());
    }

    #[test]
    fn taboo_chain_kills_on_exit() {
        let v = seg(3);
        let region = Region::new(Arc::clone(&v), BoundaryCondition::Filled).unwrap();
        let spec = ModelSpec::fa1f(0.8).unwrap();
        let taboo = build_taboo_chain(&region, &spec, &[0, 0, 0], 1).unwrap();
        // A = states with ≥ 2 vacancies: 000, 001, 010, 100
        assert_eq!(taboo.dim(), 4);
        assert!(!taboo.is_conservative());
        let i = taboo.index_of(0b001).unwrap();
        assert!(taboo.kill_rate(i) > 0.0);
    }

    #[test]
    fn forms_agree_on_random_functions() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let spec = ModelSpec::fa1f(0.6).unwrap();
        let region = Region::new(seg(5), BoundaryCondition::Empty).unwrap();
        let chain = build_generator(&region, &spec).unwrap();
        for _ in 0..50 {
            let f: Vec<f64> = (0..chain.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let d = dirichlet_form(&chain, &f);
            assert!((d - quadratic_form(&chain, &f)).abs() < 1e-12);
            assert!((d - local_variance_form(&chain, &region, &spec, &f)).abs() < 1e-12);
        }
        let c = vec![2.0; chain.dim()];
        assert!(dirichlet_form(&chain, &c).abs() < 1e-15);
        assert!(entropy(chain.pi(), &c).unwrap().abs() < 1e-15);
    }

    #[test]
    fn entropy_of_indicator() {
        let pi = [0.2, 0.3, 0.5];
        let e = entropy(&pi, &[0.0, 1.0, 0.0]).unwrap();
        assert!((e - 0.3 * (1.0f64 / 0.3).ln()).abs() < 1e-15);
        assert!(entropy(&pi, &[0.0, -1.0, 0.0]).is_err());
        assert!(entropy(&pi, &[0.0; 3]).is_err());
    }

    #[test]
    fn tilde_tensorizes() {
        use crate::exact::spectral_gap;
        let spec = ModelSpec::fa1f(0.7).unwrap();
        let v = seg(6);
        let labels = [0, 0, 0, 1, 1, 1];
        let tilde = build_tilde_chain(&v, &spec, &labels, 2).unwrap();
        let gaps = block_gaps(&v, &spec, &labels, 2).unwrap();
        let g0 = gaps[0].unwrap();
        assert!((g0 - gaps[1].unwrap()).abs() < 1e-12);
        assert!((spectral_gap(&tilde).unwrap().gap - g0).abs() < 1e-10);

        let uneven = [0, 0, 1, 1, 1, 1];
        let tilde = build_tilde_chain(&v, &spec, &uneven, 2).unwrap();
        let gaps = block_gaps(&v, &spec, &uneven, 2).unwrap();
        let min = gaps.iter().map(|g| g.unwrap()).fold(f64::INFINITY, f64::min);
        assert!((spectral_gap(&tilde).unwrap().gap - min).abs() < 1e-10);
        // every tilde move is a hat move with the same rate
        let hat = build_hat_chain(&v, &spec, &uneven, 2).unwrap();
        for i in 0..tilde.dim() {
            for (j, w) in tilde.row(i) {
                let (hi, hj) = (hat.index_of(tilde.state(i)).unwrap(), hat.index_of(tilde.state(j)).unwrap());
                assert_eq!(hat.rate(hi, hj), w);
            }
        }
    }

    #[test]
    fn single_block_tilde_is_hat() {
        let spec = ModelSpec::fa1f(0.6).unwrap();
        let v = seg(5);
        let tilde = build_tilde_chain(&v, &spec, &[0; 5], 1).unwrap();
        let hat = build_hat_chain(&v, &spec, &[0; 5], 1).unwrap();
        assert_eq!(tilde.states(), hat.states());
        for i in 0..hat.dim() {
            assert_eq!(tilde.row(i).collect::<Vec<_>>(), hat.row(i).collect::<Vec<_>>());
        }
    }

    #[test]
    fn isolated_site_block_is_degenerate() {
        let spec = ModelSpec::fa1f(0.6).unwrap();
        let gaps = block_gaps(&seg(3), &spec, &[0, 0, 1], 2).unwrap();
        assert!(gaps[0].is_some());
        assert_eq!(gaps[1], None);
    }

    #[test]
    fn minimal_boundary_golden_gap() {
        use crate::exact::spectral_gap;
        let v = seg(4);
        let spec = ModelSpec::fa1f(0.8).unwrap();
        let chain = build_minimal_boundary_chain(&v, v.boundary()[0], &spec).unwrap();
        assert!((spectral_gap(&chain).unwrap().gap - 0.356_578_486_285_333).abs() < 1e-10);
        let one = seg(1);
        let chain = build_minimal_boundary_chain(&one, one.boundary()[0], &spec).unwrap();
        assert!((spectral_gap(&chain).unwrap().gap - 1.0).abs() < 1e-12);
    }

    #[test]
    fn labels_are_checked() {
        let spec = ModelSpec::fa1f(0.5).unwrap();
        assert!(matches!(
            build_hat_chain(&seg(3), &spec, &[0, 0], 1),
            Err(ExactError::Labels)
        ));
        assert!(matches!(
            build_hat_chain(&seg(3), &spec, &[0, 0, 0], 2),
            Err(ExactError::EmptyBlock(1))
        ));
    }
}

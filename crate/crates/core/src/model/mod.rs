//! Configurations, constraints and observables.
//!
//! Occupation convention: `1` = filled (particle), `0` = empty (vacancy).
//! Vacancies facilitate; the all-filled configuration is blocked under a
//! filled exterior.

mod law;
mod observable;
mod region;

pub use law::{kappa_bound, InitialLaw};
pub use observable::Observable;
pub use region::{BoundaryCondition, Region, Volume};

use std::collections::VecDeque;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{GraphError, Partition, UNREACHED};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("q must lie in [0,1]")]
    QOutOfRange,
    #[error("volume is empty")]
    EmptyVolume,
    #[error("volume is not connected")]
    DisconnectedVolume,
    #[error("vertex {0} is not in the host graph")]
    SiteOutOfRange(usize),
    #[error("vertex {0} is not on the outer boundary of the volume")]
    NotOnBoundary(usize),
    #[error("boundary value for vertex {0} is missing")]
    MissingBoundaryValue(usize),
    #[error("occupation at {0} must be 0 or 1")]
    BadOccupation(usize),
    #[error("configuration has {got} sites, volume has {want}")]
    LengthMismatch { got: usize, want: usize },
    #[error("observable support has {0} sites (limit 20)")]
    SupportTooLarge(usize),
    #[error("observable table has {got} entries, expected {want}")]
    TableLength { got: usize, want: usize },
    #[error("observable support site {0} is outside the volume")]
    SupportOutsideVolume(usize),
    #[error("observable support repeats site {0}")]
    SupportRepeated(usize),
    #[error("partition does not cover the volume")]
    PartitionMismatch,
    #[error("ξ is {0}; E/F sets need 1 <= ξ < ∞")]
    XiOutOfRange(Xi),
    #[error("fill probability {0} outside [0,1]")]
    FillProbability(f64),
    #[error("vacancy spacing must be at least 1")]
    ZeroSpacing,
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    /// At least one empty nearest neighbour.
    #[default]
    Fa1f,
    /// At least two empty vertices among those at distance 1 or 2; the
    /// flipping site itself is not counted.
    TwoWithinTwo,
}

impl Constraint {
    /// Evaluates `c_x` for local site `x`, reading vertex values by slot.
    #[inline]
    pub fn facilitated(self, volume: &Volume, x: usize, value: impl Fn(usize) -> u8) -> bool {
        match self {
            Constraint::Fa1f => volume
                .neighbor_slots(x)
                .iter()
                .any(|&s| value(s as usize) == 0),
            Constraint::TwoWithinTwo => {
                volume
                    .ball2_slots(x)
                    .iter()
                    .filter(|&&s| value(s as usize) == 0)
                    .take(2)
                    .count()
                    >= 2
            }
        }
    }
}

/// Vacancy density `q` and the constraint. `p = 1 - q` is derived.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    q: f64,
    constraint: Constraint,
}

impl ModelSpec {
    pub fn new(q: f64, constraint: Constraint) -> Result<Self, ModelError> {
        if !(0.0..=1.0).contains(&q) {
            return Err(ModelError::QOutOfRange);
        }
        Ok(Self { q, constraint })
    }

    pub fn fa1f(q: f64) -> Result<Self, ModelError> {
        Self::new(q, Constraint::Fa1f)
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn p(&self) -> f64 {
        1.0 - self.q
    }

    pub fn constraint(&self) -> Constraint {
        self.constraint
    }

    /// Rate of `σ → σ^x` given the current value at `x` and `c_x`.
    #[inline]
    pub fn rate(&self, current: u8, facilitated: bool) -> f64 {
        match (facilitated, current) {
            (false, _) => 0.0,
            (true, 1) => self.q,
            (true, _) => self.p(),
        }
    }

    /// `μ(σ)` restricted to the given sites.
    pub fn mu_weight(&self, occ: &[u8]) -> f64 {
        occ.iter()
            .map(|&v| if v == 1 { self.p() } else { self.q })
            .product()
    }
}

/// Distance to the nearest vacancy, with `+∞` as a distinct value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Xi {
    Finite(u32),
    Infinite,
}

impl Xi {
    pub fn finite(self) -> Option<u32> {
        match self {
            Xi::Finite(d) => Some(d),
            Xi::Infinite => None,
        }
    }

    /// `θ^ξ`; infinite for `ξ = ∞` and `θ > 1`.
    pub fn theta_pow(self, theta: f64) -> f64 {
        match self {
            Xi::Finite(d) => theta.powi(d as i32),
            Xi::Infinite if theta > 1.0 => f64::INFINITY,
            Xi::Infinite if theta == 1.0 => 1.0,
            Xi::Infinite => 0.0,
        }
    }
}

impl fmt::Display for Xi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Xi::Finite(d) => write!(f, "{d}"),
            Xi::Infinite => write!(f, "∞"),
        }
    }
}

/// Vacancies at distance `ξ` from `x` (E) and the sites one step closer that
/// touch them (F). Host vertex ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EfSets {
    pub xi: u32,
    pub e: Vec<usize>,
    pub f: Vec<usize>,
    /// Whether one flip can push `ξ` up: a single vacancy at distance `ξ`
    /// that may currently be filled.
    pub can_increase: bool,
}

/// Occupation of a region. `occ[i]` is the value at local site `i`.
#[derive(Debug, Clone)]
pub struct Configuration {
    region: Arc<Region>,
    occ: Vec<u8>,
}

impl PartialEq for Configuration {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.region, &other.region) && self.occ == other.occ
    }
}

impl Configuration {
    pub fn new(region: Arc<Region>, occ: Vec<u8>) -> Result<Self, ModelError> {
        if occ.len() != region.len() {
            return Err(ModelError::LengthMismatch {
                got: occ.len(),
                want: region.len(),
            });
        }
        if let Some(i) = occ.iter().position(|&v| v > 1) {
            return Err(ModelError::BadOccupation(i));
        }
        Ok(Self { region, occ })
    }

    pub fn filled(region: Arc<Region>) -> Self {
        let n = region.len();
        Self {
            region,
            occ: vec![1; n],
        }
    }

    pub fn empty(region: Arc<Region>) -> Self {
        let n = region.len();
        Self {
            region,
            occ: vec![0; n],
        }
    }

    pub fn region(&self) -> &Arc<Region> {
        &self.region
    }

    pub fn occupation(&self) -> &[u8] {
        &self.occ
    }

    pub fn into_occupation(self) -> Vec<u8> {
        self.occ
    }

    pub fn get(&self, x: usize) -> u8 {
        self.occ[x]
    }

    pub fn set(&mut self, x: usize, value: u8) {
        assert!(value <= 1, "occupation must be 0 or 1");
        self.occ[x] = value;
    }

    /// `σ^x`.
    pub fn flipped(&self, x: usize) -> Self {
        let mut out = self.clone();
        out.occ[x] ^= 1;
        out
    }

    /// Value at a slot (site or halo vertex).
    pub fn slot_value(&self, slot: usize) -> u8 {
        let n = self.occ.len();
        if slot < n {
            self.occ[slot]
        } else {
            self.region.exterior()[slot - n]
        }
    }

    pub fn constraint(&self, constraint: Constraint, x: usize) -> bool {
        constraint.facilitated(self.region.volume(), x, |s| self.slot_value(s))
    }

    pub fn flip_rate(&self, spec: &ModelSpec, x: usize) -> f64 {
        spec.rate(self.occ[x], self.constraint(spec.constraint(), x))
    }

    pub fn vacancy_count(&self) -> usize {
        self.occ.iter().filter(|&&v| v == 0).count()
    }

    /// Host-graph value, exterior included.
    pub fn host_value(&self, v: usize) -> u8 {
        self.region.host_value(&self.occ, v)
    }

    /// `ξ^x`: host distance from local site `x` to the nearest vacancy,
    /// exterior vacancies included.
    pub fn xi(&self, x: usize) -> Xi {
        let volume = self.region.volume();
        let host = volume.host();
        let start = volume.site(x);
        if self.occ[x] == 0 {
            return Xi::Finite(0);
        }
        let mut dist = vec![UNREACHED; host.vertex_count()];
        dist[start] = 0;
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &w in host.neighbors(u) {
                if dist[w] == UNREACHED {
                    dist[w] = dist[u] + 1;
                    if self.host_value(w) == 0 {
                        return Xi::Finite(dist[w]);
                    }
                    queue.push_back(w);
                }
            }
        }
        Xi::Infinite
    }

    pub fn ef_sets(&self, spec: &ModelSpec, x: usize) -> Result<EfSets, ModelError> {
        let xi = match self.xi(x) {
            Xi::Finite(d) if d >= 1 => d,
            other => return Err(ModelError::XiOutOfRange(other)),
        };
        let volume = self.region.volume();
        let host = volume.host();
        let dist = host.bfs_limited(volume.site(x), xi, |_| true);
        let mut e: Vec<usize> = (0..host.vertex_count())
            .filter(|&v| dist[v] == xi && self.host_value(v) == 0)
            .collect();
        e.sort_unstable();
        let mut f: Vec<usize> = (0..host.vertex_count())
            .filter(|&v| dist[v] == xi - 1 && host.neighbors(v).iter().any(|w| e.binary_search(w).is_ok()))
            .collect();
        f.sort_unstable();
        let can_increase = e.len() == 1
            && volume
                .local_of(e[0])
                .is_some_and(|y| self.constraint(spec.constraint(), y));
        Ok(EfSets { xi, e, f, can_increase })
    }
}

/// Block index of every local site of `volume` under `partition`.
pub fn block_labels(volume: &Volume, partition: &Partition) -> Result<Vec<usize>, ModelError> {
    if partition.volume != volume.sites() {
        return Err(ModelError::PartitionMismatch);
    }
    volume
        .sites()
        .iter()
        .map(|&v| partition.block_of(v).ok_or(ModelError::PartitionMismatch))
        .collect()
}

/// Whether every block holds at least `min_vacancies` vacancies.
pub fn blocks_have_vacancies(occ: &[u8], labels: &[usize], blocks: usize, min_vacancies: usize) -> bool {
    let mut counts = vec![0usize; blocks];
    for (&v, &b) in occ.iter().zip(labels) {
        if v == 0 {
            counts[b] += 1;
        }
    }
    counts.iter().all(|&c| c >= min_vacancies)
}

/// `σ ∈ A`: at least two vacancies per block.
pub fn in_a(occ: &[u8], labels: &[usize], blocks: usize) -> bool {
    blocks_have_vacancies(occ, labels, blocks, 2)
}

/// `σ ∈ Â`: at least one vacancy per block.
pub fn in_hat_a(occ: &[u8], labels: &[usize], blocks: usize) -> bool {
    blocks_have_vacancies(occ, labels, blocks, 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::partition_cover;
    use proptest::prelude::*;

    fn segment(n: usize, bc: BoundaryCondition) -> Arc<Region> {
        let vol = Arc::new(Volume::segment(n).unwrap());
        Arc::new(Region::new(vol, bc).unwrap())
    }

    fn bits(state: u32, n: usize) -> Vec<u8> {
        (0..n).map(|i| ((state >> i) & 1) as u8).collect()
    }

    #[test]
    fn fa1f_constraint_examples() {
        let r = segment(3, BoundaryCondition::Filled);
        let s = Configuration::new(r, vec![1, 0, 1]).unwrap();
        assert!(!s.constraint(Constraint::Fa1f, 1));
        assert!(s.constraint(Constraint::Fa1f, 0));
        let e = Configuration::filled(segment(3, BoundaryCondition::Empty));
        assert!(e.constraint(Constraint::Fa1f, 0));
        assert!(!e.constraint(Constraint::Fa1f, 1));
    }

    #[test]
    fn flip_rate_examples() {
        let spec = ModelSpec::fa1f(0.8).unwrap();
        let r = segment(3, BoundaryCondition::Filled);
        let blocked = Configuration::filled(Arc::clone(&r));
        assert_eq!(blocked.flip_rate(&spec, 1), 0.0);
        let s = Configuration::new(Arc::clone(&r), vec![1, 0, 1]).unwrap();
        assert_eq!(s.flip_rate(&spec, 0), 0.8);
        let t = Configuration::new(r, vec![0, 0, 1]).unwrap();
        assert!((t.flip_rate(&spec, 0) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn q_validation() {
        assert_eq!(ModelSpec::fa1f(1.5), Err(ModelError::QOutOfRange));
        assert_eq!(ModelSpec::fa1f(-0.1), Err(ModelError::QOutOfRange));
        assert!(ModelSpec::fa1f(f64::NAN).is_err());
        let s = ModelSpec::fa1f(0.3).unwrap();
        assert_eq!(s.p() + s.q(), 1.0);
    }

    #[test]
    fn two_within_two_counts_distance_two() {
        let r = segment(5, BoundaryCondition::Filled);
        // vacancies at distance 1 and 2 from site 2
        let s = Configuration::new(Arc::clone(&r), vec![0, 1, 1, 0, 1]).unwrap();
        assert!(s.constraint(Constraint::TwoWithinTwo, 2));
        // site 2 itself empty does not count
        let t = Configuration::new(r, vec![1, 1, 0, 0, 1]).unwrap();
        assert!(!t.constraint(Constraint::TwoWithinTwo, 2));
    }

    #[test]
    fn xi_examples() {
        let r = segment(7, BoundaryCondition::Empty);
        let mut s = Configuration::filled(Arc::clone(&r));
        assert_eq!(s.xi(3), Xi::Finite(4));
        s.set(3, 0);
        assert_eq!(s.xi(3), Xi::Finite(0));
        let f = Configuration::filled(segment(7, BoundaryCondition::Filled));
        assert_eq!(f.xi(3), Xi::Infinite);
        assert_eq!(Xi::Infinite.theta_pow(2.0), f64::INFINITY);
    }

    #[test]
    fn ef_sets_on_a_line() {
        let spec = ModelSpec::fa1f(0.8).unwrap();
        let r = segment(9, BoundaryCondition::Filled);
        let mut s = Configuration::filled(Arc::clone(&r));
        s.set(5, 0);
        let ef = s.ef_sets(&spec, 2).unwrap();
        let vol = r.volume();
        assert_eq!(ef.xi, 3);
        assert_eq!(ef.e, vec![vol.site(5)]);
        assert_eq!(ef.f, vec![vol.site(4)]);
        assert!(ef.can_increase == s.constraint(Constraint::Fa1f, 5));
        // ξ = 1: F is {x}
        let ef1 = s.ef_sets(&spec, 4).unwrap();
        assert_eq!(ef1.f, vec![vol.site(4)]);
        assert!(s.ef_sets(&spec, 5).is_err());
    }

    #[test]
    fn ef_sets_in_the_plane() {
        // two vacancies at distance 3 from the centre
        let spec = ModelSpec::fa1f(0.8).unwrap();
        let vol = Arc::new(Volume::lattice_box(&[9, 9]).unwrap());
        let r = Arc::new(Region::new(Arc::clone(&vol), BoundaryCondition::Filled).unwrap());
        let mut s = Configuration::filled(r);
        s.set(4 * 9 + 7, 0);
        s.set(9 + 4, 0);
        let ef = s.ef_sets(&spec, 4 * 9 + 4).unwrap();
        assert_eq!(ef.xi, 3);
        assert_eq!(ef.e.len(), 2);
        assert!(!ef.can_increase);
        for &y in &ef.f {
            let local = vol.local_of(y).unwrap();
            assert!(s.constraint(Constraint::Fa1f, local));
        }
    }

    #[test]
    fn block_events() {
        let vol = Arc::new(Volume::segment(8).unwrap());
        let p = partition_cover(vol.host(), vol.sites(), 1).unwrap();
        let labels = block_labels(&vol, &p).unwrap();
        let nb = p.len();
        assert!(in_a(&[0; 8], &labels, nb));
        assert!(!in_hat_a(&[1; 8], &labels, nb));
        let mut one_each = vec![1u8; 8];
        for b in 0..nb {
            let i = labels.iter().position(|&l| l == b).unwrap();
            one_each[i] = 0;
        }
        assert!(in_hat_a(&one_each, &labels, nb));
        assert!(!in_a(&one_each, &labels, nb));
    }

    #[test]
    fn boundary_validation() {
        let vol = Arc::new(Volume::segment(4).unwrap());
        let inner = vol.site(1);
        assert_eq!(
            Region::new(Arc::clone(&vol), BoundaryCondition::FilledExceptAt(inner)).unwrap_err(),
            ModelError::NotOnBoundary(inner)
        );
        let z = vol.boundary()[0];
        let r = Region::new(Arc::clone(&vol), BoundaryCondition::FilledExceptAt(z)).unwrap();
        assert_eq!(r.exterior().iter().filter(|&&v| v == 0).count(), 1);
        let partial = std::iter::once((z, 0u8)).collect();
        assert!(matches!(
            Region::new(vol, BoundaryCondition::Explicit(partial)),
            Err(ModelError::MissingBoundaryValue(_))
        ));
    }

    #[test]
    fn torus_volume_has_no_exterior() {
        let vol = Volume::torus(&[5, 5]).unwrap();
        assert!(vol.halo().is_empty());
        assert_eq!(vol.neighbor_slots(0).len(), 4);
        assert_eq!(vol.ball2_slots(0).len(), 12);
    }

    proptest! {
        #[test]
        fn constraint_ignores_own_site(state in 0u32..(1 << 6), x in 0usize..6, two: bool, empty_bc: bool) {
            let bc = if empty_bc { BoundaryCondition::Empty } else { BoundaryCondition::Filled };
            let c = if two { Constraint::TwoWithinTwo } else { Constraint::Fa1f };
            let s = Configuration::new(segment(6, bc), bits(state, 6)).unwrap();
            prop_assert_eq!(s.constraint(c, x), s.flipped(x).constraint(c, x));
        }

        #[test]
        fn rates_sum_to_zero_or_one(state in 0u32..(1 << 5), x in 0usize..5, q in 0.0f64..=1.0) {
            let spec = ModelSpec::fa1f(q).unwrap();
            let s = Configuration::new(segment(5, BoundaryCondition::Filled), bits(state, 5)).unwrap();
            let total = s.flip_rate(&spec, x) + s.flipped(x).flip_rate(&spec, x);
            prop_assert!(total == 0.0 || (total - 1.0).abs() < 1e-15);
        }

        #[test]
        fn rates_are_reversible(state in 0u32..(1 << 4), x in 0usize..4, q in 0.01f64..0.99, empty_bc: bool) {
            let spec = ModelSpec::fa1f(q).unwrap();
            let bc = if empty_bc { BoundaryCondition::Empty } else { BoundaryCondition::Filled };
            let s = Configuration::new(segment(4, bc), bits(state, 4)).unwrap();
            let t = s.flipped(x);
            let lhs = spec.mu_weight(s.occupation()) * s.flip_rate(&spec, x);
            let rhs = spec.mu_weight(t.occupation()) * t.flip_rate(&spec, x);
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        #[test]
        fn a_is_monotone_under_emptying(state in 0u32..(1 << 10), x in 0usize..10) {
            let vol = Volume::segment(10).unwrap();
            let p = partition_cover(vol.host(), vol.sites(), 1).unwrap();
            let labels = block_labels(&vol, &p).unwrap();
            let occ = bits(state, 10);
            let mut emptier = occ.clone();
            emptier[x] = 0;
            if in_a(&occ, &labels, p.len()) {
                prop_assert!(in_a(&emptier, &labels, p.len()));
            }
            if in_a(&occ, &labels, p.len()) {
                prop_assert!(in_hat_a(&occ, &labels, p.len()));
            }
        }

        #[test]
        fn xi_moves_by_at_most_one_per_flip(state in 0u32..(1 << 8), x in 0usize..8, y in 0usize..8) {
            let s = Configuration::new(segment(8, BoundaryCondition::Empty), bits(state, 8)).unwrap();
            prop_assume!(s.constraint(Constraint::Fa1f, y));
            let a = s.xi(x).finite().unwrap();
            let b = s.flipped(y).xi(x).finite().unwrap();
            prop_assert!(a.abs_diff(b) <= 1);
        }
    }
}

//! Continuous-time Monte Carlo for the constrained dynamics.
//!
//! One Poisson clock of rate `|Λ|` drives the whole volume. At each ring a
//! site is chosen uniformly; if its constraint holds, it is refreshed to
//! empty with probability `q` and to filled with probability `p`. Refreshes
//! that leave the value unchanged are not recorded as events. This is the
//! exact law of the finite-volume generator.
//!
//! Replicas use independent ChaCha8 streams seeded with
//! [`replica_seed`]`(seed, index)`. Replica results are folded in fixed-size
//! chunks and merged in index order, so estimates do not depend on the
//! number of worker threads.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::model::{
    BoundaryCondition, Configuration, InitialLaw, ModelError, ModelSpec, Observable, Region, Xi,
};

const CHUNK: usize = 1024;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KmcError {
    #[error("record times must be finite, nonnegative and sorted")]
    RecordTimes,
    #[error("at least one replica is required")]
    NoReplicas,
    #[error("θ must exceed 1")]
    Theta,
    #[error("the ξ moment needs an empty exterior")]
    NeedsEmptyBoundary,
    #[error("small volume is not contained in the large one")]
    NotNested,
    #[error("volumes live on different host graphs")]
    DifferentHosts,
    #[error("partition labels do not match the volume")]
    LabelMismatch,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Record times, master seed and replica count.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimParams {
    pub record_times: Vec<f64>,
    pub seed: u64,
    pub replicas: usize,
}

impl SimParams {
    pub fn new(record_times: Vec<f64>, seed: u64, replicas: usize) -> Result<Self, KmcError> {
        if record_times.iter().any(|t| !t.is_finite() || *t < 0.0)
            || record_times.windows(2).any(|w| w[0] > w[1])
        {
            return Err(KmcError::RecordTimes);
        }
        if replicas == 0 {
            return Err(KmcError::NoReplicas);
        }
        Ok(Self {
            record_times,
            seed,
            replicas,
        })
    }

    pub fn t_max(&self) -> f64 {
        self.record_times.last().copied().unwrap_or(0.0)
    }
}

/// SplitMix64 finaliser.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replica `index`: `splitmix64(seed ^ splitmix64(index))`.
pub fn replica_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index))
}

pub fn replica_rng(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(replica_seed(seed, index))
}

/// One accepted flip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Event {
    pub time: f64,
    pub site: usize,
    pub old: u8,
    pub new: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub initial: Vec<u8>,
    pub events: Vec<Event>,
    pub record_times: Vec<f64>,
    /// State after all events with time `<= record_times[k]`.
    pub snapshots: Vec<Vec<u8>>,
    pub exit_a_time: Option<f64>,
}

impl Trajectory {
    /// Replays the events and checks every snapshot.
    pub fn replay_matches(&self) -> bool {
        let mut state = self.initial.clone();
        let mut next = 0;
        for (k, &t) in self.record_times.iter().enumerate() {
            while next < self.events.len() && self.events[next].time <= t {
                let e = self.events[next];
                if state[e.site] != e.old {
                    return false;
                }
                state[e.site] = e.new;
                next += 1;
            }
            if state != self.snapshots[k] {
                return false;
            }
        }
        self.events.windows(2).all(|w| w[0].time < w[1].time)
    }
}

/// Hooks called while a single run advances.
pub trait Probe {
    /// Number of values written per record time.
    fn outputs(&self) -> usize;
    fn start(&mut self, _occ: &[u8]) {}
    fn on_flip(&mut self, _time: f64, _site: usize, _new: u8, _occ: &[u8]) {}
    fn record(&mut self, occ: &[u8], out: &mut [f64]);
}

/// Runs the uniform-clock dynamics from the state in `ext[..n]` up to the
/// last record time. `ext` is `[occ | exterior]`. `record(k, occ)` is
/// called once per record time, in order.
pub fn run<R: Rng + ?Sized>(
    region: &Region,
    spec: &ModelSpec,
    ext: &mut [u8],
    record_times: &[f64],
    rng: &mut R,
    mut on_flip: impl FnMut(f64, usize, u8, &[u8]),
    mut record: impl FnMut(usize, &[u8]),
) {
    let volume = region.volume();
    let n = volume.len();
    let constraint = spec.constraint();
    let q = spec.q();
    let rate = n as f64;
    let t_max = record_times.last().copied().unwrap_or(0.0);
    let mut k = 0;
    let mut t = 0.0;
    loop {
        let dt: f64 = rng.sample::<f64, _>(Exp1) / rate;
        let t_next = t + dt;
        while k < record_times.len() && record_times[k] < t_next {
            record(k, &ext[..n]);
            k += 1;
        }
        if t_next > t_max {
            break;
        }
        t = t_next;
        let x = rng.random_range(0..n);
        let u: f64 = rng.random();
        if constraint.facilitated(volume, x, |s| ext[s]) {
            let new = u8::from(u >= q);
            if new != ext[x] {
                ext[x] = new;
                on_flip(t, x, new, &ext[..n]);
            }
        }
    }
    while k < record_times.len() {
        record(k, &ext[..n]);
        k += 1;
    }
}

/// Single run keeping every event and the configuration at each record time.
pub fn simulate<R: Rng + ?Sized>(
    region: &Region,
    spec: &ModelSpec,
    initial: &[u8],
    record_times: &[f64],
    rng: &mut R,
) -> Trajectory {
    let mut ext = region.extended(initial);
    let mut events = Vec::new();
    let mut snapshots = Vec::with_capacity(record_times.len());
    run(
        region,
        spec,
        &mut ext,
        record_times,
        rng,
        |time, site, new, _| {
            events.push(Event {
                time,
                site,
                old: new ^ 1,
                new,
            })
        },
        |_, occ| snapshots.push(occ.to_vec()),
    );
    Trajectory {
        initial: initial.to_vec(),
        events,
        record_times: record_times.to_vec(),
        snapshots,
        exit_a_time: None,
    }
}

/// First time the trajectory leaves `A` (fewer than two vacancies in some
/// block). Only t = 0 and flips that fill a site need checking.
pub fn track_exit_a(traj: &Trajectory, labels: &[usize], blocks: usize) -> Result<Option<f64>, KmcError> {
    if labels.len() != traj.initial.len() || labels.iter().any(|&b| b >= blocks) {
        return Err(KmcError::LabelMismatch);
    }
    let mut counts = vec![0usize; blocks];
    for (&v, &b) in traj.initial.iter().zip(labels) {
        if v == 0 {
            counts[b] += 1;
        }
    }
    if counts.iter().any(|&c| c < 2) {
        return Ok(Some(0.0));
    }
    for e in &traj.events {
        let b = labels[e.site];
        if e.new == 1 {
            counts[b] -= 1;
            if counts[b] < 2 {
                return Ok(Some(e.time));
            }
        } else {
            counts[b] += 1;
        }
    }
    Ok(None)
}

/// Mean and standard error per record time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesEstimate {
    pub times: Vec<f64>,
    pub means: Vec<f64>,
    pub stderrs: Vec<f64>,
    pub replicas: usize,
}

#[derive(Debug, Clone)]
struct Moments {
    count: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn new(len: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; len],
            m2: vec![0.0; len],
        }
    }

    fn push(&mut self, values: &[f64]) {
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(values) {
            let d = v - *m;
            *m += d / n;
            *s += d * (v - *m);
        }
    }

    fn merge(&mut self, other: &Moments) {
        if other.count == 0 {
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        for i in 0..self.mean.len() {
            let d = other.mean[i] - self.mean[i];
            self.mean[i] += d * nb / n;
            self.m2[i] += other.m2[i] + d * d * na * nb / n;
        }
        self.count += other.count;
    }

    fn stderr(&self, i: usize) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let n = self.count as f64;
        (self.m2[i].max(0.0) / (n - 1.0)).sqrt() / n.sqrt()
    }
}

/// Runs `replicas` independent copies; each writes `width` values into its
/// output row. Aggregation is independent of the thread count.
pub fn replica_moments(
    replicas: usize,
    width: usize,
    job: impl Fn(u64, &mut [f64]) + Sync,
) -> (Vec<f64>, Vec<f64>) {
    let chunks: Vec<Moments> = (0..replicas.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = Moments::new(width);
            let mut row = vec![0.0; width];
            for r in c * CHUNK..((c + 1) * CHUNK).min(replicas) {
                row.iter_mut().for_each(|v| *v = 0.0);
                job(r as u64, &mut row);
                acc.push(&row);
            }
            acc
        })
        .collect();
    let mut total = Moments::new(width);
    for c in &chunks {
        total.merge(c);
    }
    let stderrs = (0..width).map(|i| total.stderr(i)).collect();
    (total.mean, stderrs)
}

/// Estimates per-time averages of the probe outputs over replicas drawn
/// from `law`. Output `j` of the probe becomes series `j`.
pub fn estimate_with_probe<P: Probe>(
    region: &Arc<Region>,
    spec: &ModelSpec,
    law: &InitialLaw,
    params: &SimParams,
    make_probe: impl Fn() -> P + Sync,
) -> Result<Vec<SeriesEstimate>, KmcError> {
    law.validate(region.len())?;
    let times = &params.record_times;
    let width = make_probe().outputs();
    let n = region.len();
    let (means, stderrs) = replica_moments(params.replicas, width * times.len(), |r, row| {
        let mut rng = replica_rng(params.seed, r);
        let mut ext = region.extended(&vec![0; n]);
        law.sample_into(&mut ext[..n], &mut rng);
        let mut probe = make_probe();
        probe.start(&ext[..n]);
        let probe = std::cell::RefCell::new(probe);
        run(
            region,
            spec,
            &mut ext,
            times,
            &mut rng,
            |t, x, new, occ| probe.borrow_mut().on_flip(t, x, new, occ),
            |k, occ| probe.borrow_mut().record(occ, &mut row[k * width..(k + 1) * width]),
        );
    });
    Ok((0..width)
        .map(|j| SeriesEstimate {
            times: times.clone(),
            means: (0..times.len()).map(|k| means[k * width + j]).collect(),
            stderrs: (0..times.len()).map(|k| stderrs[k * width + j]).collect(),
            replicas: params.replicas,
        })
        .collect())
}

/// Evaluates local observables.
pub struct ObservableProbe<'a>(pub &'a [Observable]);

impl Probe for ObservableProbe<'_> {
    fn outputs(&self) -> usize {
        self.0.len()
    }

    fn record(&mut self, occ: &[u8], out: &mut [f64]) {
        for (o, f) in out.iter_mut().zip(self.0) {
            *o = f.eval(occ);
        }
    }
}

/// `θ^{ξ^x}` at each record time.
pub struct XiProbe {
    pub region: Arc<Region>,
    pub x: usize,
    pub theta: f64,
}

impl Probe for XiProbe {
    fn outputs(&self) -> usize {
        1
    }

    fn record(&mut self, occ: &[u8], out: &mut [f64]) {
        let conf = Configuration::new(Arc::clone(&self.region), occ.to_vec()).expect("state matches region");
        out[0] = conf.xi(self.x).theta_pow(self.theta);
    }
}

/// Two outputs: `1{left A by time t}` and `1{σ_t ∉ A}`.
pub struct ExitProbe<'a> {
    labels: &'a [usize],
    counts: Vec<usize>,
    exited: bool,
}

impl<'a> ExitProbe<'a> {
    pub fn new(labels: &'a [usize], blocks: usize) -> Self {
        Self {
            labels,
            counts: vec![0; blocks],
            exited: false,
        }
    }

    fn outside(&self) -> bool {
        self.counts.iter().any(|&c| c < 2)
    }
}

impl Probe for ExitProbe<'_> {
    fn outputs(&self) -> usize {
        2
    }

    fn start(&mut self, occ: &[u8]) {
        self.counts.iter_mut().for_each(|c| *c = 0);
        for (&v, &b) in occ.iter().zip(self.labels) {
            if v == 0 {
                self.counts[b] += 1;
            }
        }
        self.exited = self.outside();
    }

    fn on_flip(&mut self, _time: f64, site: usize, new: u8, _occ: &[u8]) {
        let b = self.labels[site];
        if new == 1 {
            self.counts[b] -= 1;
            self.exited |= self.counts[b] < 2;
        } else {
            self.counts[b] += 1;
        }
    }

    fn record(&mut self, _occ: &[u8], out: &mut [f64]) {
        out[0] = f64::from(u8::from(self.exited));
        out[1] = f64::from(u8::from(self.outside()));
    }
}

/// `E_ν f(σ_t)` for each observable.
pub fn estimate_expectation(
    observables: &[Observable],
    law: &InitialLaw,
    region: &Arc<Region>,
    spec: &ModelSpec,
    params: &SimParams,
) -> Result<Vec<SeriesEstimate>, KmcError> {
    estimate_with_probe(region, spec, law, params, || ObservableProbe(observables))
}

/// `E_ν θ^{ξ^x_t}` under an empty exterior.
pub fn estimate_xi_moment(
    theta: f64,
    x: usize,
    law: &InitialLaw,
    region: &Arc<Region>,
    spec: &ModelSpec,
    params: &SimParams,
) -> Result<SeriesEstimate, KmcError> {
    if theta <= 1.0 {
        return Err(KmcError::Theta);
    }
    if *region.boundary_condition() != BoundaryCondition::Empty || region.volume().boundary().is_empty() {
        return Err(KmcError::NeedsEmptyBoundary);
    }
    let mut out = estimate_with_probe(region, spec, law, params, || XiProbe {
        region: Arc::clone(region),
        x,
        theta,
    })?;
    Ok(out.remove(0))
}

/// Exit probabilities from `A`: `(P(A_t^c), P(σ_t ∉ A))` per record time.
pub fn estimate_exit_a(
    labels: &[usize],
    blocks: usize,
    law: &InitialLaw,
    region: &Arc<Region>,
    spec: &ModelSpec,
    params: &SimParams,
) -> Result<(SeriesEstimate, SeriesEstimate), KmcError> {
    if labels.len() != region.len() {
        return Err(KmcError::LabelMismatch);
    }
    let mut out = estimate_with_probe(region, spec, law, params, || ExitProbe::new(labels, blocks))?;
    let outside = out.pop().expect("two outputs");
    let exited = out.pop().expect("two outputs");
    Ok((exited, outside))
}

/// Coupled estimate of `f(σ_t^{Λ2}) - f(σ_t^{Λ1})`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeedComparison {
    pub times: Vec<f64>,
    pub large: SeriesEstimate,
    pub small: SeriesEstimate,
    /// Paired difference `large - small`.
    pub difference: SeriesEstimate,
}

/// Runs the dynamics on `Λ2` and on `Λ1 ⊆ Λ2` with shared clocks: each ring
/// of the `Λ2` clock at a site of `Λ1` also rings there, with the same
/// refresh variable. Both start from the same draw of `law` on `Λ2`.
/// `f` is given in local indices of `Λ1`.
pub fn finite_speed_compare(
    f: &Observable,
    law: &InitialLaw,
    spec: &ModelSpec,
    small: &Arc<Region>,
    large: &Arc<Region>,
    params: &SimParams,
) -> Result<SpeedComparison, KmcError> {
    let (v1, v2) = (small.volume(), large.volume());
    if !Arc::ptr_eq(v1.host(), v2.host()) && v1.host() != v2.host() {
        return Err(KmcError::DifferentHosts);
    }
    let to_large: Vec<usize> = v1
        .sites()
        .iter()
        .map(|&h| v2.local_of(h).ok_or(KmcError::NotNested))
        .collect::<Result<_, _>>()?;
    let mut from_large = vec![usize::MAX; v2.len()];
    for (i, &j) in to_large.iter().enumerate() {
        from_large[j] = i;
    }
    law.validate(v2.len())?;
    let f_large = Observable::new(
        f.support().iter().map(|&x| to_large[x]).collect(),
        f.table().to_vec(),
        v2.len(),
    )?;
    let times = &params.record_times;
    let nt = times.len();
    let (n1, n2) = (v1.len(), v2.len());
    let constraint = spec.constraint();
    let q = spec.q();
    let t_max = params.t_max();

    let (means, stderrs) = replica_moments(params.replicas, 3 * nt, |r, row| {
        let mut rng = replica_rng(params.seed, r);
        let mut ext2 = large.extended(&vec![0; n2]);
        law.sample_into(&mut ext2[..n2], &mut rng);
        let init1: Vec<u8> = to_large.iter().map(|&j| ext2[j]).collect();
        let mut ext1 = small.extended(&init1);
        let mut k = 0;
        let mut t = 0.0;
        let mut write = |k: usize, e1: &[u8], e2: &[u8]| {
            let a = f_large.eval(&e2[..n2]);
            let b = f.eval(&e1[..n1]);
            row[k] = a;
            row[nt + k] = b;
            row[2 * nt + k] = a - b;
        };
        loop {
            let dt: f64 = rng.sample::<f64, _>(Exp1) / n2 as f64;
            let t_next = t + dt;
            while k < nt && times[k] < t_next {
                write(k, &ext1, &ext2);
                k += 1;
            }
            if t_next > t_max {
                break;
            }
            t = t_next;
            let x = rng.random_range(0..n2);
            let u: f64 = rng.random();
            let new = u8::from(u >= q);
            if constraint.facilitated(v2, x, |s| ext2[s]) {
                ext2[x] = new;
            }
            let y = from_large[x];
            if y != usize::MAX && constraint.facilitated(v1, y, |s| ext1[s]) {
                ext1[y] = new;
            }
        }
        while k < nt {
            write(k, &ext1, &ext2);
            k += 1;
        }
    });
    let series = |offset: usize| SeriesEstimate {
        times: times.clone(),
        means: means[offset..offset + nt].to_vec(),
        stderrs: stderrs[offset..offset + nt].to_vec(),
        replicas: params.replicas,
    };
    Ok(SpeedComparison {
        times: times.clone(),
        large: series(0),
        small: series(nt),
        difference: series(2 * nt),
    })
}

/// `ξ` of a local site read from an occupation slice.
pub fn xi_of(region: &Arc<Region>, occ: &[u8], x: usize) -> Xi {
    Configuration::new(Arc::clone(region), occ.to_vec())
        .expect("state matches region")
        .xi(x)
}

//! Invariants that cut across modules, checked on random small instances.

use std::sync::Arc;

use proptest::prelude::*;

use kcmlab::cli::RunConfig;
use kcmlab::exact::{
    build_generator, build_hat_chain, encode, propagate, quadratic_form, region_constraint, spectral_gap, variance,
};
use kcmlab::experiments::fit_decay;
use kcmlab::graph::partition_cover;
use kcmlab::kmc::{replica_rng, simulate, SeriesEstimate};
use kcmlab::model::{BoundaryCondition, ModelSpec, Region, Volume};

fn bits(state: u32, n: usize) -> Vec<u8> {
    (0..n).map(|i| ((state >> i) & 1) as u8).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// `Var_π(f) ≤ E(f)/gap` on the restricted chain.
    #[test]
    fn poincare_on_hat_chain(n in 2usize..7, q in 0.1f64..0.95, seed: u64) {
        let v = Arc::new(Volume::segment(n).unwrap());
        let spec = ModelSpec::fa1f(q).unwrap();
        let chain = build_hat_chain(&v, &spec, &vec![0; n], 1).unwrap();
        let gap = spectral_gap(&chain).unwrap().gap;
        let mut z = seed;
        let f: Vec<f64> = (0..chain.dim())
            .map(|_| {
                z = z.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (z >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            })
            .collect();
        let var = variance(chain.pi(), &f);
        let form = quadratic_form(&chain, &f);
        prop_assert!(var <= form / gap * (1.0 + 1e-9) + 1e-15, "var {var} form {form} gap {gap}");
    }

    /// The transient law stays a probability vector.
    #[test]
    fn transient_law_is_a_distribution(n in 1usize..6, q in 0.05f64..0.95, start in 0u32..32, t in 0.0f64..6.0) {
        let r = Region::new(Arc::new(Volume::segment(n).unwrap()), BoundaryCondition::Empty).unwrap();
        let chain = build_generator(&r, &ModelSpec::fa1f(q).unwrap()).unwrap();
        let mut nu = vec![0.0; chain.dim()];
        nu[chain.index_of(start & ((1 << n) - 1)).unwrap()] = 1.0;
        let law = propagate(&chain, &nu, &[t]).unwrap().remove(0);
        prop_assert!(law.iter().all(|&w| w >= -1e-15));
        prop_assert!((law.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }

    /// Every simulated flip is allowed by the constraint at the time it happens.
    #[test]
    fn simulated_flips_are_legal(n in 2usize..9, q in 0.05f64..0.95, start in 0u32..256, seed: u64, empty: bool) {
        let bc = if empty { BoundaryCondition::Empty } else { BoundaryCondition::Filled };
        let r = Region::new(Arc::new(Volume::segment(n).unwrap()), bc).unwrap();
        let spec = ModelSpec::fa1f(q).unwrap();
        let allowed = region_constraint(&r, &spec);
        let initial = bits(start, n);
        let traj = simulate(&r, &spec, &initial, &[1.0, 3.0], &mut replica_rng(seed, 0));
        prop_assert!(traj.replay_matches());
        let mut state = initial;
        for e in &traj.events {
            prop_assert!(allowed(encode(&state), e.site));
            prop_assert_eq!(state[e.site], e.old);
            state[e.site] = e.new;
        }
    }

    /// The exponential fit recovers the rate of a clean exponential.
    #[test]
    fn fit_recovers_rate(rate in 0.05f64..2.0, amp in 0.01f64..10.0, negative: bool) {
        let sign = if negative { -1.0 } else { 1.0 };
        let times: Vec<f64> = (0..12).map(|k| 0.2 * f64::from(k) / rate).collect();
        let s = SeriesEstimate {
            means: times.iter().map(|t| sign * amp * (-rate * t).exp()).collect(),
            stderrs: vec![0.0; times.len()],
            times,
            replicas: 1,
        };
        let e = fit_decay(&s, 1.0).exponential.unwrap();
        prop_assert!((e.c * rate - 1.0).abs() < 1e-6);
        prop_assert!(e.r_squared > 0.999_999);
    }

    /// Any `q` outside `[0,1]` is rejected; any inside is accepted.
    #[test]
    fn config_validates_q(q in -2.0f64..3.0) {
        let parsed = RunConfig::parse(&format!("{{\"q\": {q}}}"));
        prop_assert_eq!(parsed.is_ok(), (0.0..=1.0).contains(&q));
    }

    /// Partitions of lattice balls meet every block property, halves included.
    #[test]
    fn ball_partitions_are_valid(dim in 1usize..4, radius in 2usize..9, ell in 1u32..4) {
        prop_assume!(2 * ell as usize <= radius);
        let (v, _) = Volume::lattice_ball(dim, radius).unwrap();
        let g = v.host();
        let p = partition_cover(g, v.sites(), ell).unwrap();
        let p = p.halve_blocks(g).unwrap_or(p);
        prop_assert!(p.violations(g).is_empty(), "{:?}", p.violations(g));
    }
}

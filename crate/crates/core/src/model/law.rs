use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Configuration, ModelError, Region, Xi};

/// Law `ν` of the initial configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialLaw {
    /// Independent sites, each filled with probability `fill`.
    Bernoulli { fill: f64 },
    /// A fixed configuration in local order.
    Dirac(Vec<u8>),
    /// Site `i` empty iff `i % spacing == 0`, local order.
    PeriodicVacancies { spacing: usize },
}

impl InitialLaw {
    pub fn validate(&self, volume_len: usize) -> Result<(), ModelError> {
        match self {
            InitialLaw::Bernoulli { fill } if !(0.0..=1.0).contains(fill) => {
                Err(ModelError::FillProbability(*fill))
            }
            InitialLaw::Dirac(occ) if occ.len() != volume_len => Err(ModelError::LengthMismatch {
                got: occ.len(),
                want: volume_len,
            }),
            InitialLaw::Dirac(occ) => match occ.iter().position(|&v| v > 1) {
                Some(i) => Err(ModelError::BadOccupation(i)),
                None => Ok(()),
            },
            InitialLaw::PeriodicVacancies { spacing: 0 } => Err(ModelError::ZeroSpacing),
            _ => Ok(()),
        }
    }

    pub fn is_deterministic(&self) -> bool {
        !matches!(self, InitialLaw::Bernoulli { fill } if *fill > 0.0 && *fill < 1.0)
    }

    /// The configuration of a Dirac or periodic law.
    pub fn fixed_configuration(&self, len: usize) -> Option<Vec<u8>> {
        match self {
            InitialLaw::Bernoulli { .. } => None,
            InitialLaw::Dirac(eta) => Some(eta.clone()),
            InitialLaw::PeriodicVacancies { spacing } => {
                Some((0..len).map(|i| u8::from(i % spacing != 0)).collect())
            }
        }
    }

    /// One draw, written into `occ`.
    pub fn sample_into<R: Rng + ?Sized>(&self, occ: &mut [u8], rng: &mut R) {
        match self {
            InitialLaw::Bernoulli { fill } => {
                for v in occ.iter_mut() {
                    *v = u8::from(rng.random::<f64>() < *fill);
                }
            }
            InitialLaw::Dirac(eta) => occ.copy_from_slice(eta),
            InitialLaw::PeriodicVacancies { spacing } => {
                for (i, v) in occ.iter_mut().enumerate() {
                    *v = u8::from(i % spacing != 0);
                }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, region: &Arc<Region>, rng: &mut R) -> Configuration {
        let mut occ = vec![0u8; region.len()];
        self.sample_into(&mut occ, rng);
        Configuration::new(Arc::clone(region), occ).expect("validated law")
    }

    /// Probability of a full configuration, for exact averaging.
    pub fn probability(&self, occ: &[u8]) -> f64 {
        match self {
            InitialLaw::Bernoulli { fill } => occ
                .iter()
                .map(|&v| if v == 1 { *fill } else { 1.0 - fill })
                .product(),
            InitialLaw::Dirac(eta) => f64::from(u8::from(eta == occ)),
            InitialLaw::PeriodicVacancies { spacing } => f64::from(u8::from(
                occ.iter()
                    .enumerate()
                    .all(|(i, &v)| v == u8::from(i % spacing != 0)),
            )),
        }
    }
}

/// Upper bound on `sup_x E_ν(θ^{ξ^x})`.
///
/// Bernoulli laws use `1/(1 - fill·θ)` (infinite when `fill·θ >= 1`);
/// deterministic laws use `θ^{max_x ξ^x}` evaluated on `region`.
pub fn kappa_bound(law: &InitialLaw, theta: f64, region: &Arc<Region>) -> f64 {
    match law {
        InitialLaw::Bernoulli { fill } => {
            let r = fill * theta;
            if r < 1.0 {
                1.0 / (1.0 - r)
            } else {
                f64::INFINITY
            }
        }
        _ => {
            let occ = law.fixed_configuration(region.len()).expect("deterministic law");
            let conf = Configuration::new(Arc::clone(region), occ).expect("validated law");
            (0..region.len())
                .map(|x| conf.xi(x))
                .max()
                .unwrap_or(Xi::Finite(0))
                .theta_pow(theta)
        }
    }
}

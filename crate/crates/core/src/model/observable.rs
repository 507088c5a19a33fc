use serde::Serialize;

use super::{ModelError, ModelSpec};

/// Local function given by a truth table over its support.
///
/// `support` holds local site indices; entry `k` of `table` is the value on
/// the support state whose bit `j` equals the occupation of `support[j]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Observable {
    support: Vec<usize>,
    table: Vec<f64>,
}

impl Observable {
    pub const MAX_SUPPORT: usize = 20;

    pub fn new(support: Vec<usize>, table: Vec<f64>, volume_len: usize) -> Result<Self, ModelError> {
        if support.len() > Self::MAX_SUPPORT {
            return Err(ModelError::SupportTooLarge(support.len()));
        }
        let want = 1usize << support.len();
        if table.len() != want {
            return Err(ModelError::TableLength {
                got: table.len(),
                want,
            });
        }
        for (i, &x) in support.iter().enumerate() {
            if x >= volume_len {
                return Err(ModelError::SupportOutsideVolume(x));
            }
            if support[..i].contains(&x) {
                return Err(ModelError::SupportRepeated(x));
            }
        }
        Ok(Self { support, table })
    }

    pub fn constant(c: f64) -> Self {
        Self {
            support: Vec::new(),
            table: vec![c],
        }
    }

    /// `1 - σ(x) - q`, the centred vacancy indicator.
    pub fn vacancy_at(x: usize, q: f64, volume_len: usize) -> Result<Self, ModelError> {
        Self::new(vec![x], vec![1.0 - q, -q], volume_len)
    }

    /// `1 - σ(x)`.
    pub fn vacancy_indicator(x: usize, volume_len: usize) -> Result<Self, ModelError> {
        Self::new(vec![x], vec![1.0, 0.0], volume_len)
    }

    /// `∏ (1 - σ(x))` over `sites`.
    pub fn all_empty(sites: &[usize], volume_len: usize) -> Result<Self, ModelError> {
        let mut table = vec![0.0; 1 << sites.len()];
        table[0] = 1.0;
        Self::new(sites.to_vec(), table, volume_len)
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    #[inline]
    pub fn eval(&self, occ: &[u8]) -> f64 {
        let mut k = 0usize;
        for (j, &x) in self.support.iter().enumerate() {
            k |= usize::from(occ[x]) << j;
        }
        self.table[k]
    }

    /// Exact average under the product measure with `P(filled) = p`.
    pub fn mu_mean(&self, spec: &ModelSpec) -> f64 {
        self.mean_under(spec.p())
    }

    /// Exact average when each support site is filled with probability
    /// `fill`, independently.
    pub fn mean_under(&self, fill: f64) -> f64 {
        self.table
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                let ones = k.count_ones() as i32;
                let zeros = self.support.len() as i32 - ones;
                v * fill.powi(ones) * (1.0 - fill).powi(zeros)
            })
            .sum()
    }

    pub fn sup_norm(&self) -> f64 {
        self.table.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Same table shifted so that its average under `spec` is zero.
    pub fn centered(&self, spec: &ModelSpec) -> Self {
        let m = self.mu_mean(spec);
        Self {
            support: self.support.clone(),
            table: self.table.iter().map(|v| v - m).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_site_marginal() {
        let spec = ModelSpec::fa1f(0.3).unwrap();
        let f = Observable::vacancy_indicator(2, 5).unwrap();
        assert!((f.mu_mean(&spec) - 0.3).abs() < 1e-15);
        let c = Observable::vacancy_at(2, 0.3, 5).unwrap();
        assert!(c.mu_mean(&spec).abs() < 1e-15);
    }

    #[test]
    fn constant_and_product() {
        let spec = ModelSpec::fa1f(0.4).unwrap();
        assert_eq!(Observable::constant(1.0).mu_mean(&spec), 1.0);
        let f = Observable::all_empty(&[0, 3], 4).unwrap();
        assert!((f.mu_mean(&spec) - 0.16).abs() < 1e-15);
    }

    #[test]
    fn eval_reads_bits_in_support_order() {
        let f = Observable::new(vec![2, 0], vec![0.0, 1.0, 2.0, 3.0], 3).unwrap();
        assert_eq!(f.eval(&[0, 1, 1]), 1.0);
        assert_eq!(f.eval(&[1, 1, 0]), 2.0);
    }

    #[test]
    fn validation() {
        assert!(matches!(
            Observable::new((0..21).collect(), vec![0.0; 1 << 21], 30),
            Err(ModelError::SupportTooLarge(21))
        ));
        assert!(matches!(
            Observable::new(vec![0], vec![0.0; 3], 3),
            Err(ModelError::TableLength { got: 3, want: 2 })
        ));
        assert!(Observable::new(vec![5], vec![0.0; 2], 3).is_err());
        assert!(Observable::new(vec![1, 1], vec![0.0; 4], 3).is_err());
    }
}

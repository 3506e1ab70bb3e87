use serde::{Deserialize, Serialize};

use crate::error::{AtrelError, Result};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Product Gaussian kernel `K_h(z) = ∏ⱼ K(zⱼ / hⱼ)` with `K` the standard
/// normal density. The scaling is the unnormalized `K(z/h)` form, so only
/// ratios of kernel sums are bandwidth-invariant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    bandwidth: Vec<f64>,
}

impl KernelSpec {
    pub fn gaussian(bandwidth: Vec<f64>) -> Result<Self> {
        if bandwidth.is_empty() {
            return Err(AtrelError::Config("kernel bandwidth must have at least one coordinate".into()));
        }
        if let Some(h) = bandwidth.iter().find(|h| !(h.is_finite() && **h > 0.0)) {
            return Err(AtrelError::Config(format!("kernel bandwidth must be positive, got {h}")));
        }
        Ok(Self { bandwidth })
    }

    pub fn bandwidth(&self) -> &[f64] {
        &self.bandwidth
    }

    pub fn dim(&self) -> usize {
        self.bandwidth.len()
    }

    /// Same kernel with every bandwidth multiplied by `factor`.
    pub fn widened(&self, factor: f64) -> Self {
        Self {
            bandwidth: self.bandwidth.iter().map(|h| h * factor).collect(),
        }
    }

    /// Kernel weight between `z` and the evaluation point `z0`.
    #[inline]
    pub fn weight(&self, z: &[f64], z0: &[f64]) -> f64 {
        debug_assert_eq!(z.len(), self.bandwidth.len());
        debug_assert_eq!(z0.len(), self.bandwidth.len());
        let mut q = 0.0;
        for ((zi, z0i), h) in z.iter().zip(z0).zip(&self.bandwidth) {
            let u = (zi - z0i) / h;
            q += u * u;
        }
        INV_SQRT_2PI.powi(self.bandwidth.len() as i32) * (-0.5 * q).exp()
    }

    /// Checked variant of [`KernelSpec::weight`] validating dimensions.
    pub fn try_weight(&self, z: &[f64], z0: &[f64]) -> Result<f64> {
        if z.len() != self.dim() || z0.len() != self.dim() {
            return Err(AtrelError::Config(format!(
                "kernel dimension {} does not match points of length {} and {}",
                self.dim(),
                z.len(),
                z0.len()
            )));
        }
        Ok(self.weight(z, z0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn standard_density_values() {
        let k = KernelSpec::gaussian(vec![1.0]).unwrap();
        assert_relative_eq!(k.weight(&[0.0], &[0.0]), 0.398942, epsilon = 1e-6);
        assert_relative_eq!(k.weight(&[1.0], &[0.0]), 0.241971, epsilon = 1e-6);
        let k2 = KernelSpec::gaussian(vec![2.0]).unwrap();
        assert_eq!(k2.weight(&[2.0], &[0.0]), k.weight(&[1.0], &[0.0]));
    }

    #[test]
    fn rejects_bad_bandwidth() {
        assert!(matches!(KernelSpec::gaussian(vec![0.0]), Err(AtrelError::Config(_))));
        assert!(matches!(KernelSpec::gaussian(vec![1.0, -2.0]), Err(AtrelError::Config(_))));
        assert!(KernelSpec::gaussian(vec![]).is_err());
        let k = KernelSpec::gaussian(vec![1.0]).unwrap();
        assert!(k.try_weight(&[0.0, 1.0], &[0.0]).is_err());
    }

    #[test]
    fn product_of_coordinates() {
        let k = KernelSpec::gaussian(vec![0.5, 2.0]).unwrap();
        let k1 = KernelSpec::gaussian(vec![0.5]).unwrap();
        let k2 = KernelSpec::gaussian(vec![2.0]).unwrap();
        let w = k.weight(&[0.3, -1.0], &[0.0, 0.5]);
        assert_relative_eq!(w, k1.weight(&[0.3], &[0.0]) * k2.weight(&[-1.0], &[0.5]), max_relative = 1e-14);
    }

    #[test]
    fn integrates_to_one() {
        let k = KernelSpec::gaussian(vec![1.0]).unwrap();
        let step = 1e-3;
        let total: f64 = (-10_000..=10_000).map(|i| k.weight(&[i as f64 * step], &[0.0]) * step).sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-9);
    }

    proptest! {
        #[test]
        fn symmetric_and_decreasing(z in -5.0f64..5.0, z0 in -5.0f64..5.0, h in 0.05f64..3.0) {
            let k = KernelSpec::gaussian(vec![h]).unwrap();
            prop_assert_eq!(k.weight(&[z], &[z0]), k.weight(&[z0], &[z]));
            let w = k.weight(&[z], &[z0]);
            prop_assert!(w > 0.0 || (z - z0).abs() / h > 30.0);
            prop_assert!(w <= k.weight(&[z0], &[z0]));
            let farther = z0 + (z - z0) * 1.5 + (z - z0).signum() * 0.01;
            if (z - z0).abs() / h < 20.0 {
                prop_assert!(k.weight(&[farther], &[z0]) < w);
            }
        }
    }
}

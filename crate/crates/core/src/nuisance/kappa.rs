use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{AtrelError, Result};
use crate::numerics::design::{dot, rank_one_upper, symmetric_from_upper};
use crate::numerics::solve::solve_linear;
use crate::numerics::{Link, Rows};

/// `Ĵ_β = N⁻¹ Σ ġ(Aᵢᵀβ) AᵢAᵢᵀ` over the target rows.
pub fn compute_jhat(beta: &[f64], target_a: &Rows, link: Link) -> DMatrix<f64> {
    let d = target_a.ncols();
    let mut acc = vec![0.0; d * d];
    for row in target_a.iter_rows() {
        rank_one_upper(&mut acc, d, row, link.deriv(dot(row, beta)));
    }
    symmetric_from_upper(&acc, d, 1.0 / target_a.nrows().max(1) as f64)
}

/// Influence weights `κ(A) = cᵀĴ⁻¹A` of a loading `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaWeights {
    pub c: Vec<f64>,
    pub jhat: DMatrix<f64>,
    /// `Ĵ⁻¹c`; equal to `(cᵀĴ⁻¹)ᵀ` because `Ĵ` is symmetric.
    pub direction: Vec<f64>,
}

impl KappaWeights {
    pub fn new(c: &[f64], jhat: DMatrix<f64>) -> Result<Self> {
        if c.len() != jhat.nrows() {
            return Err(AtrelError::Config(format!(
                "loading of length {} for a {}-dimensional working model",
                c.len(),
                jhat.nrows()
            )));
        }
        let direction = solve_linear(&jhat, &DVector::from_column_slice(c))
            .ok_or_else(|| AtrelError::Data("information matrix of the working model is singular".into()))?;
        Ok(Self {
            c: c.to_vec(),
            jhat,
            direction: direction.iter().copied().collect(),
        })
    }

    #[inline]
    pub fn kappa(&self, a: &[f64]) -> f64 {
        dot(&self.direction, a)
    }

    pub fn values(&self, rows: &Rows) -> Vec<f64> {
        rows.iter_rows().map(|a| self.kappa(a)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitRule {
    Sign,
    Median,
}

/// Two-group split of κ at a threshold; group 0 holds `κ ≥ threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignPartition {
    pub threshold: f64,
    pub rule: SplitRule,
}

impl SignPartition {
    #[inline]
    pub fn group(&self, kappa: f64) -> usize {
        if kappa >= self.threshold {
            0
        } else {
            1
        }
    }

    /// Whether a row enters the calibration sums of its group. Under a median
    /// split the few rows whose κ has the minority sign are left out, so each
    /// group's weights keep one sign; they still use their group's components.
    #[inline]
    pub fn calibrates(&self, kappa: f64) -> bool {
        self.rule == SplitRule::Sign || kappa * self.threshold >= 0.0
    }
}

/// Splits indices by the sign of κ (ties at zero go to the nonnegative group).
/// With `median_split` set and at most a `near_fraction` share of κ on the
/// minority side of zero, the split is at the median instead.
pub fn sign_partition(kappa: &[f64], median_split: bool, near_fraction: f64) -> (SignPartition, [Vec<usize>; 2]) {
    let negatives = kappa.iter().filter(|&&k| k < 0.0).count();
    let minority = negatives.min(kappa.len() - negatives);
    let nearly_single = minority as f64 <= near_fraction * kappa.len() as f64;
    let partition = if median_split && !kappa.is_empty() && nearly_single {
        let mut sorted = kappa.to_vec();
        sorted.sort_by(f64::total_cmp);
        let m = sorted.len();
        let median = if m % 2 == 1 {
            sorted[m / 2]
        } else {
            0.5 * (sorted[m / 2 - 1] + sorted[m / 2])
        };
        SignPartition {
            threshold: median,
            rule: SplitRule::Median,
        }
    } else {
        SignPartition {
            threshold: 0.0,
            rule: SplitRule::Sign,
        }
    };
    let mut groups = [Vec::new(), Vec::new()];
    for (i, &k) in kappa.iter().enumerate() {
        groups[partition.group(k)].push(i);
    }
    (partition, groups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn identity_jhat_is_gram() {
        let a = Rows::from_rows(&[[1.0, 2.0], [1.0, -1.0]]).unwrap();
        let j = compute_jhat(&[5.0, -3.0], &a, Link::Identity);
        assert_eq!(j, DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 2.5]));
    }

    #[test]
    fn logit_intercept_jhat() {
        let a = Rows::from_rows(&[[1.0], [1.0]]).unwrap();
        assert_eq!(compute_jhat(&[0.0], &a, Link::Logit)[(0, 0)], 0.25);
    }

    #[test]
    fn jhat_matches_central_differences() {
        let a = Rows::from_rows(&[[1.0, 0.3, -1.0], [1.0, -0.7, 0.2], [1.0, 1.1, 0.5], [1.0, 0.0, 2.0]]).unwrap();
        let beta = [0.2, -0.5, 0.4];
        let j = compute_jhat(&beta, &a, Link::Logit);
        let mean_g = |b: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; 3];
            for r in a.iter_rows() {
                let g = Link::Logit.eval(dot(r, b));
                for k in 0..3 {
                    out[k] += r[k] * g / 4.0;
                }
            }
            out
        };
        let step = 1e-5;
        for col in 0..3 {
            let mut up = beta;
            let mut dn = beta;
            up[col] += step;
            dn[col] -= step;
            let (fu, fd) = (mean_g(&up), mean_g(&dn));
            for row in 0..3 {
                let fd_val = (fu[row] - fd[row]) / (2.0 * step);
                assert!((fd_val - j[(row, col)]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn partition_examples() {
        let (p, g) = sign_partition(&[1.0, 2.0, -1.0], true, 0.0);
        assert_eq!(p.rule, SplitRule::Sign);
        assert_eq!(g, [vec![0, 1], vec![2]]);
        let (p, g) = sign_partition(&[1.0, 2.0, 3.0, 4.0], true, 0.0);
        assert_eq!(p.rule, SplitRule::Median);
        assert_eq!(g, [vec![2, 3], vec![0, 1]]);
        let (_, g) = sign_partition(&[1.0, 2.0, 3.0, 4.0], false, 0.0);
        assert_eq!(g, [vec![0, 1, 2, 3], vec![]]);
        let (_, g) = sign_partition(&[0.0, -1.0], false, 0.0);
        assert_eq!(g, [vec![0], vec![1]]);
        // one negative in ten counts as single-signed at a 10% share
        let kappa = [-0.1, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0];
        assert_eq!(sign_partition(&kappa, true, 0.05).0.rule, SplitRule::Sign);
        let (p, g) = sign_partition(&kappa, true, 0.1);
        assert_eq!(p.rule, SplitRule::Median);
        assert_eq!(g[1], vec![0, 1, 2, 3, 4]);
        assert!(!p.calibrates(-0.1) && p.calibrates(1.0));
        assert!(sign_partition(&kappa, false, 0.1).0.calibrates(-0.1));
    }

    proptest! {
        #[test]
        fn kappa_is_linear(a1 in prop::collection::vec(-5.0f64..5.0, 3), a2 in prop::collection::vec(-5.0f64..5.0, 3)) {
            let rows = Rows::from_rows(&[[1.0, 0.5, 0.1], [1.0, -1.0, 0.3], [1.0, 0.2, -2.0]]).unwrap();
            let k = KappaWeights::new(&[0.0, 1.0, 0.0], compute_jhat(&[0.1, 0.2, 0.3], &rows, Link::Logit)).unwrap();
            let sum: Vec<f64> = a1.iter().zip(&a2).map(|(x, y)| x + y).collect();
            prop_assert!((k.kappa(&sum) - k.kappa(&a1) - k.kappa(&a2)).abs() < 1e-9 * (1.0 + k.kappa(&sum).abs()));
        }

        #[test]
        fn jhat_symmetric(beta in prop::collection::vec(-2.0f64..2.0, 2), xs in prop::collection::vec(-3.0f64..3.0, 5)) {
            let rows: Vec<[f64; 2]> = xs.iter().map(|&x| [1.0, x]).collect();
            let j = compute_jhat(&beta, &Rows::from_rows(&rows).unwrap(), Link::Logit);
            prop_assert_eq!(j[(0, 1)], j[(1, 0)]);
        }

        #[test]
        fn partition_groups_single_signed(kappa in prop::collection::vec(-3.0f64..3.0, 1..40)) {
            let (p, g) = sign_partition(&kappa, true, 0.0);
            if p.rule == SplitRule::Sign {
                prop_assert!(g[0].iter().all(|&i| kappa[i] >= 0.0));
                prop_assert!(g[1].iter().all(|&i| kappa[i] < 0.0));
            }
            prop_assert_eq!(g[0].len() + g[1].len(), kappa.len());
        }
    }

    #[test]
    fn direction_solves_system() {
        let rows = Rows::from_rows(&[[1.0, 0.5], [1.0, -1.0], [1.0, 2.0]]).unwrap();
        let j = compute_jhat(&[0.0, 0.0], &rows, Link::Identity);
        let k = KappaWeights::new(&[1.0, 0.0], j.clone()).unwrap();
        let back = &j * DVector::from_column_slice(&k.direction);
        assert_relative_eq!(back[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(back[1], 0.0, epsilon = 1e-12);
    }
}

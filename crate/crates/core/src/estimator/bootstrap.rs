use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{AtrelError, Result};
use crate::numerics::basis::quantile_sorted;
use crate::rng::{unit_rng, DOMAIN_BOOTSTRAP};

/// Source and target row indices of resample `b`, drawn with replacement
/// independently within each population.
pub fn resample_indices(seed: u64, b: usize, n: usize, big_n: usize) -> (Vec<usize>, Vec<usize>) {
    let mut rng = unit_rng(seed, DOMAIN_BOOTSTRAP, b as u64);
    let src = (0..n).map(|_| rng.gen_range(0..n)).collect();
    let tgt = (0..big_n).map(|_| rng.gen_range(0..big_n)).collect();
    (src, tgt)
}

/// Statistics of every successful resample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapDraws {
    pub reps: usize,
    pub failures: usize,
    /// `draws[j]` holds component `j` of the statistic across successful resamples.
    pub draws: Vec<Vec<f64>>,
}

impl BootstrapDraws {
    pub fn failure_fraction(&self) -> f64 {
        if self.reps == 0 {
            0.0
        } else {
            self.failures as f64 / self.reps as f64
        }
    }

    pub fn intervals(&self, level: f64) -> Vec<(f64, f64)> {
        self.draws.iter().map(|d| percentile_interval(d, level)).collect()
    }
}

/// Runs `statistic(b, source_indices, target_indices)` on `reps` resamples in
/// parallel. Failed resamples are dropped and counted; more than
/// `max_failure_fraction` failures is an inference error.
pub fn percentile_bootstrap<F>(
    n: usize,
    big_n: usize,
    reps: usize,
    seed: u64,
    max_failure_fraction: f64,
    statistic: F,
) -> Result<BootstrapDraws>
where
    F: Fn(usize, &[usize], &[usize]) -> Result<Vec<f64>> + Sync,
{
    let results: Vec<Result<Vec<f64>>> = (0..reps)
        .into_par_iter()
        .map(|b| {
            let (src, tgt) = resample_indices(seed, b, n, big_n);
            statistic(b, &src, &tgt)
        })
        .collect();
    let mut failures = 0;
    let mut draws: Vec<Vec<f64>> = Vec::new();
    for r in results {
        match r {
            Ok(v) => {
                if draws.is_empty() {
                    draws = vec![Vec::with_capacity(reps); v.len()];
                }
                for (d, x) in draws.iter_mut().zip(v) {
                    d.push(x);
                }
            }
            Err(e) => {
                log::debug!("bootstrap resample dropped: {e}");
                failures += 1;
            }
        }
    }
    if reps > 0 && failures as f64 > max_failure_fraction * reps as f64 {
        return Err(AtrelError::Inference(format!(
            "{failures} of {reps} bootstrap resamples failed (limit {:.0}%)",
            100.0 * max_failure_fraction
        )));
    }
    Ok(BootstrapDraws { reps, failures, draws })
}

/// Equal-tailed percentile interval (type-7 quantiles).
pub fn percentile_interval(draws: &[f64], level: f64) -> (f64, f64) {
    if draws.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let tail = 0.5 * (1.0 - level);
    (quantile_sorted(&sorted, tail), quantile_sorted(&sorted, 1.0 - tail))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indices_in_range_and_reproducible() {
        let (s, t) = resample_indices(3, 0, 10, 20);
        assert_eq!(s.len(), 10);
        assert_eq!(t.len(), 20);
        assert!(s.iter().all(|&i| i < 10) && t.iter().all(|&i| i < 20));
        assert_eq!(resample_indices(3, 0, 10, 20), (s, t));
        assert_ne!(resample_indices(3, 1, 10, 20).0, resample_indices(3, 0, 10, 20).0);
    }

    #[test]
    fn failures_dropped_and_limited() {
        let ok = percentile_bootstrap(5, 5, 20, 1, 0.1, |b, _, _| {
            if b == 0 {
                Err(AtrelError::Inference("x".into()))
            } else {
                Ok(vec![b as f64])
            }
        })
        .unwrap();
        assert_eq!(ok.failures, 1);
        assert_eq!(ok.draws[0].len(), 19);
        let bad = percentile_bootstrap(5, 5, 20, 1, 0.1, |b, _, _| {
            if b < 3 {
                Err(AtrelError::Inference("x".into()))
            } else {
                Ok(vec![0.0])
            }
        });
        assert!(matches!(bad, Err(AtrelError::Inference(_))));
    }

    #[test]
    fn percentile_endpoints() {
        let d: Vec<f64> = (0..=100).map(f64::from).collect();
        let (lo, hi) = percentile_interval(&d, 0.9);
        assert!((lo - 5.0).abs() < 1e-12 && (hi - 95.0).abs() < 1e-12);
    }
}

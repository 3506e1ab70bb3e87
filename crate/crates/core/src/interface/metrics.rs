//! Transfer-quality metrics of an estimated working model against a
//! validation benchmark `β_valid` on the target covariates.

use serde::{Deserialize, Serialize};

use crate::error::{AtrelError, Result};
use crate::numerics::{Link, Rows};

/// Area under the ROC curve, Mann–Whitney form with half credit for ties.
pub fn metric_auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(AtrelError::Data("scores and labels differ in length".into()));
    }
    if labels.iter().any(|&l| l != 0.0 && l != 1.0) {
        return Err(AtrelError::Data("labels must be 0 or 1".into()));
    }
    let positives = labels.iter().filter(|&&l| l == 1.0).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(AtrelError::UndefinedMetric("AUC needs both classes".into()));
    }
    // midranks
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        order[i..=j].iter().for_each(|&k| ranks[k] = mid);
        i = j + 1;
    }
    let rank_sum: f64 = (0..scores.len()).filter(|&k| labels[k] == 1.0).map(|k| ranks[k]).sum();
    let (p, q) = (positives as f64, negatives as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}

fn predictions(beta: &[f64], a: &Rows, link: Link) -> Result<Vec<f64>> {
    if beta.len() != a.ncols() {
        return Err(AtrelError::Data(format!(
            "β has {} entries, A has {} columns",
            beta.len(),
            a.ncols()
        )));
    }
    Ok((0..a.nrows()).map(|i| link.eval(a.dot_row(i, beta))).collect())
}

/// `Σ{g(Aᵀβ_valid) - g(Aᵀβ̂)}² / Σ g(Aᵀβ_valid)²` over the target rows.
pub fn metric_rmspe(beta_hat: &[f64], beta_valid: &[f64], target_a: &Rows, link: Link) -> Result<f64> {
    let hat = predictions(beta_hat, target_a, link)?;
    let valid = predictions(beta_valid, target_a, link)?;
    let den: f64 = valid.iter().map(|v| v * v).sum();
    if den == 0.0 {
        return Err(AtrelError::UndefinedMetric("validation predictions are all zero".into()));
    }
    Ok(hat.iter().zip(&valid).map(|(h, v)| (v - h).powi(2)).sum::<f64>() / den)
}

/// `I{g(Aᵀβ) ≥ mean of g(Aᵀβ)}` on every row.
fn classify(beta: &[f64], a: &Rows, link: Link) -> Result<Vec<bool>> {
    let p = predictions(beta, a, link)?;
    let mean = p.iter().sum::<f64>() / p.len() as f64;
    let c: Vec<bool> = p.iter().map(|&v| v >= mean).collect();
    if c.iter().all(|&v| v) || c.iter().all(|&v| !v) {
        return Err(AtrelError::UndefinedMetric("classifier is constant on the target rows".into()));
    }
    Ok(c)
}

/// Pearson correlation of the two mean-thresholded classifiers.
pub fn metric_cc(beta_hat: &[f64], beta_valid: &[f64], target_a: &Rows, link: Link) -> Result<f64> {
    let u = classify(beta_hat, target_a, link)?;
    let v = classify(beta_valid, target_a, link)?;
    let m = u.len() as f64;
    let pu = u.iter().filter(|&&b| b).count() as f64 / m;
    let pv = v.iter().filter(|&&b| b).count() as f64 / m;
    let puv = u.iter().zip(&v).filter(|(a, b)| **a && **b).count() as f64 / m;
    let r = (puv - pu * pv) / (pu * (1.0 - pu) * pv * (1.0 - pv)).sqrt();
    Ok(r.clamp(-1.0, 1.0))
}

/// Share of target rows where the two mean-thresholded classifiers disagree.
pub fn metric_fcr(beta_hat: &[f64], beta_valid: &[f64], target_a: &Rows, link: Link) -> Result<f64> {
    let u = classify(beta_hat, target_a, link)?;
    let v = classify(beta_valid, target_a, link)?;
    Ok(u.iter().zip(&v).filter(|(a, b)| a != b).count() as f64 / u.len() as f64)
}

/// Labeled validation rows used for the AUC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    pub a: Rows,
    pub labels: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationInput {
    pub beta_hat: Vec<f64>,
    pub beta_valid: Vec<f64>,
    /// Target rows of `A`, constant column included.
    pub target_a: Rows,
    pub validation: Option<Validation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rmspe: f64,
    pub cc: f64,
    pub fcr: f64,
    pub auc: Option<f64>,
}

pub fn evaluate_metrics(input: &EvaluationInput, link: Link) -> Result<MetricReport> {
    let d = input.target_a.ncols();
    if input.beta_hat.len() != d || input.beta_valid.len() != d {
        return Err(AtrelError::Data(format!("coefficient vectors must have {d} entries")));
    }
    let auc = match &input.validation {
        Some(v) => Some(metric_auc(&predictions(&input.beta_hat, &v.a, link)?, &v.labels)?),
        None => None,
    };
    Ok(MetricReport {
        rmspe: metric_rmspe(&input.beta_hat, &input.beta_valid, &input.target_a, link)?,
        cc: metric_cc(&input.beta_hat, &input.beta_valid, &input.target_a, link)?,
        fcr: metric_fcr(&input.beta_hat, &input.beta_valid, &input.target_a, link)?,
        auc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Counts concordant (positive, negative) pairs directly.
    fn auc_pairs(scores: &[f64], labels: &[f64]) -> f64 {
        let mut credit = 0.0;
        let mut pairs = 0.0;
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if labels[i] == 1.0 && labels[j] == 0.0 {
                    pairs += 1.0;
                    credit += if scores[i] > scores[j] {
                        1.0
                    } else if scores[i] == scores[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        credit / pairs
    }

    fn rows(v: &[f64]) -> Rows {
        Rows::from_rows(&v.iter().map(|&x| [1.0, x]).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn auc_examples() {
        assert_eq!(metric_auc(&[0.9, 0.8, 0.1], &[1.0, 1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(metric_auc(&[0.3; 4], &[1.0, 0.0, 1.0, 0.0]).unwrap(), 0.5);
        let (s, l) = ([0.1, 0.9, 0.5, 0.4], [1.0, 0.0, 1.0, 0.0]);
        assert_eq!(metric_auc(&s, &l).unwrap(), auc_pairs(&s, &l));
        assert!(matches!(metric_auc(&[0.1, 0.2], &[1.0, 1.0]), Err(AtrelError::UndefinedMetric(_))));
    }

    #[test]
    fn rmspe_examples() {
        let a = Rows::from_rows(&[[1.0]]).unwrap();
        assert_eq!(metric_rmspe(&[2.0], &[1.0], &a, Link::Identity).unwrap(), 1.0);
        let a = rows(&[-1.0, -0.2, 0.3, 0.8, 2.0]);
        let (bh, bv) = ([0.1, 0.7], [-0.2, 1.1]);
        assert_eq!(metric_rmspe(&bv, &bv, &a, Link::Logit).unwrap(), 0.0);
        let sig = |t: f64| 1.0 / (1.0 + (-t).exp());
        let (mut num, mut den) = (0.0, 0.0);
        for x in [-1.0, -0.2, 0.3, 0.8, 2.0] {
            let (h, v) = (sig(bh[0] + bh[1] * x), sig(bv[0] + bv[1] * x));
            num += (v - h) * (v - h);
            den += v * v;
        }
        assert!((metric_rmspe(&bh, &bv, &a, Link::Logit).unwrap() - num / den).abs() < 1e-12);
        assert!(metric_rmspe(&[1.0, 0.0], &[0.0, 0.0], &a, Link::Identity).is_err());
    }

    fn pearson(u: &[f64], v: &[f64]) -> f64 {
        let m = u.len() as f64;
        let (mu, mv) = (u.iter().sum::<f64>() / m, v.iter().sum::<f64>() / m);
        let cov: f64 = u.iter().zip(v).map(|(a, b)| (a - mu) * (b - mv)).sum();
        let su: f64 = u.iter().map(|a| (a - mu).powi(2)).sum();
        let sv: f64 = v.iter().map(|b| (b - mv).powi(2)).sum();
        cov / (su * sv).sqrt()
    }

    #[test]
    fn cc_and_fcr_examples() {
        let a = rows(&[-1.5, -0.5, 0.5, 1.5]);
        let b = [0.0, 1.0];
        assert_eq!(metric_cc(&b, &b, &a, Link::Identity).unwrap(), 1.0);
        assert_eq!(metric_fcr(&b, &b, &a, Link::Identity).unwrap(), 0.0);
        assert_eq!(metric_cc(&[0.0, -1.0], &b, &a, Link::Identity).unwrap(), -1.0);
        assert_eq!(metric_fcr(&[0.0, -1.0], &b, &a, Link::Identity).unwrap(), 1.0);

        let x = [-2.0, -1.0, 0.1, 0.4, 1.0, 3.0];
        let a = rows(&x);
        let (bh, bv) = ([0.0, -0.3], [0.5, 1.0]);
        // direct oracle: threshold each score vector at its mean by hand
        let ind = |b: &[f64]| {
            let s: Vec<f64> = x.iter().map(|t| b[0] + b[1] * t).collect();
            let m = s.iter().sum::<f64>() / 6.0;
            s.iter().map(|v| f64::from(*v >= m)).collect::<Vec<f64>>()
        };
        let (u, v) = (ind(&bh), ind(&bv));
        assert!((metric_cc(&bh, &bv, &a, Link::Identity).unwrap() - pearson(&u, &v)).abs() < 1e-12);
        let disagree = u.iter().zip(&v).filter(|(p, q)| p != q).count() as f64 / 6.0;
        assert_eq!(metric_fcr(&bh, &bv, &a, Link::Identity).unwrap(), disagree);
        assert!(matches!(
            metric_cc(&[1.0, 0.0], &bv, &a, Link::Identity),
            Err(AtrelError::UndefinedMetric(_))
        ));
    }

    #[test]
    fn identical_coefficients_give_perfect_report() {
        let a = rows(&[-1.0, 0.0, 1.0, 2.0]);
        let input = EvaluationInput {
            beta_hat: vec![0.2, 0.9],
            beta_valid: vec![0.2, 0.9],
            target_a: a.clone(),
            validation: Some(Validation {
                a,
                labels: vec![0.0, 0.0, 1.0, 1.0],
            }),
        };
        let r = evaluate_metrics(&input, Link::Logit).unwrap();
        assert_eq!((r.rmspe, r.cc, r.fcr, r.auc), (0.0, 1.0, 0.0, Some(1.0)));
    }

    proptest! {
        #[test]
        fn auc_matches_pair_count(v in proptest::collection::vec((0u8..6, any::<bool>()), 2..40)) {
            let scores: Vec<f64> = v.iter().map(|(s, _)| f64::from(*s)).collect();
            let labels: Vec<f64> = v.iter().map(|(_, l)| f64::from(u8::from(*l))).collect();
            prop_assume!(labels.contains(&0.0) && labels.contains(&1.0));
            let auc = metric_auc(&scores, &labels).unwrap();
            prop_assert!((0.0..=1.0).contains(&auc));
            prop_assert!((auc - auc_pairs(&scores, &labels)).abs() < 1e-12);
        }

        #[test]
        fn metric_bounds(x in proptest::collection::vec(-3.0..3.0f64, 4..30), bh in proptest::array::uniform2(-2.0..2.0f64), bv in proptest::array::uniform2(-2.0..2.0f64)) {
            let a = rows(&x);
            if let Ok(r) = metric_rmspe(&bh, &bv, &a, Link::Logit) { prop_assert!(r >= 0.0); }
            if let Ok(c) = metric_cc(&bh, &bv, &a, Link::Logit) { prop_assert!((-1.0..=1.0).contains(&c)); }
            if let Ok(f) = metric_fcr(&bh, &bv, &a, Link::Logit) { prop_assert!((0.0..=1.0).contains(&f)); }
        }
    }
}

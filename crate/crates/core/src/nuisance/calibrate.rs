//! Kernel-localized calibration of the nonparametric components.
//!
//! For one κ group and one evaluation point `z`, `r(z)` solves
//! `(1/n) Σ_src K_h(Zᵢ - z) κᵢ ω̃ᵢ [Yᵢ - g(φᵢᵀγ̂ + r)] = 0`
//! and `h(z)` solves
//! `(1/n) Σ_src K_h κ ğ(m̃) exp(ψᵀα̂ + h) = (1/N) Σ_tgt K_h κ ğ(m̃)`,
//! where `n` is the size of the training fold (all groups) and `N` the
//! target size.

use crate::error::{AtrelError, Result};
use crate::numerics::{safeguarded_newton, KernelSpec, Link};

/// Bandwidth doublings tried before a sparse neighborhood is an error.
pub const MAX_WIDENINGS: u32 = 5;
/// Minimum local weight mass of a kernel neighborhood.
pub const MIN_LOCAL_MASS: f64 = 1e-8;
/// Bandwidths are also widened while fewer than this many rows (kernel
/// weighted) sit near the evaluation point.
pub const MIN_EFFECTIVE_ROWS: f64 = 3.0;
/// Largest |r| searched under the logit link.
const LOGIT_R_LIMIT: f64 = 60.0;

/// Rows of one κ group entering the localized equations.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroupData {
    pub dim: usize,
    /// Normalizer of the source sums (training-fold size).
    pub n_train: usize,
    /// Normalizer of the target sums.
    pub n_target: usize,
    pub src_z: Vec<f64>,
    pub src_y: Vec<f64>,
    /// `φᵀγ̂`.
    pub src_offset: Vec<f64>,
    /// `κ ω̃`.
    pub src_r_weight: Vec<f64>,
    /// `κ ğ(m̃) exp(ψᵀα̂)`.
    pub src_h_weight: Vec<f64>,
    pub tgt_z: Vec<f64>,
    /// `κ ğ(m̃)`.
    pub tgt_h_weight: Vec<f64>,
    exp_neg_offset: Vec<f64>,
}

impl GroupData {
    pub fn new(dim: usize, n_train: usize, n_target: usize) -> Self {
        Self {
            dim,
            n_train,
            n_target,
            ..Default::default()
        }
    }

    pub fn push_source(&mut self, z: &[f64], y: f64, offset: f64, r_weight: f64, h_weight: f64) {
        self.src_z.extend_from_slice(z);
        self.src_y.push(y);
        self.src_offset.push(offset);
        self.src_r_weight.push(r_weight);
        self.src_h_weight.push(h_weight);
    }

    pub fn push_target(&mut self, z: &[f64], h_weight: f64) {
        self.tgt_z.extend_from_slice(z);
        self.tgt_h_weight.push(h_weight);
    }

    /// Caches `exp(-φᵀγ̂)` so logit evaluations cost one division per row.
    pub fn prepare(&mut self) {
        if self.src_offset.iter().all(|o| o.abs() < 300.0) {
            self.exp_neg_offset = self.src_offset.iter().map(|o| (-o).exp()).collect();
        } else {
            self.exp_neg_offset.clear();
        }
    }

    pub fn n_source(&self) -> usize {
        self.src_y.len()
    }

    pub fn n_target_rows(&self) -> usize {
        self.tgt_h_weight.len()
    }

    /// Whether `r` can be calibrated on this group.
    pub fn supports_r(&self, link: Link) -> bool {
        let weighted = || self.src_r_weight.iter().zip(&self.src_y).filter(|(w, _)| **w != 0.0);
        match link {
            Link::Identity => weighted().next().is_some(),
            // a logit root needs responses on both sides of the range
            Link::Logit => weighted().any(|(_, y)| *y > 0.0) && weighted().any(|(_, y)| *y < 1.0),
        }
    }

    /// Whether `h` can be calibrated on this group.
    pub fn supports_h(&self) -> bool {
        self.src_h_weight.iter().any(|w| *w != 0.0) && self.tgt_h_weight.iter().any(|w| *w != 0.0)
    }
}

/// Solution at one point; `bandwidth_factor` is the widening that was needed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointSolution {
    pub value: f64,
    pub bandwidth_factor: f64,
    /// Moment equation evaluated at `value` with the effective bandwidth.
    pub moment: f64,
    /// The root lies beyond the search limit and `value` sits at that limit.
    pub saturated: bool,
}

fn kernel_weights(kernel: &KernelSpec, factor: f64, zs: &[f64], dim: usize, z: &[f64], out: &mut Vec<f64>) {
    out.clear();
    let norm = (2.0 * std::f64::consts::PI).powf(-(dim as f64) / 2.0);
    let inv: Vec<f64> = kernel.bandwidth().iter().map(|h| 1.0 / (h * factor)).collect();
    if dim == 1 {
        let (z0, s) = (z[0], inv[0]);
        out.extend(zs.iter().map(|&zi| {
            let u = (zi - z0) * s;
            norm * (-0.5 * u * u).exp()
        }));
    } else {
        out.extend(zs.chunks_exact(dim).map(|zi| {
            let q: f64 = zi.iter().zip(z).zip(&inv).map(|((a, b), s)| ((a - b) * s).powi(2)).sum();
            norm * (-0.5 * q).exp()
        }));
    }
}

/// Kernel-weighted count of rows with nonzero weight, each row counting one
/// at zero distance.
fn effective_rows(kw: &[f64], weights: &[f64], dim: usize) -> f64 {
    let norm = (2.0 * std::f64::consts::PI).powf(-(dim as f64) / 2.0);
    kw.iter().zip(weights).filter(|(_, w)| **w != 0.0).map(|(k, _)| k).sum::<f64>() / norm
}

fn check_point(group: &GroupData, kernel: &KernelSpec, z: &[f64]) -> Result<()> {
    if z.len() != group.dim || kernel.dim() != group.dim {
        return Err(AtrelError::Config(format!(
            "evaluation point of length {} for {}-dimensional Z (kernel dimension {})",
            z.len(),
            group.dim,
            kernel.dim()
        )));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(AtrelError::Calibration {
            point: z.to_vec(),
            reason: "non-finite evaluation point".into(),
        });
    }
    Ok(())
}

fn sparse_error(z: &[f64]) -> AtrelError {
    AtrelError::Calibration {
        point: z.to_vec(),
        reason: format!("local weight mass below {MIN_LOCAL_MASS:e} after {MAX_WIDENINGS} bandwidth doublings"),
    }
}

/// Imputation moment `(1/n) Σ K κ ω̃ [Y - g(φᵀγ̂ + r)]` at `z`.
pub fn r_moment(group: &GroupData, z: &[f64], kernel: &KernelSpec, link: Link, r: f64) -> f64 {
    let mut k = Vec::new();
    kernel_weights(kernel, 1.0, &group.src_z, group.dim, z, &mut k);
    let mut s = 0.0;
    for i in 0..k.len() {
        s += k[i] * group.src_r_weight[i] * (group.src_y[i] - link.eval(group.src_offset[i] + r));
    }
    s / group.n_train as f64
}

/// Density-ratio moment `source side - target side` at `z`.
pub fn h_moment(group: &GroupData, z: &[f64], kernel: &KernelSpec, h: f64) -> f64 {
    let (s, t) = h_sums(group, z, kernel, 1.0, &mut Vec::new());
    s * h.exp() - t
}

fn h_sums(group: &GroupData, z: &[f64], kernel: &KernelSpec, factor: f64, buf: &mut Vec<f64>) -> (f64, f64) {
    kernel_weights(kernel, factor, &group.src_z, group.dim, z, buf);
    let s: f64 = buf.iter().zip(&group.src_h_weight).map(|(k, w)| k * w).sum::<f64>() / group.n_train as f64;
    kernel_weights(kernel, factor, &group.tgt_z, group.dim, z, buf);
    let t: f64 = buf.iter().zip(&group.tgt_h_weight).map(|(k, w)| k * w).sum::<f64>() / group.n_target as f64;
    (s, t)
}

/// Closed-form `h(z) = log(target side / source side without exp(h))`.
pub fn calibrate_h_at(group: &GroupData, z: &[f64], kernel: &KernelSpec) -> Result<PointSolution> {
    check_point(group, kernel, z)?;
    let mut buf = Vec::with_capacity(group.n_source().max(group.n_target_rows()));
    for widen in 0..=MAX_WIDENINGS {
        let factor = f64::from(1u32 << widen);
        kernel_weights(kernel, factor, &group.src_z, group.dim, z, &mut buf);
        let (mut s, mut s_mass) = (0.0, 0.0);
        for (k, w) in buf.iter().zip(&group.src_h_weight) {
            s += k * w;
            s_mass += k * w.abs();
        }
        let s_rows = effective_rows(&buf, &group.src_h_weight, group.dim);
        kernel_weights(kernel, factor, &group.tgt_z, group.dim, z, &mut buf);
        let (mut t, mut t_mass) = (0.0, 0.0);
        for (k, w) in buf.iter().zip(&group.tgt_h_weight) {
            t += k * w;
            t_mass += k * w.abs();
        }
        let t_rows = effective_rows(&buf, &group.tgt_h_weight, group.dim);
        let (s, t) = (s / group.n_train as f64, t / group.n_target as f64);
        if s_mass / (group.n_train as f64) < MIN_LOCAL_MASS || t_mass / (group.n_target as f64) < MIN_LOCAL_MASS {
            continue;
        }
        if widen < MAX_WIDENINGS && s_rows.min(t_rows) < MIN_EFFECTIVE_ROWS {
            continue;
        }
        let ratio = t / s;
        if !(ratio > 0.0 && ratio.is_finite()) {
            return Err(AtrelError::Calibration {
                point: z.to_vec(),
                reason: format!("nonpositive density-ratio calibration ratio {ratio:e}"),
            });
        }
        let value = ratio.ln();
        return Ok(PointSolution {
            value,
            bandwidth_factor: factor,
            moment: s * value.exp() - t,
            saturated: false,
        });
    }
    Err(sparse_error(z))
}

/// Root `r(z)` of the imputation moment, started from `init`.
pub fn calibrate_r_at(group: &GroupData, z: &[f64], kernel: &KernelSpec, link: Link, init: f64) -> Result<PointSolution> {
    calibrate_r(group, z, kernel, link, init, false)
}

/// As [`calibrate_r_at`], but a logit root beyond `±LOGIT_R_LIMIT` (including
/// a locally one-sided response) is replaced by the limit and flagged.
pub fn calibrate_r_saturating(group: &GroupData, z: &[f64], kernel: &KernelSpec, link: Link, init: f64) -> Result<PointSolution> {
    calibrate_r(group, z, kernel, link, init, true)
}

fn calibrate_r(group: &GroupData, z: &[f64], kernel: &KernelSpec, link: Link, init: f64, saturate: bool) -> Result<PointSolution> {
    check_point(group, kernel, z)?;
    let inv_n = 1.0 / group.n_train as f64;
    let mut kw = Vec::with_capacity(group.n_source());
    for widen in 0..=MAX_WIDENINGS {
        let factor = f64::from(1u32 << widen);
        kernel_weights(kernel, factor, &group.src_z, group.dim, z, &mut kw);
        let rows = effective_rows(&kw, &group.src_r_weight, group.dim);
        let mut mass = 0.0;
        for (k, w) in kw.iter_mut().zip(&group.src_r_weight) {
            *k *= w;
            mass += k.abs();
        }
        if mass * inv_n < MIN_LOCAL_MASS || (widen < MAX_WIDENINGS && rows < MIN_EFFECTIVE_ROWS) {
            continue;
        }
        let (value, moment, saturated) = match link {
            Link::Identity => {
                let (mut num, mut den) = (0.0, 0.0);
                for i in 0..kw.len() {
                    num += kw[i] * (group.src_y[i] - group.src_offset[i]);
                    den += kw[i];
                }
                let r = num / den;
                let m: f64 = (0..kw.len())
                    .map(|i| kw[i] * (group.src_y[i] - group.src_offset[i] - r))
                    .sum::<f64>()
                    * inv_n;
                (r, m, false)
            }
            Link::Logit => solve_logit_r(group, &kw, inv_n, mass * inv_n, init, z, saturate)?,
        };
        if !value.is_finite() {
            return Err(AtrelError::Calibration {
                point: z.to_vec(),
                reason: "non-finite imputation calibration".into(),
            });
        }
        return Ok(PointSolution {
            value,
            bandwidth_factor: factor,
            moment,
            saturated,
        });
    }
    Err(sparse_error(z))
}

fn solve_logit_r(group: &GroupData, kw: &[f64], inv_n: f64, mass: f64, init: f64, z: &[f64], saturate: bool) -> Result<(f64, f64, bool)> {
    // the moment tends to Σ kw (y - 1) and Σ kw y at ±∞; a root needs them to differ in sign
    let (mut sy, mut sw) = (0.0, 0.0);
    for (k, y) in kw.iter().zip(&group.src_y) {
        sy += k * y;
        sw += k;
    }
    let ybar = sy / sw;
    let fast = group.exp_neg_offset.len() == kw.len();
    let eval = |r: f64| -> (f64, f64) {
        let (mut f, mut df) = (0.0, 0.0);
        if fast {
            let u = (-r).exp();
            for i in 0..kw.len() {
                let g = 1.0 / (1.0 + group.exp_neg_offset[i] * u);
                f += kw[i] * (group.src_y[i] - g);
                df -= kw[i] * g * (1.0 - g);
            }
        } else {
            for i in 0..kw.len() {
                let g = Link::Logit.eval(group.src_offset[i] + r);
                f += kw[i] * (group.src_y[i] - g);
                df -= kw[i] * g * (1.0 - g);
            }
        }
        (f * inv_n, df * inv_n)
    };
    let one_sided = || AtrelError::Calibration {
        point: z.to_vec(),
        reason: "imputation moment has no sign change; responses sit at one end of the link range".into(),
    };
    let saturated = |eval: &dyn Fn(f64) -> (f64, f64)| {
        // the moment is monotone, so the limit nearer the root has the smaller |moment|
        let (lo, hi) = (eval(-LOGIT_R_LIMIT).0, eval(LOGIT_R_LIMIT).0);
        if hi.abs() <= lo.abs() {
            (LOGIT_R_LIMIT, hi, true)
        } else {
            (-LOGIT_R_LIMIT, lo, true)
        }
    };
    if !(ybar > 0.0 && ybar < 1.0) {
        return if saturate { Ok(saturated(&eval)) } else { Err(one_sided()) };
    }
    let start = if init.is_finite() {
        init.clamp(-LOGIT_R_LIMIT, LOGIT_R_LIMIT)
    } else {
        0.0
    };
    match safeguarded_newton(eval, start, 1e-12 * mass, 1e-15, LOGIT_R_LIMIT) {
        Ok(root) => Ok((root.root, root.value, false)),
        Err(AtrelError::NoRoot { .. }) if saturate => Ok(saturated(&eval)),
        Err(AtrelError::NoRoot { .. }) => Err(one_sided()),
        Err(e) => Err(AtrelError::Calibration {
            point: z.to_vec(),
            reason: e.to_string(),
        }),
    }
}

/// Piecewise-linear interpolation on an increasing grid, constant beyond its ends.
pub fn interpolate(grid: &[f64], values: &[f64], x: f64) -> f64 {
    debug_assert_eq!(grid.len(), values.len());
    let last = grid.len() - 1;
    if x <= grid[0] {
        return values[0];
    }
    if x >= grid[last] {
        return values[last];
    }
    let hi = grid.partition_point(|&g| g <= x).min(last);
    let lo = hi - 1;
    let span = grid[hi] - grid[lo];
    if span <= 0.0 {
        return values[hi];
    }
    let t = (x - grid[lo]) / span;
    values[lo] + t * (values[hi] - values[lo])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::scalar_root;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_group(rng: &mut ChaCha8Rng, n: usize, sign: f64, link: Link) -> GroupData {
        let mut g = GroupData::new(1, n + 5, 2 * n);
        for _ in 0..n {
            let z: f64 = rng.gen_range(-2.0..2.0);
            let y = match link {
                Link::Logit => f64::from(u8::from(rng.gen::<f64>() < 0.3 + 0.1 * z.abs())),
                Link::Identity => z + rng.gen_range(-1.0..1.0),
            };
            let kappa = sign * rng.gen_range(0.1..2.0);
            g.push_source(
                &[z],
                y,
                rng.gen_range(-1.0..1.0),
                kappa * rng.gen_range(0.2..3.0),
                kappa * rng.gen_range(0.05..0.25) * rng.gen_range(0.3..2.0),
            );
        }
        for _ in 0..2 * n {
            let z: f64 = rng.gen_range(-2.0..2.0);
            g.push_target(&[z], sign * rng.gen_range(0.1..2.0) * rng.gen_range(0.05..0.25));
        }
        g.prepare();
        g
    }

    #[test]
    fn h_identical_sums_give_zero() {
        let mut g = GroupData::new(1, 3, 3);
        for z in [-0.5, 0.0, 0.7] {
            g.push_source(&[z], 0.0, 0.0, 1.0, 0.25);
            g.push_target(&[z], 0.25);
        }
        let k = KernelSpec::gaussian(vec![0.5]).unwrap();
        let s = calibrate_h_at(&g, &[0.1], &k).unwrap();
        assert!(s.value.abs() < 1e-15);
    }

    #[test]
    fn doubling_target_weights_shifts_h_by_log2() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = toy_group(&mut rng, 30, 1.0, Link::Logit);
        let mut g2 = g.clone();
        g2.tgt_h_weight.iter_mut().for_each(|w| *w *= 2.0);
        let k = KernelSpec::gaussian(vec![0.4]).unwrap();
        let a = calibrate_h_at(&g, &[0.3], &k).unwrap().value;
        let b = calibrate_h_at(&g2, &[0.3], &k).unwrap().value;
        assert!((b - a - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn h_closed_form_matches_bisection() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for sign in [1.0, -1.0] {
            let g = toy_group(&mut rng, 30, sign, Link::Logit);
            let k = KernelSpec::gaussian(vec![0.5]).unwrap();
            for z in [-1.5, 0.0, 0.8] {
                let closed = calibrate_h_at(&g, &[z], &k).unwrap();
                let root = scalar_root(|h| h_moment(&g, &[z], &k, h), -5.0, 5.0, 1e-14).unwrap();
                assert!((closed.value - root).abs() < 1e-8, "{} vs {root}", closed.value);
                assert!(closed.moment.abs() < 1e-8);
            }
        }
    }

    #[test]
    fn identity_r_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = toy_group(&mut rng, 30, 1.0, Link::Identity);
        let k = KernelSpec::gaussian(vec![0.5]).unwrap();
        let z = [0.25];
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..g.n_source() {
            let w = k.weight(&g.src_z[i..i + 1], &z) * g.src_r_weight[i];
            num += w * (g.src_y[i] - g.src_offset[i]);
            den += w;
        }
        let r = calibrate_r_at(&g, &z, &k, Link::Identity, 0.0).unwrap();
        assert!((r.value - num / den).abs() < 1e-12);
    }

    #[test]
    fn constant_response_logit() {
        let mut g = GroupData::new(1, 4, 4);
        for z in [-1.0, 0.0, 0.5, 1.2] {
            g.push_source(&[z], 0.35, 0.0, 0.8, 0.1);
        }
        g.prepare();
        let k = KernelSpec::gaussian(vec![0.3]).unwrap();
        for z in [-1.0, 0.3, 2.0] {
            let r = calibrate_r_at(&g, &[z], &k, Link::Logit, 0.0).unwrap();
            assert!((r.value - Link::Logit.inverse(0.35).unwrap()).abs() < 1e-10);
        }
    }

    #[test]
    fn logit_r_matches_grid_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for sign in [1.0, -1.0] {
            let g = toy_group(&mut rng, 30, sign, Link::Logit);
            let k = KernelSpec::gaussian(vec![0.5]).unwrap();
            for z in [-1.0, 0.4] {
                let r = calibrate_r_at(&g, &[z], &k, Link::Logit, 0.0).unwrap();
                // scan r in [-15, 15] with step 1e-5 for the smallest |moment|
                let mut best = (f64::INFINITY, 0.0);
                for i in 0..=3_000_000 {
                    let x = -15.0 + i as f64 * 1e-5;
                    let m = r_moment(&g, &[z], &k, Link::Logit, x).abs();
                    if m < best.0 {
                        best = (m, x);
                    }
                }
                assert!((r.value - best.1).abs() < 1e-4, "{} vs {}", r.value, best.1);
                assert!(r.moment.abs() < 1e-8);
                // sign change across a small bracket
                let lo = r_moment(&g, &[z], &k, Link::Logit, r.value - 1e-6);
                let hi = r_moment(&g, &[z], &k, Link::Logit, r.value + 1e-6);
                assert!(lo * hi < 0.0);
            }
        }
    }

    #[test]
    fn sparse_neighborhood_widens_then_fails() {
        let mut g = GroupData::new(1, 1, 1);
        g.push_source(&[0.0], 1.0, 0.0, 1.0, 1.0);
        g.push_target(&[0.0], 1.0);
        g.prepare();
        let k = KernelSpec::gaussian(vec![0.1]).unwrap();
        // 2.0 is 20 bandwidths away: needs widening
        let s = calibrate_r_at(&g, &[2.0], &k, Link::Identity, 0.0).unwrap();
        assert!(s.bandwidth_factor > 1.0);
        let err = calibrate_r_at(&g, &[50.0], &k, Link::Identity, 0.0).unwrap_err();
        assert!(matches!(err, AtrelError::Calibration { .. }));
    }

    #[test]
    fn one_sided_responses_fail() {
        let mut g = GroupData::new(1, 2, 2);
        g.push_source(&[0.0], 1.0, 0.0, 1.0, 1.0);
        g.push_source(&[0.5], 1.0, 0.0, 1.0, 1.0);
        g.prepare();
        let k = KernelSpec::gaussian(vec![0.5]).unwrap();
        assert!(matches!(
            calibrate_r_at(&g, &[0.2], &k, Link::Logit, 0.0),
            Err(AtrelError::Calibration { .. })
        ));
    }

    #[test]
    fn interpolation() {
        let g = [0.0, 1.0, 3.0];
        let v = [1.0, 2.0, 0.0];
        assert_eq!(interpolate(&g, &v, -1.0), 1.0);
        assert_eq!(interpolate(&g, &v, 0.5), 1.5);
        assert_eq!(interpolate(&g, &v, 2.0), 1.0);
        assert_eq!(interpolate(&g, &v, 9.0), 0.0);
        assert_eq!(interpolate(&g, &v, 1.0), 2.0);
    }
}

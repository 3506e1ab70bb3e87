use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::calibrate::{calibrate_h_at, calibrate_r_saturating, interpolate, GroupData, PointSolution};
use super::kappa::{compute_jhat, sign_partition, KappaWeights, SignPartition};
use super::prelim::{PrelimValues, PreliminaryFit};
use super::sieve::{calibrate_sieve, SieveGroup};
use super::spec::{CalibrationBackend, Design, NuisanceSpec};
use crate::error::{AtrelError, Result};
use crate::numerics::basis::quantile_sorted;
use crate::numerics::design::dot;
use crate::numerics::{KernelSpec, Link, NewtonOptions, Rows, LOGIT_CLAMP};

/// Settings shared by every fold calibration of one fit.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSettings {
    pub link: Link,
    pub backend: CalibrationBackend,
    pub kernel: KernelSpec,
    pub median_split: bool,
    pub exact_point_limit: usize,
    pub grid_points: usize,
    /// Groups holding a smaller share of the training-source (or target)
    /// rows borrow the other group's components.
    pub min_group_fraction: f64,
    pub opts: NewtonOptions,
}

/// One cross-fitting fold: preliminary fits trained on `train`, evaluated on `eval`.
#[derive(Debug, Clone, Copy)]
pub struct FoldInput<'a> {
    pub design: &'a Design,
    pub train: &'a [usize],
    pub eval: &'a [usize],
    pub prelim: &'a PreliminaryFit,
    pub train_values: &'a PrelimValues,
    pub eval_values: &'a PrelimValues,
    pub target_values: &'a PrelimValues,
    /// Preliminary `β̃` of this fold.
    pub beta: &'a [f64],
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CalibrationDiagnostics {
    /// Components borrowed from the other κ group because their own was empty.
    pub fallbacks: usize,
    /// Evaluation points that needed a widened bandwidth.
    pub widened_points: usize,
    /// Largest |moment| over the points solved.
    pub max_r_moment: f64,
    pub max_h_moment: f64,
    /// Imputations clamped into the open unit interval.
    pub clamped: usize,
    /// Imputation calibrations whose root lay beyond the search limit.
    pub saturated: usize,
    pub grid_mode: bool,
    pub points_solved: usize,
}

impl CalibrationDiagnostics {
    pub fn merge(&mut self, other: &Self) {
        self.fallbacks += other.fallbacks;
        self.widened_points += other.widened_points;
        self.max_r_moment = self.max_r_moment.max(other.max_r_moment);
        self.max_h_moment = self.max_h_moment.max(other.max_h_moment);
        self.clamped += other.clamped;
        self.saturated += other.saturated;
        self.grid_mode |= other.grid_mode;
        self.points_solved += other.points_solved;
    }
}

type PointKey = (usize, Vec<u64>);

fn key(group: usize, z: &[f64]) -> PointKey {
    (group, z.iter().map(|v| v.to_bits()).collect())
}

#[derive(Debug, Clone, PartialEq)]
enum Backend {
    Kernel { kernel: KernelSpec, groups: [GroupData; 2] },
    Sieve { coef: [Option<(Vec<f64>, Vec<f64>)>; 2] },
}

/// Calibrated nuisance models of one fold and one loading.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedNuisance {
    pub alpha_hat: Vec<f64>,
    pub gamma_hat: Vec<f64>,
    pub kappa: KappaWeights,
    pub partition: SignPartition,
    /// Training-source and target row counts of each κ group.
    pub group_sizes: [[usize; 2]; 2],
    pub link: Link,
    /// `h` table: (group, point) to value.
    pub h_values: HashMap<PointKey, f64>,
    pub r_values: HashMap<PointKey, f64>,
    pub diagnostics: CalibrationDiagnostics,
    /// Group whose `r` (resp. `h`) component serves each group.
    r_source: [usize; 2],
    h_source: [usize; 2],
    prelim: PreliminaryFit,
    backend: Backend,
}

/// Nuisance values on the rows the cross-fitted equation needs.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldValues {
    pub kappa_eval: Vec<f64>,
    pub kappa_target: Vec<f64>,
    pub h_eval: Vec<f64>,
    pub r_eval: Vec<f64>,
    pub r_target: Vec<f64>,
    pub omega_eval: Vec<f64>,
    pub m_eval: Vec<f64>,
    pub m_target: Vec<f64>,
}

fn clamp_mean(link: Link, m: f64, clamped: &mut usize) -> f64 {
    match link {
        Link::Logit if !(m > LOGIT_CLAMP && m < 1.0 - LOGIT_CLAMP) => {
            *clamped += 1;
            m.clamp(LOGIT_CLAMP, 1.0 - LOGIT_CLAMP)
        }
        _ => m,
    }
}

/// Calibrates both nonparametric components for loading `c` on one fold and
/// evaluates the resulting nuisances on the fold's evaluation rows and on
/// every target row.
pub fn calibrate_fold(input: &FoldInput<'_>, c: &[f64], settings: &CalibrationSettings) -> Result<(CalibratedNuisance, FoldValues)> {
    let design = input.design;
    let link = settings.link;
    let jhat = compute_jhat(input.beta, &design.tgt.a, link);
    let kappa = KappaWeights::new(c, jhat)?;
    let kappa_train: Vec<f64> = input.train.iter().map(|&i| kappa.kappa(design.src.a.row(i))).collect();
    let kappa_target = kappa.values(&design.tgt.a);
    let kappa_eval: Vec<f64> = input.eval.iter().map(|&i| kappa.kappa(design.src.a.row(i))).collect();
    let pooled: Vec<f64> = kappa_train.iter().chain(&kappa_target).copied().collect();
    let (partition, _) = sign_partition(&pooled, settings.median_split, settings.min_group_fraction);

    let dim = design.z_dim();
    let n_train = input.train.len();
    let big_n = design.big_n();
    let tv = input.train_values;
    let gv = input.target_values;
    let mut group_sizes = [[0usize; 2]; 2];
    for &k in &kappa_train {
        group_sizes[partition.group(k)][0] += 1;
    }
    for &k in &kappa_target {
        group_sizes[partition.group(k)][1] += 1;
    }

    let src_ok = |g: usize| group_sizes[g][0] > 0 && group_sizes[g][0] as f64 >= settings.min_group_fraction * n_train as f64;
    let tgt_ok = |g: usize| group_sizes[g][1] > 0 && group_sizes[g][1] as f64 >= settings.min_group_fraction * big_n as f64;

    let mut diagnostics = CalibrationDiagnostics::default();
    let backend = match settings.backend {
        CalibrationBackend::Kernel => {
            let mut groups = [GroupData::new(dim, n_train, big_n), GroupData::new(dim, n_train, big_n)];
            for (t, &i) in input.train.iter().enumerate() {
                let k = kappa_train[t];
                if !partition.calibrates(k) {
                    continue;
                }
                groups[partition.group(k)].push_source(
                    design.src.z.row(i),
                    design.y[i],
                    tv.lin_m[t],
                    k * tv.omega[t],
                    k * tv.breve_m[t] * tv.lin_w[t].exp(),
                );
            }
            for (j, &k) in kappa_target.iter().enumerate().filter(|(_, k)| partition.calibrates(**k)) {
                groups[partition.group(k)].push_target(design.tgt.z.row(j), k * gv.breve_m[j]);
            }
            groups.iter_mut().for_each(GroupData::prepare);
            Backend::Kernel {
                kernel: settings.kernel.clone(),
                groups,
            }
        }
        CalibrationBackend::Sieve => {
            let basis_r = &input.prelim.basis_m;
            let basis_h = &input.prelim.basis_w;
            let wr = basis_r.n_columns()? + 1;
            let wh = basis_h.n_columns()? + 1;
            let mut rows = [
                (Rows::zeros(0, wr), Rows::zeros(0, wh), Rows::zeros(0, wh)),
                (Rows::zeros(0, wr), Rows::zeros(0, wh), Rows::zeros(0, wh)),
            ];
            let mut vecs: [[Vec<f64>; 5]; 2] = Default::default();
            let with_const = |b: &crate::numerics::Basis, z: &[f64]| -> Result<Vec<f64>> {
                let mut v = vec![1.0];
                v.extend(b.eval(z)?);
                Ok(v)
            };
            for (t, &i) in input.train.iter().enumerate() {
                let k = kappa_train[t];
                if !partition.calibrates(k) {
                    continue;
                }
                let g = partition.group(k);
                let z = design.src.z.row(i);
                rows[g].0.push_row(&with_const(basis_r, z)?)?;
                rows[g].1.push_row(&with_const(basis_h, z)?)?;
                vecs[g][0].push(design.y[i]);
                vecs[g][1].push(tv.lin_m[t]);
                vecs[g][2].push(k * tv.omega[t]);
                vecs[g][3].push(k * tv.breve_m[t] * tv.lin_w[t].exp());
            }
            for (j, &k) in kappa_target.iter().enumerate().filter(|(_, k)| partition.calibrates(**k)) {
                let g = partition.group(k);
                rows[g].2.push_row(&with_const(basis_h, design.tgt.z.row(j))?)?;
                vecs[g][4].push(k * gv.breve_m[j]);
            }
            let mut coef: [Option<(Vec<f64>, Vec<f64>)>; 2] = [None, None];
            for g in 0..2 {
                let [y, off, rw, hw, tw] = std::mem::take(&mut vecs[g]);
                let one_sided = link == Link::Logit && (y.iter().all(|v| *v >= 1.0) || y.iter().all(|v| *v <= 0.0));
                if rw.is_empty() || tw.is_empty() || one_sided || !src_ok(g) || !tgt_ok(g) {
                    continue;
                }
                let (br, bh, bt) = std::mem::replace(&mut rows[g], (Rows::default(), Rows::default(), Rows::default()));
                let group = SieveGroup {
                    n_train,
                    n_target: big_n,
                    src_basis_r: br,
                    src_basis_h: bh,
                    src_y: y,
                    src_offset: off,
                    src_r_weight: rw,
                    src_h_weight: hw,
                    tgt_basis_h: bt,
                    tgt_h_weight: tw,
                };
                coef[g] = Some(calibrate_sieve(&group, link, &settings.opts)?);
            }
            Backend::Sieve { coef }
        }
    };

    let supports = |g: usize| -> (bool, bool) {
        match &backend {
            Backend::Kernel { groups, .. } => (
                src_ok(g) && groups[g].supports_r(link),
                src_ok(g) && tgt_ok(g) && groups[g].supports_h(),
            ),
            Backend::Sieve { coef } => (coef[g].is_some(), coef[g].is_some()),
        }
    };
    let mut r_source = [0, 1];
    let mut h_source = [0, 1];
    for g in 0..2 {
        let (r_ok, h_ok) = supports(g);
        let (r_other, h_other) = supports(1 - g);
        if !r_ok {
            if !r_other {
                return Err(AtrelError::Calibration {
                    point: vec![],
                    reason: "no κ group has source rows with nonzero weight".into(),
                });
            }
            r_source[g] = 1 - g;
            diagnostics.fallbacks += 1;
            log::debug!("imputation component of κ group {g} falls back to group {}", 1 - g);
        }
        if !h_ok {
            if !h_other {
                return Err(AtrelError::Calibration {
                    point: vec![],
                    reason: "no κ group has both source and target rows with nonzero weight".into(),
                });
            }
            h_source[g] = 1 - g;
            diagnostics.fallbacks += 1;
            log::debug!("density-ratio component of κ group {g} falls back to group {}", 1 - g);
        }
    }

    let mut fit = CalibratedNuisance {
        alpha_hat: input.prelim.alpha().to_vec(),
        gamma_hat: input.prelim.gamma().to_vec(),
        kappa,
        partition,
        group_sizes,
        link,
        h_values: HashMap::new(),
        r_values: HashMap::new(),
        diagnostics,
        r_source,
        h_source,
        prelim: input.prelim.clone(),
        backend,
    };

    // evaluation requests: (owning group, z, r̃ start)
    let eval_groups: Vec<usize> = kappa_eval.iter().map(|&k| fit.partition.group(k)).collect();
    let target_groups: Vec<usize> = kappa_target.iter().map(|&k| fit.partition.group(k)).collect();
    let eval_z: Vec<&[f64]> = input.eval.iter().map(|&i| design.src.z.row(i)).collect();
    let target_z: Vec<&[f64]> = (0..big_n).map(|j| design.tgt.z.row(j)).collect();
    let total_points = input.eval.len() + big_n;
    let grid_mode = matches!(fit.backend, Backend::Kernel { .. }) && dim == 1 && total_points > settings.exact_point_limit;
    fit.diagnostics.grid_mode = grid_mode;

    let r_requests: Vec<(usize, &[f64], f64)> = eval_groups
        .iter()
        .zip(&eval_z)
        .zip(&input.eval_values.r)
        .chain(target_groups.iter().zip(&target_z).zip(&gv.r))
        .map(|((&g, &z), &r0)| (fit.r_source[g], z, r0))
        .collect();
    let h_requests: Vec<(usize, &[f64], f64)> = eval_groups.iter().zip(&eval_z).map(|(&g, &z)| (fit.h_source[g], z, 0.0)).collect();
    let r_all = fit.solve_requests(&r_requests, Component::R, grid_mode, settings.grid_points)?;
    let h_eval = fit.solve_requests(&h_requests, Component::H, grid_mode, settings.grid_points)?;
    let (r_eval, r_target) = r_all.split_at(input.eval.len());

    let mut clamped = 0;
    let ev = input.eval_values;
    let omega_eval: Vec<f64> = (0..input.eval.len()).map(|t| (ev.lin_w[t] + h_eval[t]).exp()).collect();
    let m_eval: Vec<f64> = (0..input.eval.len())
        .map(|t| clamp_mean(link, link.eval(ev.lin_m[t] + r_eval[t]), &mut clamped))
        .collect();
    let m_target: Vec<f64> = (0..big_n)
        .map(|j| clamp_mean(link, link.eval(gv.lin_m[j] + r_target[j]), &mut clamped))
        .collect();
    fit.diagnostics.clamped += clamped;
    if omega_eval.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
        return Err(AtrelError::Calibration {
            point: vec![],
            reason: "calibrated density ratio is not a positive finite number".into(),
        });
    }
    let values = FoldValues {
        kappa_eval,
        kappa_target,
        h_eval,
        r_eval: r_eval.to_vec(),
        r_target: r_target.to_vec(),
        omega_eval,
        m_eval,
        m_target,
    };
    Ok((fit, values))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Component {
    R,
    H,
}

impl CalibratedNuisance {
    fn solve_point(&self, group: usize, z: &[f64], init: f64, component: Component) -> Result<PointSolution> {
        match &self.backend {
            Backend::Kernel { kernel, groups } => match component {
                Component::R => calibrate_r_saturating(&groups[group], z, kernel, self.link, init),
                Component::H => calibrate_h_at(&groups[group], z, kernel),
            },
            Backend::Sieve { coef } => {
                let (xi, eta) = coef[group].as_ref().ok_or(AtrelError::NotFitted)?;
                let (basis, c) = match component {
                    Component::R => (&self.prelim.basis_m, xi),
                    Component::H => (&self.prelim.basis_w, eta),
                };
                let mut b = vec![1.0];
                b.extend(basis.eval(z)?);
                Ok(PointSolution {
                    value: dot(&b, c),
                    bandwidth_factor: 1.0,
                    moment: 0.0,
                    saturated: false,
                })
            }
        }
    }

    fn record(&mut self, sol: &PointSolution, component: Component) {
        let d = &mut self.diagnostics;
        d.points_solved += 1;
        if sol.bandwidth_factor > 1.0 {
            d.widened_points += 1;
        }
        if sol.saturated {
            d.saturated += 1;
        }
        match component {
            Component::R => d.max_r_moment = d.max_r_moment.max(sol.moment.abs()),
            Component::H => d.max_h_moment = d.max_h_moment.max(sol.moment.abs()),
        }
    }

    fn solve_requests(
        &mut self,
        requests: &[(usize, &[f64], f64)],
        component: Component,
        grid_mode: bool,
        grid_points: usize,
    ) -> Result<Vec<f64>> {
        let mut out = vec![0.0; requests.len()];
        if grid_mode {
            for g in 0..2 {
                let idx: Vec<usize> = (0..requests.len()).filter(|&i| requests[i].0 == g).collect();
                if idx.is_empty() {
                    continue;
                }
                let mut zs: Vec<f64> = idx.iter().map(|&i| requests[i].1[0]).collect();
                zs.sort_by(f64::total_cmp);
                let mut grid: Vec<f64> = (0..grid_points)
                    .map(|q| quantile_sorted(&zs, q as f64 / (grid_points - 1) as f64))
                    .collect();
                grid.dedup();
                let mut vals = Vec::with_capacity(grid.len());
                let mut prev = f64::NAN;
                for &gz in &grid {
                    let init = if prev.is_finite() { prev } else { self.prelim_start(gz, component) };
                    let sol = self.solve_point(g, &[gz], init, component)?;
                    self.record(&sol, component);
                    prev = sol.value;
                    vals.push(sol.value);
                }
                for &i in &idx {
                    out[i] = interpolate(&grid, &vals, requests[i].1[0]);
                }
            }
            return Ok(out);
        }
        for (slot, &(g, z, init)) in out.iter_mut().zip(requests) {
            let k = key(g, z);
            let table = match component {
                Component::R => &self.r_values,
                Component::H => &self.h_values,
            };
            if let Some(&v) = table.get(&k) {
                *slot = v;
                continue;
            }
            let sol = self.solve_point(g, z, init, component)?;
            self.record(&sol, component);
            *slot = sol.value;
            match component {
                Component::R => self.r_values.insert(k, sol.value),
                Component::H => self.h_values.insert(k, sol.value),
            };
        }
        Ok(out)
    }

    fn prelim_start(&self, z: f64, component: Component) -> f64 {
        match component {
            Component::R => self.prelim.r_tilde(&[z]).unwrap_or(0.0),
            Component::H => 0.0,
        }
    }

    /// `ĥ(z)` for a row in κ group `group`.
    pub fn h_at(&self, group: usize, z: &[f64]) -> Result<f64> {
        let g = self.h_source[group];
        if let Some(&v) = self.h_values.get(&key(g, z)) {
            return Ok(v);
        }
        Ok(self.solve_point(g, z, 0.0, Component::H)?.value)
    }

    /// `r̂(z)` for a row in κ group `group`.
    pub fn r_at(&self, group: usize, z: &[f64]) -> Result<f64> {
        let g = self.r_source[group];
        if let Some(&v) = self.r_values.get(&key(g, z)) {
            return Ok(v);
        }
        let init = self.prelim.r_tilde(z).unwrap_or(0.0);
        Ok(self.solve_point(g, z, init, Component::R)?.value)
    }

    /// `(ω̂, m̂)` from the design rows of one observation.
    pub fn evaluate_parts(&self, a: &[f64], psi: &[f64], phi: &[f64], z: &[f64]) -> Result<(f64, f64)> {
        let group = self.partition.group(self.kappa.kappa(a));
        let omega = (dot(psi, &self.alpha_hat) + self.h_at(group, z)?).exp();
        let m = self.link.eval(dot(phi, &self.gamma_hat) + self.r_at(group, z)?);
        let mut clamps = 0;
        Ok((omega, clamp_mean(self.link, m, &mut clamps)))
    }
}

/// `(ω̂(x), m̂(x))` for a raw covariate row.
pub fn evaluate_nuisance(fit: &CalibratedNuisance, spec: &NuisanceSpec, x: &[f64]) -> Result<(f64, f64)> {
    let expand = |terms: &[super::spec::Term]| {
        let mut v = vec![1.0];
        v.extend(terms.iter().map(|t| t.eval(x)));
        v
    };
    let z: Vec<f64> = spec.z_columns.iter().map(|&j| x[j]).collect();
    fit.evaluate_parts(&expand(&spec.a_columns), &expand(&spec.psi_columns), &expand(&spec.phi_columns), &z)
}

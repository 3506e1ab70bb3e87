use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::TransferDataset;
use crate::error::{AtrelError, Result};
use crate::numerics::link::logistic;
use crate::numerics::Rows;
use crate::rng::unit_rng;

/// Number of latent covariates.
pub const P: usize = 7;
const LIMIT: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConfigId {
    I,
    Ii,
    Iii,
    Iv,
}

impl ConfigId {
    pub const ALL: [ConfigId; 4] = [ConfigId::I, ConfigId::Ii, ConfigId::Iii, ConfigId::Iv];

    pub fn name(self) -> &'static str {
        match self {
            ConfigId::I => "i",
            ConfigId::Ii => "ii",
            ConfigId::Iii => "iii",
            ConfigId::Iv => "iv",
        }
    }
}

impl fmt::Display for ConfigId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ConfigId {
    type Err = AtrelError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "i" | "1" => Ok(ConfigId::I),
            "ii" | "2" => Ok(ConfigId::Ii),
            "iii" | "3" => Ok(ConfigId::Iii),
            "iv" | "4" => Ok(ConfigId::Iv),
            other => Err(AtrelError::Config(format!("unknown simulation configuration {other:?}"))),
        }
    }
}

/// How `V_j` is restricted to `(-1.5, 1.5)` before standardization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Truncation {
    /// Winsorize each coordinate.
    #[default]
    Clamp,
    /// Redraw the whole vector until every coordinate is inside.
    Reject,
}

impl FromStr for Truncation {
    type Err = AtrelError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clamp" => Ok(Truncation::Clamp),
            "reject" => Ok(Truncation::Reject),
            other => Err(AtrelError::Config(format!("unknown truncation {other:?}"))),
        }
    }
}

/// Closed-form functions of `Z` entering the selection and outcome models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZTerm {
    Zero,
    /// `0.6 z²` inside `|z| < 1.5`, continued linearly outside.
    Quadratic,
    /// `0.5 |z|³` inside `|z| < 1.5`, continued linearly outside.
    Cubic,
    /// `a sin(3πz/4)`.
    Sine(f64),
}

impl ZTerm {
    pub fn eval(self, z: f64) -> f64 {
        let a = z.abs();
        match self {
            ZTerm::Zero => 0.0,
            ZTerm::Quadratic if a < LIMIT => 0.6 * z * z,
            ZTerm::Quadratic => 0.6 * (a - LIMIT) + 1.35,
            ZTerm::Cubic if a < LIMIT => 0.5 * a.powi(3),
            ZTerm::Cubic => 0.5 * LIMIT.powi(3) + (a - LIMIT),
            ZTerm::Sine(c) => c * (0.75 * PI * z).sin(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub sigma_v: DMatrix<f64>,
    pub a_w: [f64; 8],
    pub a_x: [f64; 8],
    pub h_x: ZTerm,
    pub b_w: [f64; 8],
    pub b_x: [f64; 8],
    pub r_x: ZTerm,
    pub observation_shift: bool,
    pub truncation: Truncation,
}

pub fn sigma_v() -> DMatrix<f64> {
    let mut s = DMatrix::identity(P, P);
    for &(i, j) in &[(1, 2), (1, 3), (3, 4), (3, 5)] {
        s[(i - 1, j - 1)] = 0.3;
        s[(j - 1, i - 1)] = 0.3;
    }
    for &(i, j) in &[(1, 6), (1, 7), (5, 6), (5, 7)] {
        s[(i - 1, j - 1)] = 0.15;
        s[(j - 1, i - 1)] = 0.15;
    }
    s
}

impl GeneratorParams {
    pub fn config(id: ConfigId) -> Self {
        let zero = [0.0; 8];
        let b_x_linear = [0.0, 0.5, 0.5, 0.5, 0.3, 0.3, 0.15, 0.15];
        let (a_w, a_x, h_x) = match id {
            ConfigId::I | ConfigId::Ii => ([-1.0, 0.0, -0.4, -0.4, -0.15, -0.15, 0.0, 0.0], zero, ZTerm::Quadratic),
            ConfigId::Iii => (zero, [0.0, -0.2, -0.4, -0.4, -0.2, -0.2, 0.0, 0.0], ZTerm::Cubic),
            ConfigId::Iv => (zero, [0.0, -0.4, -0.4, -0.4, -0.15, -0.15, 0.0, 0.0], ZTerm::Zero),
        };
        let (b_w, b_x, r_x) = match id {
            ConfigId::I => (zero, b_x_linear, ZTerm::Sine(-0.4)),
            ConfigId::Ii => (zero, b_x_linear, ZTerm::Zero),
            ConfigId::Iii => ([-0.5, 0.5, 0.8, 0.3, -0.3, -0.2, 0.15, 0.15], zero, ZTerm::Sine(-0.6)),
            ConfigId::Iv => ([-0.8, 0.5, 0.5, 0.5, 0.3, 0.3, 0.15, 0.15], zero, ZTerm::Sine(-0.4)),
        };
        Self {
            sigma_v: sigma_v(),
            a_w,
            a_x,
            h_x,
            b_w,
            b_x,
            r_x,
            observation_shift: matches!(id, ConfigId::I | ConfigId::Ii),
            truncation: Truncation::Clamp,
        }
    }

    /// `P(S = 1 | X̃)` for latent row `xt = (1, X̃₁..X̃₇)`.
    pub fn source_probability(&self, xt: &[f64; 8]) -> f64 {
        let w = features(xt);
        logistic(dot8(&self.a_w, &w) + dot8(&self.a_x, xt) + self.h_x.eval(xt[1]))
    }

    /// Observed covariates (with leading constant) of a latent row.
    pub fn observe(&self, xt: &[f64; 8], source: bool) -> [f64; 8] {
        let mut x = *xt;
        if self.observation_shift {
            let shift = if source { 0.0 } else { 0.2 * (0.75 * PI * xt[1]).sin() };
            x[2] = (xt[2] + shift) / 0.8;
            x[3] = (xt[3] + shift) / 0.8;
        }
        x
    }

    /// `P(Y = 1 | X)` given the latent row and the observed row.
    pub fn outcome_probability(&self, xt: &[f64; 8], x: &[f64; 8]) -> f64 {
        let w = features(xt);
        logistic(dot8(&self.b_w, &w) + dot8(&self.b_x, x) + self.r_x.eval(x[1]))
    }
}

fn dot8(a: &[f64; 8], b: &[f64; 8]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `W = {1, exp(0.5X̃₁), X̃₂/(1+exp X̃₃), (X̃₁X̃₃/5 + 0.6)³, X̃₄..X̃₇}`.
pub fn features(xt: &[f64; 8]) -> [f64; 8] {
    [
        1.0,
        (0.5 * xt[1]).exp(),
        xt[2] / (1.0 + xt[3].exp()),
        (xt[1] * xt[3] / 5.0 + 0.6).powi(3),
        xt[4],
        xt[5],
        xt[6],
        xt[7],
    ]
}

/// Latent rows `(1, X̃₁..X̃₇)`: correlated normals, truncated, then standardized
/// by the empirical moments of this draw.
pub fn gen_covariates(count: usize, sigma: &DMatrix<f64>, truncation: Truncation, rng: &mut ChaCha8Rng) -> Result<Vec<[f64; 8]>> {
    let chol = sigma
        .clone()
        .cholesky()
        .ok_or_else(|| AtrelError::Config("Σ_V is not positive definite".into()))?;
    let l = chol.l();
    let mut rows = Vec::with_capacity(count);
    let mut e = [0.0; P];
    while rows.len() < count {
        e.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        let mut row = [1.0; 8];
        for j in 0..P {
            row[j + 1] = (0..=j).map(|k| l[(j, k)] * e[k]).sum();
        }
        match truncation {
            Truncation::Clamp => row[1..].iter_mut().for_each(|v| *v = v.clamp(-LIMIT, LIMIT)),
            Truncation::Reject => {
                if row[1..].iter().any(|v| v.abs() >= LIMIT) {
                    continue;
                }
            }
        }
        rows.push(row);
    }
    if count > 1 {
        for j in 1..=P {
            let mean = rows.iter().map(|r| r[j]).sum::<f64>() / count as f64;
            let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / (count - 1) as f64;
            let sd = var.sqrt();
            rows.iter_mut().for_each(|r| r[j] = (r[j] - mean) / sd);
        }
    }
    Ok(rows)
}

/// One simulated transfer problem. Target outcomes are kept for evaluation
/// but are not part of `data`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimPopulation {
    pub data: TransferDataset,
    pub target_y: Vec<f64>,
    /// `P(Y = 1 | X)` on source and target rows.
    pub source_mu: Vec<f64>,
    pub target_mu: Vec<f64>,
}

pub fn covariate_names() -> Vec<String> {
    (1..=P).map(|j| format!("X{j}")).collect()
}

/// Draws rows until exactly `n` source and `big_n` target rows are collected.
pub fn gen_population(params: &GeneratorParams, n: usize, big_n: usize, seed: u64) -> Result<SimPopulation> {
    if n == 0 || big_n == 0 {
        return Err(AtrelError::Config("simulation needs at least one source and one target row".into()));
    }
    // covariates and selection share one stream; outcomes use their own so
    // configurations with the same selection model select the same rows
    let mut rng = unit_rng(seed, 0, 0);
    let mut rng_y = unit_rng(seed, 0, 1);
    let batch = 2 * (n + big_n);
    let cap = 100 * (n + big_n);
    let (mut src, mut tgt) = (Vec::with_capacity(n), Vec::with_capacity(big_n));
    let mut drawn = 0;
    while src.len() < n || tgt.len() < big_n {
        if drawn >= cap {
            return Err(AtrelError::Generator(format!(
                "selection produced {} source and {} target rows after {drawn} draws",
                src.len(),
                tgt.len()
            )));
        }
        let rows = gen_covariates(batch, &params.sigma_v, params.truncation, &mut rng)?;
        drawn += batch;
        for xt in rows {
            let s = rng.gen::<f64>() < params.source_probability(&xt);
            if s && src.len() < n {
                src.push(xt);
            } else if !s && tgt.len() < big_n {
                tgt.push(xt);
            }
        }
    }
    let mut draw = |xt: &[f64; 8], source: bool| {
        let x = params.observe(xt, source);
        let mu = params.outcome_probability(xt, &x);
        let y = f64::from(rng_y.gen::<f64>() < mu);
        (x, mu, y)
    };
    let (mut sx, mut sy, mut smu) = (Vec::with_capacity(n * P), Vec::with_capacity(n), Vec::with_capacity(n));
    for xt in &src {
        let (x, mu, y) = draw(xt, true);
        sx.extend_from_slice(&x[1..]);
        sy.push(y);
        smu.push(mu);
    }
    let (mut tx, mut ty, mut tmu) = (Vec::with_capacity(big_n * P), Vec::with_capacity(big_n), Vec::with_capacity(big_n));
    for xt in &tgt {
        let (x, mu, y) = draw(xt, false);
        tx.extend_from_slice(&x[1..]);
        ty.push(y);
        tmu.push(mu);
    }
    let data = TransferDataset::new(covariate_names(), Rows::new(P, sx)?, sy, Rows::new(P, tx)?)?;
    Ok(SimPopulation {
        data,
        target_y: ty,
        source_mu: smu,
        target_mu: tmu,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn sigma_is_positive_definite_with_listed_entries() {
        let s = sigma_v();
        assert!(s.clone().cholesky().is_some());
        assert_eq!(s[(0, 1)], 0.3);
        assert_eq!(s[(4, 6)], 0.15);
        assert_eq!(s[(0, 3)], 0.0);
        assert_eq!(s, s.transpose());
    }

    #[test]
    fn covariates_standardized_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows = gen_covariates(5000, &sigma_v(), Truncation::Clamp, &mut rng).unwrap();
        for j in 1..=P {
            let mean = rows.iter().map(|r| r[j]).sum::<f64>() / 5000.0;
            let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / 4999.0;
            assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        }
        assert!(rows.iter().all(|r| r[0] == 1.0));
    }

    #[test]
    fn z_terms_continuous_at_cutoff() {
        for t in [ZTerm::Quadratic, ZTerm::Cubic] {
            assert!((t.eval(1.5 - 1e-12) - t.eval(1.5)).abs() < 1e-9);
            assert_eq!(t.eval(-2.0), t.eval(2.0));
        }
        assert_eq!(ZTerm::Quadratic.eval(2.5), 0.6 + 1.35);
    }

    #[test]
    fn population_sizes_and_determinism() {
        let p = GeneratorParams::config(ConfigId::I);
        let a = gen_population(&p, 50, 80, 9).unwrap();
        assert_eq!((a.data.n(), a.data.big_n()), (50, 80));
        assert_eq!(a, gen_population(&p, 50, 80, 9).unwrap());
        assert!(a.data.source_y.iter().all(|&y| y == 0.0 || y == 1.0));
    }

    #[test]
    fn config_iv_observes_latent_covariates() {
        let p = GeneratorParams::config(ConfigId::Iv);
        let xt = [1.0, 0.3, -0.7, 1.1, 0.0, 0.2, -0.4, 0.5];
        assert_eq!(p.observe(&xt, false), xt);
        assert_eq!(p.h_x.eval(0.7), 0.0);
    }

    #[test]
    fn observation_shift_only_on_target() {
        let p = GeneratorParams::config(ConfigId::I);
        let xt = [1.0, 0.3, -0.7, 1.1, 0.0, 0.2, -0.4, 0.5];
        let s = p.observe(&xt, true);
        assert_eq!(s[2], -0.7 / 0.8);
        assert_eq!(s[3], 1.1 / 0.8);
        let t = p.observe(&xt, false);
        let shift = 0.2 * (0.75 * PI * 0.3).sin();
        assert!((t[2] * 0.8 - shift - xt[2]).abs() < 1e-15);
    }

    #[test]
    fn configs_i_and_ii_select_identically() {
        let a = gen_population(&GeneratorParams::config(ConfigId::I), 40, 60, 5).unwrap();
        let b = gen_population(&GeneratorParams::config(ConfigId::Ii), 40, 60, 5).unwrap();
        assert_eq!(a.data.source_x, b.data.source_x);
        assert_eq!(a.data.target_x, b.data.target_x);
    }

    #[test]
    fn neutral_selection_is_balanced() {
        let mut p = GeneratorParams::config(ConfigId::Iv);
        p.a_x = [0.0; 8];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rows = gen_covariates(100_000, &p.sigma_v, p.truncation, &mut rng).unwrap();
        let share = rows.iter().filter(|xt| rng.gen::<f64>() < p.source_probability(xt)).count() as f64 / 1e5;
        assert!((share - 0.5).abs() < 0.01, "{share}");
    }
}

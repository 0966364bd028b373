//! Latent dropout schedules.
//!
//! * TailDrop zeroes a random-length suffix of the latent vector. The drop
//!   count `D` follows the power law `Pr(D < τM) = τ^β`, sampled by inverse
//!   CDF as `D = ⌊M·u^{1/β}⌋` and clamped to `M − 1` so one latent survives.
//! * Uniform drops every latent independently with probability `p`.
//! * Independent drops latent `m` with its own non-decreasing rate.
//!
//! None of the masks rescale surviving activations.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Rng};

#[derive(Clone, Debug, PartialEq)]
pub enum DropMode {
    TailDrop { beta: f64 },
    Uniform { p: f64 },
    Independent { rates: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TailDropSchedule {
    pub latent_dim: usize,
    pub mode: DropMode,
}

impl TailDropSchedule {
    pub fn taildrop(latent_dim: usize, beta: f64) -> Result<Self> {
        Self::new(latent_dim, DropMode::TailDrop { beta })
    }

    pub fn uniform(latent_dim: usize, p: f64) -> Result<Self> {
        Self::new(latent_dim, DropMode::Uniform { p })
    }

    pub fn independent(rates: Vec<f64>) -> Result<Self> {
        Self::new(rates.len(), DropMode::Independent { rates })
    }

    /// No dropout at all (uniform with `p = 0`).
    pub fn none(latent_dim: usize) -> Self {
        Self {
            latent_dim,
            mode: DropMode::Uniform { p: 0.0 },
        }
    }

    pub fn new(latent_dim: usize, mode: DropMode) -> Result<Self> {
        let s = Self { latent_dim, mode };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::Config("schedule needs a latent width of at least 1".into()));
        }
        match &self.mode {
            DropMode::TailDrop { beta } => {
                if !(*beta > 0.0 && beta.is_finite()) {
                    return Err(Error::Config(format!("TailDrop order beta={beta} must be > 0")));
                }
            }
            DropMode::Uniform { p } => {
                if !(0.0..1.0).contains(p) {
                    return Err(Error::Config(format!("dropout rate p={p} must lie in [0, 1)")));
                }
            }
            DropMode::Independent { rates } => {
                if rates.len() != self.latent_dim {
                    return Err(Error::Config(format!(
                        "{} rates for latent width {}",
                        rates.len(),
                        self.latent_dim
                    )));
                }
                if let Some(r) = rates.iter().find(|r| !(0.0..1.0).contains(*r)) {
                    return Err(Error::Config(format!("rate {r} outside [0, 1)")));
                }
                if rates.windows(2).any(|w| w[1] < w[0]) {
                    return Err(Error::Config("independent rates must be non-decreasing".into()));
                }
            }
        }
        Ok(())
    }

    pub fn with_latent_dim(&self, latent_dim: usize) -> Result<Self> {
        Self::new(latent_dim, self.mode.clone())
    }

    /// Probability that latent `m` (0-based) survives.
    pub fn keep_probabilities(&self) -> Vec<f64> {
        let m_dim = self.latent_dim;
        match &self.mode {
            DropMode::TailDrop { beta } => (0..m_dim)
                .map(|m| taildrop_cdf(*beta, m_dim, m_dim - m - 1))
                .collect(),
            DropMode::Uniform { p } => vec![1.0 - p; m_dim],
            DropMode::Independent { rates } => rates.iter().map(|r| 1.0 - r).collect(),
        }
    }

    /// Draws a `batch × M` 0/1 mask, one independent pattern per row.
    pub fn sample_mask(&self, batch: usize, rng: &mut Rng) -> Matrix {
        let m_dim = self.latent_dim;
        let mut mask = Matrix::zeros(batch, m_dim);
        for r in 0..batch {
            let row = mask.row_mut(r);
            match &self.mode {
                DropMode::TailDrop { beta } => {
                    let d = taildrop_length_unchecked(*beta, m_dim, rng.uniform());
                    row[..m_dim - d].fill(1.0);
                }
                DropMode::Uniform { p } => {
                    for v in row.iter_mut() {
                        *v = if rng.uniform() >= *p { 1.0 } else { 0.0 };
                    }
                }
                DropMode::Independent { rates } => {
                    for (v, rate) in row.iter_mut().zip(rates) {
                        *v = if rng.uniform() >= *rate { 1.0 } else { 0.0 };
                    }
                }
            }
        }
        mask
    }

    /// Weights `ω_L = Pr(D = M − L)` for `L = 1..=M` (index `L − 1`) that the
    /// stochastic tail drop implicitly assigns to each survivor width.
    pub fn implied_weights(&self) -> Result<Vec<f64>> {
        let DropMode::TailDrop { beta } = self.mode else {
            return Err(Error::Mode(format!(
                "implied weights are defined for TailDrop only, schedule is {self}"
            )));
        };
        let m = self.latent_dim;
        Ok((1..=m)
            .map(|l| {
                let d = m - l;
                let upper = taildrop_cdf(beta, m, d);
                let lower = if d == 0 { 0.0 } else { taildrop_cdf(beta, m, d - 1) };
                upper - lower
            })
            .collect())
    }
}

/// `Pr(D ≤ d)` under the floored, clamped inverse-CDF rule.
pub fn taildrop_cdf(beta: f64, latent_dim: usize, d: usize) -> f64 {
    if d + 1 >= latent_dim {
        1.0
    } else {
        ((d + 1) as f64 / latent_dim as f64).powf(beta)
    }
}

/// Number of trailing latents to drop for the uniform variate `u ∈ [0, 1)`.
pub fn taildrop_length(beta: f64, latent_dim: usize, u: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&u) {
        return Err(Error::Domain(format!("uniform variate {u} outside [0, 1)")));
    }
    if !(beta > 0.0) || latent_dim == 0 {
        return Err(Error::Domain(format!(
            "need beta > 0 and M >= 1, got beta={beta}, M={latent_dim}"
        )));
    }
    Ok(taildrop_length_unchecked(beta, latent_dim, u))
}

fn taildrop_length_unchecked(beta: f64, latent_dim: usize, u: f64) -> usize {
    let d = (latent_dim as f64 * u.powf(1.0 / beta)).floor() as usize;
    d.min(latent_dim - 1)
}

impl fmt::Display for TailDropSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.mode {
            DropMode::TailDrop { beta } => write!(f, "taildrop(beta={beta})"),
            DropMode::Uniform { p } => write!(f, "uniform(p={p})"),
            DropMode::Independent { rates } => {
                write!(f, "independent(rates=")?;
                for (i, r) in rates.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" ")?;
                    }
                    write!(f, "{r}")?;
                }
                f.write_str(")")
            }
        }
    }
}

/// Parses the `Display` form, e.g. `taildrop(beta=0.67)` or `uniform(p=0.9)`.
impl FromStr for DropMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("cannot parse schedule {s:?}"));
        let (name, rest) = s.split_once('(').ok_or_else(bad)?;
        let body = rest.strip_suffix(')').ok_or_else(bad)?;
        let (key, value) = body.split_once('=').ok_or_else(bad)?;
        let num = |v: &str| v.trim().parse::<f64>().map_err(|_| bad());
        match (name.trim(), key.trim()) {
            ("taildrop", "beta") => Ok(DropMode::TailDrop { beta: num(value)? }),
            ("uniform", "p") => Ok(DropMode::Uniform { p: num(value)? }),
            ("independent", "rates") => Ok(DropMode::Independent {
                rates: value
                    .split_whitespace()
                    .map(num)
                    .collect::<Result<Vec<_>>>()?,
            }),
            _ => Err(bad()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Rng;
    use proptest::prelude::*;

    #[test]
    fn length_examples() {
        assert_eq!(taildrop_length(1.0, 64, 0.5).unwrap(), 32);
        assert_eq!(taildrop_length(1.0, 64, 0.0).unwrap(), 0);
        assert_eq!(taildrop_length(1.0, 64, 1e-12).unwrap(), 0);
        assert_eq!(taildrop_length(1.0, 64, 1.0 - f64::EPSILON).unwrap(), 63);
        assert!(matches!(taildrop_length(1.0, 64, 1.0), Err(Error::Domain(_))));
        assert!(matches!(taildrop_length(1.0, 64, -0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn power_law_monte_carlo() {
        let mut rng = Rng::new(2021);
        let n = 1_000_000;
        let below = (0..n)
            .filter(|_| taildrop_length(2.0, 100, rng.uniform()).unwrap() < 50)
            .count();
        let freq = below as f64 / n as f64;
        assert!((freq - 0.25).abs() <= 0.005, "{freq}");
    }

    /// Exact keep frequency by enumerating a fine midpoint grid of u.
    fn enumerated_keep(beta: f64, m_dim: usize, grid: usize) -> Vec<f64> {
        let mut keep = vec![0.0; m_dim];
        for i in 0..grid {
            let u = (i as f64 + 0.5) / grid as f64;
            let survivors = m_dim - taildrop_length(beta, m_dim, u).unwrap();
            for k in keep.iter_mut().take(survivors) {
                *k += 1.0;
            }
        }
        keep.iter().map(|k| k / grid as f64).collect()
    }

    #[test]
    fn taildrop_keep_frequencies() {
        let s = TailDropSchedule::taildrop(64, 1.0).unwrap();
        let rows = 100_000;
        let mask = s.sample_mask(rows, &mut Rng::new(77));
        let freq: Vec<f64> = mask.col_sums().iter().map(|c| c / rows as f64).collect();
        let oracle = enumerated_keep(1.0, 64, 1_000_000);
        for (m, (f, o)) in freq.iter().zip(&oracle).enumerate() {
            assert!((f - o).abs() <= 0.01, "node {m}: {f} vs {o}");
        }
        for (a, b) in s.keep_probabilities().iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-5);
        }
    }

    #[test]
    fn keep_probability_is_non_increasing() {
        let rows = 100_000;
        let indep = TailDropSchedule::independent((0..16).map(|m| m as f64 / 20.0).collect()).unwrap();
        let taild = TailDropSchedule::taildrop(16, 0.67).unwrap();
        for s in [indep, taild] {
            let mask = s.sample_mask(rows, &mut Rng::new(3));
            let freq: Vec<f64> = mask.col_sums().iter().map(|c| c / rows as f64).collect();
            assert!(freq.windows(2).all(|w| w[1] <= w[0] + 0.01), "{s}: {freq:?}");
        }
    }

    #[test]
    fn uniform_masks() {
        let s = TailDropSchedule::uniform(8, 0.0).unwrap();
        assert_eq!(s.sample_mask(50, &mut Rng::new(1)), Matrix::filled(50, 8, 1.0));
        let s = TailDropSchedule::uniform(10, 0.9).unwrap();
        let mask = s.sample_mask(20_000, &mut Rng::new(1));
        let mean = mask.as_slice().iter().sum::<f64>() / mask.as_slice().len() as f64;
        assert!((mean - 0.1).abs() < 0.005);
    }

    #[test]
    fn implied_weight_examples() {
        let w = TailDropSchedule::taildrop(4, 1.0).unwrap().implied_weights().unwrap();
        for v in &w {
            assert!((v - 0.25).abs() < 1e-15);
        }
        let heavy = TailDropSchedule::taildrop(4, 8.0).unwrap().implied_weights().unwrap();
        // L = 1 ↔ D = 3: 1 − (3/4)^8
        assert!((heavy[0] - (1.0 - 0.75f64.powi(8))).abs() < 1e-15);
        assert!(heavy[0] > w[0] && heavy[3] < w[3]);
        assert!(matches!(
            TailDropSchedule::uniform(4, 0.5).unwrap().implied_weights(),
            Err(Error::Mode(_))
        ));
    }

    #[test]
    fn invalid_schedules() {
        assert!(TailDropSchedule::taildrop(4, 0.0).is_err());
        assert!(TailDropSchedule::uniform(4, 1.0).is_err());
        assert!(TailDropSchedule::independent(vec![0.5, 0.2]).is_err());
        assert!(TailDropSchedule::independent(vec![0.5, 1.0]).is_err());
    }

    #[test]
    fn display_round_trip() {
        for s in [
            TailDropSchedule::taildrop(4, 0.67).unwrap(),
            TailDropSchedule::uniform(4, 0.9).unwrap(),
            TailDropSchedule::independent(vec![0.0, 0.25, 0.5, 0.75]).unwrap(),
        ] {
            assert_eq!(s.to_string().parse::<DropMode>().unwrap(), s.mode);
        }
        assert!("taildrop(p=1)".parse::<DropMode>().is_err());
    }

    proptest! {
        #[test]
        fn taildrop_rows_are_prefix_suffix(beta in 0.1f64..5.0, m in 1usize..80, seed in any::<u64>()) {
            let s = TailDropSchedule::taildrop(m, beta).unwrap();
            let mask = s.sample_mask(64, &mut Rng::new(seed));
            for r in 0..64 {
                let row = mask.row(r);
                prop_assert_eq!(row[0], 1.0);
                for w in row.windows(2) {
                    prop_assert!(w[1] <= w[0]);
                }
            }
        }

        #[test]
        fn implied_weights_normalized(beta in 0.05f64..20.0, m in 1usize..300) {
            let w = TailDropSchedule::taildrop(m, beta).unwrap().implied_weights().unwrap();
            prop_assert!(w.iter().all(|&v| v >= 0.0));
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }
}

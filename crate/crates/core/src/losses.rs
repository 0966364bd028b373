//! Reconstruction distortions with analytic gradients.

use crate::datasets::ImageShape;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Mean of `(x' − x)²` over all entries, and its gradient w.r.t. `x'`.
pub fn mse(x: &Matrix, x_recon: &Matrix) -> Result<(f64, Matrix)> {
    let diff = x_recon.sub(x)?;
    let n = diff.as_slice().len().max(1) as f64;
    let loss = diff.as_slice().iter().map(|d| d * d).sum::<f64>() / n;
    Ok((loss, diff.scale(2.0 / n)))
}

/// Loss only, without allocating a gradient.
pub fn mse_value(x: &Matrix, x_recon: &Matrix) -> Result<f64> {
    if x.shape() != x_recon.shape() {
        return Err(Error::Dimension {
            op: "mse",
            left: x.shape(),
            right: x_recon.shape(),
        });
    }
    let n = x.as_slice().len().max(1) as f64;
    Ok(x.as_slice()
        .iter()
        .zip(x_recon.as_slice())
        .map(|(a, b)| (b - a) * (b - a))
        .sum::<f64>()
        / n)
}

pub fn mse_db(mse: f64) -> Result<f64> {
    if !(mse > 0.0) {
        return Err(Error::Domain(format!("MSE {mse} must be positive for dB")));
    }
    Ok(10.0 * mse.log10())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SsimWindow {
    Gaussian { size: usize, sigma: f64 },
    Uniform { size: usize },
}

impl SsimWindow {
    pub fn size(&self) -> usize {
        match *self {
            SsimWindow::Gaussian { size, .. } | SsimWindow::Uniform { size } => size,
        }
    }

    /// Normalized `size × size` weights, row-major.
    pub fn weights(&self) -> Vec<f64> {
        let size = self.size();
        let mut w = match *self {
            SsimWindow::Gaussian { sigma, .. } => {
                let c = (size as f64 - 1.0) / 2.0;
                let g: Vec<f64> = (0..size)
                    .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
                    .collect();
                let mut w = Vec::with_capacity(size * size);
                for a in &g {
                    for b in &g {
                        w.push(a * b);
                    }
                }
                w
            }
            SsimWindow::Uniform { .. } => vec![1.0; size * size],
        };
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        w
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimConfig {
    pub window: SsimWindow,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimConfig {
    /// 11×11 Gaussian window with σ = 1.5, K1 = 0.01, K2 = 0.03, range 1.
    fn default() -> Self {
        Self {
            window: SsimWindow::Gaussian {
                size: 11,
                sigma: 1.5,
            },
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl SsimConfig {
    pub fn uniform8() -> Self {
        Self {
            window: SsimWindow::Uniform { size: 8 },
            ..Self::default()
        }
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    /// Largest window that fits, for images smaller than the configured window.
    pub fn fitted_to(&self, shape: ImageShape) -> Self {
        let limit = shape.height.min(shape.width);
        if self.window.size() <= limit {
            return *self;
        }
        let window = match self.window {
            SsimWindow::Gaussian { sigma, .. } => SsimWindow::Gaussian { size: limit, sigma },
            SsimWindow::Uniform { .. } => SsimWindow::Uniform { size: limit },
        };
        Self { window, ..*self }
    }

    fn check(&self, shape: ImageShape) -> Result<()> {
        let size = self.window.size();
        if size == 0 || size > shape.height || size > shape.width {
            return Err(Error::Config(format!(
                "SSIM window {size}x{size} does not fit a {}x{} image",
                shape.height, shape.width
            )));
        }
        if !(self.c1() > 0.0 && self.c2() > 0.0) {
            return Err(Error::Config("SSIM constants C1 and C2 must be positive".into()));
        }
        Ok(())
    }
}

/// Mean SSIM of one image pair (flat, channel-planar) over all valid window
/// positions and channels, with the gradient w.r.t. `y` (the reconstruction).
pub fn ssim(x: &[f64], y: &[f64], shape: ImageShape, cfg: &SsimConfig) -> Result<(f64, Vec<f64>)> {
    ssim_impl(x, y, shape, cfg, true)
}

pub fn ssim_value(x: &[f64], y: &[f64], shape: ImageShape, cfg: &SsimConfig) -> Result<f64> {
    Ok(ssim_impl(x, y, shape, cfg, false)?.0)
}

fn ssim_impl(
    x: &[f64],
    y: &[f64],
    shape: ImageShape,
    cfg: &SsimConfig,
    want_grad: bool,
) -> Result<(f64, Vec<f64>)> {
    cfg.check(shape)?;
    if x.len() != shape.len() || y.len() != shape.len() {
        return Err(Error::Dimension {
            op: "ssim",
            left: (1, x.len()),
            right: (1, y.len()),
        });
    }
    let (h, w, size) = (shape.height, shape.width, cfg.window.size());
    let weights = cfg.window.weights();
    let (c1, c2) = (cfg.c1(), cfg.c2());
    let positions = (h - size + 1) * (w - size + 1);
    let count = (positions * shape.channels) as f64;

    let mut total = 0.0;
    let mut grad = if want_grad { vec![0.0; y.len()] } else { Vec::new() };

    for ch in 0..shape.channels {
        let base = ch * shape.plane();
        for i in 0..=(h - size) {
            for j in 0..=(w - size) {
                let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for a in 0..size {
                    let row = base + (i + a) * w + j;
                    let wrow = &weights[a * size..(a + 1) * size];
                    for (b, &wk) in wrow.iter().enumerate() {
                        let (xv, yv) = (x[row + b], y[row + b]);
                        mx += wk * xv;
                        my += wk * yv;
                        sxx += wk * xv * xv;
                        syy += wk * yv * yv;
                        sxy += wk * xv * yv;
                    }
                }
                let var_x = sxx - mx * mx;
                let var_y = syy - my * my;
                let cov = sxy - mx * my;
                let a1 = 2.0 * mx * my + c1;
                let a2 = 2.0 * cov + c2;
                let b1 = mx * mx + my * my + c1;
                let b2 = var_x + var_y + c2;
                let s = (a1 * a2) / (b1 * b2);
                total += s;

                if want_grad {
                    // Partials of s in (μy, σy², σxy), the latter two already
                    // carrying their own μy dependence.
                    let d_mu = (2.0 * mx * a2) / (b1 * b2) - s * 2.0 * my / b1;
                    let d_var = -s / b2;
                    let d_cov = 2.0 * a1 / (b1 * b2);
                    let constant = d_mu - 2.0 * d_var * my - d_cov * mx;
                    for a in 0..size {
                        let row = base + (i + a) * w + j;
                        let wrow = &weights[a * size..(a + 1) * size];
                        for (b, &wk) in wrow.iter().enumerate() {
                            let k = row + b;
                            grad[k] += wk * (constant + 2.0 * d_var * y[k] + d_cov * x[k]);
                        }
                    }
                }
            }
        }
    }
    if want_grad {
        grad.iter_mut().for_each(|g| *g /= count);
    }
    Ok((total / count, grad))
}

/// Mean over rows of `−SSIM(x_i, x'_i)` and its gradient w.r.t. `x'`.
pub fn neg_ssim_loss(
    x: &Matrix,
    x_recon: &Matrix,
    shape: ImageShape,
    cfg: &SsimConfig,
) -> Result<(f64, Matrix)> {
    if x.shape() != x_recon.shape() {
        return Err(Error::Dimension {
            op: "neg_ssim_loss",
            left: x.shape(),
            right: x_recon.shape(),
        });
    }
    let batch = x.rows().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        let (s, g) = ssim(x.row(r), x_recon.row(r), shape, cfg)?;
        loss -= s;
        grad.row_mut(r)
            .iter_mut()
            .zip(g)
            .for_each(|(out, v)| *out = -v / batch);
    }
    Ok((loss / batch, grad))
}

/// Mean SSIM over rows.
pub fn mean_ssim(x: &Matrix, x_recon: &Matrix, shape: ImageShape, cfg: &SsimConfig) -> Result<f64> {
    if x.shape() != x_recon.shape() {
        return Err(Error::Dimension {
            op: "mean_ssim",
            left: x.shape(),
            right: x_recon.shape(),
        });
    }
    let mut total = 0.0;
    for r in 0..x.rows() {
        total += ssim_value(x.row(r), x_recon.row(r), shape, cfg)?;
    }
    Ok(total / x.rows().max(1) as f64)
}

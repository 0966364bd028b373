//! Fully-connected auto-encoder with a linear latent layer.
//!
//! encoder: `z = W2·relu(W1·x + b1) + b2`
//! decoder: `x' = act(V2·relu(V1·z + c1) + c2)`

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputActivation {
    Sigmoid,
    Linear,
}

impl fmt::Display for OutputActivation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutputActivation::Sigmoid => "sigmoid",
            OutputActivation::Linear => "linear",
        })
    }
}

impl FromStr for OutputActivation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(OutputActivation::Sigmoid),
            "linear" => Ok(OutputActivation::Linear),
            other => Err(Error::Config(format!("unknown output activation {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AeConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub latent_dim: usize,
    pub output_activation: OutputActivation,
    pub seed: u64,
}

impl AeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim < 1 || self.latent_dim > self.input_dim {
            return Err(Error::Config(format!(
                "latent width {} must lie in 1..={}",
                self.latent_dim, self.input_dim
            )));
        }
        if self.hidden_dim < 1 {
            return Err(Error::Config("hidden width must be at least 1".into()));
        }
        Ok(())
    }
}

/// Encoder (`enc_*`) and decoder (`dec_*`) parameters. Weight matrices are
/// stored output-major, e.g. `enc_w1` is `hidden × input`.
#[derive(Clone, Debug, PartialEq)]
pub struct AeParams {
    pub enc_w1: Matrix,
    pub enc_b1: Vec<f64>,
    pub enc_w2: Matrix,
    pub enc_b2: Vec<f64>,
    pub dec_w1: Matrix,
    pub dec_b1: Vec<f64>,
    pub dec_w2: Matrix,
    pub dec_b2: Vec<f64>,
}

pub const BLOCK_NAMES: [&str; 8] = [
    "enc_w1", "enc_b1", "enc_w2", "enc_b2", "dec_w1", "dec_b1", "dec_w2", "dec_b2",
];

impl AeParams {
    pub fn zeros(config: &AeConfig) -> Self {
        let (n, h, m) = (config.input_dim, config.hidden_dim, config.latent_dim);
        Self {
            enc_w1: Matrix::zeros(h, n),
            enc_b1: vec![0.0; h],
            enc_w2: Matrix::zeros(m, h),
            enc_b2: vec![0.0; m],
            dec_w1: Matrix::zeros(h, m),
            dec_b1: vec![0.0; h],
            dec_w2: Matrix::zeros(n, h),
            dec_b2: vec![0.0; n],
        }
    }

    /// He initialization: weights `N(0, 2/fan_in)`, biases zero.
    pub fn init(config: &AeConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut p = Self::zeros(config);
        for w in [&mut p.enc_w1, &mut p.enc_w2, &mut p.dec_w1, &mut p.dec_w2] {
            let std = (2.0 / w.cols() as f64).sqrt();
            for v in w.as_mut_slice() {
                *v = std * rng.normal();
            }
        }
        Ok(p)
    }

    /// Flat views of the eight blocks, in `BLOCK_NAMES` order.
    pub fn blocks(&self) -> [&[f64]; 8] {
        [
            self.enc_w1.as_slice(),
            &self.enc_b1,
            self.enc_w2.as_slice(),
            &self.enc_b2,
            self.dec_w1.as_slice(),
            &self.dec_b1,
            self.dec_w2.as_slice(),
            &self.dec_b2,
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut [f64]; 8] {
        [
            self.enc_w1.as_mut_slice(),
            &mut self.enc_b1,
            self.enc_w2.as_mut_slice(),
            &mut self.enc_b2,
            self.dec_w1.as_mut_slice(),
            &mut self.dec_b1,
            self.dec_w2.as_mut_slice(),
            &mut self.dec_b2,
        ]
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for b in z.blocks_mut() {
            b.fill(0.0);
        }
        z
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn matches(&self, config: &AeConfig) -> bool {
        let z = Self::zeros(config);
        self.blocks()
            .iter()
            .zip(z.blocks())
            .all(|(a, b)| a.len() == b.len())
            && self.enc_w1.shape() == z.enc_w1.shape()
            && self.enc_w2.shape() == z.enc_w2.shape()
            && self.dec_w1.shape() == z.dec_w1.shape()
            && self.dec_w2.shape() == z.dec_w2.shape()
    }
}

/// Everything the backward pass needs from one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub x: Matrix,
    pub enc_pre: Matrix,
    pub enc_hidden: Matrix,
    pub z: Matrix,
    pub mask: Matrix,
    pub z_masked: Matrix,
    pub dec_pre: Matrix,
    pub dec_hidden: Matrix,
    pub output: Matrix,
}

fn affine(x: &Matrix, w: &Matrix, b: &[f64]) -> Result<Matrix> {
    let mut out = x.matmul_t(w)?;
    out.add_row_vector(b)?;
    Ok(out)
}

fn relu(m: &Matrix) -> Matrix {
    m.map(|v| if v > 0.0 { v } else { 0.0 })
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn check_cols(x: &Matrix, want: usize, op: &'static str) -> Result<()> {
    if x.cols() != want {
        return Err(Error::Dimension {
            op,
            left: x.shape(),
            right: (x.rows(), want),
        });
    }
    Ok(())
}

fn encode_parts(params: &AeParams, x: &Matrix) -> Result<(Matrix, Matrix, Matrix)> {
    let pre = affine(x, &params.enc_w1, &params.enc_b1)?;
    let hidden = relu(&pre);
    let z = affine(&hidden, &params.enc_w2, &params.enc_b2)?;
    Ok((pre, hidden, z))
}

fn decode_parts(
    params: &AeParams,
    config: &AeConfig,
    z: &Matrix,
) -> Result<(Matrix, Matrix, Matrix)> {
    let pre = affine(z, &params.dec_w1, &params.dec_b1)?;
    let hidden = relu(&pre);
    let mut out = affine(&hidden, &params.dec_w2, &params.dec_b2)?;
    if config.output_activation == OutputActivation::Sigmoid {
        out.map_inplace(sigmoid);
    }
    Ok((pre, hidden, out))
}

pub fn encode(params: &AeParams, config: &AeConfig, x: &Matrix) -> Result<Matrix> {
    check_cols(x, config.input_dim, "encode")?;
    Ok(encode_parts(params, x)?.2)
}

pub fn decode(params: &AeParams, config: &AeConfig, z: &Matrix) -> Result<Matrix> {
    check_cols(z, config.latent_dim, "decode")?;
    Ok(decode_parts(params, config, z)?.2)
}

/// Zeroes latents where `mask` is 0. Selection rather than multiplication, so a
/// dropped latent is exactly `+0.0` just as in deterministic truncation.
pub fn apply_mask(z: &Matrix, mask: &Matrix) -> Result<Matrix> {
    z.zip_map(mask, "apply_mask", |v, m| if m == 0.0 { 0.0 } else { v })
}

pub fn forward_train(
    params: &AeParams,
    config: &AeConfig,
    x: &Matrix,
    mask: &Matrix,
) -> Result<(Matrix, ForwardCache)> {
    check_cols(x, config.input_dim, "forward_train")?;
    if mask.shape() != (x.rows(), config.latent_dim) {
        return Err(Error::Dimension {
            op: "forward_train mask",
            left: mask.shape(),
            right: (x.rows(), config.latent_dim),
        });
    }
    let (enc_pre, enc_hidden, z) = encode_parts(params, x)?;
    let z_masked = apply_mask(&z, mask)?;
    let (dec_pre, dec_hidden, output) = decode_parts(params, config, &z_masked)?;
    let cache = ForwardCache {
        x: x.clone(),
        enc_pre,
        enc_hidden,
        z,
        mask: mask.clone(),
        z_masked,
        dec_pre,
        dec_hidden,
        output: output.clone(),
    };
    Ok((output, cache))
}

fn relu_grad(upstream: &Matrix, pre: &Matrix) -> Result<Matrix> {
    upstream.zip_map(pre, "relu_grad", |g, a| if a > 0.0 { g } else { 0.0 })
}

/// Reverse-mode gradients of the cached forward pass given `∂loss/∂x'`.
pub fn backward(
    params: &AeParams,
    config: &AeConfig,
    cache: &ForwardCache,
    d_output: &Matrix,
) -> Result<AeParams> {
    let batch = cache.x.rows();
    let expected = (batch, config.input_dim);
    if d_output.shape() != expected || cache.output.shape() != expected {
        return Err(Error::Consistency(format!(
            "loss gradient {:?} does not match cached output {:?}",
            d_output.shape(),
            cache.output.shape()
        )));
    }
    if !params.matches(config)
        || cache.z.shape() != (batch, config.latent_dim)
        || cache.enc_pre.shape() != (batch, config.hidden_dim)
    {
        return Err(Error::Consistency("cache does not match parameters".into()));
    }

    let d_out_pre = match config.output_activation {
        OutputActivation::Sigmoid => d_output.zip_map(&cache.output, "sigmoid_grad", |g, y| {
            g * y * (1.0 - y)
        })?,
        OutputActivation::Linear => d_output.clone(),
    };

    let dec_w2 = d_out_pre.t_matmul(&cache.dec_hidden)?;
    let dec_b2 = d_out_pre.col_sums();
    let d_dec_hidden = d_out_pre.matmul(&params.dec_w2)?;
    let d_dec_pre = relu_grad(&d_dec_hidden, &cache.dec_pre)?;

    let dec_w1 = d_dec_pre.t_matmul(&cache.z_masked)?;
    let dec_b1 = d_dec_pre.col_sums();
    let d_z_masked = d_dec_pre.matmul(&params.dec_w1)?;
    let d_z = apply_mask(&d_z_masked, &cache.mask)?;

    let enc_w2 = d_z.t_matmul(&cache.enc_hidden)?;
    let enc_b2 = d_z.col_sums();
    let d_enc_hidden = d_z.matmul(&params.enc_w2)?;
    let d_enc_pre = relu_grad(&d_enc_hidden, &cache.enc_pre)?;

    let enc_w1 = d_enc_pre.t_matmul(&cache.x)?;
    let enc_b1 = d_enc_pre.col_sums();

    Ok(AeParams {
        enc_w1,
        enc_b1,
        enc_w2,
        enc_b2,
        dec_w1,
        dec_b1,
        dec_w2,
        dec_b2,
    })
}

/// A trained auto-encoder: configuration plus parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Autoencoder {
    pub config: AeConfig,
    pub params: AeParams,
}

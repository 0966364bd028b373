//! Browser bindings for the interactive demo page in `www/`.

use rlae::datasets::{synth_gaussian, GaussianSpec};
use rlae::eval::reconstruct;
use rlae::linalg::Rng;
use rlae::pca::{fit_pca, mean_total_squared_error, theoretical_distortion};
use rlae::regularizers::TailDropSchedule;
use wasm_bindgen::prelude::*;

/// Keep probability of every latent followed by the implied weight of every
/// survivor width `L = 1..=M`; `2M` values.
pub fn taildrop_profile(beta: f64, latent_dim: usize) -> Result<Vec<f64>, String> {
    let s = TailDropSchedule::taildrop(latent_dim, beta).map_err(|e| e.to_string())?;
    let mut out = s.keep_probabilities();
    out.extend(s.implied_weights().map_err(|e| e.to_string())?);
    Ok(out)
}

/// `rows × M` 0/1 masks, row-major.
pub fn sample_masks(beta: f64, latent_dim: usize, rows: usize, seed: u64) -> Result<Vec<u8>, String> {
    let s = TailDropSchedule::taildrop(latent_dim, beta).map_err(|e| e.to_string())?;
    let mask = s.sample_mask(rows, &mut Rng::new(seed));
    Ok(mask.as_slice().iter().map(|&v| v as u8).collect())
}

/// PCA on `samples` Gaussian draws with spectrum `λ_n = n^(−decay)`. Returns
/// the analytic tail sums for `L = 1..=dim` followed by the measured mean
/// squared error per sample on a fresh draw; `2·dim` values.
pub fn pca_rate_distortion(dim: usize, decay: f64, samples: usize, seed: u64) -> Result<Vec<f64>, String> {
    if dim == 0 || samples < 2 {
        return Err("need dim >= 1 and at least 2 samples".into());
    }
    let spec = GaussianSpec {
        dim,
        eigenvalues: (1..=dim).map(|n| (n as f64).powf(-decay)).collect(),
        mean: vec![0.0; dim],
        rotation_seed: seed,
    };
    let err = |e: rlae::Error| e.to_string();
    let fit = synth_gaussian(&spec, samples, &mut Rng::derive(seed, 1)).map_err(err)?;
    let test = synth_gaussian(&spec, samples, &mut Rng::derive(seed, 2)).map_err(err)?;
    let model = fit_pca(&fit, dim).map_err(err)?;
    let mut out = Vec::with_capacity(2 * dim);
    for l in 1..=dim {
        out.push(theoretical_distortion(&spec.eigenvalues, l).map_err(err)?);
    }
    for l in 1..=dim {
        let rec = reconstruct(&model, &test.images, l).map_err(err)?;
        out.push(mean_total_squared_error(&test.images, &rec).map_err(err)?);
    }
    Ok(out)
}

#[wasm_bindgen(js_name = taildropProfile)]
pub fn taildrop_profile_js(beta: f64, latent_dim: usize) -> Result<Vec<f64>, JsError> {
    taildrop_profile(beta, latent_dim).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = sampleMasks)]
pub fn sample_masks_js(beta: f64, latent_dim: usize, rows: usize, seed: u32) -> Result<Vec<u8>, JsError> {
    sample_masks(beta, latent_dim, rows, seed as u64).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = pcaRateDistortion)]
pub fn pca_rate_distortion_js(dim: usize, decay: f64, samples: usize, seed: u32) -> Result<Vec<f64>, JsError> {
    pca_rate_distortion(dim, decay, samples, seed as u64).map_err(|e| JsError::new(&e))
}

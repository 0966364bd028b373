#![allow(dead_code)]

use std::path::PathBuf;

use rlae::datasets::ImageShape;
use rlae::linalg::{Matrix, Rng};
use rlae::losses::{mse, neg_ssim_loss, SsimConfig};
use rlae::model::{backward, forward_train, AeConfig, AeParams, OutputActivation, BLOCK_NAMES};
use rlae::regularizers::TailDropSchedule;

pub fn mnist_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-subset")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Loss {
    Mse,
    NegSsim,
}

/// Worst element-wise relative error between back-propagated and
/// central-difference gradients, per parameter block.
pub fn gradient_check(loss: Loss, seed: u64) -> Vec<(&'static str, f64)> {
    let config = AeConfig {
        input_dim: 6,
        hidden_dim: 5,
        latent_dim: 3,
        output_activation: OutputActivation::Sigmoid,
        seed,
    };
    let shape = ImageShape::new(2, 3, 1);
    let ssim = SsimConfig::default().fitted_to(shape);
    let mut rng = Rng::new(seed);
    let params = AeParams::init(&config, &mut rng).unwrap();
    let x = Matrix::from_fn(4, 6, |_, _| rng.uniform());
    let mask = TailDropSchedule::taildrop(3, 1.0).unwrap().sample_mask(4, &mut rng);

    let eval = |p: &AeParams| -> (f64, Matrix) {
        let (out, _) = forward_train(p, &config, &x, &mask).unwrap();
        match loss {
            Loss::Mse => mse(&x, &out).unwrap(),
            Loss::NegSsim => neg_ssim_loss(&x, &out, shape, &ssim).unwrap(),
        }
    };
    let (out, cache) = forward_train(&params, &config, &x, &mask).unwrap();
    let d_out = match loss {
        Loss::Mse => mse(&x, &out).unwrap().1,
        Loss::NegSsim => neg_ssim_loss(&x, &out, shape, &ssim).unwrap().1,
    };
    let analytic = backward(&params, &config, &cache, &d_out).unwrap();

    let h = 1e-6;
    let mut report = Vec::new();
    for (b, name) in BLOCK_NAMES.iter().enumerate() {
        let len = params.blocks()[b].len();
        let mut worst = 0.0f64;
        for i in 0..len {
            let mut plus = params.clone();
            plus.blocks_mut()[b][i] += h;
            let mut minus = params.clone();
            minus.blocks_mut()[b][i] -= h;
            let numeric = (eval(&plus).0 - eval(&minus).0) / (2.0 * h);
            let a = analytic.blocks()[b][i];
            let scale = a.abs().max(numeric.abs());
            // Entries that are zero to within finite-difference noise carry no
            // relative information.
            let rel = if scale < 1e-7 { (a - numeric).abs() / 1e-7 } else { (a - numeric).abs() / scale };
            worst = worst.max(rel);
        }
        report.push((*name, worst));
    }
    report
}

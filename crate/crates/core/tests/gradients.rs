mod common;

use common::{gradient_check, Loss};

#[test]
fn mse_backprop_matches_central_differences() {
    for seed in 0..3 {
        let report = gradient_check(Loss::Mse, seed);
        for (block, err) in report {
            assert!(err <= 1e-4, "seed {seed}, {block}: relative error {err:e}");
        }
    }
}

#[test]
fn ssim_backprop_matches_central_differences() {
    for seed in 0..3 {
        let report = gradient_check(Loss::NegSsim, seed);
        for (block, err) in report {
            assert!(err <= 1e-4, "seed {seed}, {block}: relative error {err:e}");
        }
    }
}

//! Adam, the mini-batch training loop with early stopping, and SSIM fine-tuning.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::eval::{reconstruct, AeView};
use crate::linalg::{Matrix, Rng};
use crate::losses::{mean_ssim, mse, mse_value, neg_ssim_loss, SsimConfig};
use crate::model::{self, AeConfig, AeParams, BLOCK_NAMES};
use crate::regularizers::TailDropSchedule;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Mse,
    NegSsim,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Mse => "mse",
            LossKind::NegSsim => "neg_ssim",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(LossKind::Mse),
            "neg_ssim" | "ssim" => Ok(LossKind::NegSsim),
            other => Err(Error::Config(format!("unknown loss {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ValidationMode {
    /// Mask-free loss at the full latent width.
    FullWidth,
    /// Mean of the mask-free loss at widths `M`, `M/2` and `M/4`.
    RateAveraged,
}

impl fmt::Display for ValidationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ValidationMode::FullWidth => "full_width",
            ValidationMode::RateAveraged => "rate_averaged",
        })
    }
}

impl FromStr for ValidationMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full_width" => Ok(ValidationMode::FullWidth),
            "rate_averaged" => Ok(ValidationMode::RateAveraged),
            other => Err(Error::Config(format!("unknown validation mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub loss: LossKind,
    pub seed: u64,
    pub validation_fraction: f64,
    pub validation_mode: ValidationMode,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub ssim: SsimConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            batch_size: 100,
            max_epochs: 500,
            patience: 20,
            loss: LossKind::Mse,
            seed: 0,
            validation_fraction: 0.1,
            validation_mode: ValidationMode::FullWidth,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            ssim: SsimConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config(format!(
                "validation fraction {} must lie in (0, 1)",
                self.validation_fraction
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Adam moment estimates, shaped like the parameters.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub m: AeParams,
    pub v: AeParams,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &AeParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update on a flat block.
pub fn adam_update(
    param: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    cfg: &TrainConfig,
) {
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powf(t as f64);
    let c2 = 1.0 - b2.powf(t as f64);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        param[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
}

/// Advances the step counter and updates every block. Fails without touching
/// anything if a gradient is non-finite.
pub fn adam_step(
    params: &mut AeParams,
    grads: &AeParams,
    state: &mut AdamState,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<()> {
    for (name, g) in BLOCK_NAMES.iter().zip(grads.blocks()) {
        if g.iter().any(|v| !v.is_finite()) {
            let max_abs = g.iter().fold(0.0f64, |m, v| if v.is_nan() { f64::NAN } else { m.max(v.abs()) });
            return Err(Error::NonFinite {
                epoch,
                block: name,
                max_abs,
            });
        }
    }
    state.t += 1;
    let t = state.t;
    for (((p, g), m), v) in params
        .blocks_mut()
        .into_iter()
        .zip(grads.blocks())
        .zip(state.m.blocks_mut())
        .zip(state.v.blocks_mut())
    {
        adam_update(p, g, m, v, t, cfg);
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainHistory {
    pub loss: LossKind,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were returned; `None` if no epoch ran.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

impl TrainHistory {
    fn new(loss: LossKind) -> Self {
        Self {
            loss,
            epochs: Vec::new(),
            best_epoch: None,
            stopped_early: false,
        }
    }

    pub fn best_val_loss(&self) -> Option<f64> {
        let best = self.best_epoch?;
        self.epochs.iter().find(|e| e.epoch == best).map(|e| e.val_loss)
    }

    /// `epoch,train_loss,val_loss,seconds`
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,seconds\n");
        for e in &self.epochs {
            s.push_str(&format!(
                "{},{},{},{:.3}\n",
                e.epoch, e.train_loss, e.val_loss, e.seconds
            ));
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Patience-based early stopping on a monitored loss (lower is better).
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: Option<usize>,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: None,
            since_best: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> StopDecision {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = Some(epoch);
            self.since_best = 0;
            StopDecision::Improved
        } else {
            self.since_best += 1;
            if self.since_best >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }
}

/// Deterministic train/validation split of `data`.
pub fn split_validation(data: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if data.len() < 2 {
        return Err(Error::Input(format!(
            "need at least 2 samples to hold out validation data, got {}",
            data.len()
        )));
    }
    let mut idx: Vec<usize> = (0..data.len()).collect();
    Rng::derive(seed, u64::MAX).shuffle(&mut idx);
    let n_val = ((data.len() as f64 * fraction).round() as usize).clamp(1, data.len() - 1);
    let (val, train) = idx.split_at(n_val);
    Ok((data.select(train), data.select(val)))
}

fn batch_loss(
    loss: LossKind,
    x: &Matrix,
    out: &Matrix,
    data: &Dataset,
    ssim: &SsimConfig,
) -> Result<(f64, Matrix)> {
    match loss {
        LossKind::Mse => mse(x, out),
        LossKind::NegSsim => neg_ssim_loss(x, out, data.shape, &ssim.fitted_to(data.shape)),
    }
}

/// Mask-free loss of `params` on `data` (processed in chunks, mean over all rows).
pub fn evaluate_loss(
    params: &AeParams,
    config: &AeConfig,
    data: &Dataset,
    loss: LossKind,
    mode: ValidationMode,
    ssim: &SsimConfig,
) -> Result<f64> {
    let m = config.latent_dim;
    let widths: Vec<usize> = match mode {
        ValidationMode::FullWidth => vec![m],
        ValidationMode::RateAveraged => vec![m, (m / 2).max(1), (m / 4).max(1)],
    };
    let view = AeView { params, config };
    let ssim = ssim.fitted_to(data.shape);
    let mut total = 0.0;
    for &width in &widths {
        let out = reconstruct(&view, &data.images, width)?;
        total += match loss {
            LossKind::Mse => mse_value(&data.images, &out)?,
            LossKind::NegSsim => -mean_ssim(&data.images, &out, data.shape, &ssim)?,
        };
    }
    Ok(total / widths.len() as f64)
}

/// Trains from a fresh He initialization (seeded by `config.seed`).
pub fn train(
    config: &AeConfig,
    schedule: &TailDropSchedule,
    data: &Dataset,
    tcfg: &TrainConfig,
) -> Result<(AeParams, TrainHistory)> {
    config.validate()?;
    let params = AeParams::init(config, &mut Rng::new(config.seed))?;
    train_from(params, config, schedule, data, tcfg)
}

/// Continues training from `pretrained` with the negative-SSIM loss.
pub fn fine_tune_ssim(
    pretrained: &AeParams,
    config: &AeConfig,
    schedule: &TailDropSchedule,
    data: &Dataset,
    tcfg: &TrainConfig,
) -> Result<(AeParams, TrainHistory)> {
    if !pretrained.matches(config) {
        return Err(Error::Consistency("pretrained parameters do not match the config".into()));
    }
    let tcfg = TrainConfig {
        loss: LossKind::NegSsim,
        ..tcfg.clone()
    };
    train_from(pretrained.clone(), config, schedule, data, &tcfg)
}

/// Trains from the given starting point, holding out a validation split.
pub fn train_from(
    params: AeParams,
    config: &AeConfig,
    schedule: &TailDropSchedule,
    data: &Dataset,
    tcfg: &TrainConfig,
) -> Result<(AeParams, TrainHistory)> {
    tcfg.validate()?;
    if data.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    let (train_set, val_set) = split_validation(data, tcfg.validation_fraction, tcfg.seed)?;
    let (loss, mode, ssim) = (tcfg.loss, tcfg.validation_mode, tcfg.ssim);
    train_with_validation(params, config, schedule, &train_set, tcfg, |_, p| {
        evaluate_loss(p, config, &val_set, loss, mode, &ssim)
    })
}

/// The training loop proper, with a caller-supplied validation monitor
/// `validate(epoch, params) -> loss` evaluated after every epoch.
///
/// Per epoch: reshuffle with a stream derived from `(seed, epoch)`, draw a
/// fresh mask per mini-batch, back-propagate, take an Adam step. Returns the
/// parameters of the best validation epoch.
pub fn train_with_validation<F>(
    mut params: AeParams,
    config: &AeConfig,
    schedule: &TailDropSchedule,
    train_set: &Dataset,
    tcfg: &TrainConfig,
    mut validate: F,
) -> Result<(AeParams, TrainHistory)>
where
    F: FnMut(usize, &AeParams) -> Result<f64>,
{
    tcfg.validate()?;
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    if train_set.dim() != config.input_dim {
        return Err(Error::Consistency(format!(
            "data has {} features, model expects {}",
            train_set.dim(),
            config.input_dim
        )));
    }
    if schedule.latent_dim != config.latent_dim {
        return Err(Error::Consistency(format!(
            "schedule width {} differs from latent width {}",
            schedule.latent_dim, config.latent_dim
        )));
    }
    schedule.validate()?;

    let mut history = TrainHistory::new(tcfg.loss);
    let mut best = params.clone();
    let mut adam = AdamState::new(&params);
    let mut stopper = EarlyStopping::new(tcfg.patience);
    let mut mask_rng = Rng::derive(tcfg.seed, u64::MAX - 1);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 0..tcfg.max_epochs {
        let started = Instant::now();
        order.sort_unstable();
        Rng::derive(tcfg.seed, epoch as u64).shuffle(&mut order);

        let mut loss_sum = 0.0;
        for chunk in order.chunks(tcfg.batch_size) {
            let x = train_set.images.select_rows(chunk);
            let mask = schedule.sample_mask(chunk.len(), &mut mask_rng);
            let (out, cache) = model::forward_train(&params, config, &x, &mask)?;
            let (l, d_out) = batch_loss(tcfg.loss, &x, &out, train_set, &tcfg.ssim)?;
            let grads = model::backward(&params, config, &cache, &d_out)?;
            adam_step(&mut params, &grads, &mut adam, tcfg, epoch)?;
            loss_sum += l * chunk.len() as f64;
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let val_loss = validate(epoch, &params)?;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            seconds: started.elapsed().as_secs_f64(),
        });
        match stopper.observe(epoch, val_loss) {
            StopDecision::Improved => best.clone_from(&params),
            StopDecision::Continue => {}
            StopDecision::Stop => {
                history.stopped_early = true;
                break;
            }
        }
    }
    history.best_epoch = stopper.best_epoch();
    if history.best_epoch.is_none() {
        best = params;
    }
    Ok((best, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::ImageShape;
    use crate::model::OutputActivation;

    fn toy_data(n: usize, seed: u64) -> Dataset {
        let mut rng = Rng::new(seed);
        // Two-parameter family of 4x4 images, so an AE can compress it.
        let images = Matrix::from_fn(n, 16, |_, _| 0.0);
        let mut images = images;
        for r in 0..n {
            let (a, b) = (rng.uniform(), rng.uniform());
            for c in 0..16 {
                let v = 0.5 * a * ((c % 4) as f64 / 3.0) + 0.5 * b * ((c / 4) as f64 / 3.0);
                images.set(r, c, v);
            }
        }
        Dataset::new(images, vec![0; n], ImageShape::new(4, 4, 1)).unwrap()
    }

    fn toy_config() -> AeConfig {
        AeConfig {
            input_dim: 16,
            hidden_dim: 12,
            latent_dim: 4,
            output_activation: OutputActivation::Sigmoid,
            seed: 1,
        }
    }

    #[test]
    fn adam_scalar_example() {
        let cfg = TrainConfig::default();
        let (mut p, mut m, mut v) = ([0.0], [0.0], [0.0]);
        adam_update(&mut p, &[1.0], &mut m, &mut v, 1, &cfg);
        assert!((p[0] + 0.001).abs() < 1e-10, "{}", p[0]);
        assert!((m[0] - 0.1).abs() < 1e-15 && (v[0] - 0.001).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let cfg = toy_config();
        let mut p = AeParams::init(&cfg, &mut Rng::new(0)).unwrap();
        let before = p.clone();
        let mut state = AdamState::new(&p);
        let zero = p.zeros_like();
        adam_step(&mut p, &zero, &mut state, &TrainConfig::default(), 0).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let cfg = toy_config();
        let mut p = AeParams::init(&cfg, &mut Rng::new(0)).unwrap();
        let mut g = p.zeros_like();
        g.dec_w1.set(0, 0, f64::INFINITY);
        let mut state = AdamState::new(&p);
        match adam_step(&mut p, &g, &mut state, &TrainConfig::default(), 7) {
            Err(Error::NonFinite { epoch: 7, block: "dec_w1", max_abs }) => assert!(max_abs.is_infinite()),
            other => panic!("{other:?}"),
        }
        assert_eq!(state.t, 0);
    }

    #[test]
    fn early_stopping_contract() {
        let mut s = EarlyStopping::new(1);
        assert_eq!(s.observe(0, 3.0), StopDecision::Improved);
        assert_eq!(s.observe(1, 2.0), StopDecision::Improved);
        assert_eq!(s.observe(2, 2.5), StopDecision::Stop);
        assert_eq!(s.best_epoch(), Some(1));

        let mut s = EarlyStopping::new(3);
        for (e, l) in [5.0, 4.0, 4.5, 4.2, 3.9, 4.0, 4.0, 4.0].iter().enumerate() {
            let d = s.observe(e, *l);
            if e == 7 {
                assert_eq!(d, StopDecision::Stop);
            } else {
                assert_ne!(d, StopDecision::Stop);
            }
        }
        assert_eq!(s.best_epoch(), Some(4));
    }

    #[test]
    fn injected_validation_losses_select_best_epoch() {
        let cfg = toy_config();
        let data = toy_data(60, 1);
        let tcfg = TrainConfig {
            batch_size: 10,
            patience: 1,
            max_epochs: 50,
            ..TrainConfig::default()
        };
        let schedule = TailDropSchedule::taildrop(4, 1.0).unwrap();
        let losses = [3.0, 2.0, 1.0, 5.0, 0.5];
        let mut snapshots = Vec::new();
        let init = AeParams::init(&cfg, &mut Rng::new(cfg.seed)).unwrap();
        let (best, hist) = train_with_validation(init, &cfg, &schedule, &data, &tcfg, |e, p| {
            snapshots.push(p.clone());
            Ok(losses[e])
        })
        .unwrap();
        assert_eq!(hist.epochs.len(), 4);
        assert!(hist.stopped_early);
        assert_eq!(hist.best_epoch, Some(2));
        assert_eq!(best, snapshots[2]);
        assert_ne!(best, snapshots[3]);
        assert_eq!(hist.best_val_loss(), Some(1.0));
    }

    #[test]
    fn training_is_deterministic_and_decreases_loss() {
        let cfg = toy_config();
        let data = toy_data(200, 2);
        let tcfg = TrainConfig {
            batch_size: 20,
            max_epochs: 8,
            seed: 5,
            learning_rate: 0.005,
            ..TrainConfig::default()
        };
        let schedule = TailDropSchedule::taildrop(4, 1.0).unwrap();
        let (p1, h1) = train(&cfg, &schedule, &data, &tcfg).unwrap();
        let (p2, h2) = train(&cfg, &schedule, &data, &tcfg).unwrap();
        assert_eq!(p1, p2);
        let strip = |h: &TrainHistory| h.epochs.iter().map(|e| (e.train_loss, e.val_loss)).collect::<Vec<_>>();
        assert_eq!(strip(&h1), strip(&h2));
        assert!(h1.epochs.last().unwrap().train_loss < h1.epochs[0].train_loss);
        let best = h1.best_epoch.unwrap();
        let min = h1.epochs.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(h1.epochs[best].val_loss, min);
    }

    #[test]
    fn no_dropout_schedule_equals_all_ones_masks() {
        let cfg = toy_config();
        let data = toy_data(50, 3);
        let tcfg = TrainConfig {
            batch_size: 10,
            max_epochs: 3,
            ..TrainConfig::default()
        };
        let (p_none, _) = train(&cfg, &TailDropSchedule::none(4), &data, &tcfg).unwrap();
        // Independent rates of zero also give all-ones masks (different code path).
        let ones = TailDropSchedule::independent(vec![0.0; 4]).unwrap();
        let (p_ones, _) = train(&cfg, &ones, &data, &tcfg).unwrap();
        assert_eq!(p_none, p_ones);
    }

    #[test]
    fn validation_is_mask_free_and_repeatable() {
        let cfg = toy_config();
        let data = toy_data(30, 4);
        let p = AeParams::init(&cfg, &mut Rng::new(0)).unwrap();
        let ssim = SsimConfig::default();
        for mode in [ValidationMode::FullWidth, ValidationMode::RateAveraged] {
            let a = evaluate_loss(&p, &cfg, &data, LossKind::Mse, mode, &ssim).unwrap();
            let b = evaluate_loss(&p, &cfg, &data, LossKind::Mse, mode, &ssim).unwrap();
            assert_eq!(a, b);
        }
        let direct = mse_value(
            &data.images,
            &model::decode(&p, &cfg, &model::encode(&p, &cfg, &data.images).unwrap()).unwrap(),
        )
        .unwrap();
        let full = evaluate_loss(&p, &cfg, &data, LossKind::Mse, ValidationMode::FullWidth, &ssim).unwrap();
        assert!((full - direct).abs() < 1e-15);
    }

    #[test]
    fn fine_tune_zero_epochs_is_identity() {
        let cfg = toy_config();
        let data = toy_data(20, 5);
        let p = AeParams::init(&cfg, &mut Rng::new(3)).unwrap();
        let tcfg = TrainConfig {
            max_epochs: 0,
            ..TrainConfig::default()
        };
        let (q, hist) = fine_tune_ssim(&p, &cfg, &TailDropSchedule::none(4), &data, &tcfg).unwrap();
        assert_eq!(p, q);
        assert_eq!(hist.loss, LossKind::NegSsim);
        assert!(hist.epochs.is_empty());
    }

    #[test]
    fn input_errors() {
        let cfg = toy_config();
        let empty = toy_data(0, 0);
        let s = TailDropSchedule::none(4);
        assert!(matches!(train(&cfg, &s, &empty, &TrainConfig::default()), Err(Error::Input(_))));
        let wrong = AeConfig {
            input_dim: 9,
            ..cfg.clone()
        };
        assert!(train(&wrong, &s, &toy_data(10, 0), &TrainConfig::default()).is_err());
        let bad = TrainConfig {
            validation_fraction: 1.0,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&cfg, &s, &toy_data(10, 0), &bad), Err(Error::Config(_))));
    }
}

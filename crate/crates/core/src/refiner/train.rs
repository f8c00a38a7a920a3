use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::activation::Activation;
use super::mlp::{Gradients, MlpBranch, Normalization, INPUT_DIM, MIN_STD};
use super::RefinerError;
use crate::se3::DofVector;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    /// Raw frontend pose, translation already metric-scaled.
    pub input: DofVector,
    pub target: DofVector,
    pub failed: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    Adam,
    /// Stochastic gradient descent with momentum 0.9.
    SgdMomentum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub batch_size: usize,
    pub epochs: usize,
    /// Fraction of the samples, taken from the end, held out for validation.
    pub validation_fraction: f64,
    pub seed: u64,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
    /// Cosine-anneal the learning rate down to `learning_rate · final_lr_ratio`.
    pub final_lr_ratio: f64,
    pub input_mask: [bool; INPUT_DIM],
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: vec![32, 32],
            activation: Activation::Tanh,
            learning_rate: 1e-3,
            optimizer: Optimizer::Adam,
            batch_size: 64,
            epochs: 200,
            validation_fraction: 0.1,
            seed: 0,
            patience: 30,
            final_lr_ratio: 0.01,
            input_mask: [true; INPUT_DIM],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), RefinerError> {
        let bad = |m: &str| Err(RefinerError::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be positive");
        }
        if self.hidden.contains(&0) {
            return bad("hidden widths must be positive");
        }
        if !(0.0..=0.5).contains(&self.validation_fraction) {
            return bad("validation_fraction must lie in [0, 0.5]");
        }
        Ok(())
    }

    /// Seed for branch `dof`, so branches never share a random stream.
    pub fn branch_seed(&self, dof: usize) -> u64 {
        self.seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(dof as u64 + 1))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedBranch {
    pub branch: MlpBranch,
    /// Epoch 0 is the untrained network.
    pub curve: Vec<EpochLoss>,
    pub best_epoch: usize,
}

impl TrainedBranch {
    pub fn initial_val_loss(&self) -> f64 {
        self.curve[0].val_loss
    }

    pub fn best_val_loss(&self) -> f64 {
        self.curve[self.best_epoch].val_loss
    }
}

/// Splits usable samples into a leading training block and a trailing
/// validation block of `fraction` of the samples.
pub fn split_tail<T>(samples: &[T], fraction: f64) -> (&[T], &[T]) {
    let val = ((samples.len() as f64) * fraction).round() as usize;
    let val = if fraction > 0.0 { val.max(1) } else { 0 };
    samples.split_at(samples.len() - val.min(samples.len()))
}

pub(crate) fn mean_loss(branch: &MlpBranch, rows: &[([f64; INPUT_DIM], f64)]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    rows.iter()
        .map(|(x, t)| (branch.forward(x) - t).powi(2))
        .sum::<f64>()
        / rows.len() as f64
}

struct OptimizerState {
    kind: Optimizer,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl OptimizerState {
    fn new(kind: Optimizer, lr: f64, n: usize) -> Self {
        OptimizerState {
            kind,
            lr,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn apply(&mut self, branch: &mut MlpBranch, grads: &Gradients) {
        self.step += 1;
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        for (i, (p, g)) in branch.parameters_mut().zip(grads.values()).enumerate() {
            match self.kind {
                Optimizer::Adam => {
                    self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
                    self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
                    *p -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + eps);
                }
                Optimizer::SgdMomentum => {
                    self.m[i] = 0.9 * self.m[i] + g;
                    *p -= self.lr * self.m[i];
                }
            }
        }
    }
}

/// Sets the skip weights and output bias to the least-squares linear fit of
/// the normalized target, leaving the hidden path to model the residual.
fn fit_linear_path(branch: &mut MlpBranch, rows: &[([f64; INPUT_DIM], f64)]) {
    let cols = INPUT_DIM + 1;
    let mut a = DMatrix::<f64>::zeros(rows.len(), cols);
    let mut y = DVector::<f64>::zeros(rows.len());
    for (i, (x, t)) in rows.iter().enumerate() {
        for j in 0..INPUT_DIM {
            if branch.input_mask[j] {
                a[(i, j)] = (x[j] - branch.input_norm.mean[j]) / branch.input_norm.std[j];
            }
        }
        a[(i, INPUT_DIM)] = 1.0;
        y[i] = (t - branch.target_mean) / branch.target_std;
    }
    let Ok(coef) = a.svd(true, true).solve(&y, 1e-10) else {
        return;
    };
    if coef.iter().all(|c| c.is_finite()) {
        branch.skip = std::array::from_fn(|j| coef[j]);
        let out = branch.layers.last_mut().expect("output layer");
        out.bias[0] = coef[INPUT_DIM];
    }
}

/// Sets the skip weights and output bias so the branch reproduces its own raw DoF.
fn set_pass_through(branch: &mut MlpBranch) {
    let d = branch.dof_index;
    branch.skip = [0.0; INPUT_DIM];
    let mut bias = 0.0;
    if branch.input_mask[d] {
        // (x − μx)/σx · σx/σt + (μx − μt)/σt = (x − μt)/σt
        branch.skip[d] = branch.input_norm.std[d] / branch.target_std;
        bias = (branch.input_norm.mean[d] - branch.target_mean) / branch.target_std;
    }
    let out = branch.layers.last_mut().expect("output layer");
    out.weights.iter_mut().for_each(|w| *w = 0.0);
    out.bias[0] = bias;
}

/// Mini-batch training of the branch for `dof_index` on the non-failed samples.
/// Returns the parameters with the lowest validation loss seen, including
/// the untrained initialization.
pub fn train_branch(
    samples: &[TrainingSample],
    dof_index: usize,
    cfg: &TrainConfig,
) -> Result<TrainedBranch, RefinerError> {
    cfg.validate()?;
    if dof_index >= INPUT_DIM {
        return Err(RefinerError::InvalidConfig(format!("dof index {dof_index} out of range")));
    }
    let usable: Vec<([f64; INPUT_DIM], f64)> = samples
        .iter()
        .filter(|s| !s.failed && s.input.is_finite() && s.target.is_finite())
        .map(|s| (s.input.to_array(), s.target.get(dof_index)))
        .collect();
    let need = 10 * cfg.batch_size;
    if usable.len() < need {
        return Err(RefinerError::TooFewSamples {
            got: usable.len(),
            need,
        });
    }
    let (train, val) = split_tail(&usable, cfg.validation_fraction);
    // Without a validation block, model selection falls back to training loss.
    let val = if val.is_empty() { train } else { val };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.branch_seed(dof_index));
    let mut branch = MlpBranch::new(dof_index, &cfg.hidden, cfg.activation, &mut rng);
    let inputs: Vec<[f64; INPUT_DIM]> = train.iter().map(|r| r.0).collect();
    branch.input_norm = Normalization::fit(&inputs);
    branch.input_mask = cfg.input_mask;
    let n = train.len() as f64;
    branch.target_mean = train.iter().map(|r| r.1).sum::<f64>() / n;
    branch.target_std = (train.iter().map(|r| (r.1 - branch.target_mean).powi(2)).sum::<f64>() / n)
        .sqrt()
        .max(MIN_STD);

    // Start from whichever of the linear fit and the pass-through of the raw
    // input validates better.
    let mut passthrough = branch.clone();
    set_pass_through(&mut passthrough);
    fit_linear_path(&mut branch, train);
    if mean_loss(&passthrough, val) < mean_loss(&branch, val) {
        branch = passthrough;
    }

    let mut opt = OptimizerState::new(cfg.optimizer, cfg.learning_rate, branch.parameter_count());
    let mut curve = vec![EpochLoss {
        epoch: 0,
        train_loss: mean_loss(&branch, train),
        val_loss: mean_loss(&branch, val),
    }];
    let mut best = (branch.clone(), 0usize, curve[0].val_loss);
    let mut order: Vec<usize> = (0..train.len()).collect();
    // Gradients are taken in normalized target units to keep step sizes scale-free.
    let unit = 1.0 / (branch.target_std * branch.target_std);

    for epoch in 1..=cfg.epochs {
        let progress = (epoch - 1) as f64 / cfg.epochs.max(2).saturating_sub(1) as f64;
        let ratio = cfg.final_lr_ratio.clamp(0.0, 1.0);
        opt.lr = cfg.learning_rate * (ratio + (1.0 - ratio) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()));
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = Gradients::zeros_like(&branch);
            let w = unit / batch.len() as f64;
            for &i in batch {
                branch.accumulate(&train[i].0, train[i].1, w, &mut grads);
            }
            opt.apply(&mut branch, &grads);
        }
        let train_loss = mean_loss(&branch, train);
        let val_loss = mean_loss(&branch, val);
        if !train_loss.is_finite() || !val_loss.is_finite() || !branch.is_finite() {
            return Err(RefinerError::Divergence {
                dof: dof_index,
                epoch,
            });
        }
        curve.push(EpochLoss {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < best.2 {
            best = (branch.clone(), epoch, val_loss);
        } else if cfg.patience > 0 && epoch - best.1 >= cfg.patience {
            break;
        }
    }
    Ok(TrainedBranch {
        branch: best.0,
        curve,
        best_epoch: best.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    pub(crate) fn affine_samples(n: usize, seed: u64, noise: f64) -> Vec<TrainingSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gt = Normal::new(0.0, 0.5).unwrap();
        let eps = Normal::new(0.0, noise.max(1e-300)).unwrap();
        (0..n)
            .map(|_| {
                let target: [f64; 6] = std::array::from_fn(|_| gt.sample(&mut rng));
                let input = target.map(|t| 0.8 * t + 0.05 + if noise > 0.0 { eps.sample(&mut rng) } else { 0.0 });
                TrainingSample {
                    input: DofVector::from_array(input),
                    target: DofVector::from_array(target),
                    failed: false,
                }
            })
            .collect()
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            hidden: vec![16],
            batch_size: 32,
            epochs: 60,
            learning_rate: 3e-3,
            ..TrainConfig::default()
        }
    }

    fn val_rmse(t: &TrainedBranch) -> f64 {
        t.best_val_loss().sqrt()
    }

    #[test]
    fn hidden_units_learn_a_nonlinear_residual() {
        let samples: Vec<TrainingSample> = affine_samples(640, 7, 0.0)
            .into_iter()
            .map(|s| TrainingSample {
                target: DofVector::from_array(s.target.to_array().map(|v| (2.0 * v).sin())),
                ..s
            })
            .collect();
        for act in Activation::ALL {
            let cfg = TrainConfig {
                activation: act,
                epochs: 150,
                learning_rate: 1e-2,
                ..quick()
            };
            let t = train_branch(&samples, 4, &cfg).unwrap();
            assert!(t.best_epoch > 0, "{act}");
            assert!(t.best_val_loss() < 0.2 * t.initial_val_loss(), "{act}: {} vs {}", t.best_val_loss(), t.initial_val_loss());
        }
    }

    #[test]
    fn identity_task_is_learned() {
        let samples: Vec<TrainingSample> = affine_samples(640, 1, 0.0)
            .into_iter()
            .map(|s| TrainingSample {
                input: s.target,
                ..s
            })
            .collect();
        let t = train_branch(&samples, 3, &quick()).unwrap();
        assert!(val_rmse(&t) < 1e-3, "{}", val_rmse(&t));
    }

    #[test]
    fn affine_bias_is_removed() {
        let samples = affine_samples(640, 2, 0.0);
        let (_, val) = split_tail(&samples, 0.1);
        let baseline = (val.iter().map(|s| (s.input.tx - s.target.tx).powi(2)).sum::<f64>()
            / val.len() as f64)
            .sqrt();
        let t = train_branch(&samples, 0, &quick()).unwrap();
        assert!(val_rmse(&t) <= 0.05 * baseline, "{} vs {baseline}", val_rmse(&t));
    }

    #[test]
    fn never_worse_than_the_raw_input_on_validation() {
        // Target equals the input for the first 90% and drifts away in the
        // validation tail, so any fit to the training block validates worse.
        let mut samples = affine_samples(640, 8, 0.0);
        for (i, s) in samples.iter_mut().enumerate() {
            let mut t = s.input.to_array();
            if i >= 576 {
                t[1] += 0.02;
            }
            t[1] += 0.001 * (i as f64 * 0.7).sin();
            s.target = DofVector::from_array(t);
        }
        let (_, val) = split_tail(&samples, 0.1);
        let raw = val.iter().map(|s| (s.input.ty - s.target.ty).powi(2)).sum::<f64>() / val.len() as f64;
        let t = train_branch(&samples, 1, &quick()).unwrap();
        assert!(t.best_val_loss() <= raw * (1.0 + 1e-9), "{} vs {raw}", t.best_val_loss());
    }

    #[test]
    fn too_few_samples() {
        assert!(matches!(
            train_branch(&[], 0, &TrainConfig::default()),
            Err(RefinerError::TooFewSamples { got: 0, need: 640 })
        ));
        let mut samples = affine_samples(700, 3, 0.0);
        samples.iter_mut().skip(50).for_each(|s| s.failed = true);
        assert!(matches!(
            train_branch(&samples, 0, &TrainConfig::default()),
            Err(RefinerError::TooFewSamples { got: 50, .. })
        ));
    }

    #[test]
    fn validation_never_worse_than_initial() {
        let cfg = TrainConfig {
            learning_rate: 5.0,
            optimizer: Optimizer::SgdMomentum,
            epochs: 5,
            ..quick()
        };
        match train_branch(&affine_samples(640, 4, 0.01), 1, &cfg) {
            Ok(t) => assert!(t.best_val_loss() <= t.initial_val_loss()),
            Err(e) => assert!(matches!(e, RefinerError::Divergence { dof: 1, .. })),
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let samples = affine_samples(640, 5, 0.01);
        let cfg = TrainConfig {
            epochs: 5,
            ..quick()
        };
        let a = train_branch(&samples, 2, &cfg).unwrap();
        let b = train_branch(&samples, 2, &cfg).unwrap();
        assert_eq!(a, b);
        let c = train_branch(&samples, 2, &TrainConfig { seed: 9, ..cfg }).unwrap();
        assert_ne!(a.branch, c.branch);
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = TrainConfig {
            validation_fraction: 0.7,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train_branch(&affine_samples(700, 6, 0.0), 0, &cfg),
            Err(RefinerError::InvalidConfig(_))
        ));
    }
}

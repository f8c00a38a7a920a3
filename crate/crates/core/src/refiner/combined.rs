use nalgebra::DMatrix;

use super::mlp::{MlpBranch, INPUT_DIM};
use super::train::{split_tail, TrainConfig, TrainingSample};
use super::RefinerError;
use crate::se3::DofVector;

/// Fusion input width: six branch outputs followed by the raw six DoF.
pub const FUSION_INPUTS: usize = 2 * INPUT_DIM;

/// Linear head mapping `[branch outputs; raw]` to the refined six DoF.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionHead {
    pub weights: [[f64; FUSION_INPUTS]; INPUT_DIM],
    pub bias: [f64; INPUT_DIM],
}

impl FusionHead {
    /// Branch i → output i, nothing else.
    pub fn identity() -> Self {
        let mut weights = [[0.0; FUSION_INPUTS]; INPUT_DIM];
        for (i, row) in weights.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        FusionHead {
            weights,
            bias: [0.0; INPUT_DIM],
        }
    }

    pub fn apply(&self, branch_out: &[f64; INPUT_DIM], raw: &[f64; INPUT_DIM]) -> [f64; INPUT_DIM] {
        std::array::from_fn(|i| {
            let row = &self.weights[i];
            let mut acc = self.bias[i];
            for j in 0..INPUT_DIM {
                acc += row[j] * branch_out[j];
            }
            for j in 0..INPUT_DIM {
                acc += row[INPUT_DIM + j] * raw[j];
            }
            acc
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CombinedModel {
    /// Indexed by DoF.
    pub branches: Vec<MlpBranch>,
    pub fusion: Option<FusionHead>,
}

impl CombinedModel {
    /// Stacked branch outputs without the fusion head.
    pub fn branch_outputs(&self, raw: &[f64; INPUT_DIM]) -> [f64; INPUT_DIM] {
        std::array::from_fn(|i| self.branches[i].forward(raw))
    }

    /// One branch per DoF that reproduces its raw input.
    pub fn pass_through() -> Self {
        let branches = (0..INPUT_DIM)
            .map(|d| {
                let mut layer = super::mlp::Layer::zeros(INPUT_DIM, 1);
                layer.weights[d] = 1.0;
                MlpBranch {
                    dof_index: d,
                    activation: super::Activation::Relu,
                    layers: vec![layer],
                    skip: [0.0; INPUT_DIM],
                    input_norm: super::mlp::Normalization::identity(),
                    target_mean: 0.0,
                    target_std: 1.0,
                    input_mask: [true; INPUT_DIM],
                    frozen: true,
                }
            })
            .collect();
        CombinedModel {
            branches,
            fusion: Some(FusionHead::identity()),
        }
    }
}

/// Orders the branches by DoF, freezes them, and attaches an identity fusion head.
pub fn combine_branches(branches: Vec<MlpBranch>) -> Result<CombinedModel, RefinerError> {
    let mut slots: Vec<Option<MlpBranch>> = vec![None; INPUT_DIM];
    for mut b in branches {
        let d = b.dof_index;
        if d >= INPUT_DIM {
            return Err(RefinerError::InvalidConfig(format!("dof index {d} out of range")));
        }
        if slots[d].is_some() {
            return Err(RefinerError::DuplicateBranch(d));
        }
        b.frozen = true;
        slots[d] = Some(b);
    }
    let branches = slots
        .into_iter()
        .enumerate()
        .map(|(d, b)| b.ok_or(RefinerError::MissingBranch(d)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CombinedModel {
        branches,
        fusion: Some(FusionHead::identity()),
    })
}

pub fn infer(model: &CombinedModel, raw: &DofVector) -> DofVector {
    let x = raw.to_array();
    let out = model.branch_outputs(&x);
    DofVector::from_array(match &model.fusion {
        Some(head) => head.apply(&out, &x),
        None => out,
    })
}

/// Validation losses around fusion-head fitting.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FusionReport {
    /// Mean over samples of the squared error summed over the six outputs.
    pub pre_fusion_val_loss: f64,
    pub val_loss: f64,
    pub accepted: bool,
}

fn fusion_loss(head: &FusionHead, rows: &[([f64; INPUT_DIM], [f64; INPUT_DIM], [f64; INPUT_DIM])]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    rows.iter()
        .map(|(b, raw, t)| {
            let y = head.apply(b, raw);
            (0..INPUT_DIM).map(|i| (y[i] - t[i]).powi(2)).sum::<f64>()
        })
        .sum::<f64>()
        / rows.len() as f64
}

/// Fits only the fusion head, as the exact least-squares minimizer of the
/// squared error on the training block (minimum-norm change from the current
/// head). The fit is kept only if validation loss does not increase.
pub fn train_combined(
    model: &CombinedModel,
    samples: &[TrainingSample],
    cfg: &TrainConfig,
) -> Result<(CombinedModel, FusionReport), RefinerError> {
    if let Some(b) = model.branches.iter().find(|b| !b.frozen) {
        return Err(RefinerError::ContractViolation(format!(
            "branch {} is not frozen",
            b.dof_index
        )));
    }
    cfg.validate()?;
    let rows: Vec<_> = samples
        .iter()
        .filter(|s| !s.failed && s.input.is_finite() && s.target.is_finite())
        .map(|s| {
            let raw = s.input.to_array();
            (model.branch_outputs(&raw), raw, s.target.to_array())
        })
        .collect();
    if rows.len() < FUSION_INPUTS + 1 {
        return Err(RefinerError::TooFewSamples {
            got: rows.len(),
            need: FUSION_INPUTS + 1,
        });
    }
    let (train, val) = split_tail(&rows, cfg.validation_fraction);
    let val = if val.is_empty() { train } else { val };
    let current = model.fusion.clone().unwrap_or_else(FusionHead::identity);
    let pre = fusion_loss(&current, val);

    // Solve [z 1]·Δᵀ ≈ target − current(z) for the head change Δ.
    let cols = FUSION_INPUTS + 1;
    let mut a = DMatrix::<f64>::zeros(train.len(), cols);
    let mut r = DMatrix::<f64>::zeros(train.len(), INPUT_DIM);
    for (i, (b, raw, t)) in train.iter().enumerate() {
        for j in 0..INPUT_DIM {
            a[(i, j)] = b[j];
            a[(i, INPUT_DIM + j)] = raw[j];
        }
        a[(i, FUSION_INPUTS)] = 1.0;
        let y = current.apply(b, raw);
        for k in 0..INPUT_DIM {
            r[(i, k)] = t[k] - y[k];
        }
    }
    let delta = a
        .svd(true, true)
        .solve(&r, 1e-12)
        .map_err(|e| RefinerError::ContractViolation(e.to_string()))?;
    let mut fitted = current.clone();
    for k in 0..INPUT_DIM {
        for j in 0..FUSION_INPUTS {
            fitted.weights[k][j] += delta[(j, k)];
        }
        fitted.bias[k] += delta[(FUSION_INPUTS, k)];
    }
    let finite = fitted.weights.iter().flatten().chain(&fitted.bias).all(|v| v.is_finite());
    let post = fusion_loss(&fitted, val);
    let accepted = finite && post <= pre;
    let mut out = model.clone();
    out.fusion = Some(if accepted { fitted } else { current });
    Ok((
        out,
        FusionReport {
            pre_fusion_val_loss: pre,
            val_loss: if accepted { post } else { pre },
            accepted,
        },
    ))
}

//! Fully-connected branch network: z-scored 6-vector in, one scalar out.

use rand::Rng;

use super::activation::Activation;

pub const INPUT_DIM: usize = 6;
/// Floor applied to fitted standard deviations.
pub const MIN_STD: f64 = 1e-8;

/// Affine layer, weights row-major with shape outputs × inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Layer {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.outputs {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let mut acc = self.bias[o];
            for (w, v) in row.iter().zip(x) {
                acc += w * v;
            }
            out.push(acc);
        }
    }
}

/// Per-feature z-score statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalization {
    pub mean: [f64; INPUT_DIM],
    pub std: [f64; INPUT_DIM],
}

impl Normalization {
    pub fn identity() -> Self {
        Normalization {
            mean: [0.0; INPUT_DIM],
            std: [1.0; INPUT_DIM],
        }
    }

    pub fn fit(rows: &[[f64; INPUT_DIM]]) -> Self {
        let n = rows.len().max(1) as f64;
        let mut mean = [0.0; INPUT_DIM];
        let mut std = [0.0; INPUT_DIM];
        for j in 0..INPUT_DIM {
            mean[j] = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
            std[j] = var.sqrt().max(MIN_STD);
        }
        Normalization { mean, std }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpBranch {
    pub dof_index: usize,
    pub activation: Activation,
    /// Hidden layers followed by the single-output linear layer.
    pub layers: Vec<Layer>,
    /// Linear path from the normalized input straight to the output.
    pub skip: [f64; INPUT_DIM],
    pub input_norm: Normalization,
    /// The network predicts `(target − target_mean) / target_std`.
    pub target_mean: f64,
    pub target_std: f64,
    /// Masked-out inputs are fed as zero after normalization.
    pub input_mask: [bool; INPUT_DIM],
    pub frozen: bool,
}

/// Parameter gradients, shaped like [`MlpBranch::layers`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
    pub skip: [f64; INPUT_DIM],
}

impl Gradients {
    pub fn zeros_like(branch: &MlpBranch) -> Self {
        Gradients {
            layers: branch
                .layers
                .iter()
                .map(|l| Layer::zeros(l.inputs, l.outputs))
                .collect(),
            skip: [0.0; INPUT_DIM],
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|w| *w *= s);
            l.bias.iter_mut().for_each(|b| *b *= s);
        }
        self.skip.iter_mut().for_each(|v| *v *= s);
    }
}

impl MlpBranch {
    /// Randomly initialized network with the given hidden widths.
    pub fn new(
        dof_index: usize,
        hidden: &[usize],
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = INPUT_DIM;
        for &width in hidden {
            let mut layer = Layer::zeros(fan_in, width);
            // He scaling for the rectifier family, Glorot for the saturating kinds.
            let limit = match activation {
                Activation::Tanh | Activation::Sigmoid => (6.0 / (fan_in + width) as f64).sqrt(),
                _ => (6.0 / fan_in as f64).sqrt(),
            };
            for w in &mut layer.weights {
                *w = rng.random_range(-limit..limit);
            }
            layers.push(layer);
            fan_in = width;
        }
        // A zero output layer starts the branch as the zero function, so the
        // skip path fits any linear part before the hidden units engage.
        layers.push(Layer::zeros(fan_in, 1));
        MlpBranch {
            dof_index,
            activation,
            layers,
            skip: [0.0; INPUT_DIM],
            input_norm: Normalization::identity(),
            target_mean: 0.0,
            target_std: 1.0,
            input_mask: [true; INPUT_DIM],
            frozen: false,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum::<usize>() + INPUT_DIM
    }

    pub fn is_finite(&self) -> bool {
        self.parameters().all(|v| v.is_finite())
    }

    fn normalized_input(&self, input: &[f64; INPUT_DIM]) -> Vec<f64> {
        (0..INPUT_DIM)
            .map(|j| {
                if self.input_mask[j] {
                    (input[j] - self.input_norm.mean[j]) / self.input_norm.std[j]
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Network output in normalized target units.
    fn forward_normalized(&self, input: &[f64; INPUT_DIM]) -> f64 {
        let mut a = self.normalized_input(input);
        let direct: f64 = self.skip.iter().zip(&a).map(|(w, x)| w * x).sum();
        let mut z = Vec::new();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.apply(&a, &mut z);
            if i < last {
                z.iter_mut().for_each(|v| *v = self.activation.forward(*v));
            }
            std::mem::swap(&mut a, &mut z);
        }
        a[0] + direct
    }

    pub fn forward(&self, input: &[f64; INPUT_DIM]) -> f64 {
        self.forward_normalized(input) * self.target_std + self.target_mean
    }

    /// Gradients of (forward(input) − target)² and the loss itself.
    pub fn backward(&self, input: &[f64; INPUT_DIM], target: f64) -> (Gradients, f64) {
        let mut grads = Gradients::zeros_like(self);
        let loss = self.accumulate(input, target, 1.0, &mut grads);
        (grads, loss)
    }

    /// Adds `weight ·` ∂loss/∂θ into `grads`; returns the unweighted loss.
    pub(crate) fn accumulate(
        &self,
        input: &[f64; INPUT_DIM],
        target: f64,
        weight: f64,
        grads: &mut Gradients,
    ) -> f64 {
        let last = self.layers.len() - 1;
        // Forward pass keeping every layer input and pre-activation.
        let mut inputs: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut pre: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut a = self.normalized_input(input);
        let x0 = a.clone();
        let direct: f64 = self.skip.iter().zip(&x0).map(|(w, x)| w * x).sum();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::new();
            layer.apply(&a, &mut z);
            let next = if i < last {
                z.iter().map(|&v| self.activation.forward(v)).collect()
            } else {
                z.clone()
            };
            inputs.push(std::mem::replace(&mut a, next));
            pre.push(z);
        }
        let output = (a[0] + direct) * self.target_std + self.target_mean;
        let err = output - target;

        let mut delta = vec![2.0 * err * self.target_std * weight];
        for (g, x) in grads.skip.iter_mut().zip(&x0) {
            *g += delta[0] * x;
        }
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let g = &mut grads.layers[i];
            for o in 0..layer.outputs {
                g.bias[o] += delta[o];
                let row = o * layer.inputs;
                for (j, x) in inputs[i].iter().enumerate() {
                    g.weights[row + j] += delta[o] * x;
                }
            }
            if i == 0 {
                break;
            }
            let mut back = vec![0.0; layer.inputs];
            for o in 0..layer.outputs {
                let row = o * layer.inputs;
                for (j, b) in back.iter_mut().enumerate() {
                    *b += layer.weights[row + j] * delta[o];
                }
            }
            for (b, z) in back.iter_mut().zip(&pre[i - 1]) {
                *b *= self.activation.derivative(*z);
            }
            delta = back;
        }
        err * err
    }

    /// Smallest |pre-activation| over hidden units for `input`.
    pub fn min_hidden_preactivation(&self, input: &[f64; INPUT_DIM]) -> f64 {
        let mut a = self.normalized_input(input);
        let mut z = Vec::new();
        let mut min = f64::INFINITY;
        for layer in &self.layers[..self.layers.len() - 1] {
            layer.apply(&a, &mut z);
            min = z.iter().fold(min, |m, v| m.min(v.abs()));
            a = z.iter().map(|&v| self.activation.forward(v)).collect();
        }
        min
    }

    pub(crate) fn parameters_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
            .chain(self.skip.iter_mut())
    }

    pub(crate) fn parameters(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
            .chain(self.skip.iter())
    }
}

impl Gradients {
    pub(crate) fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
            .chain(self.skip.iter())
    }
}

/// Largest relative disagreement between analytic and numeric gradients:
/// |analytic − numeric| / max(|analytic|, 1e-8). The numeric gradient is a
/// Richardson-extrapolated central difference with steps h and h/2, so its
/// error is O(h⁴); keep every hidden pre-activation farther than h·|input|
/// from a kink.
pub fn gradient_check(branch: &MlpBranch, input: &[f64; INPUT_DIM], target: f64, h: f64) -> f64 {
    let (grads, _) = branch.backward(input, target);
    let analytic: Vec<f64> = grads.values().copied().collect();
    let mut probe = branch.clone();
    let mut worst = 0.0f64;
    for (k, a) in analytic.iter().enumerate() {
        let original = *probe.parameters_mut().nth(k).expect("parameter index");
        let mut central = |step: f64| {
            let mut loss_at = |v: f64| {
                *probe.parameters_mut().nth(k).expect("parameter index") = v;
                let e = probe.forward(input) - target;
                e * e
            };
            (loss_at(original + step) - loss_at(original - step)) / (2.0 * step)
        };
        let coarse = central(h);
        let fine = central(h / 2.0);
        *probe.parameters_mut().nth(k).expect("parameter index") = original;
        let numeric = (4.0 * fine - coarse) / 3.0;
        worst = worst.max((a - numeric).abs() / a.abs().max(1e-8));
    }
    worst
}

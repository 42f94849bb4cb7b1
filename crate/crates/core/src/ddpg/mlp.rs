//! Small fully connected network with ReLU hidden layers and analytic gradients.

use super::DdpgError;
use crate::system::Interval;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const MLP_FORMAT: &str = "ras-mlp";

/// Output map applied after the last affine layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutputMap {
    Identity,
    /// `center + half_width · tanh(z)`, clamped to the bounds.
    Squash {
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
}

impl OutputMap {
    pub fn squash(bounds: &[Interval]) -> Self {
        OutputMap::Squash {
            lower: bounds.iter().map(|b| b.lower).collect(),
            upper: bounds.iter().map(|b| b.upper).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `inputs × outputs`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Inputs are standardized as `(x - center) / scale` before the first layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
    output: OutputMap,
    center: Array1<f64>,
    scale: Array1<f64>,
}

/// Intermediate values of a batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer; `inputs[0]` is the standardized state.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of each layer.
    pre: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

impl ForwardCache {
    /// Smallest |pre-activation| over all hidden units.
    pub fn kink_distance(&self) -> f64 {
        let hidden = self.pre.len().saturating_sub(1);
        self.pre[..hidden]
            .iter()
            .flat_map(|z| z.iter())
            .fold(f64::INFINITY, |m, z| m.min(z.abs()))
    }
}

/// Parameter gradients, laid out like the layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
            .collect()
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weight *= factor;
            l.bias *= factor;
        }
    }
}

impl Mlp {
    /// Uniform fan-in initialization; the output layer starts small.
    pub fn new<R: Rng + ?Sized>(
        widths: &[usize],
        output: OutputMap,
        input_bounds: &[Interval],
        rng: &mut R,
    ) -> Self {
        assert!(widths.len() >= 2, "need input and output widths");
        assert_eq!(widths[0], input_bounds.len());
        if let OutputMap::Squash { lower, .. } = &output {
            assert_eq!(lower.len(), *widths.last().unwrap());
        }
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let limit = if k == last {
                    3e-3
                } else {
                    (6.0 / w[0] as f64).sqrt()
                };
                let bias_limit = if k == last {
                    3e-3
                } else {
                    1.0 / (w[0] as f64).sqrt()
                };
                Layer {
                    weight: Array2::from_shape_fn((w[0], w[1]), |_| {
                        rng.random_range(-limit..limit)
                    }),
                    bias: Array1::from_shape_fn(w[1], |_| {
                        rng.random_range(-bias_limit..bias_limit)
                    }),
                }
            })
            .collect();
        Self {
            layers,
            output,
            center: input_bounds.iter().map(Interval::center).collect(),
            scale: input_bounds
                .iter()
                .map(|b| (0.5 * b.width()).max(1e-12))
                .collect(),
        }
    }

    pub fn from_layers(
        layers: Vec<Layer>,
        output: OutputMap,
        center: Vec<f64>,
        scale: Vec<f64>,
    ) -> Result<Self, DdpgError> {
        if layers.is_empty() {
            return Err(DdpgError::InvalidNetwork("no layers".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].weight.ncols() != pair[1].weight.nrows() {
                return Err(DdpgError::InvalidNetwork(
                    "layer widths do not chain".into(),
                ));
            }
        }
        for l in &layers {
            if l.bias.len() != l.weight.ncols() {
                return Err(DdpgError::InvalidNetwork("bias width mismatch".into()));
            }
        }
        if center.len() != layers[0].weight.nrows() || scale.len() != center.len() {
            return Err(DdpgError::InvalidNetwork(
                "input scaling width mismatch".into(),
            ));
        }
        let net = Self {
            layers,
            output,
            center: center.into(),
            scale: scale.into(),
        };
        if let OutputMap::Squash { lower, upper } = &net.output {
            if lower.len() != net.output_dim() || upper.len() != lower.len() {
                return Err(DdpgError::InvalidNetwork(
                    "output bounds width mismatch".into(),
                ));
            }
        }
        Ok(net)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn output_map(&self) -> &OutputMap {
        &self.output
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weight.ncols()
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(self.layers.iter().map(|l| l.weight.ncols()));
        w
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> ForwardCache {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut a = (&x - &self.center) / &self.scale;
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let z = a.dot(&layer.weight) + &layer.bias;
            inputs.push(a);
            a = if k < last {
                z.mapv(|v| v.max(0.0))
            } else {
                z.clone()
            };
            pre.push(z);
        }
        let output = match &self.output {
            OutputMap::Identity => a,
            OutputMap::Squash { lower, upper } => {
                let mut out = a;
                for mut row in out.rows_mut() {
                    for (j, v) in row.iter_mut().enumerate() {
                        let c = 0.5 * (lower[j] + upper[j]);
                        let h = 0.5 * (upper[j] - lower[j]);
                        *v = (c + h * v.tanh()).clamp(lower[j], upper[j]);
                    }
                }
                out
            }
        };
        ForwardCache {
            inputs,
            pre,
            output,
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.forward_cached(x).output
    }

    /// Single-state evaluation.
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
        self.forward(view).into_raw_vec_and_offset().0
    }

    /// Pulls `grad_out` (gradient with respect to the outputs) back to the
    /// parameters and to the raw (unstandardized) inputs.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_out: ArrayView2<f64>,
    ) -> (Gradients, Array2<f64>) {
        let mut delta = grad_out.to_owned();
        if let OutputMap::Squash { lower, upper } = &self.output {
            let z = cache.pre.last().unwrap();
            for (mut row, zrow) in delta.rows_mut().into_iter().zip(z.rows()) {
                for (j, (g, &zv)) in row.iter_mut().zip(zrow).enumerate() {
                    let h = 0.5 * (upper[j] - lower[j]);
                    let t = zv.tanh();
                    *g *= h * (1.0 - t * t);
                }
            }
        }
        let mut grads: Vec<Layer> = Vec::with_capacity(self.layers.len());
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            grads.push(Layer {
                weight: cache.inputs[k].t().dot(&delta),
                bias: delta.sum_axis(Axis(0)),
            });
            let mut back = delta.dot(&layer.weight.t());
            if k > 0 {
                back.zip_mut_with(&cache.pre[k - 1], |g, &z| {
                    if z <= 0.0 {
                        *g = 0.0;
                    }
                });
            }
            delta = back;
        }
        grads.reverse();
        let input_grad = delta / &self.scale;
        (Gradients { layers: grads }, input_grad)
    }

    /// `target ← (1 - tau)·target + tau·self`.
    pub fn soft_update_into(&self, target: &mut Mlp, tau: f64) {
        for (t, s) in target.layers.iter_mut().zip(&self.layers) {
            t.weight
                .zip_mut_with(&s.weight, |a, &b| *a += tau * (b - *a));
            t.bias.zip_mut_with(&s.bias, |a, &b| *a += tau * (b - *a));
        }
    }

    pub fn params_flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
            .collect()
    }

    /// Mutable access to parameter `index` in flattened order.
    pub fn param_mut(&mut self, mut index: usize) -> &mut f64 {
        for l in &mut self.layers {
            if index < l.weight.len() {
                let c = l.weight.ncols();
                return &mut l.weight[(index / c, index % c)];
            }
            index -= l.weight.len();
            if index < l.bias.len() {
                return &mut l.bias[index];
            }
            index -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    pub fn to_document(&self) -> MlpDocument {
        MlpDocument {
            format: MLP_FORMAT.into(),
            version: 1,
            widths: self.widths(),
            output: self.output.clone(),
            input_center: self.center.to_vec(),
            input_scale: self.scale.to_vec(),
            weights: self
                .layers
                .iter()
                .map(|l| l.weight.iter().copied().collect())
                .collect(),
            biases: self.layers.iter().map(|l| l.bias.to_vec()).collect(),
        }
    }

    pub fn from_document(doc: &MlpDocument) -> Result<Self, DdpgError> {
        if doc.format != MLP_FORMAT {
            return Err(DdpgError::InvalidNetwork(format!(
                "unexpected format `{}`",
                doc.format
            )));
        }
        if doc.widths.len() != doc.weights.len() + 1 || doc.biases.len() != doc.weights.len() {
            return Err(DdpgError::InvalidNetwork("layer count mismatch".into()));
        }
        let layers = doc
            .widths
            .windows(2)
            .zip(doc.weights.iter().zip(&doc.biases))
            .map(|(w, (wt, b))| {
                let weight = Array2::from_shape_vec((w[0], w[1]), wt.clone())
                    .map_err(|e| DdpgError::InvalidNetwork(e.to_string()))?;
                if b.len() != w[1] {
                    return Err(DdpgError::InvalidNetwork("bias width mismatch".into()));
                }
                Ok(Layer {
                    weight,
                    bias: Array1::from(b.clone()),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_layers(
            layers,
            doc.output.clone(),
            doc.input_center.clone(),
            doc.input_scale.clone(),
        )
    }
}

/// JSON checkpoint form of an [`Mlp`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpDocument {
    pub format: String,
    pub version: u32,
    pub widths: Vec<usize>,
    pub output: OutputMap,
    pub input_center: Vec<f64>,
    pub input_scale: Vec<f64>,
    /// Row-major `inputs × outputs` per layer.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

/// Adam with the usual bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub rate: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Layer>,
    v: Vec<Layer>,
}

impl Adam {
    pub fn new(net: &Mlp, rate: f64) -> Self {
        let zeros = || {
            net.layers
                .iter()
                .map(|l| Layer {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.len()),
                })
                .collect::<Vec<_>>()
        };
        Self {
            rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Descent step along `grads`.
    pub fn apply(&mut self, net: &mut Mlp, grads: &Gradients) {
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let lr = self.rate;
        let eps = self.eps;
        for (k, g) in grads.layers.iter().enumerate() {
            let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            };
            let layer = &mut net.layers[k];
            ndarray::Zip::from(&mut layer.weight)
                .and(&mut self.m[k].weight)
                .and(&mut self.v[k].weight)
                .and(&g.weight)
                .for_each(|p, m, v, &g| update(p, m, v, g));
            ndarray::Zip::from(&mut layer.bias)
                .and(&mut self.m[k].bias)
                .and(&mut self.v[k].bias)
                .and(&g.bias)
                .for_each(|p, m, v, &g| update(p, m, v, g));
        }
    }
}

/// Outcome of [`mlp_gradient_check`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    pub probes: usize,
    /// Probes moved off an activation kink before checking.
    pub shifted: usize,
}

/// Hidden pre-activations closer to zero than this count as a kink.
pub const KINK_MARGIN: f64 = 1e-3;

/// Relative error of two gradient vectors, `|a - n|_2 / max(|a|_2, |n|_2)`.
/// Element-wise ratios are meaningless for entries near zero, where the
/// difference quotient is dominated by rounding.
pub fn vector_relative_error(a: &[f64], n: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(n).map(|(x, y)| x - y));
    let denom = norm(&mut a.iter().copied()).max(norm(&mut n.iter().copied()));
    if denom < 1e-300 {
        0.0
    } else {
        diff / denom
    }
}

/// Compares the analytic gradient of the summed outputs against central
/// differences with the given step, separately for the parameter vector and
/// the input vector at each probe. A probe whose hidden pre-activations come
/// within [`KINK_MARGIN`] of zero is moved by a fixed offset pattern until it
/// clears every kink.
pub fn mlp_gradient_check(net: &Mlp, probes: &[Vec<f64>], step: f64) -> GradientCheck {
    let mut worst: f64 = 0.0;
    let mut shifted = 0;
    let sum_out = |n: &Mlp, x: &[f64]| n.eval(x).iter().sum::<f64>();
    for probe in probes {
        let mut x = probe.clone();
        let mut moved = false;
        for attempt in 1..=64 {
            let view = ArrayView2::from_shape((1, x.len()), &x).unwrap();
            if net.forward_cached(view).kink_distance() >= KINK_MARGIN {
                break;
            }
            moved = true;
            for (i, xi) in x.iter_mut().enumerate() {
                *xi += 1e-2 * attempt as f64 * if (i + attempt) % 2 == 0 { 1.0 } else { -0.7 };
            }
        }
        shifted += usize::from(moved);

        let view = ArrayView2::from_shape((1, x.len()), &x).unwrap();
        let cache = net.forward_cached(view);
        let ones = Array2::ones((1, net.output_dim()));
        let (grads, input_grad) = net.backward(&cache, ones.view());
        let analytic = grads.flatten();
        let mut scratch = net.clone();
        let numeric: Vec<f64> = (0..analytic.len())
            .map(|i| {
                let orig = *scratch.param_mut(i);
                *scratch.param_mut(i) = orig + step;
                let up = sum_out(&scratch, &x);
                *scratch.param_mut(i) = orig - step;
                let down = sum_out(&scratch, &x);
                *scratch.param_mut(i) = orig;
                (up - down) / (2.0 * step)
            })
            .collect();
        worst = worst.max(vector_relative_error(&analytic, &numeric));
        let numeric_input: Vec<f64> = (0..x.len())
            .map(|i| {
                let mut xp = x.clone();
                xp[i] += step;
                let mut xm = x.clone();
                xm[i] -= step;
                (sum_out(net, &xp) - sum_out(net, &xm)) / (2.0 * step)
            })
            .collect();
        worst = worst.max(vector_relative_error(
            input_grad.as_slice().unwrap(),
            &numeric_input,
        ));
    }
    GradientCheck {
        max_relative_error: worst,
        probes: probes.len(),
        shifted,
    }
}

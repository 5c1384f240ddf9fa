//! Fixed-topology feedforward network used as a complexity baseline.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Result, XnetError};
use crate::numerics::r_squared;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Sigmoid,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => crate::numerics::sigmoid(z),
        }
    }

    /// Derivative expressed through the activation output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>) -> Self {
        MlpSpec {
            layer_sizes,
            activation: Activation::Tanh,
            learning_rate: 0.1,
            epochs: 20_000,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 || self.layer_sizes.contains(&0) {
            return Err(XnetError::Config(format!(
                "an MLP needs at least two layers of nonzero width, got {:?}",
                self.layer_sizes
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(XnetError::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }

    /// Units in hidden layers plus the output layer.
    pub fn node_count(&self) -> usize {
        self.layer_sizes[1..].iter().sum()
    }
}

/// Weights and biases across all layers: `Σ (fan_in·fan_out + fan_out)`.
pub fn mlp_param_count(spec: &MlpSpec) -> usize {
    spec.layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    /// `w[o][i]`: weight from input `i` to output unit `o`.
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
}

/// A dense network with the hidden activation on every layer but the last,
/// which is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
    activation: Activation,
}

impl Mlp {
    /// Uniform init in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn new(spec: &MlpSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let layers = spec
            .layer_sizes
            .windows(2)
            .map(|pair| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Layer {
                    w: (0..fan_out)
                        .map(|_| (0..fan_in).map(|_| rng.gen_range(-bound..bound)).collect())
                        .collect(),
                    b: vec![0.0; fan_out],
                }
            })
            .collect();
        Ok(Mlp {
            layers,
            activation: spec.activation,
        })
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.b.len() * (l.w[0].len() + 1)).sum()
    }

    /// Parameters flattened layer by layer: weights row-major, then biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.w.iter().flatten());
            out.extend(&l.b);
        }
        out
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.param_count());
        let mut it = p.iter().copied();
        for l in &mut self.layers {
            for row in &mut l.w {
                for v in row.iter_mut() {
                    *v = it.next().unwrap();
                }
            }
            for v in &mut l.b {
                *v = it.next().unwrap();
            }
        }
    }

    /// Pre-activations and activations of every layer, input included.
    fn trace(&self, x: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut zs = Vec::with_capacity(self.layers.len());
        let mut acts = vec![x.to_vec()];
        let last = self.layers.len() - 1;
        for (k, l) in self.layers.iter().enumerate() {
            let input = acts.last().unwrap();
            let z: Vec<f64> = l
                .w
                .iter()
                .zip(&l.b)
                .map(|(row, b)| row.iter().zip(input).map(|(w, a)| w * a).sum::<f64>() + b)
                .collect();
            let a = if k == last {
                z.clone()
            } else {
                z.iter().map(|&v| self.activation.apply(v)).collect()
            };
            zs.push(z);
            acts.push(a);
        }
        (zs, acts)
    }

    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        self.trace(x).1.pop().unwrap()
    }

    /// `1/(2N) Σ ‖ŷ - y‖²` with a single output column.
    pub fn loss(&self, data: &Dataset) -> f64 {
        let n = data.len() as f64;
        data.x
            .iter()
            .zip(&data.y)
            .map(|(x, y)| 0.5 * (self.predict(x)[0] - y).powi(2))
            .sum::<f64>()
            / n
    }

    /// Gradient of [`Mlp::loss`] in the order of [`Mlp::params`].
    pub fn gradient(&self, data: &Dataset) -> Vec<f64> {
        let n = data.len() as f64;
        let mut gw: Vec<Vec<Vec<f64>>> = self.layers.iter().map(|l| vec![vec![0.0; l.w[0].len()]; l.b.len()]).collect();
        let mut gb: Vec<Vec<f64>> = self.layers.iter().map(|l| vec![0.0; l.b.len()]).collect();
        let last = self.layers.len() - 1;
        for (x, y) in data.x.iter().zip(&data.y) {
            let (zs, acts) = self.trace(x);
            let mut delta: Vec<f64> = vec![(acts[last + 1][0] - y) / n];
            for k in (0..=last).rev() {
                for (o, d) in delta.iter().enumerate() {
                    gb[k][o] += d;
                    for (i, a) in acts[k].iter().enumerate() {
                        gw[k][o][i] += d * a;
                    }
                }
                if k > 0 {
                    let l = &self.layers[k];
                    delta = (0..l.w[0].len())
                        .map(|i| {
                            let back: f64 = l.w.iter().zip(&delta).map(|(row, d)| row[i] * d).sum();
                            back * self.activation.derivative(zs[k - 1][i], acts[k][i])
                        })
                        .collect();
                }
            }
        }
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in gw.iter().zip(&gb) {
            out.extend(w.iter().flatten());
            out.extend(b);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MlpResult {
    pub layer_sizes: Vec<usize>,
    pub r2_train: f64,
    pub param_count: usize,
    pub hidden_nodes: usize,
    /// Hidden plus output units.
    pub node_count: usize,
    pub epochs_used: usize,
    pub diverged: bool,
}

fn moments(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = v.clone().count() as f64;
    let mean = v.clone().sum::<f64>() / n;
    let var = v.map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    (mean, if var > 0.0 { var.sqrt() } else { 1.0 })
}

/// Full-batch gradient descent until train R² reaches `target_r2` or the
/// epoch budget runs out. Inputs and target are z-scored internally; R² is
/// invariant to that rescaling.
pub fn mlp_train(data: &Dataset, spec: &MlpSpec, target_r2: f64) -> Result<MlpResult> {
    spec.validate()?;
    if spec.layer_sizes[0] != data.dim() || *spec.layer_sizes.last().unwrap() != 1 {
        return Err(XnetError::Config(format!(
            "layer sizes {:?} do not fit {} inputs and one output",
            spec.layer_sizes,
            data.dim()
        )));
    }
    let cols: Vec<(f64, f64)> = (0..data.dim()).map(|j| moments(data.x.iter().map(move |r| r[j]))).collect();
    let (ym, ys) = moments(data.y.iter().copied());
    let scaled = Dataset::new(
        data.x
            .iter()
            .map(|r| r.iter().zip(&cols).map(|(v, (m, s))| (v - m) / s).collect())
            .collect(),
        data.y.iter().map(|y| (y - ym) / ys).collect(),
    )?;

    let mut net = Mlp::new(spec)?;
    let mut params = net.params();
    let r2_of = |net: &Mlp| {
        let pred: Vec<f64> = scaled.x.iter().map(|x| net.predict(x)[0]).collect();
        r_squared(&scaled.y, &pred).unwrap_or(f64::NEG_INFINITY)
    };
    let mut r2 = r2_of(&net);
    let mut epochs = 0;
    let mut diverged = false;
    while epochs < spec.epochs && r2 < target_r2 {
        let g = net.gradient(&scaled);
        for (p, g) in params.iter_mut().zip(&g) {
            *p -= spec.learning_rate * g;
        }
        net.set_params(&params);
        epochs += 1;
        if epochs % 10 == 0 || epochs == spec.epochs {
            r2 = r2_of(&net);
            if !r2.is_finite() {
                diverged = true;
                break;
            }
        }
    }
    let hidden: usize = spec.layer_sizes[1..spec.layer_sizes.len() - 1].iter().sum();
    Ok(MlpResult {
        layer_sizes: spec.layer_sizes.clone(),
        r2_train: r2,
        param_count: mlp_param_count(spec),
        hidden_nodes: hidden,
        node_count: spec.node_count(),
        epochs_used: epochs,
        diverged,
    })
}

/// Default single-hidden-layer widths tried by [`mlp_sweep`].
pub const SWEEP_WIDTHS: [usize; 10] = [4, 8, 14, 20, 26, 32, 38, 44, 50, 56];

/// Trains `[dim, h, 1]` for each width in turn and returns the first result
/// reaching `target_r2`, or the last one tried.
pub fn mlp_sweep(data: &Dataset, base: &MlpSpec, widths: &[usize], target_r2: f64) -> Result<MlpResult> {
    let mut last = None;
    for &h in widths {
        let spec = MlpSpec {
            layer_sizes: vec![data.dim(), h, 1],
            ..base.clone()
        };
        let r = mlp_train(data, &spec, target_r2)?;
        let done = r.r2_train >= target_r2;
        last = Some(r);
        if done {
            break;
        }
    }
    last.ok_or_else(|| XnetError::Config("empty width list".into()))
}

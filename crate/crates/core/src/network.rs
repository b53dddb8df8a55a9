//! Feedforward policy network, Adam, and the linear learning-rate schedule.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Gradients, NodeId, NumArray, Shape, Tape};
use crate::error::{Error, Result};

pub const FILE_MAGIC: &str = "FRONTIERLAB-NET";
pub const FILE_VERSION: &str = "v1";

/// Number of hidden layers of every policy network.
pub const HIDDEN_LAYERS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputHead {
    Identity,
    Sigmoid,
    Tanh,
}

impl OutputHead {
    pub fn name(self) -> &'static str {
        match self {
            OutputHead::Identity => "identity",
            OutputHead::Sigmoid => "sigmoid",
            OutputHead::Tanh => "tanh",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "identity" => Some(OutputHead::Identity),
            "sigmoid" => Some(OutputHead::Sigmoid),
            "tanh" => Some(OutputHead::Tanh),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `out x in` matrix.
    pub weights: NumArray,
    pub bias: NumArray,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    layer_dims: Vec<usize>,
    head: OutputHead,
    layers: Vec<Layer>,
}

/// Hidden width used for a portfolio of `n_assets`.
pub fn hidden_width(n_assets: usize) -> usize {
    10 + n_assets
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.len() != HIDDEN_LAYERS + 2 {
        return Err(Error::InvalidDimension(format!(
            "expected {} layer dims, got {}",
            HIDDEN_LAYERS + 2,
            dims.len()
        )));
    }
    if let Some(pos) = dims.iter().position(|&d| d == 0) {
        return Err(Error::InvalidDimension(format!("layer {pos} has width 0")));
    }
    if dims[1..=HIDDEN_LAYERS].windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::InvalidDimension(format!(
            "hidden layers must share one width, got {:?}",
            &dims[1..=HIDDEN_LAYERS]
        )));
    }
    Ok(())
}

impl NetworkParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init(layer_dims: &[usize], head: OutputHead, seed: u64) -> Result<Self> {
        validate_dims(layer_dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = layer_dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-limit..limit))
                    .collect();
                Layer {
                    weights: NumArray::matrix(fan_out, fan_in, data).unwrap(),
                    bias: NumArray::zeros(Shape::Vector(fan_out)),
                }
            })
            .collect();
        Ok(NetworkParams {
            layer_dims: layer_dims.to_vec(),
            head,
            layers,
        })
    }

    /// Network with `n_inputs` inputs and one output per asset.
    pub fn for_policy(n_inputs: usize, n_assets: usize, head: OutputHead, seed: u64) -> Result<Self> {
        let m = hidden_width(n_assets);
        Self::init(&[n_inputs, m, m, m, n_assets], head, seed)
    }

    pub fn zeros(layer_dims: &[usize], head: OutputHead) -> Result<Self> {
        let mut net = Self::init(layer_dims, head, 0)?;
        let n = net.param_count();
        net.set_flat(&vec![0.0; n])?;
        Ok(net)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn head(&self) -> OutputHead {
        self.head
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn n_inputs(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn n_outputs(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
    }

    /// Parameters flattened layer by layer, weights (row-major) then bias.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.weights.data());
            out.extend_from_slice(l.bias.data());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::ShapeMismatch {
                op: "set_flat",
                detail: format!("{} values for {} parameters", flat.len(), self.param_count()),
            });
        }
        let mut pos = 0;
        for l in &mut self.layers {
            for arr in [&mut l.weights, &mut l.bias] {
                let n = arr.len();
                arr.data_mut().copy_from_slice(&flat[pos..pos + n]);
                pos += n;
            }
        }
        Ok(())
    }

    /// Puts the parameters on the tape as leaves.
    pub fn record(&self, tape: &mut Tape) -> ParamNodes {
        let layers = self
            .layers
            .iter()
            .map(|l| (tape.leaf(l.weights.clone()), tape.leaf(l.bias.clone())))
            .collect();
        ParamNodes {
            layers,
            head: self.head,
            param_count: self.param_count(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{FILE_MAGIC} {FILE_VERSION}").unwrap();
        let dims: Vec<String> = self.layer_dims.iter().map(|d| d.to_string()).collect();
        writeln!(s, "{}", dims.join(" ")).unwrap();
        writeln!(s, "{}", self.head.name()).unwrap();
        for l in &self.layers {
            let cols = l.weights.shape().cols();
            for row in l.weights.data().chunks(cols) {
                s.push_str(&format_floats(row));
                s.push('\n');
            }
            s.push_str(&format_floats(l.bias.data()));
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        if !text.ends_with('\n') {
            return Err(Error::Format("missing trailing newline (truncated?)".into()));
        }
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Format("empty file".into()))?;
        let (magic, version) = header
            .split_once(' ')
            .ok_or_else(|| Error::Format(format!("bad header `{header}`")))?;
        if magic != FILE_MAGIC {
            return Err(Error::Format(format!("bad magic `{magic}`")));
        }
        if version != FILE_VERSION {
            return Err(Error::Version(version.to_string()));
        }
        let dims_line = lines
            .next()
            .ok_or_else(|| Error::Format("missing layer dims".into()))?;
        let dims = dims_line
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Format(format!("layer dims: {e}")))?;
        validate_dims(&dims).map_err(|e| Error::Format(e.to_string()))?;
        let head_line = lines
            .next()
            .ok_or_else(|| Error::Format("missing output head".into()))?;
        let head = OutputHead::from_name(head_line.trim())
            .ok_or_else(|| Error::Format(format!("unknown output head `{head_line}`")))?;

        let mut next_row = |expect: usize, what: &str| -> Result<Vec<f64>> {
            let line = lines
                .next()
                .ok_or_else(|| Error::Format(format!("truncated before {what}")))?;
            let row = parse_floats(line)?;
            if row.len() != expect {
                return Err(Error::Format(format!(
                    "{what}: expected {expect} values, got {}",
                    row.len()
                )));
            }
            Ok(row)
        };
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (li, w) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let mut data = Vec::with_capacity(fan_in * fan_out);
            for r in 0..fan_out {
                data.extend(next_row(fan_in, &format!("layer {li} row {r}"))?);
            }
            let bias = next_row(fan_out, &format!("layer {li} bias"))?;
            layers.push(Layer {
                weights: NumArray::matrix(fan_out, fan_in, data)?,
                bias: NumArray::vector(bias),
            });
        }
        if lines.any(|l| !l.trim().is_empty()) {
            return Err(Error::Format("trailing data after last layer".into()));
        }
        Ok(NetworkParams {
            layer_dims: dims,
            head,
            layers,
        })
    }
}

/// Parameter leaves of a network recorded on one tape.
#[derive(Clone, Debug)]
pub struct ParamNodes {
    layers: Vec<(NodeId, NodeId)>,
    head: OutputHead,
    param_count: usize,
}

impl ParamNodes {
    /// `A_L ∘ tanh ∘ … ∘ tanh ∘ A_1`, then the output head. The input is either
    /// a vector of length `d0` or a feature-major `d0 x batch` matrix.
    pub fn forward(&self, tape: &mut Tape, input: NodeId) -> Result<NodeId> {
        let batched = match tape.shape(input) {
            Shape::Vector(_) => false,
            Shape::Matrix(..) => true,
            s => {
                return Err(Error::ShapeMismatch {
                    op: "forward",
                    detail: format!("input shape {s}"),
                })
            }
        };
        let mut h = input;
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            h = if batched {
                let z = tape.matmul(w, h)?;
                tape.add_column(z, b)?
            } else {
                let z = tape.matvec(w, h)?;
                tape.add(z, b)?
            };
            if i < last {
                h = tape.tanh(h)?;
            }
        }
        match self.head {
            OutputHead::Identity => Ok(h),
            OutputHead::Sigmoid => tape.sigmoid(h),
            OutputHead::Tanh => tape.tanh(h),
        }
    }

    /// Gradient in the same layout as [`NetworkParams::flat`].
    pub fn flat_gradient(&self, grads: &Gradients, tape: &Tape) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count);
        for &(w, b) in &self.layers {
            for id in [w, b] {
                out.extend_from_slice(grads.get_or_zeros(id, tape.shape(id)).data());
            }
        }
        out
    }

    pub fn leaves(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.layers.iter().flat_map(|&(w, b)| [w, b])
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step_count: u64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        AdamState {
            first_moment: vec![0.0; n_params],
            second_moment: vec![0.0; n_params],
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.second_moment
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        let n = self.first_moment.len();
        if params.len() != n || grads.len() != n {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                detail: format!("{} params, {} grads, state {n}", params.len(), grads.len()),
            });
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let c1 = 1.0 - ADAM_BETA1.powi(t);
        let c2 = 1.0 - ADAM_BETA2.powi(t);
        for k in 0..n {
            let g = grads[k];
            let m = ADAM_BETA1 * self.first_moment[k] + (1.0 - ADAM_BETA1) * g;
            let v = ADAM_BETA2 * self.second_moment[k] + (1.0 - ADAM_BETA2) * g * g;
            self.first_moment[k] = m;
            self.second_moment[k] = v;
            params[k] -= lr * (m / c1) / ((v / c2).sqrt() + ADAM_EPSILON);
        }
        Ok(())
    }
}

/// Learning rate decreasing linearly from `lr_initial` to `lr_final`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    lr_initial: f64,
    lr_final: f64,
    total_iterations: usize,
}

impl LrSchedule {
    pub fn new(lr_initial: f64, lr_final: f64, total_iterations: usize) -> Result<Self> {
        if !(lr_final > 0.0 && lr_initial >= lr_final) {
            return Err(Error::validation(
                "train.lr",
                format!("need lr_initial >= lr_final > 0, got {lr_initial} -> {lr_final}"),
            ));
        }
        if total_iterations == 0 {
            return Err(Error::validation("train.n_iterations", "must be positive"));
        }
        Ok(LrSchedule {
            lr_initial,
            lr_final,
            total_iterations,
        })
    }

    pub fn lr_initial(&self) -> f64 {
        self.lr_initial
    }

    pub fn lr_final(&self) -> f64 {
        self.lr_final
    }

    pub fn total_iterations(&self) -> usize {
        self.total_iterations
    }

    pub fn lr_at(&self, iteration: usize) -> Result<f64> {
        if iteration > self.total_iterations {
            return Err(Error::OutOfRange(format!(
                "iteration {iteration} (schedule has {})",
                self.total_iterations
            )));
        }
        let frac = iteration as f64 / self.total_iterations as f64;
        Ok(self.lr_initial + (self.lr_final - self.lr_initial) * frac)
    }
}

/// 17 significant digits, enough for an exact `f64` round trip.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn format_floats(values: &[f64]) -> String {
    values
        .iter()
        .map(|&v| format_float(v))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn parse_floats(line: &str) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|e| Error::Format(format!("bad float `{t}`: {e}")))
        })
        .collect()
}

//! Desk-scale classifiers (an MLP and a small CNN) and the SGD optimizer
//! shared by every training strategy.
//!
//! A [`Model`] owns its parameters as plain tensors; each training or attack
//! pass registers them on a fresh tape via [`Model::forward_taped`]. The
//! untaped [`Model::forward`] is the cheap path for evaluation and produces
//! bit-identical logits.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use pdalab_tensor::{
    load_tensor, save_tensor, Gradients, Tape, Tensor, TensorError, TensorIoError, Var,
};

use crate::rng::Rng;

#[derive(Debug)]
pub enum NnError {
    UnknownArch(String),
    TooFewClasses(usize),
    InputShapeMismatch { expected: Vec<usize>, got: Vec<usize> },
    MissingGradient(String),
    NonFiniteLogits,
    Checkpoint(String),
    Tensor(TensorError),
    TensorIo(TensorIoError),
    Io(std::io::Error),
}

impl fmt::Display for NnError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::UnknownArch(name) => write!(f, "unknown architecture '{name}' (mlp, cnn)"),
            Self::TooFewClasses(m) => write!(f, "need at least 2 classes, got {m}"),
            Self::InputShapeMismatch { expected, got } => {
                write!(f, "input shape {got:?} does not match model input {expected:?}")
            }
            Self::MissingGradient(name) => write!(f, "missing gradient for parameter '{name}'"),
            Self::NonFiniteLogits => write!(f, "forward produced non-finite logits"),
            Self::Checkpoint(msg) => write!(f, "checkpoint: {msg}"),
            Self::Tensor(e) => write!(f, "{e}"),
            Self::TensorIo(e) => write!(f, "{e}"),
            Self::Io(e) => write!(f, "io: {e}"),
        }
    }
}

impl std::error::Error for NnError {}

impl From<TensorError> for NnError {
    fn from(e: TensorError) -> Self {
        Self::Tensor(e)
    }
}
impl From<TensorIoError> for NnError {
    fn from(e: TensorIoError) -> Self {
        Self::TensorIo(e)
    }
}
impl From<std::io::Error> for NnError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, NnError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    Mlp,
    CnnSmall,
}

impl Arch {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "mlp" => Ok(Self::Mlp),
            "cnn" | "cnn_small" => Ok(Self::CnnSmall),
            other => Err(NnError::UnknownArch(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Mlp => "mlp",
            Self::CnnSmall => "cnn",
        }
    }
}

#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub weight: Tensor, // [in, out]
    pub bias: Tensor,   // [out]
}

#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub kernel: Tensor, // [filters, channels, kh, kw]
    pub bias: Tensor,   // [filters]
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone)]
pub enum Layer {
    Dense(DenseLayer),
    Conv(ConvLayer),
    Relu,
    Flatten,
}

/// An ordered stack of layers from input to per-class logits.
#[derive(Debug, Clone)]
pub struct Model {
    pub arch: Arch,
    pub input_shape: Vec<usize>,
    pub num_classes: usize,
    pub seed: u64,
    pub layers: Vec<Layer>,
}

const MLP_WIDTH: usize = 64;
const CNN_FILTERS: [usize; 2] = [8, 16];

/// Build a deterministically initialized model.
///
/// `mlp` is two hidden dense layers of width 64 with relu; `cnn` is two 3×3
/// convolution blocks (8 then 16 filters, stride 1, padding 1) with relu and
/// a dense head. Weights are uniform in `(-a, a)` with
/// `a = sqrt(6 / (fan_in + fan_out))`; biases start at zero.
pub fn build_model(arch: Arch, input_shape: &[usize], num_classes: usize, seed: u64) -> Result<Model> {
    if num_classes < 2 {
        return Err(NnError::TooFewClasses(num_classes));
    }
    let mut rng = Rng::from_label(seed, "model-init");
    let layers = match arch {
        Arch::Mlp => {
            let d: usize = input_shape.iter().product();
            vec![
                Layer::Flatten,
                Layer::Dense(dense_init(d, MLP_WIDTH, &mut rng)),
                Layer::Relu,
                Layer::Dense(dense_init(MLP_WIDTH, MLP_WIDTH, &mut rng)),
                Layer::Relu,
                Layer::Dense(dense_init(MLP_WIDTH, num_classes, &mut rng)),
            ]
        }
        Arch::CnnSmall => {
            let &[c, h, w] = input_shape else {
                return Err(NnError::InputShapeMismatch {
                    expected: vec![0, 0, 0],
                    got: input_shape.to_vec(),
                });
            };
            vec![
                Layer::Conv(conv_init(c, CNN_FILTERS[0], 3, &mut rng)),
                Layer::Relu,
                Layer::Conv(conv_init(CNN_FILTERS[0], CNN_FILTERS[1], 3, &mut rng)),
                Layer::Relu,
                Layer::Flatten,
                Layer::Dense(dense_init(CNN_FILTERS[1] * h * w, num_classes, &mut rng)),
            ]
        }
    };
    Ok(Model {
        arch,
        input_shape: input_shape.to_vec(),
        num_classes,
        seed,
        layers,
    })
}

fn glorot(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let numel: usize = shape.iter().product();
    let data: Vec<f64> = (0..numel).map(|_| rng.range(-a, a)).collect();
    Tensor::new(shape.to_vec(), data).expect("init shape")
}

fn dense_init(fan_in: usize, fan_out: usize, rng: &mut Rng) -> DenseLayer {
    DenseLayer {
        weight: glorot(&[fan_in, fan_out], fan_in, fan_out, rng),
        bias: Tensor::zeros(&[fan_out]),
    }
}

fn conv_init(channels: usize, filters: usize, k: usize, rng: &mut Rng) -> ConvLayer {
    ConvLayer {
        kernel: glorot(
            &[filters, channels, k, k],
            channels * k * k,
            filters * k * k,
            rng,
        ),
        bias: Tensor::zeros(&[filters]),
        stride: 1,
        padding: 1,
    }
}

impl Model {
    /// Named parameters in deterministic order.
    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Dense(d) => {
                    out.push((format!("l{i}.w"), &d.weight));
                    out.push((format!("l{i}.b"), &d.bias));
                }
                Layer::Conv(c) => {
                    out.push((format!("l{i}.k"), &c.kernel));
                    out.push((format!("l{i}.b"), &c.bias));
                }
                _ => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            match layer {
                Layer::Dense(d) => {
                    out.push((format!("l{i}.w"), &mut d.weight));
                    out.push((format!("l{i}.b"), &mut d.bias));
                }
                Layer::Conv(c) => {
                    out.push((format!("l{i}.k"), &mut c.kernel));
                    out.push((format!("l{i}.b"), &mut c.bias));
                }
                _ => {}
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn zero_params(&mut self) {
        for (_, p) in self.params_mut() {
            for v in p.data_mut() {
                *v = 0.0;
            }
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.rank() != self.input_shape.len() + 1 || x.shape()[1..] != self.input_shape[..] {
            return Err(NnError::InputShapeMismatch {
                expected: self.input_shape.clone(),
                got: x.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Pure forward pass to logits `[N, m]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = match layer {
                Layer::Dense(d) => cur.matmul(&d.weight)?.add(&d.bias)?,
                Layer::Conv(c) => {
                    let f = c.bias.numel();
                    cur.conv2d(&c.kernel, c.stride, c.padding)?
                        .add(&c.bias.reshape(&[f, 1, 1])?)?
                }
                Layer::Relu => cur.relu(),
                Layer::Flatten => {
                    let n = cur.shape()[0];
                    let rest: usize = cur.shape()[1..].iter().product();
                    cur.reshape(&[n, rest])?
                }
            };
        }
        if cur.data().iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFiniteLogits);
        }
        Ok(cur)
    }

    /// Forward pass recorded on `tape`, registering the input and every
    /// parameter as differentiable leaves.
    pub fn forward_taped(&self, tape: &Tape, x: &Tensor) -> Result<TapedForward> {
        self.check_input(x)?;
        let input = tape.leaf(x.clone())?;
        let mut params = Vec::new();
        let mut cur = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            cur = match layer {
                Layer::Dense(d) => {
                    let w = tape.leaf(d.weight.clone())?;
                    let b = tape.leaf(d.bias.clone())?;
                    let out = cur.matmul(&w)?.add(&b)?;
                    params.push((format!("l{i}.w"), w));
                    params.push((format!("l{i}.b"), b));
                    out
                }
                Layer::Conv(c) => {
                    let f = c.bias.numel();
                    let k = tape.leaf(c.kernel.clone())?;
                    let b = tape.leaf(c.bias.reshape(&[f, 1, 1])?)?;
                    let out = cur.conv2d(&k, c.stride, c.padding)?.add(&b)?;
                    params.push((format!("l{i}.k"), k));
                    params.push((format!("l{i}.b"), b));
                    out
                }
                Layer::Relu => cur.relu()?,
                Layer::Flatten => {
                    let n = cur.shape()[0];
                    let rest: usize = cur.shape()[1..].iter().product();
                    cur.reshape(&[n, rest])?
                }
            };
        }
        Ok(TapedForward {
            logits: cur,
            input,
            params,
        })
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let logits = self.forward(x)?;
        let m = self.num_classes;
        Ok(logits
            .data()
            .chunks_exact(m)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(i, _)| i)
                    .unwrap()
            })
            .collect())
    }
}

/// Handles produced by a taped forward pass.
pub struct TapedForward {
    pub logits: Var,
    pub input: Var,
    pub params: Vec<(String, Var)>,
}

impl TapedForward {
    /// Collect parameter gradients keyed by name. Conv bias gradients are
    /// reshaped back to `[filters]`.
    pub fn param_grads(&self, grads: &Gradients) -> BTreeMap<String, Tensor> {
        self.params
            .iter()
            .map(|(name, var)| {
                let g = grads.wrt(var);
                let g = if g.rank() == 3 {
                    let f = g.shape()[0];
                    g.reshape(&[f]).expect("conv bias gradient")
                } else {
                    g
                };
                (name.clone(), g)
            })
            .collect()
    }

    pub fn input_grad(&self, grads: &Gradients) -> Tensor {
        grads.wrt(&self.input)
    }
}

/// SGD with optional momentum.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: BTreeMap<String, Tensor>,
}

impl Sgd {
    pub fn new(learning_rate: f64, momentum: f64) -> Self {
        Self {
            learning_rate,
            momentum,
            velocity: BTreeMap::new(),
        }
    }

    /// `v ← momentum·v + g;  θ ← θ − η·v`
    pub fn step(&mut self, model: &mut Model, grads: &BTreeMap<String, Tensor>) -> Result<()> {
        let eta = self.learning_rate;
        let mu = self.momentum;
        for (name, param) in model.params_mut() {
            let grad = grads
                .get(&name)
                .ok_or_else(|| NnError::MissingGradient(name.clone()))?;
            let vel = self
                .velocity
                .entry(name)
                .or_insert_with(|| Tensor::zeros(param.shape()));
            for ((p, v), g) in param
                .data_mut()
                .iter_mut()
                .zip(vel.data_mut())
                .zip(grad.data())
            {
                *v = mu * *v + g;
                *p -= eta * *v;
            }
        }
        Ok(())
    }
}

// ── checkpoints ──────────────────────────────────────────────────────

/// Save a model as a directory of tensors plus a plain-text manifest.
pub fn save_checkpoint<P: AsRef<Path>>(model: &Model, dir: P, epoch: usize) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    manifest.push_str(&format!("arch={}\n", model.arch.name()));
    manifest.push_str(&format!(
        "input_shape={}\n",
        model
            .input_shape
            .iter()
            .map(|e| e.to_string())
            .collect::<Vec<_>>()
            .join(",")
    ));
    manifest.push_str(&format!("num_classes={}\n", model.num_classes));
    manifest.push_str(&format!("seed={}\n", model.seed));
    manifest.push_str(&format!("epoch={epoch}\n"));
    for (name, tensor) in model.params() {
        manifest.push_str(&format!("param={name}\n"));
        save_tensor(dir.join(format!("{name}.pdat")), tensor)?;
    }
    fs::write(dir.join("manifest.txt"), manifest)?;
    Ok(())
}

/// Load a checkpoint directory written by [`save_checkpoint`].
pub fn load_checkpoint<P: AsRef<Path>>(dir: P) -> Result<(Model, usize)> {
    let dir = dir.as_ref();
    let manifest = fs::read_to_string(dir.join("manifest.txt"))
        .map_err(|e| NnError::Checkpoint(format!("{}: {e}", dir.display())))?;
    let mut arch = None;
    let mut input_shape = None;
    let mut num_classes = None;
    let mut seed = None;
    let mut epoch = 0usize;
    let mut param_names = Vec::new();
    for line in manifest.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(NnError::Checkpoint(format!("bad manifest line '{line}'")));
        };
        match k {
            "arch" => arch = Some(Arch::parse(v)?),
            "input_shape" => {
                let shape: std::result::Result<Vec<usize>, _> =
                    v.split(',').map(|e| e.parse::<usize>()).collect();
                input_shape =
                    Some(shape.map_err(|_| NnError::Checkpoint(format!("bad input_shape '{v}'")))?);
            }
            "num_classes" => {
                num_classes =
                    Some(v.parse().map_err(|_| {
                        NnError::Checkpoint(format!("bad num_classes '{v}'"))
                    })?)
            }
            "seed" => {
                seed = Some(
                    v.parse()
                        .map_err(|_| NnError::Checkpoint(format!("bad seed '{v}'")))?,
                )
            }
            "epoch" => {
                epoch = v
                    .parse()
                    .map_err(|_| NnError::Checkpoint(format!("bad epoch '{v}'")))?
            }
            "param" => param_names.push(v.to_string()),
            other => return Err(NnError::Checkpoint(format!("unknown manifest key '{other}'"))),
        }
    }
    let (Some(arch), Some(input_shape), Some(num_classes), Some(seed)) =
        (arch, input_shape, num_classes, seed)
    else {
        return Err(NnError::Checkpoint("manifest missing required keys".into()));
    };
    let mut model = build_model(arch, &input_shape, num_classes, seed)?;
    let expected: Vec<String> = model.params().iter().map(|(n, _)| n.clone()).collect();
    if expected != param_names {
        return Err(NnError::Checkpoint(format!(
            "manifest params {param_names:?} do not match architecture params {expected:?}"
        )));
    }
    for (name, param) in model.params_mut() {
        let loaded = load_tensor(dir.join(format!("{name}.pdat")))?;
        if loaded.shape() != param.shape() {
            return Err(NnError::Checkpoint(format!(
                "parameter '{name}' has shape {:?}, expected {:?}",
                loaded.shape(),
                param.shape()
            )));
        }
        *param = loaded;
    }
    Ok((model, epoch))
}

//! Row-major `f64` tensors with reverse-mode automatic differentiation.
//!
//! [`Tensor`] is a plain immutable-by-convention value: a shape plus a
//! contiguous row-major buffer. Gradient tracking lives in [`Tape`]/[`Var`]:
//! values are registered on a tape as leaves, composed through recorded
//! operations, and differentiated with a single reverse sweep. A tape is
//! confined to one thread and consumed by [`backward`].
//!
//! Broadcasting follows trailing-dimension alignment: shapes are compared
//! from the last dimension backwards and each pair must be equal or 1.

mod io;
mod tape;

pub use io::{load_tensor, read_tensor, save_tensor, write_tensor, TensorIoError};
pub use tape::{backward, softmax_logloss, Gradients, Tape, Var};

use std::fmt;

/// Errors raised by tensor arithmetic and tape operations.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorError {
    /// `product(shape)` does not match the provided buffer length.
    ShapeDataMismatch { shape: Vec<usize>, data_len: usize },
    /// Elementwise operands are not broadcast-compatible.
    BroadcastMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// Matmul operands are not rank-2 with matching inner extents.
    MatmulMismatch { lhs: Vec<usize>, rhs: Vec<usize> },
    /// Convolution geometry is invalid (rank, channels, kernel vs padded input, stride).
    ConvGeometry {
        input: Vec<usize>,
        kernel: Vec<usize>,
        stride: usize,
        padding: usize,
    },
    /// Reshape target has a different element count.
    ReshapeMismatch { from: Vec<usize>, to: Vec<usize> },
    /// Log-loss input contains NaN or infinite logits.
    NonFiniteLogits,
    /// A class label lies outside `[0, classes)`.
    LabelOutOfRange { label: usize, classes: usize },
    /// `backward` was called on a tensor that is not a scalar.
    NonScalarLoss { shape: Vec<usize> },
    /// The tape has already been consumed by a backward pass.
    TapeConsumed,
    /// Operands were recorded on different tapes.
    TapeMismatch,
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ShapeDataMismatch { shape, data_len } => write!(
                f,
                "shape {shape:?} implies {} elements but buffer holds {data_len}",
                shape.iter().product::<usize>()
            ),
            Self::BroadcastMismatch { op, lhs, rhs } => {
                write!(f, "{op}: shapes {lhs:?} and {rhs:?} do not broadcast")
            }
            Self::MatmulMismatch { lhs, rhs } => {
                write!(f, "matmul: incompatible shapes {lhs:?} and {rhs:?}")
            }
            Self::ConvGeometry {
                input,
                kernel,
                stride,
                padding,
            } => write!(
                f,
                "conv2d: invalid geometry for input {input:?}, kernel {kernel:?}, \
                 stride {stride}, padding {padding}"
            ),
            Self::ReshapeMismatch { from, to } => {
                write!(f, "reshape: {from:?} and {to:?} differ in element count")
            }
            Self::NonFiniteLogits => write!(f, "log-loss: logits contain non-finite values"),
            Self::LabelOutOfRange { label, classes } => {
                write!(f, "label {label} out of range for {classes} classes")
            }
            Self::NonScalarLoss { shape } => {
                write!(f, "backward requires a scalar loss, got shape {shape:?}")
            }
            Self::TapeConsumed => write!(f, "tape already consumed by a backward pass"),
            Self::TapeMismatch => write!(f, "operands belong to different tapes"),
        }
    }
}

impl std::error::Error for TensorError {}

pub type Result<T> = std::result::Result<T, TensorError>;

/// An n-dimensional array of `f64` in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::ShapeDataMismatch {
                shape,
                data_len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    /// Rank-0 tensor holding a single value.
    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Value of a rank-0 or single-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.numel(), 1, "item() on a multi-element tensor");
        self.data[0]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(TensorError::ReshapeMismatch {
                from: self.shape.clone(),
                to: shape.to_vec(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        broadcast_binary("add", self, other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        broadcast_binary("sub", self, other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        broadcast_binary("mul", self, other, |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| v * c)
    }

    pub fn relu(&self) -> Self {
        self.map(|v| if v > 0.0 { v } else { 0.0 })
    }

    pub fn sign(&self) -> Self {
        self.map(|v| {
            if v > 0.0 {
                1.0
            } else if v < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Self {
        self.map(|v| v.clamp(lo, hi))
    }

    /// Clip into the pixel domain `[0, 1]`.
    pub fn clip01(&self) -> Self {
        self.clamp(0.0, 1.0)
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (m, k) = match self.shape[..] {
            [m, k] => (m, k),
            _ => {
                return Err(TensorError::MatmulMismatch {
                    lhs: self.shape.clone(),
                    rhs: other.shape.clone(),
                })
            }
        };
        let (k2, n) = match other.shape[..] {
            [k2, n] => (k2, n),
            _ => {
                return Err(TensorError::MatmulMismatch {
                    lhs: self.shape.clone(),
                    rhs: other.shape.clone(),
                })
            }
        };
        if k != k2 {
            return Err(TensorError::MatmulMismatch {
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let data = matmul_raw(&self.data, &other.data, m, k, n);
        Ok(Self {
            shape: vec![m, n],
            data,
        })
    }

    /// Cross-correlation of `self` `[N,C,H,W]` with `kernel` `[F,C,kh,kw]`.
    pub fn conv2d(&self, kernel: &Self, stride: usize, padding: usize) -> Result<Self> {
        let geom = ConvGeom::resolve(&self.shape, &kernel.shape, stride, padding)?;
        let mut out = vec![0.0; geom.batch * geom.filters * geom.out_h * geom.out_w];
        conv2d_forward(&self.data, &kernel.data, &geom, &mut out);
        Ok(Self {
            shape: vec![geom.batch, geom.filters, geom.out_h, geom.out_w],
            data: out,
        })
    }
}

// ── shared raw kernels (also used by the tape backward pass) ─────────

/// Broadcast shape under trailing-dimension alignment.
pub fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = dim_from_trailing(a, rank, i);
        let db = dim_from_trailing(b, rank, i);
        if da == db || da == 1 || db == 1 {
            out[i] = da.max(db);
        } else {
            return Err(TensorError::BroadcastMismatch {
                op,
                lhs: a.to_vec(),
                rhs: b.to_vec(),
            });
        }
    }
    Ok(out)
}

fn dim_from_trailing(shape: &[usize], rank: usize, i: usize) -> usize {
    let offset = rank - shape.len();
    if i < offset {
        1
    } else {
        shape[i - offset]
    }
}

/// Row-major strides with broadcast dimensions (extent 1) zeroed, padded to `rank`.
pub(crate) fn broadcast_strides(shape: &[usize], rank: usize) -> Vec<usize> {
    let mut strides = vec![0usize; rank];
    let offset = rank - shape.len();
    let mut acc = 1usize;
    for d in (0..shape.len()).rev() {
        strides[offset + d] = if shape[d] == 1 { 0 } else { acc };
        acc *= shape[d];
    }
    strides
}

pub(crate) fn for_each_broadcast(
    out_shape: &[usize],
    a_strides: &[usize],
    b_strides: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let numel: usize = out_shape.iter().product();
    let rank = out_shape.len();
    if rank == 0 {
        if numel == 1 {
            f(0, 0, 0);
        }
        return;
    }
    let mut coords = vec![0usize; rank];
    let mut ai = 0usize;
    let mut bi = 0usize;
    for oi in 0..numel {
        f(oi, ai, bi);
        // odometer increment
        for d in (0..rank).rev() {
            coords[d] += 1;
            ai += a_strides[d];
            bi += b_strides[d];
            if coords[d] < out_shape[d] {
                break;
            }
            coords[d] = 0;
            ai -= a_strides[d] * out_shape[d];
            bi -= b_strides[d] * out_shape[d];
        }
    }
}

fn broadcast_binary(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    let out_shape = broadcast_shape(op, &a.shape, &b.shape)?;
    let rank = out_shape.len();
    let a_str = broadcast_strides(&a.shape, rank);
    let b_str = broadcast_strides(&b.shape, rank);
    let mut out = vec![0.0; out_shape.iter().product()];
    for_each_broadcast(&out_shape, &a_str, &b_str, |oi, ai, bi| {
        out[oi] = f(a.data[ai], b.data[bi]);
    });
    Tensor::new(out_shape, out)
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in row.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// Resolved convolution geometry shared by forward and backward kernels.
#[derive(Debug, Clone)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub filters: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn resolve(
        input: &[usize],
        kernel: &[usize],
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let err = || TensorError::ConvGeometry {
            input: input.to_vec(),
            kernel: kernel.to_vec(),
            stride,
            padding,
        };
        let (&[batch, channels, in_h, in_w], &[filters, kc, k_h, k_w]) = (input, kernel) else {
            return Err(err());
        };
        if kc != channels || stride == 0 {
            return Err(err());
        }
        let padded_h = in_h + 2 * padding;
        let padded_w = in_w + 2 * padding;
        if k_h == 0 || k_w == 0 || k_h > padded_h || k_w > padded_w {
            return Err(err());
        }
        let out_h = (padded_h - k_h) / stride + 1;
        let out_w = (padded_w - k_w) / stride + 1;
        Ok(Self {
            batch,
            channels,
            in_h,
            in_w,
            filters,
            k_h,
            k_w,
            stride,
            padding,
            out_h,
            out_w,
        })
    }

    /// Output index range `[lo, hi)` such that `o*stride + k - padding` stays
    /// inside `[0, extent)`.
    fn valid_range(&self, k: usize, extent: usize, out_extent: usize) -> (usize, usize) {
        let s = self.stride as i64;
        let off = k as i64 - self.padding as i64;
        let lo = (-off + s - 1).div_euclid(s).max(0);
        let hi = ((extent as i64 - 1 - off).div_euclid(s) + 1).clamp(0, out_extent as i64);
        if lo >= hi {
            (0, 0)
        } else {
            (lo as usize, hi as usize)
        }
    }
}

pub(crate) fn conv2d_forward(x: &[f64], k: &[f64], g: &ConvGeom, out: &mut [f64]) {
    let in_plane = g.in_h * g.in_w;
    let out_plane = g.out_h * g.out_w;
    for n in 0..g.batch {
        for f in 0..g.filters {
            let out_base = (n * g.filters + f) * out_plane;
            for c in 0..g.channels {
                let x_base = (n * g.channels + c) * in_plane;
                for ki in 0..g.k_h {
                    let (oh_lo, oh_hi) = g.valid_range(ki, g.in_h, g.out_h);
                    for kj in 0..g.k_w {
                        let kv = k[((f * g.channels + c) * g.k_h + ki) * g.k_w + kj];
                        if kv == 0.0 {
                            continue;
                        }
                        let (ow_lo, ow_hi) = g.valid_range(kj, g.in_w, g.out_w);
                        for oh in oh_lo..oh_hi {
                            let ih = oh * g.stride + ki - g.padding;
                            let x_row = x_base + ih * g.in_w;
                            let o_row = out_base + oh * g.out_w;
                            for ow in ow_lo..ow_hi {
                                let iw = ow * g.stride + kj - g.padding;
                                out[o_row + ow] += kv * x[x_row + iw];
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_backward_input(
    grad_out: &[f64],
    k: &[f64],
    g: &ConvGeom,
    grad_x: &mut [f64],
) {
    let in_plane = g.in_h * g.in_w;
    let out_plane = g.out_h * g.out_w;
    for n in 0..g.batch {
        for f in 0..g.filters {
            let out_base = (n * g.filters + f) * out_plane;
            for c in 0..g.channels {
                let x_base = (n * g.channels + c) * in_plane;
                for ki in 0..g.k_h {
                    let (oh_lo, oh_hi) = g.valid_range(ki, g.in_h, g.out_h);
                    for kj in 0..g.k_w {
                        let kv = k[((f * g.channels + c) * g.k_h + ki) * g.k_w + kj];
                        if kv == 0.0 {
                            continue;
                        }
                        let (ow_lo, ow_hi) = g.valid_range(kj, g.in_w, g.out_w);
                        for oh in oh_lo..oh_hi {
                            let ih = oh * g.stride + ki - g.padding;
                            let x_row = x_base + ih * g.in_w;
                            let o_row = out_base + oh * g.out_w;
                            for ow in ow_lo..ow_hi {
                                let iw = ow * g.stride + kj - g.padding;
                                grad_x[x_row + iw] += kv * grad_out[o_row + ow];
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_backward_kernel(
    grad_out: &[f64],
    x: &[f64],
    g: &ConvGeom,
    grad_k: &mut [f64],
) {
    let in_plane = g.in_h * g.in_w;
    let out_plane = g.out_h * g.out_w;
    for n in 0..g.batch {
        for f in 0..g.filters {
            let out_base = (n * g.filters + f) * out_plane;
            for c in 0..g.channels {
                let x_base = (n * g.channels + c) * in_plane;
                for ki in 0..g.k_h {
                    let (oh_lo, oh_hi) = g.valid_range(ki, g.in_h, g.out_h);
                    for kj in 0..g.k_w {
                        let (ow_lo, ow_hi) = g.valid_range(kj, g.in_w, g.out_w);
                        let mut acc = 0.0;
                        for oh in oh_lo..oh_hi {
                            let ih = oh * g.stride + ki - g.padding;
                            let x_row = x_base + ih * g.in_w;
                            let o_row = out_base + oh * g.out_w;
                            for ow in ow_lo..ow_hi {
                                let iw = ow * g.stride + kj - g.padding;
                                acc += x[x_row + iw] * grad_out[o_row + ow];
                            }
                        }
                        grad_k[((f * g.channels + c) * g.k_h + ki) * g.k_w + kj] += acc;
                    }
                }
            }
        }
    }
}

/// Reduce `grad` (shaped `from`) back onto `to` by summing broadcast dimensions.
pub(crate) fn reduce_to_shape(grad: &[f64], from: &[usize], to: &[usize]) -> Vec<f64> {
    let to_numel: usize = to.iter().product();
    if from == to {
        return grad.to_vec();
    }
    let rank = from.len();
    let strides = broadcast_strides(to, rank);
    let mut out = vec![0.0; to_numel];
    for_each_broadcast(from, &strides, &vec![0; rank], |oi, ti, _| {
        out[ti] += grad[oi];
    });
    out
}

/// Mean log-loss of `logits` `[N,m]` against `labels`, without gradient tracking.
pub fn softmax_logloss_value(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let (probs, loss) = softmax_logloss_raw(logits, labels)?;
    let _ = probs;
    Ok(loss)
}

/// Row-wise softmax of `logits` `[N,m]`, log-sum-exp stabilized.
pub fn softmax_rows(logits: &Tensor) -> Result<Tensor> {
    let &[n, m] = logits.shape() else {
        return Err(TensorError::ShapeDataMismatch {
            shape: logits.shape().to_vec(),
            data_len: logits.numel(),
        });
    };
    let mut out = vec![0.0; n * m];
    for r in 0..n {
        let row = &logits.data()[r * m..(r + 1) * m];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&z| (z - max).exp()).sum();
        for c in 0..m {
            out[r * m + c] = (row[c] - max).exp() / sum;
        }
    }
    Tensor::new(vec![n, m], out)
}

pub(crate) fn softmax_logloss_raw(logits: &Tensor, labels: &[usize]) -> Result<(Vec<f64>, f64)> {
    let &[n, m] = logits.shape() else {
        return Err(TensorError::ShapeDataMismatch {
            shape: logits.shape().to_vec(),
            data_len: logits.numel(),
        });
    };
    if labels.len() != n {
        return Err(TensorError::ShapeDataMismatch {
            shape: vec![n, m],
            data_len: labels.len(),
        });
    }
    if logits.data().iter().any(|v| !v.is_finite()) {
        return Err(TensorError::NonFiniteLogits);
    }
    for &y in labels {
        if y >= m {
            return Err(TensorError::LabelOutOfRange { label: y, classes: m });
        }
    }
    let mut probs = vec![0.0; n * m];
    let mut loss = 0.0;
    for r in 0..n {
        let row = &logits.data()[r * m..(r + 1) * m];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&z| (z - max).exp()).sum();
        let lse = max + sum.ln();
        for c in 0..m {
            probs[r * m + c] = (row[c] - lse).exp();
        }
        loss += lse - row[labels[r]];
    }
    Ok((probs, loss / n as f64))
}

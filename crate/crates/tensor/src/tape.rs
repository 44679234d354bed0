//! Gradient tape: an append-only record of operations replayed in reverse.
//!
//! Topological order holds by construction (an operation's inputs are
//! recorded before it), so the backward sweep is a single reverse pass that
//! visits each node at most once. A tape is single-use: [`backward`]
//! consumes it and further recording fails with [`TensorError::TapeConsumed`].

use std::cell::RefCell;
use std::rc::Rc;

use crate::{
    broadcast_strides, conv2d_backward_input, conv2d_backward_kernel, conv2d_forward,
    for_each_broadcast, reduce_to_shape, softmax_logloss_raw, ConvGeom, Result, Tensor,
    TensorError,
};

enum Op {
    Leaf,
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { a: usize, c: f64 },
    Matmul { a: usize, b: usize },
    Conv2d { x: usize, k: usize, geom: ConvGeom },
    Relu { a: usize },
    Reshape { a: usize },
    Sum { a: usize },
    SoftmaxLogLoss { logits: usize, labels: Vec<usize>, probs: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
}

struct TapeInner {
    nodes: Vec<Node>,
    consumed: bool,
}

/// A single-threaded, single-use gradient tape.
#[derive(Clone)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            inner: Rc::new(RefCell::new(TapeInner {
                nodes: Vec::new(),
                consumed: false,
            })),
        }
    }

    /// Register a value as a differentiable input.
    pub fn leaf(&self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf)
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_consumed(&self) -> bool {
        self.inner.borrow().consumed
    }

    fn push(&self, value: Tensor, op: Op) -> Result<Var> {
        let mut inner = self.inner.borrow_mut();
        if inner.consumed {
            return Err(TensorError::TapeConsumed);
        }
        inner.nodes.push(Node { value, op });
        Ok(Var {
            tape: self.clone(),
            id: inner.nodes.len() - 1,
        })
    }

    fn same_tape(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }
}

/// A tensor registered on a tape.
#[derive(Clone)]
pub struct Var {
    tape: Tape,
    id: usize,
}

impl Var {
    pub fn value(&self) -> Tensor {
        self.tape.inner.borrow().nodes[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.inner.borrow().nodes[self.id].value.shape().to_vec()
    }

    pub fn id(&self) -> usize {
        self.id
    }

    fn binary(&self, other: &Var, op_name: &'static str) -> Result<(Tensor, usize, usize)> {
        if !self.tape.same_tape(&other.tape) {
            return Err(TensorError::TapeMismatch);
        }
        let inner = self.tape.inner.borrow();
        let a = &inner.nodes[self.id].value;
        let b = &inner.nodes[other.id].value;
        let value = match op_name {
            "add" => a.add(b)?,
            "sub" => a.sub(b)?,
            "mul" => a.mul(b)?,
            "matmul" => a.matmul(b)?,
            _ => unreachable!(),
        };
        Ok((value, self.id, other.id))
    }

    pub fn add(&self, other: &Var) -> Result<Var> {
        let (value, a, b) = self.binary(other, "add")?;
        self.tape.push(value, Op::Add { a, b })
    }

    pub fn sub(&self, other: &Var) -> Result<Var> {
        let (value, a, b) = self.binary(other, "sub")?;
        self.tape.push(value, Op::Sub { a, b })
    }

    pub fn mul(&self, other: &Var) -> Result<Var> {
        let (value, a, b) = self.binary(other, "mul")?;
        self.tape.push(value, Op::Mul { a, b })
    }

    pub fn matmul(&self, other: &Var) -> Result<Var> {
        let (value, a, b) = self.binary(other, "matmul")?;
        self.tape.push(value, Op::Matmul { a, b })
    }

    pub fn scale(&self, c: f64) -> Result<Var> {
        let value = self.tape.inner.borrow().nodes[self.id].value.scale(c);
        self.tape.push(value, Op::Scale { a: self.id, c })
    }

    pub fn relu(&self) -> Result<Var> {
        let value = self.tape.inner.borrow().nodes[self.id].value.relu();
        self.tape.push(value, Op::Relu { a: self.id })
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var> {
        let value = self.tape.inner.borrow().nodes[self.id].value.reshape(shape)?;
        self.tape.push(value, Op::Reshape { a: self.id })
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&self) -> Result<Var> {
        let total: f64 = self.tape.inner.borrow().nodes[self.id]
            .value
            .data()
            .iter()
            .sum();
        self.tape.push(Tensor::scalar(total), Op::Sum { a: self.id })
    }

    pub fn conv2d(&self, kernel: &Var, stride: usize, padding: usize) -> Result<Var> {
        if !self.tape.same_tape(&kernel.tape) {
            return Err(TensorError::TapeMismatch);
        }
        let (value, geom) = {
            let inner = self.tape.inner.borrow();
            let x = &inner.nodes[self.id].value;
            let k = &inner.nodes[kernel.id].value;
            let geom = ConvGeom::resolve(x.shape(), k.shape(), stride, padding)?;
            let mut out = vec![0.0; geom.batch * geom.filters * geom.out_h * geom.out_w];
            conv2d_forward(x.data(), k.data(), &geom, &mut out);
            (
                Tensor::new(vec![geom.batch, geom.filters, geom.out_h, geom.out_w], out)?,
                geom,
            )
        };
        self.tape.push(
            value,
            Op::Conv2d {
                x: self.id,
                k: kernel.id,
                geom,
            },
        )
    }
}

/// Mean log-loss over the batch with log-sum-exp stabilization.
///
/// The gradient with respect to the logits is `(softmax - onehot) / N`.
pub fn softmax_logloss(logits: &Var, labels: &[usize]) -> Result<Var> {
    let (probs, loss) = {
        let inner = logits.tape.inner.borrow();
        softmax_logloss_raw(&inner.nodes[logits.id].value, labels)?
    };
    logits.tape.push(
        Tensor::scalar(loss),
        Op::SoftmaxLogLoss {
            logits: logits.id,
            labels: labels.to_vec(),
            probs,
        },
    )
}

/// Gradients produced by a backward sweep, keyed by tape node.
pub struct Gradients {
    tape: Tape,
    grads: Vec<Option<Vec<f64>>>,
}

impl std::fmt::Debug for Gradients {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gradients")
            .field("nodes", &self.grads.len())
            .finish()
    }
}

impl Gradients {
    /// Gradient with respect to `var`; zero when the loss does not depend on it.
    pub fn wrt(&self, var: &Var) -> Tensor {
        assert!(
            self.tape.same_tape(&var.tape),
            "gradient requested for a var from another tape"
        );
        let inner = self.tape.inner.borrow();
        let shape = inner.nodes[var.id].value.shape().to_vec();
        match &self.grads[var.id] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(&shape),
        }
    }
}

/// Reverse sweep from a scalar loss. Consumes the tape.
pub fn backward(loss: &Var) -> Result<Gradients> {
    let mut inner = loss.tape.inner.borrow_mut();
    if inner.consumed {
        return Err(TensorError::TapeConsumed);
    }
    let loss_value = &inner.nodes[loss.id].value;
    if loss_value.numel() != 1 {
        return Err(TensorError::NonScalarLoss {
            shape: loss_value.shape().to_vec(),
        });
    }
    inner.consumed = true;

    let n_nodes = inner.nodes.len();
    let mut grads: Vec<Option<Vec<f64>>> = vec![None; n_nodes];
    grads[loss.id] = Some(vec![1.0]);

    for id in (0..=loss.id).rev() {
        let Some(g) = grads[id].take() else { continue };
        let node = &inner.nodes[id];
        match &node.op {
            Op::Leaf => {
                // keep the gradient for lookup
                grads[id] = Some(g);
                continue;
            }
            Op::Add { a, b } => {
                let (a, b) = (*a, *b);
                accumulate_reduced(&inner, &mut grads, a, &g, node.value.shape(), 1.0);
                accumulate_reduced(&inner, &mut grads, b, &g, node.value.shape(), 1.0);
            }
            Op::Sub { a, b } => {
                let (a, b) = (*a, *b);
                accumulate_reduced(&inner, &mut grads, a, &g, node.value.shape(), 1.0);
                accumulate_reduced(&inner, &mut grads, b, &g, node.value.shape(), -1.0);
            }
            Op::Mul { a, b } => {
                let (a, b) = (*a, *b);
                let out_shape = node.value.shape().to_vec();
                let rank = out_shape.len();
                let a_shape = inner.nodes[a].value.shape().to_vec();
                let b_shape = inner.nodes[b].value.shape().to_vec();
                let a_str = broadcast_strides(&a_shape, rank);
                let b_str = broadcast_strides(&b_shape, rank);
                let mut ga = vec![0.0; inner.nodes[a].value.numel()];
                let mut gb = vec![0.0; inner.nodes[b].value.numel()];
                {
                    let av = inner.nodes[a].value.data();
                    let bv = inner.nodes[b].value.data();
                    for_each_broadcast(&out_shape, &a_str, &b_str, |oi, ai, bi| {
                        ga[ai] += g[oi] * bv[bi];
                        gb[bi] += g[oi] * av[ai];
                    });
                }
                accumulate(&mut grads, a, ga);
                accumulate(&mut grads, b, gb);
            }
            Op::Scale { a, c } => {
                let scaled: Vec<f64> = g.iter().map(|v| v * c).collect();
                accumulate(&mut grads, *a, scaled);
            }
            Op::Matmul { a, b } => {
                let (a, b) = (*a, *b);
                let [m, k] = inner.nodes[a].value.shape() else { unreachable!() };
                let [_, n] = inner.nodes[b].value.shape() else { unreachable!() };
                let (m, k, n) = (*m, *k, *n);
                let av = inner.nodes[a].value.data();
                let bv = inner.nodes[b].value.data();
                // ga = g · bᵀ  (m×n · n×k with b transposed)
                let mut ga = vec![0.0; m * k];
                for i in 0..m {
                    for j in 0..n {
                        let gv = g[i * n + j];
                        if gv == 0.0 {
                            continue;
                        }
                        for p in 0..k {
                            ga[i * k + p] += gv * bv[p * n + j];
                        }
                    }
                }
                // gb = aᵀ · g  (k×m · m×n)
                let mut gb = vec![0.0; k * n];
                for i in 0..m {
                    for p in 0..k {
                        let avv = av[i * k + p];
                        if avv == 0.0 {
                            continue;
                        }
                        let grow = &g[i * n..(i + 1) * n];
                        let gbrow = &mut gb[p * n..(p + 1) * n];
                        for (gbv, &gv) in gbrow.iter_mut().zip(grow) {
                            *gbv += avv * gv;
                        }
                    }
                }
                accumulate(&mut grads, a, ga);
                accumulate(&mut grads, b, gb);
            }
            Op::Conv2d { x, k, geom } => {
                let (x, k) = (*x, *k);
                let mut gx = vec![0.0; inner.nodes[x].value.numel()];
                let mut gk = vec![0.0; inner.nodes[k].value.numel()];
                conv2d_backward_input(&g, inner.nodes[k].value.data(), geom, &mut gx);
                conv2d_backward_kernel(&g, inner.nodes[x].value.data(), geom, &mut gk);
                accumulate(&mut grads, x, gx);
                accumulate(&mut grads, k, gk);
            }
            Op::Relu { a } => {
                let a = *a;
                let av = inner.nodes[a].value.data();
                let ga: Vec<f64> = g
                    .iter()
                    .zip(av)
                    .map(|(&gv, &v)| if v > 0.0 { gv } else { 0.0 })
                    .collect();
                accumulate(&mut grads, a, ga);
            }
            Op::Reshape { a } => {
                accumulate(&mut grads, *a, g.clone());
            }
            Op::Sum { a } => {
                let a = *a;
                let ga = vec![g[0]; inner.nodes[a].value.numel()];
                accumulate(&mut grads, a, ga);
            }
            Op::SoftmaxLogLoss { logits, labels, probs } => {
                let logits = *logits;
                let m = inner.nodes[logits].value.shape()[1];
                let n = labels.len();
                let scale = g[0] / n as f64;
                let mut gl = probs.clone();
                for (r, &y) in labels.iter().enumerate() {
                    gl[r * m + y] -= 1.0;
                }
                for v in gl.iter_mut() {
                    *v *= scale;
                }
                accumulate(&mut grads, logits, gl);
            }
        }
    }

    drop(inner);
    Ok(Gradients {
        tape: loss.tape.clone(),
        grads,
    })
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: usize, delta: Vec<f64>) {
    match &mut grads[id] {
        Some(g) => {
            for (gv, dv) in g.iter_mut().zip(&delta) {
                *gv += dv;
            }
        }
        slot => *slot = Some(delta),
    }
}

fn accumulate_reduced(
    inner: &TapeInner,
    grads: &mut [Option<Vec<f64>>],
    id: usize,
    g: &[f64],
    out_shape: &[usize],
    sign: f64,
) {
    let target = inner.nodes[id].value.shape();
    let mut reduced = reduce_to_shape(g, out_shape, target);
    if sign != 1.0 {
        for v in reduced.iter_mut() {
            *v *= sign;
        }
    }
    accumulate(grads, id, reduced);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::softmax_logloss_value;

    fn tensor(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn square_gradient() {
        // f(x) = x², x = 3 → df/dx = 6
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0)).unwrap();
        let y = x.mul(&x).unwrap();
        let grads = backward(&y).unwrap();
        assert_eq!(grads.wrt(&x).item(), 6.0);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(tensor(&[2], &[1.0, 2.0])).unwrap();
        let c = tape.leaf(Tensor::scalar(5.0)).unwrap();
        let grads = backward(&c).unwrap();
        assert_eq!(grads.wrt(&x).data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let tape = Tape::new();
        let x = tape.leaf(tensor(&[2], &[1.0, 2.0])).unwrap();
        let err = backward(&x).unwrap_err();
        assert!(matches!(err, TensorError::NonScalarLoss { .. }));
    }

    #[test]
    fn tape_is_single_use() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0)).unwrap();
        let y = x.mul(&x).unwrap();
        backward(&y).unwrap();
        assert!(matches!(backward(&y), Err(TensorError::TapeConsumed)));
        assert!(matches!(
            tape.leaf(Tensor::scalar(1.0)),
            Err(TensorError::TapeConsumed)
        ));
    }

    #[test]
    fn mixing_tapes_fails() {
        let t1 = Tape::new();
        let t2 = Tape::new();
        let a = t1.leaf(Tensor::scalar(1.0)).unwrap();
        let b = t2.leaf(Tensor::scalar(2.0)).unwrap();
        assert!(matches!(a.add(&b), Err(TensorError::TapeMismatch)));
    }

    #[test]
    fn matmul_identity() {
        let a = tensor(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let eye = tensor(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(a.matmul(&eye).unwrap(), a);
    }

    #[test]
    fn broadcast_add_scalar_like() {
        // 1×1 broadcast against 2×2 of zeros gives a constant 2×2
        let ones = tensor(&[1, 1], &[2.0]);
        let zeros = Tensor::zeros(&[2, 2]);
        let out = zeros.add(&ones).unwrap();
        assert_eq!(out.shape(), &[2, 2]);
        assert!(out.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn matmul_matches_nested_loop_oracle() {
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let a_data: Vec<f64> = (0..12).map(|_| next()).collect();
        let b_data: Vec<f64> = (0..8).map(|_| next()).collect();
        let a = tensor(&[3, 4], &a_data);
        let b = tensor(&[4, 2], &b_data);
        let c = a.matmul(&b).unwrap();
        // independent triple-loop oracle
        for i in 0..3 {
            for j in 0..2 {
                let mut want = 0.0;
                for p in 0..4 {
                    want += a_data[i * 4 + p] * b_data[p * 2 + j];
                }
                assert!((c.data()[i * 2 + j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let a = tensor(&[2, 3], &[0.0; 6]);
        let b = tensor(&[4], &[0.0; 4]);
        let err = a.add(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4]"), "got {msg}");
    }

    #[test]
    fn conv_identity_kernel() {
        let x = tensor(&[1, 1, 3, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        let k = tensor(&[1, 1, 1, 1], &[1.0]);
        let y = x.conv2d(&k, 1, 0).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn conv_constant_case() {
        // 3×3 all-ones kernel over all-ones 5×5 input, no padding: every output is 9.
        let x = Tensor::full(&[1, 1, 5, 5], 1.0);
        let k = Tensor::full(&[1, 1, 3, 3], 1.0);
        let y = x.conv2d(&k, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 9.0));
    }

    #[test]
    fn conv_matches_six_loop_oracle() {
        let mut state = 42u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let (n, c, h, w) = (2, 3, 5, 4);
        let (f, kh, kw) = (4, 3, 2);
        let (stride, padding) = (2, 1);
        let x_data: Vec<f64> = (0..n * c * h * w).map(|_| next()).collect();
        let k_data: Vec<f64> = (0..f * c * kh * kw).map(|_| next()).collect();
        let x = tensor(&[n, c, h, w], &x_data);
        let k = tensor(&[f, c, kh, kw], &k_data);
        let y = x.conv2d(&k, stride, padding).unwrap();

        let oh = (h + 2 * padding - kh) / stride + 1;
        let ow = (w + 2 * padding - kw) / stride + 1;
        assert_eq!(y.shape(), &[n, f, oh, ow]);
        // direct six-nested-loop oracle with explicit zero padding
        for ni in 0..n {
            for fi in 0..f {
                for oi in 0..oh {
                    for oj in 0..ow {
                        let mut want = 0.0;
                        for ci in 0..c {
                            for ki in 0..kh {
                                for kj in 0..kw {
                                    let ih = (oi * stride + ki) as i64 - padding as i64;
                                    let iw = (oj * stride + kj) as i64 - padding as i64;
                                    if ih < 0 || iw < 0 || ih >= h as i64 || iw >= w as i64 {
                                        continue;
                                    }
                                    let xi = ((ni * c + ci) * h + ih as usize) * w + iw as usize;
                                    let kk = ((fi * c + ci) * kh + ki) * kw + kj;
                                    want += x_data[xi] * k_data[kk];
                                }
                            }
                        }
                        let got = y.data()[((ni * f + fi) * oh + oi) * ow + oj];
                        assert!((got - want).abs() < 1e-10, "got {got}, want {want}");
                    }
                }
            }
        }
    }

    #[test]
    fn conv_rejects_oversized_kernel() {
        let x = Tensor::zeros(&[1, 1, 3, 3]);
        let k = Tensor::zeros(&[1, 1, 6, 1]);
        assert!(matches!(
            x.conv2d(&k, 1, 1),
            Err(TensorError::ConvGeometry { .. })
        ));
        assert!(matches!(
            x.conv2d(&Tensor::zeros(&[1, 1, 2, 2]), 0, 0),
            Err(TensorError::ConvGeometry { .. })
        ));
    }

    #[test]
    fn logloss_uniform_case() {
        // all-zero logits over 4 classes: loss is ln 4 per example
        let logits = Tensor::zeros(&[3, 4]);
        let loss = softmax_logloss_value(&logits, &[0, 1, 2]).unwrap();
        assert!((loss - 4.0f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn logloss_gradient_is_probs_minus_onehot() {
        // logits 0, m=2, label 0, N=2 rows → gradient (−0.25, 0.25) per row
        let tape = Tape::new();
        let logits = tape.leaf(Tensor::zeros(&[2, 2])).unwrap();
        let loss = softmax_logloss(&logits, &[0, 0]).unwrap();
        let grads = backward(&loss).unwrap();
        let g = grads.wrt(&logits);
        for r in 0..2 {
            assert!((g.data()[r * 2] - (-0.25)).abs() < 1e-15);
            assert!((g.data()[r * 2 + 1] - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn logloss_rejects_non_finite() {
        let logits = tensor(&[1, 2], &[f64::NAN, 0.0]);
        assert!(matches!(
            softmax_logloss_value(&logits, &[0]),
            Err(TensorError::NonFiniteLogits)
        ));
    }

    #[test]
    fn logloss_rejects_bad_label() {
        let logits = Tensor::zeros(&[1, 2]);
        assert!(matches!(
            softmax_logloss_value(&logits, &[2]),
            Err(TensorError::LabelOutOfRange { label: 2, classes: 2 })
        ));
    }

    #[test]
    fn logloss_gradient_matches_central_differences() {
        let mut state = 7u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        let data: Vec<f64> = (0..8).map(|_| next()).collect();
        let labels = [1usize, 0, 3, 2][..2].to_vec();
        let logits = tensor(&[2, 4], &data);

        let tape = Tape::new();
        let v = tape.leaf(logits.clone()).unwrap();
        let loss = softmax_logloss(&v, &labels).unwrap();
        let grads = backward(&loss).unwrap();
        let g = grads.wrt(&v);

        let h = 1e-5;
        for i in 0..8 {
            let mut plus = data.clone();
            plus[i] += h;
            let mut minus = data.clone();
            minus[i] -= h;
            let lp = softmax_logloss_value(&tensor(&[2, 4], &plus), &labels).unwrap();
            let lm = softmax_logloss_value(&tensor(&[2, 4], &minus), &labels).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let rel = (g.data()[i] - fd).abs() / fd.abs().max(1e-8);
            assert!(rel < 1e-6, "index {i}: ad {} fd {fd}", g.data()[i]);
        }
    }

    #[test]
    fn backward_is_linear() {
        // grad of (a·f + b·g) equals a·grad f + b·grad g
        let x0 = tensor(&[2], &[0.7, -0.3]);
        let (a, b) = (2.5, -1.25);

        let grad_f = {
            let tape = Tape::new();
            let x = tape.leaf(x0.clone()).unwrap();
            let f = x.mul(&x).unwrap().sum().unwrap();
            backward(&f).unwrap().wrt(&x)
        };
        let grad_g = {
            let tape = Tape::new();
            let x = tape.leaf(x0.clone()).unwrap();
            let g = x.sum().unwrap();
            backward(&g).unwrap().wrt(&x)
        };
        let grad_combined = {
            let tape = Tape::new();
            let x = tape.leaf(x0.clone()).unwrap();
            let f = x.mul(&x).unwrap().sum().unwrap().scale(a).unwrap();
            let g = x.sum().unwrap().scale(b).unwrap();
            let combined = f.add(&g).unwrap();
            backward(&combined).unwrap().wrt(&x)
        };
        for i in 0..2 {
            let want = a * grad_f.data()[i] + b * grad_g.data()[i];
            assert!((grad_combined.data()[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn broadcast_backward_reduces() {
        // bias [2] broadcast onto [3,2]: grad accumulates over rows
        let tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[3, 2])).unwrap();
        let b = tape.leaf(tensor(&[2], &[1.0, 2.0])).unwrap();
        let y = x.add(&b).unwrap().sum().unwrap();
        let grads = backward(&y).unwrap();
        assert_eq!(grads.wrt(&b).data(), &[3.0, 3.0]);
    }
}

//! Interpretive instruments: Fourier-basis sensitivity heat maps, gradient
//! visualization, and empirical probes of the perturbation and
//! generalization bounds.
//!
//! The bound probes work in logit space, where the log-loss gradient
//! `p − onehot(y)` and Hessian `diag(p) − ppᵀ` are analytic. The Hessian is
//! singular (rank m−1), so the Newton-point term uses a pseudo-inverse.

use std::fmt;

use pdalab_tensor::{Tensor, TensorError};

use crate::attacks::{input_gradient, AttackError};
use crate::data::{DataError, Dataset};
use crate::linalg::{pinv_apply_sym, spectral_norm_sym};
use crate::metrics::MetricsError;
use crate::nn::{Model, NnError};
use crate::rng::Rng;

#[derive(Debug)]
pub enum AnalysisError {
    IndexOutOfRange { index: (usize, usize), extents: (usize, usize) },
    BadProbe(String),
    InapplicableRegime { lambda: f64, l1: f64 },
    NotImages { shape: Vec<usize> },
    Nn(NnError),
    Tensor(TensorError),
    Attack(AttackError),
    Data(DataError),
    Metrics(MetricsError),
}

impl fmt::Display for AnalysisError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::IndexOutOfRange { index, extents } => write!(
                f,
                "basis index ({}, {}) outside ({}, {})",
                index.0, index.1, extents.0, extents.1
            ),
            Self::BadProbe(msg) => write!(f, "bad probe: {msg}"),
            Self::InapplicableRegime { lambda, l1 } => {
                write!(f, "bound needs lambda > L1, got lambda={lambda}, L1={l1}")
            }
            Self::NotImages { shape } => {
                write!(f, "analysis needs [N,C,H,W] images, got {shape:?}")
            }
            Self::Nn(e) => write!(f, "{e}"),
            Self::Tensor(e) => write!(f, "{e}"),
            Self::Attack(e) => write!(f, "{e}"),
            Self::Data(e) => write!(f, "{e}"),
            Self::Metrics(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for AnalysisError {}

impl From<NnError> for AnalysisError {
    fn from(e: NnError) -> Self {
        Self::Nn(e)
    }
}
impl From<TensorError> for AnalysisError {
    fn from(e: TensorError) -> Self {
        Self::Tensor(e)
    }
}
impl From<AttackError> for AnalysisError {
    fn from(e: AttackError) -> Self {
        Self::Attack(e)
    }
}
impl From<DataError> for AnalysisError {
    fn from(e: DataError) -> Self {
        Self::Data(e)
    }
}
impl From<MetricsError> for AnalysisError {
    fn from(e: MetricsError) -> Self {
        Self::Metrics(e)
    }
}

pub type Result<T> = std::result::Result<T, AnalysisError>;

// ── Fourier sensitivity ──────────────────────────────────────────────

/// Real unit-Frobenius-norm matrix of the `(i, j)` 2-D Fourier mode: the
/// cosine combination of the conjugate pair, normalized.
pub fn fourier_basis(h: usize, w: usize, i: usize, j: usize) -> Result<Tensor> {
    if i >= h || j >= w {
        return Err(AnalysisError::IndexOutOfRange {
            index: (i, j),
            extents: (h, w),
        });
    }
    let mut data = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let phase = 2.0
                * std::f64::consts::PI
                * (y as f64 * i as f64 / h as f64 + x as f64 * j as f64 / w as f64);
            data[y * w + x] = phase.cos();
        }
    }
    let norm = data.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in data.iter_mut() {
        *v /= norm;
    }
    Ok(Tensor::new(vec![h, w], data)?)
}

/// Test-error grid under Fourier-basis perturbations.
#[derive(Debug, Clone)]
pub struct HeatMap {
    pub rows: usize,
    pub cols: usize,
    pub cells: Vec<f64>,
}

impl HeatMap {
    pub fn cell(&self, i: usize, j: usize) -> f64 {
        self.cells[i * self.cols + j]
    }

    pub fn write_csv<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        for i in 0..self.rows {
            let row: Vec<String> = (0..self.cols)
                .map(|j| format!("{:.6}", self.cell(i, j)))
                .collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Perturbation for one image: the basis replicated across channels,
/// scaled so the whole perturbation has L2 norm `r·‖x‖₂`, signed by `v`.
pub fn fourier_perturbation(
    image: &[f64],
    channels: usize,
    basis: &Tensor,
    v: f64,
    r: f64,
) -> Vec<f64> {
    let image_norm = image.iter().map(|p| p * p).sum::<f64>().sqrt();
    let scale = v * r * image_norm / (channels as f64).sqrt();
    let plane = basis.data();
    let mut out = Vec::with_capacity(channels * plane.len());
    for _ in 0..channels {
        out.extend(plane.iter().map(|u| scale * u));
    }
    out
}

/// For each basis index `(i, j)`: perturb every image by the unit basis
/// scaled to `r·‖x‖₂` with a random sign per image, clip, and record the
/// top-1 error. Deterministic given `seed`.
pub fn fourier_heatmap(model: &Model, ds: &Dataset, r: f64, seed: u64) -> Result<HeatMap> {
    let &[n, c, h, w] = ds.images.shape() else {
        return Err(AnalysisError::NotImages {
            shape: ds.images.shape().to_vec(),
        });
    };
    let stride = c * h * w;
    let mut cells = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let basis = fourier_basis(h, w, i, j)?;
            let mut rng = Rng::from_label(seed, &format!("fourier-{i}-{j}"));
            let mut data = Vec::with_capacity(n * stride);
            for img_idx in 0..n {
                let image = &ds.images.data()[img_idx * stride..(img_idx + 1) * stride];
                let v = if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
                let pert = fourier_perturbation(image, c, &basis, v, r);
                data.extend(
                    image
                        .iter()
                        .zip(&pert)
                        .map(|(p, q)| (p + q).clamp(0.0, 1.0)),
                );
            }
            let perturbed = Dataset::new(
                Tensor::new(vec![n, c, h, w], data)?,
                ds.labels.clone(),
                ds.num_classes,
                ds.split.clone(),
                "fourier-perturbed",
            )?;
            cells[i * w + j] = crate::metrics::evaluate_error(model, &perturbed)?;
        }
    }
    Ok(HeatMap {
        rows: h,
        cols: w,
        cells,
    })
}

/// Per-image min-max normalization of the input-loss gradient to `[0,1]`.
/// A constant gradient maps to 0.5 everywhere.
pub fn grad_visualization(model: &Model, x: &Tensor, y: &[usize]) -> Result<Tensor> {
    let grad = input_gradient(model, x, y)?;
    let n = grad.shape()[0];
    let stride = grad.numel() / n;
    let mut data = grad.data().to_vec();
    for i in 0..n {
        let chunk = &mut data[i * stride..(i + 1) * stride];
        let min = chunk.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = chunk.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if max - min < 1e-12 {
            chunk.fill(0.5);
        } else {
            for v in chunk.iter_mut() {
                *v = (*v - min) / (max - min);
            }
        }
    }
    Ok(Tensor::new(grad.shape().to_vec(), data)?)
}

// ── log-loss in logit space ──────────────────────────────────────────

/// `ℓ(z, y) = logsumexp(z) − z_y`
pub fn logit_loss(z: &[f64], y: usize) -> f64 {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    lse - z[y]
}

/// `∇_z ℓ = softmax(z) − onehot(y)`
pub fn logit_loss_grad(z: &[f64], y: usize) -> Vec<f64> {
    let mut p = softmax(z);
    p[y] -= 1.0;
    p
}

/// `∇²_z ℓ = diag(p) − ppᵀ` (independent of the label).
pub fn logit_loss_hessian(z: &[f64]) -> Vec<f64> {
    let p = softmax(z);
    let m = z.len();
    let mut h = vec![0.0; m * m];
    for a in 0..m {
        for b in 0..m {
            h[a * m + b] = if a == b { p[a] - p[a] * p[b] } else { -p[a] * p[b] };
        }
    }
    h
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

// ── perturbation bound probe ─────────────────────────────────────────

/// Controls for the perturbation-bound probe.
#[derive(Debug, Clone)]
pub struct BoundProbe {
    /// Radius of the logit-space neighborhoods searched and sampled.
    pub radius: f64,
    /// Maximizer slack: the ascent result is treated as an ε-maximizer
    /// with this ε.
    pub slack: f64,
    /// Samples drawn from the neighborhood intersection for the curvature
    /// floor and the linearization remainder.
    pub samples: usize,
    pub ascent_steps: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for BoundProbe {
    fn default() -> Self {
        Self {
            radius: 1.0,
            slack: 0.05,
            samples: 256,
            ascent_steps: 200,
            restarts: 8,
            seed: 0,
        }
    }
}

/// Outcome of one perturbation-bound check.
#[derive(Debug, Clone)]
pub struct PerturbationBoundReport {
    /// `‖z*_ε − z₀‖₂` for the ascent maximizer.
    pub lhs: f64,
    /// `K/C + √(ε/C) + ‖H(z₀)⁺ ∇ℓ(z₀)‖₂`
    pub rhs: f64,
    /// Curvature floor: minimum sampled Hessian spectral norm.
    pub c_min: f64,
    /// Maximum sampled linearization remainder.
    pub k_max: f64,
    /// `‖H(z₀)⁺ ∇ℓ(z₀)‖₂`
    pub newton_term: f64,
    pub best_loss: f64,
    pub holds: bool,
    /// False when the curvature floor fell below `1e-9`; the first
    /// assumption of the bound is then unverifiable and `holds` is not
    /// meaningful.
    pub c_reliable: bool,
}

fn ball_point(center: &[f64], radius: f64, rng: &mut Rng) -> Vec<f64> {
    let m = center.len();
    let dir: Vec<f64> = (0..m).map(|_| rng.normal()).collect();
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    let rad = radius * rng.uniform().powf(1.0 / m as f64);
    center
        .iter()
        .zip(&dir)
        .map(|(c, d)| c + rad * d / norm)
        .collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Check the logit-space perturbation bound at one anchor `(x₀, y₀)`.
///
/// The maximizer is found by projected gradient ascent on `ℓ(z, y₀)` within
/// `radius` of `z₀`, with random restarts. The curvature floor `C` and
/// remainder cap `K` are estimated over samples of the intersection of the
/// neighborhoods of `z₀` and the Newton point `z₀ − H⁺∇ℓ`; the Newton
/// neighborhood is widened to reach `z₀` when the point is farther than
/// `radius` away, so the intersection is never empty.
pub fn perturbation_bound_check(
    model: &Model,
    x0: &Tensor,
    y0: usize,
    probe: &BoundProbe,
) -> Result<PerturbationBoundReport> {
    if probe.radius < 0.0 || probe.slack < 0.0 || probe.samples == 0 {
        return Err(AnalysisError::BadProbe(format!(
            "radius {} / slack {} / samples {}",
            probe.radius, probe.slack, probe.samples
        )));
    }
    let logits = model.forward(x0)?;
    let m = model.num_classes;
    let z0 = logits.data()[..m].to_vec();
    let g0 = logit_loss_grad(&z0, y0);
    let h0 = logit_loss_hessian(&z0);

    // ascent maximizer
    let mut rng = Rng::from_label(probe.seed, "bound-probe");
    let step = (probe.radius / 10.0).max(1e-6);
    let mut best_z = z0.clone();
    let mut best_loss = logit_loss(&z0, y0);
    for restart in 0..probe.restarts.max(1) {
        let mut z = if restart == 0 {
            z0.clone()
        } else {
            ball_point(&z0, probe.radius, &mut rng)
        };
        for _ in 0..probe.ascent_steps {
            let g = logit_loss_grad(&z, y0);
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-15 {
                break;
            }
            for (zi, gi) in z.iter_mut().zip(&g) {
                *zi += step * gi / norm;
            }
            // project back onto the ball around z0
            let d = dist(&z, &z0);
            if d > probe.radius {
                let scale = probe.radius / d;
                for (zi, z0i) in z.iter_mut().zip(&z0) {
                    *zi = z0i + (*zi - z0i) * scale;
                }
            }
        }
        let val = logit_loss(&z, y0);
        if val > best_loss {
            best_loss = val;
            best_z = z;
        }
    }
    let lhs = dist(&best_z, &z0);

    // Newton point and pseudo-inverse term
    let pinv_g = pinv_apply_sym(&h0, m, &g0);
    let newton_term = pinv_g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let z_newton: Vec<f64> = z0.iter().zip(&pinv_g).map(|(z, d)| z - d).collect();
    let newton_radius = probe.radius.max(dist(&z_newton, &z0));

    // sample the neighborhood intersection
    let mut c_min = f64::INFINITY;
    let mut k_max: f64 = 0.0;
    let mut accepted = 0usize;
    let mut tries = 0usize;
    while accepted < probe.samples && tries < probe.samples * 100 {
        tries += 1;
        let z = ball_point(&z0, probe.radius, &mut rng);
        if dist(&z, &z_newton) > newton_radius {
            continue;
        }
        accepted += 1;
        let h = logit_loss_hessian(&z);
        c_min = c_min.min(spectral_norm_sym(&h, m));
        let g = logit_loss_grad(&z, y0);
        let mut remainder = 0.0;
        for a in 0..m {
            let mut lin = 0.0;
            for b in 0..m {
                lin += h0[a * m + b] * (z[b] - z0[b]);
            }
            let r = (g[a] - g0[a]) - lin;
            remainder += r * r;
        }
        k_max = k_max.max(remainder.sqrt());
    }
    if accepted == 0 {
        c_min = spectral_norm_sym(&h0, m);
    }
    let c_reliable = c_min >= 1e-9;
    let rhs = if c_reliable {
        k_max / c_min + (probe.slack / c_min).sqrt() + newton_term
    } else {
        f64::INFINITY
    };
    Ok(PerturbationBoundReport {
        lhs,
        rhs,
        c_min,
        k_max,
        newton_term,
        best_loss,
        holds: lhs <= rhs,
        c_reliable,
    })
}

// ── covering numbers and the generalization bound ────────────────────

/// Greedy γ-cover size: repeatedly pick the first uncovered point as a
/// center and cover everything within `gamma` of it. An upper bound on the
/// optimal cover, monotone non-increasing in `gamma`.
pub fn covering_number(points: &Tensor, gamma: f64) -> usize {
    let n = points.shape()[0];
    let stride = points.numel() / n.max(1);
    let mut covered = vec![false; n];
    let mut centers = 0usize;
    for i in 0..n {
        if covered[i] {
            continue;
        }
        centers += 1;
        covered[i] = true;
        let ci = &points.data()[i * stride..(i + 1) * stride];
        for j in (i + 1)..n {
            if covered[j] {
                continue;
            }
            let pj = &points.data()[j * stride..(j + 1) * stride];
            if dist(ci, pj) <= gamma {
                covered[j] = true;
            }
        }
    }
    centers
}

/// Inputs of the generalization-bound evaluator. `covering` is
/// `N(γ/2, X, ‖·‖₂)`.
#[derive(Debug, Clone)]
pub struct GeneralizationBoundInputs {
    pub empirical_loss: f64,
    pub n: usize,
    pub covering: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub m0: f64,
    pub m1: f64,
    pub l0: f64,
    pub l1: f64,
    pub p: f64,
}

/// `emp + γ(L₀ + (2M₁L₁+1)/λ) + M₀√((2N·ln2 − 2·ln p)/n) + M₁²/(λ−L₁)`
pub fn generalization_bound(inp: &GeneralizationBoundInputs) -> Result<f64> {
    if inp.lambda <= inp.l1 {
        return Err(AnalysisError::InapplicableRegime {
            lambda: inp.lambda,
            l1: inp.l1,
        });
    }
    if !(inp.p > 0.0 && inp.p < 1.0) {
        return Err(AnalysisError::BadProbe(format!(
            "confidence p must be in (0,1), got {}",
            inp.p
        )));
    }
    if inp.n < 1 {
        return Err(AnalysisError::BadProbe("n must be >= 1".into()));
    }
    if inp.gamma <= 0.0 {
        return Err(AnalysisError::BadProbe(format!(
            "gamma must be > 0, got {}",
            inp.gamma
        )));
    }
    let lipschitz_term = inp.gamma * (inp.l0 + (2.0 * inp.m1 * inp.l1 + 1.0) / inp.lambda);
    let concentration = inp.m0
        * ((2.0 * inp.covering as f64 * std::f64::consts::LN_2 - 2.0 * inp.p.ln())
            / inp.n as f64)
            .sqrt();
    let penalty_term = inp.m1 * inp.m1 / (inp.lambda - inp.l1);
    Ok(inp.empirical_loss + lipschitz_term + concentration + penalty_term)
}

/// Loss-surface constants estimated by sampling; empirical, not certified.
#[derive(Debug, Clone)]
pub struct LossConstants {
    /// max observed per-example loss
    pub m0: f64,
    /// max observed input-gradient norm
    pub m1: f64,
    /// max observed loss difference ratio
    pub l0: f64,
    /// max observed gradient difference ratio
    pub l1: f64,
    pub pairs: usize,
}

pub const ESTIMATE_DISCLAIMER: &str = "empirical, not certified";

/// Estimate `M₀, M₁, L₀, L₁` from sampled dataset points: the maxima of
/// observed per-example losses, gradient norms, and pairwise difference
/// ratios.
pub fn estimate_loss_constants(
    model: &Model,
    ds: &Dataset,
    sample_points: usize,
    seed: u64,
) -> Result<LossConstants> {
    let mut rng = Rng::from_label(seed, "loss-constants");
    let count = sample_points.min(ds.len()).max(2);
    let indices: Vec<usize> = (0..count).map(|_| rng.below(ds.len())).collect();
    let stride = ds.features_per_example();
    let mut losses = Vec::with_capacity(count);
    let mut grads: Vec<Vec<f64>> = Vec::with_capacity(count);
    let mut points: Vec<Vec<f64>> = Vec::with_capacity(count);
    for &i in &indices {
        let (x, y) = ds.batch(i, i + 1);
        let logits = model.forward(&x)?;
        losses.push(logit_loss(&logits.data()[..model.num_classes], y[0]));
        grads.push(input_gradient(model, &x, &y)?.data().to_vec());
        points.push(ds.images.data()[i * stride..(i + 1) * stride].to_vec());
    }
    let m0 = losses.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let m1 = grads
        .iter()
        .map(|g| g.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let mut l0: f64 = 0.0;
    let mut l1: f64 = 0.0;
    let mut pairs = 0usize;
    for i in 0..count {
        for j in (i + 1)..count {
            let d = dist(&points[i], &points[j]);
            if d < 1e-12 {
                continue;
            }
            pairs += 1;
            l0 = l0.max((losses[i] - losses[j]).abs() / d);
            l1 = l1.max(dist(&grads[i], &grads[j]) / d);
        }
    }
    Ok(LossConstants { m0, m1, l0, l1, pairs })
}

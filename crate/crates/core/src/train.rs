//! Training strategies: natural, Gaussian augmentation, PGD adversarial
//! training, and progressive data augmentation, all behind one
//! [`TrainStrategy`] interface selected by name from [`STRATEGY_REGISTRY`].
//!
//! Progressive augmentation runs k inner steps per batch. Step j decays the
//! previous perturbation by `(1−λ)` and injects an L2-normalized gradient
//! step of magnitude `ε_t/k` (per example), re-augments the batch, then
//! applies one SGD update at the augmented point. The backward pass of that
//! update also yields the input gradient at the augmented point, which
//! becomes the progressive gradient of the next inner step; only the first
//! step of each batch pays for a dedicated input-gradient pass. This is what
//! makes the strategy cheaper per epoch than multi-step adversarial
//! training while keeping k parameter updates per batch.
//!
//! The per-epoch magnitude `ε_t` follows a fixed 7-value schedule
//! `{0, ε/3, ε/2, ε, ε/2, ε/3, 0}` spread over the epochs in seven
//! near-equal contiguous segments.

use std::fmt;
use std::io::Write;
use std::time::Instant;

use pdalab_tensor::{backward, softmax_logloss, softmax_logloss_value, Tape, Tensor, TensorError};

use crate::attacks::{
    input_gradient, normalize_per_example, per_example_l2, AttackError, NormKind, PgdAttack,
    Attack,
};
use crate::data::Dataset;
use crate::nn::{Model, NnError, Sgd};
use crate::rng::Rng;

#[derive(Debug)]
pub enum TrainError {
    UnknownStrategy(String),
    BadPlan(String),
    StrategyMismatch { plan: &'static str, strategy: &'static str },
    Nn(NnError),
    Tensor(TensorError),
    Attack(AttackError),
    Io(std::io::Error),
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::UnknownStrategy(name) => {
                write!(f, "unknown strategy '{name}' (natural, gda, pgd_at, pda)")
            }
            Self::BadPlan(msg) => write!(f, "bad train plan: {msg}"),
            Self::StrategyMismatch { plan, strategy } => {
                write!(f, "plan declares strategy '{plan}' but '{strategy}' was invoked")
            }
            Self::Nn(e) => write!(f, "{e}"),
            Self::Tensor(e) => write!(f, "{e}"),
            Self::Attack(e) => write!(f, "{e}"),
            Self::Io(e) => write!(f, "io: {e}"),
        }
    }
}

impl std::error::Error for TrainError {}

impl From<NnError> for TrainError {
    fn from(e: NnError) -> Self {
        Self::Nn(e)
    }
}
impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        Self::Tensor(e)
    }
}
impl From<AttackError> for TrainError {
    fn from(e: AttackError) -> Self {
        Self::Attack(e)
    }
}
impl From<std::io::Error> for TrainError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrategyKind {
    Natural,
    Gda,
    PgdAt,
    Pda,
}

impl StrategyKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "natural" => Ok(Self::Natural),
            "gda" => Ok(Self::Gda),
            "pgd_at" => Ok(Self::PgdAt),
            "pda" => Ok(Self::Pda),
            other => Err(TrainError::UnknownStrategy(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Natural => "natural",
            Self::Gda => "gda",
            Self::PgdAt => "pgd_at",
            Self::Pda => "pda",
        }
    }
}

/// Progressive-augmentation hyper-parameters. `eps` is an absolute L2
/// magnitude on the `[0,1]` pixel scale.
#[derive(Debug, Clone, Copy)]
pub struct PdaParams {
    pub eps: f64,
    pub lambda: f64,
    pub k: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct GdaParams {
    pub sigma: f64,
}

/// Adversarial-training hyper-parameters. `eps` and `alpha` are absolute
/// L∞ magnitudes on the `[0,1]` pixel scale.
#[derive(Debug, Clone, Copy)]
pub struct PgdAtParams {
    pub eps: f64,
    pub alpha: f64,
    pub steps: usize,
}

/// A complete training run descriptor.
#[derive(Debug, Clone)]
pub struct TrainPlan {
    pub strategy: StrategyKind,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub momentum: f64,
    pub seed: u64,
    pub pda: PdaParams,
    pub gda: GdaParams,
    pub pgd_at: PgdAtParams,
}

impl TrainPlan {
    /// A plan with conventional defaults for the given strategy.
    pub fn new(strategy: StrategyKind) -> Self {
        Self {
            strategy,
            epochs: 10,
            batch: 32,
            lr: 0.1,
            momentum: 0.0,
            seed: 0,
            pda: PdaParams {
                eps: 0.5,
                lambda: 0.5,
                k: 3,
            },
            gda: GdaParams { sigma: 0.1 },
            pgd_at: PgdAtParams {
                eps: 8.0 / 255.0,
                alpha: 2.0 / 255.0,
                steps: 5,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(TrainError::BadPlan("epochs must be >= 1".into()));
        }
        if self.batch < 1 {
            return Err(TrainError::BadPlan("batch must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TrainError::BadPlan(format!("lr must be > 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(TrainError::BadPlan(format!(
                "momentum must be in [0,1), got {}",
                self.momentum
            )));
        }
        if self.pda.k < 1 {
            return Err(TrainError::BadPlan("pda k must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.pda.lambda) {
            return Err(TrainError::BadPlan(format!(
                "pda lambda must be in [0,1], got {}",
                self.pda.lambda
            )));
        }
        if self.pda.eps < 0.0 {
            return Err(TrainError::BadPlan("pda eps must be >= 0".into()));
        }
        if self.gda.sigma < 0.0 {
            return Err(TrainError::BadPlan("gda sigma must be >= 0".into()));
        }
        if self.pgd_at.eps < 0.0 {
            return Err(TrainError::BadPlan("pgd_at eps must be >= 0".into()));
        }
        if !(self.pgd_at.alpha > 0.0) {
            return Err(TrainError::BadPlan("pgd_at alpha must be > 0".into()));
        }
        if self.pgd_at.steps < 1 {
            return Err(TrainError::BadPlan("pgd_at steps must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub eps_t: f64,
    pub clean_loss: f64,
    pub clean_acc: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

impl TrainHistory {
    pub fn mean_epoch_wall_ms(&self) -> f64 {
        if self.epochs.is_empty() {
            return 0.0;
        }
        self.epochs.iter().map(|e| e.wall_ms).sum::<f64>() / self.epochs.len() as f64
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "epoch,eps_t,clean_loss,clean_acc,wall_ms")?;
        for e in &self.epochs {
            writeln!(
                w,
                "{},{:.6},{:.6},{:.6},{:.3}",
                e.epoch, e.eps_t, e.clean_loss, e.clean_acc, e.wall_ms
            )?;
        }
        Ok(())
    }
}

// ── schedule and progressive update ──────────────────────────────────

const SCHEDULE_SEGMENTS: usize = 7;

/// Per-epoch perturbation magnitudes: seven contiguous, near-equal segments
/// carrying `{0, ε/3, ε/2, ε, ε/2, ε/3, 0}`. The first `T mod 7` segments
/// are one epoch longer.
pub fn epsilon_schedule_full(epochs: usize, eps: f64) -> Result<Vec<f64>> {
    if epochs < 1 {
        return Err(TrainError::BadPlan(format!(
            "schedule needs at least 1 epoch, got {epochs}"
        )));
    }
    let values = [0.0, eps / 3.0, eps / 2.0, eps, eps / 2.0, eps / 3.0, 0.0];
    let base = epochs / SCHEDULE_SEGMENTS;
    let rem = epochs % SCHEDULE_SEGMENTS;
    let mut out = Vec::with_capacity(epochs);
    for (i, &v) in values.iter().enumerate() {
        let len = base + usize::from(i < rem);
        out.extend(std::iter::repeat_n(v, len));
    }
    debug_assert_eq!(out.len(), epochs);
    Ok(out)
}

/// Magnitude for epoch `t` of `epochs`.
pub fn epsilon_schedule(t: usize, epochs: usize, eps: f64) -> Result<f64> {
    let full = epsilon_schedule_full(epochs, eps)?;
    full.get(t).copied().ok_or_else(|| {
        TrainError::BadPlan(format!("epoch index {t} out of range for {epochs} epochs"))
    })
}

/// Progressive perturbation update:
/// `δ ← (1−λ)·δ_prev + (ε_t/k)·g/‖g‖₂` with the norm taken per example.
/// Examples whose gradient norm falls below `1e-12` contribute a zero step.
pub fn pda_delta_update(
    delta_prev: &Tensor,
    grad: &Tensor,
    eps_t: f64,
    k: usize,
    lambda: f64,
) -> Result<Tensor> {
    let step = normalize_per_example(grad, 1e-12).scale(eps_t / k as f64);
    Ok(delta_prev.scale(1.0 - lambda).add(&step)?)
}

/// Penalized inner-maximization objective
/// `ℓ(θ; x+δ, y) − (λ/2)·mean_n ‖δ_n‖₂²`, used for diagnostics.
pub fn surrogate_loss(
    model: &Model,
    x: &Tensor,
    y: &[usize],
    delta: &Tensor,
    lambda: f64,
) -> Result<f64> {
    let perturbed = x.add(delta)?;
    let loss = softmax_logloss_value(&model.forward(&perturbed)?, y)
        .map_err(TrainError::Tensor)?;
    let n = delta.shape()[0] as f64;
    let penalty: f64 = per_example_l2(delta).iter().map(|v| v * v).sum::<f64>() / n;
    Ok(loss - 0.5 * lambda * penalty)
}

// ── shared loop pieces ───────────────────────────────────────────────

/// Clean loss and accuracy over a dataset, batched.
pub fn evaluate(model: &Model, data: &Dataset) -> Result<(f64, f64)> {
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    let mut start = 0;
    while start < data.len() {
        let end = (start + 256).min(data.len());
        let (x, y) = data.batch(start, end);
        let logits = model.forward(&x)?;
        loss_sum +=
            softmax_logloss_value(&logits, &y).map_err(TrainError::Tensor)? * (end - start) as f64;
        let m = model.num_classes;
        for (row, &label) in logits.data().chunks_exact(m).zip(&y) {
            let pred = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            if pred == label {
                correct += 1;
            }
        }
        start = end;
    }
    Ok((
        loss_sum / data.len() as f64,
        correct as f64 / data.len() as f64,
    ))
}

/// One SGD update at `(x, y)`; returns the input gradient at `x` from the
/// same backward pass.
fn sgd_pass(model: &mut Model, opt: &mut Sgd, x: &Tensor, y: &[usize]) -> Result<Tensor> {
    let tape = Tape::new();
    let taped = model.forward_taped(&tape, x)?;
    let loss = softmax_logloss(&taped.logits, y).map_err(TrainError::Tensor)?;
    let grads = backward(&loss).map_err(TrainError::Tensor)?;
    let input_grad = taped.input_grad(&grads);
    opt.step(model, &taped.param_grads(&grads))?;
    Ok(input_grad)
}

fn batch_ranges(n: usize, batch: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n.div_ceil(batch)).map(move |i| (i * batch, ((i + 1) * batch).min(n)))
}

// ── strategies ───────────────────────────────────────────────────────

/// A named training strategy over one model and dataset.
pub trait TrainStrategy {
    fn name(&self) -> &'static str;

    fn run(&self, model: &mut Model, data: &Dataset, plan: &TrainPlan) -> Result<TrainHistory>;
}

type StrategyBuilder = fn() -> Box<dyn TrainStrategy>;

/// Training strategies selectable by name.
pub const STRATEGY_REGISTRY: &[(&str, StrategyBuilder)] = &[
    ("natural", || Box::new(NaturalStrategy::default())),
    ("gda", || Box::new(GdaStrategy)),
    ("pgd_at", || Box::new(PgdAtStrategy)),
    ("pda", || Box::new(PdaStrategy::default())),
];

pub fn strategy_names() -> Vec<&'static str> {
    STRATEGY_REGISTRY.iter().map(|(n, _)| *n).collect()
}

pub fn build_strategy(name: &str) -> Result<Box<dyn TrainStrategy>> {
    STRATEGY_REGISTRY
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, build)| build())
        .ok_or_else(|| TrainError::UnknownStrategy(name.to_string()))
}

fn check_strategy(plan: &TrainPlan, expected: StrategyKind, name: &'static str) -> Result<()> {
    plan.validate()?;
    if plan.strategy != expected {
        return Err(TrainError::StrategyMismatch {
            plan: plan.strategy.name(),
            strategy: name,
        });
    }
    Ok(())
}

/// Plain SGD on clean batches.
pub struct NaturalStrategy {
    /// Optimizer steps per batch; 1 in normal use. Exposed so strategy
    /// collapse can be compared against progressive training, which makes
    /// k updates per batch.
    pub updates_per_batch: usize,
}

impl Default for NaturalStrategy {
    fn default() -> Self {
        Self { updates_per_batch: 1 }
    }
}

impl TrainStrategy for NaturalStrategy {
    fn name(&self) -> &'static str {
        "natural"
    }

    fn run(&self, model: &mut Model, data: &Dataset, plan: &TrainPlan) -> Result<TrainHistory> {
        check_strategy(plan, StrategyKind::Natural, self.name())?;
        let mut opt = Sgd::new(plan.lr, plan.momentum);
        let mut history = TrainHistory::default();
        for epoch in 0..plan.epochs {
            let start = Instant::now();
            for (lo, hi) in batch_ranges(data.len(), plan.batch) {
                let (x, y) = data.batch(lo, hi);
                for _ in 0..self.updates_per_batch {
                    sgd_pass(model, &mut opt, &x, &y)?;
                }
            }
            let (clean_loss, clean_acc) = evaluate(model, data)?;
            history.epochs.push(EpochStats {
                epoch,
                eps_t: 0.0,
                clean_loss,
                clean_acc,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            });
        }
        Ok(history)
    }
}

/// SGD on batches with fresh additive Gaussian noise, clipped to `[0,1]`.
pub struct GdaStrategy;

impl GdaStrategy {
    /// The noise tensor added to a batch; exposed for moment checks.
    pub fn noise_like(shape: &[usize], sigma: f64, rng: &mut Rng) -> Tensor {
        let numel: usize = shape.iter().product();
        let data: Vec<f64> = (0..numel).map(|_| sigma * rng.normal()).collect();
        Tensor::new(shape.to_vec(), data).expect("noise shape")
    }
}

impl TrainStrategy for GdaStrategy {
    fn name(&self) -> &'static str {
        "gda"
    }

    fn run(&self, model: &mut Model, data: &Dataset, plan: &TrainPlan) -> Result<TrainHistory> {
        check_strategy(plan, StrategyKind::Gda, self.name())?;
        let mut opt = Sgd::new(plan.lr, plan.momentum);
        let mut rng = Rng::from_label(plan.seed, "gda-noise");
        let mut history = TrainHistory::default();
        for epoch in 0..plan.epochs {
            let start = Instant::now();
            for (lo, hi) in batch_ranges(data.len(), plan.batch) {
                let (x, y) = data.batch(lo, hi);
                let noise = Self::noise_like(x.shape(), plan.gda.sigma, &mut rng);
                let x_aug = x.add(&noise)?.clip01();
                sgd_pass(model, &mut opt, &x_aug, &y)?;
            }
            let (clean_loss, clean_acc) = evaluate(model, data)?;
            history.epochs.push(EpochStats {
                epoch,
                eps_t: 0.0,
                clean_loss,
                clean_acc,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            });
        }
        Ok(history)
    }
}

/// Madry-style adversarial training: every batch is replaced by a PGD
/// attack against the current parameters before the update.
pub struct PgdAtStrategy;

impl TrainStrategy for PgdAtStrategy {
    fn name(&self) -> &'static str {
        "pgd_at"
    }

    fn run(&self, model: &mut Model, data: &Dataset, plan: &TrainPlan) -> Result<TrainHistory> {
        check_strategy(plan, StrategyKind::PgdAt, self.name())?;
        let attack = PgdAttack {
            norm: NormKind::LInf,
            eps: plan.pgd_at.eps,
            alpha: plan.pgd_at.alpha,
            steps: plan.pgd_at.steps,
            random_init: true,
        };
        let mut opt = Sgd::new(plan.lr, plan.momentum);
        let mut rng = Rng::from_label(plan.seed, "pgd-at-init");
        let mut history = TrainHistory::default();
        for epoch in 0..plan.epochs {
            let start = Instant::now();
            for (lo, hi) in batch_ranges(data.len(), plan.batch) {
                let (x, y) = data.batch(lo, hi);
                let x_adv = attack.perturb(model, &x, &y, &mut rng)?;
                sgd_pass(model, &mut opt, &x_adv, &y)?;
            }
            let (clean_loss, clean_acc) = evaluate(model, data)?;
            history.epochs.push(EpochStats {
                epoch,
                eps_t: plan.pgd_at.eps,
                clean_loss,
                clean_acc,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            });
        }
        Ok(history)
    }
}

/// Snapshot of one progressive inner step, handed to observers.
pub struct PdaInnerStep<'a> {
    pub epoch: usize,
    pub batch_start: usize,
    pub step: usize,
    pub eps_t: f64,
    pub delta: &'a Tensor,
    pub x_current: &'a Tensor,
    pub x_clean: &'a Tensor,
}

/// Progressive data augmentation.
pub struct PdaStrategy {
    /// Clip augmented batches to `[0,1]` after every inner step. Disabled
    /// only by diagnostics that measure the unclipped perturbation budget.
    pub clip: bool,
}

impl Default for PdaStrategy {
    fn default() -> Self {
        Self { clip: true }
    }
}

impl PdaStrategy {
    pub fn run_with_observer(
        &self,
        model: &mut Model,
        data: &Dataset,
        plan: &TrainPlan,
        observer: &mut dyn FnMut(&PdaInnerStep),
    ) -> Result<TrainHistory> {
        check_strategy(plan, StrategyKind::Pda, self.name())?;
        let PdaParams { eps, lambda, k } = plan.pda;
        let schedule = epsilon_schedule_full(plan.epochs, eps)?;
        let mut opt = Sgd::new(plan.lr, plan.momentum);
        let mut history = TrainHistory::default();
        for epoch in 0..plan.epochs {
            let eps_t = schedule[epoch];
            let start = Instant::now();
            for (lo, hi) in batch_ranges(data.len(), plan.batch) {
                let (x_clean, y) = data.batch(lo, hi);
                let mut delta = Tensor::zeros(x_clean.shape());
                let mut x_cur = x_clean.clone();
                // progressive gradient for the first inner step
                let mut grad_x = input_gradient(model, &x_clean, &y)?;
                for j in 1..=k {
                    delta = pda_delta_update(&delta, &grad_x, eps_t, k, lambda)?;
                    x_cur = x_cur.add(&delta)?;
                    if self.clip {
                        x_cur = x_cur.clip01();
                    }
                    observer(&PdaInnerStep {
                        epoch,
                        batch_start: lo,
                        step: j,
                        eps_t,
                        delta: &delta,
                        x_current: &x_cur,
                        x_clean: &x_clean,
                    });
                    let input_grad = sgd_pass(model, &mut opt, &x_cur, &y)?;
                    if j < k {
                        grad_x = input_grad;
                    }
                }
            }
            let (clean_loss, clean_acc) = evaluate(model, data)?;
            history.epochs.push(EpochStats {
                epoch,
                eps_t,
                clean_loss,
                clean_acc,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            });
        }
        Ok(history)
    }
}

impl TrainStrategy for PdaStrategy {
    fn name(&self) -> &'static str {
        "pda"
    }

    fn run(&self, model: &mut Model, data: &Dataset, plan: &TrainPlan) -> Result<TrainHistory> {
        self.run_with_observer(model, data, plan, &mut |_| {})
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_blobs;
    use crate::nn::{build_model, Arch};

    fn params_bits(model: &Model) -> Vec<u64> {
        model
            .params()
            .iter()
            .flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits()))
            .collect()
    }

    fn blob_setup(seed: u64) -> (Model, Dataset) {
        let model = build_model(Arch::Mlp, &[2], 2, seed).unwrap();
        let data = gen_blobs(64, 2, 2, 3.0, seed + 100).unwrap();
        (model, data)
    }

    #[test]
    fn schedule_seven_epochs_is_the_value_table() {
        let eps = 8.0 / 255.0;
        let s = epsilon_schedule_full(7, eps).unwrap();
        let want = [0.0, eps / 3.0, eps / 2.0, eps, eps / 2.0, eps / 3.0, 0.0];
        assert_eq!(s.len(), 7);
        for (a, b) in s.iter().zip(&want) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn schedule_fourteen_epochs_repeats_each_value_twice() {
        let eps = 0.3;
        let s = epsilon_schedule_full(14, eps).unwrap();
        for i in 0..7 {
            assert_eq!(s[2 * i].to_bits(), s[2 * i + 1].to_bits());
        }
        assert_eq!(s[6], eps);
        assert_eq!(s[7], eps);
    }

    #[test]
    fn schedule_starts_at_zero() {
        for t_total in 7..=50 {
            assert_eq!(epsilon_schedule(0, t_total, 0.5).unwrap(), 0.0);
        }
    }

    #[test]
    fn schedule_segment_values_are_palindromic() {
        // value of segment i equals segment 6−i for every T in 7..=50
        for t_total in 7..=50 {
            let s = epsilon_schedule_full(t_total, 1.0).unwrap();
            let base = t_total / 7;
            let rem = t_total % 7;
            let seg_start = |i: usize| (0..i).map(|j| base + usize::from(j < rem)).sum::<usize>();
            for i in 0..7 {
                let a = s[seg_start(i)];
                let b = s[seg_start(6 - i)];
                assert_eq!(a.to_bits(), b.to_bits(), "T={t_total} segment {i}");
            }
        }
    }

    #[test]
    fn schedule_rejects_zero_epochs() {
        assert!(epsilon_schedule_full(0, 0.5).is_err());
    }

    #[test]
    fn schedule_short_runs_use_leading_values() {
        let eps = 0.6;
        let s = epsilon_schedule_full(3, eps).unwrap();
        assert_eq!(s, vec![0.0, eps / 3.0, eps / 2.0]);
    }

    #[test]
    fn delta_update_hand_example() {
        // δ_prev=(0.1,0), grad=(3,4), ε=0.5, λ=0.5, k=2 → (0.20, 0.20)
        let delta_prev = Tensor::new(vec![1, 2], vec![0.1, 0.0]).unwrap();
        let grad = Tensor::new(vec![1, 2], vec![3.0, 4.0]).unwrap();
        let delta = pda_delta_update(&delta_prev, &grad, 0.5, 2, 0.5).unwrap();
        assert!((delta.data()[0] - 0.20).abs() < 1e-12);
        assert!((delta.data()[1] - 0.20).abs() < 1e-12);
    }

    #[test]
    fn delta_update_lambda_one_forgets_history() {
        let grad = Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap();
        let a = pda_delta_update(
            &Tensor::new(vec![1, 2], vec![5.0, -3.0]).unwrap(),
            &grad,
            0.4,
            2,
            1.0,
        )
        .unwrap();
        let b = pda_delta_update(&Tensor::zeros(&[1, 2]), &grad, 0.4, 2, 1.0).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        assert!((a.data()[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn delta_update_zero_gradient_guard() {
        let delta_prev = Tensor::new(vec![1, 2], vec![0.4, -0.2]).unwrap();
        let grad = Tensor::zeros(&[1, 2]);
        let delta = pda_delta_update(&delta_prev, &grad, 0.5, 2, 0.25).unwrap();
        assert!((delta.data()[0] - 0.3).abs() < 1e-15);
        assert!((delta.data()[1] - (-0.15)).abs() < 1e-15);
    }

    #[test]
    fn delta_update_norm_is_eps_over_k_per_example() {
        let mut rng = Rng::seeded(40);
        for _ in 0..100 {
            let data: Vec<f64> = (0..6).map(|_| rng.range(-1.0, 1.0)).collect();
            let grad = Tensor::new(vec![2, 3], data).unwrap();
            let (eps_t, k) = (0.7, 3usize);
            let delta = pda_delta_update(&Tensor::zeros(&[2, 3]), &grad, eps_t, k, 1.0).unwrap();
            for norm in per_example_l2(&delta) {
                assert!((norm - eps_t / k as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn surrogate_loss_cases() {
        let (model, data) = blob_setup(1);
        let (x, y) = data.batch(0, 8);
        // δ=0 → plain log-loss
        let zero = Tensor::zeros(x.shape());
        let plain = softmax_logloss_value(&model.forward(&x).unwrap(), &y).unwrap();
        let s = surrogate_loss(&model, &x, &y, &zero, 0.7).unwrap();
        assert!((s - plain).abs() < 1e-15);
        // λ=0 → loss at x+δ
        let mut rng = Rng::seeded(2);
        let delta = Tensor::new(
            x.shape().to_vec(),
            (0..x.numel()).map(|_| rng.range(-0.05, 0.05)).collect(),
        )
        .unwrap();
        let at_delta =
            softmax_logloss_value(&model.forward(&x.add(&delta).unwrap()).unwrap(), &y).unwrap();
        let s = surrogate_loss(&model, &x, &y, &delta, 0.0).unwrap();
        assert!((s - at_delta).abs() < 1e-15);
        // random δ and λ → two-term recomputation
        let lambda = 0.37;
        let s = surrogate_loss(&model, &x, &y, &delta, lambda).unwrap();
        let penalty: f64 = delta
            .data()
            .chunks_exact(2)
            .map(|c| c.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            / 8.0;
        let want = at_delta - 0.5 * lambda * penalty;
        assert!((s - want).abs() < 1e-12);
    }

    #[test]
    fn pda_zero_eps_collapses_to_natural() {
        // k=1 against plain natural training, bit-identical trajectories
        let (mut m1, data) = blob_setup(3);
        let mut m2 = m1.clone();
        let mut plan = TrainPlan::new(StrategyKind::Pda);
        plan.epochs = 2;
        plan.pda = PdaParams { eps: 0.0, lambda: 0.5, k: 1 };
        PdaStrategy::default().run(&mut m1, &data, &plan).unwrap();
        let mut nat_plan = plan.clone();
        nat_plan.strategy = StrategyKind::Natural;
        NaturalStrategy::default().run(&mut m2, &data, &nat_plan).unwrap();
        assert_eq!(params_bits(&m1), params_bits(&m2));
    }

    #[test]
    fn pda_zero_eps_k3_matches_natural_with_three_updates() {
        let (mut m1, data) = blob_setup(4);
        let mut m2 = m1.clone();
        let mut plan = TrainPlan::new(StrategyKind::Pda);
        plan.epochs = 2;
        plan.pda = PdaParams { eps: 0.0, lambda: 0.5, k: 3 };
        PdaStrategy::default().run(&mut m1, &data, &plan).unwrap();
        let mut nat_plan = plan.clone();
        nat_plan.strategy = StrategyKind::Natural;
        NaturalStrategy { updates_per_batch: 3 }
            .run(&mut m2, &data, &nat_plan)
            .unwrap();
        assert_eq!(params_bits(&m1), params_bits(&m2));
    }

    #[test]
    fn gda_zero_sigma_collapses_to_natural() {
        let (mut m1, data) = blob_setup(5);
        let mut m2 = m1.clone();
        let mut plan = TrainPlan::new(StrategyKind::Gda);
        plan.epochs = 2;
        plan.gda = GdaParams { sigma: 0.0 };
        GdaStrategy.run(&mut m1, &data, &plan).unwrap();
        let mut nat_plan = plan.clone();
        nat_plan.strategy = StrategyKind::Natural;
        NaturalStrategy::default().run(&mut m2, &data, &nat_plan).unwrap();
        assert_eq!(params_bits(&m1), params_bits(&m2));
    }

    #[test]
    fn pgd_at_zero_eps_collapses_to_natural() {
        let (mut m1, data) = blob_setup(6);
        let mut m2 = m1.clone();
        let mut plan = TrainPlan::new(StrategyKind::PgdAt);
        plan.epochs = 2;
        plan.pgd_at = PgdAtParams { eps: 0.0, alpha: 0.01, steps: 2 };
        PgdAtStrategy.run(&mut m1, &data, &plan).unwrap();
        let mut nat_plan = plan.clone();
        nat_plan.strategy = StrategyKind::Natural;
        NaturalStrategy::default().run(&mut m2, &data, &nat_plan).unwrap();
        assert_eq!(params_bits(&m1), params_bits(&m2));
    }

    #[test]
    fn pgd_at_inner_attack_respects_budget() {
        let (mut model, data) = blob_setup(7);
        let mut plan = TrainPlan::new(StrategyKind::PgdAt);
        plan.epochs = 1;
        plan.pgd_at = PgdAtParams { eps: 0.05, alpha: 0.02, steps: 3 };
        // run the attack exactly as the trainer does and check the budget
        let attack = PgdAttack {
            norm: NormKind::LInf,
            eps: plan.pgd_at.eps,
            alpha: plan.pgd_at.alpha,
            steps: plan.pgd_at.steps,
            random_init: true,
        };
        let mut rng = Rng::from_label(plan.seed, "pgd-at-init");
        let (x, y) = data.batch(0, 16);
        let adv = attack.perturb(&model, &x, &y, &mut rng).unwrap();
        for (a, b) in adv.data().iter().zip(x.data()) {
            assert!((a - b).abs() <= plan.pgd_at.eps + 1e-9);
        }
        // and the trainer itself runs
        PgdAtStrategy.run(&mut model, &data, &plan).unwrap();
    }

    #[test]
    fn pda_budget_triangle_inequality_without_clipping() {
        // λ=1 on interior-valued data with clipping disabled:
        // ‖x^k − x⁰‖₂ ≤ ε_t per example
        let (mut model, data) = blob_setup(8);
        let mut plan = TrainPlan::new(StrategyKind::Pda);
        plan.epochs = 7;
        plan.pda = PdaParams { eps: 0.3, lambda: 1.0, k: 3 };
        let strategy = PdaStrategy { clip: false };
        let mut violations = 0usize;
        let mut checks = 0usize;
        strategy
            .run_with_observer(&mut model, &data, &plan, &mut |step| {
                if step.step == plan.pda.k {
                    let drift = step.x_current.sub(step.x_clean).unwrap();
                    for norm in per_example_l2(&drift) {
                        checks += 1;
                        if norm > step.eps_t + 1e-9 {
                            violations += 1;
                        }
                    }
                }
            })
            .unwrap();
        assert!(checks > 0);
        assert_eq!(violations, 0);
    }

    #[test]
    fn training_is_deterministic() {
        let (mut m1, data) = blob_setup(9);
        let mut m2 = m1.clone();
        let mut plan = TrainPlan::new(StrategyKind::Pda);
        plan.epochs = 3;
        plan.pda = PdaParams { eps: 0.2, lambda: 0.5, k: 2 };
        PdaStrategy::default().run(&mut m1, &data, &plan).unwrap();
        PdaStrategy::default().run(&mut m2, &data, &plan).unwrap();
        assert_eq!(params_bits(&m1), params_bits(&m2));
    }

    #[test]
    fn natural_loss_decreases_on_separable_blobs() {
        let model = build_model(Arch::Mlp, &[2], 2, 10).unwrap();
        let data = gen_blobs(128, 2, 2, 5.0, 11).unwrap();
        let mut plan = TrainPlan::new(StrategyKind::Natural);
        plan.epochs = 5;
        let mut m = model;
        let history = NaturalStrategy::default().run(&mut m, &data, &plan).unwrap();
        for w in history.epochs.windows(2) {
            assert!(
                w[1].clean_loss < w[0].clean_loss,
                "loss should fall: {:?}",
                history.epochs.iter().map(|e| e.clean_loss).collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn gda_noise_moments() {
        // sample mean within 3σ/√n of zero; sample std within 2% of σ
        let sigma = 0.1;
        let mut rng = Rng::from_label(0, "gda-noise");
        let n = 100_000usize;
        let noise = GdaStrategy::noise_like(&[n], sigma, &mut rng);
        let mean = noise.data().iter().sum::<f64>() / n as f64;
        assert!(mean.abs() < 3.0 * sigma / (n as f64).sqrt(), "mean {mean}");
        let var = noise.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        assert!((std - sigma).abs() < 0.02 * sigma, "std {std}");
    }

    #[test]
    fn gda_augmented_pixels_stay_in_range() {
        let x = Tensor::full(&[4, 2], 0.95);
        let mut rng = Rng::seeded(1);
        let noise = GdaStrategy::noise_like(x.shape(), 0.5, &mut rng);
        let aug = x.add(&noise).unwrap().clip01();
        assert!(aug.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn registry_knows_all_strategies() {
        for name in ["natural", "gda", "pgd_at", "pda"] {
            assert_eq!(build_strategy(name).unwrap().name(), name);
        }
        assert!(build_strategy("free_m").is_err());
    }

    #[test]
    fn strategy_rejects_mismatched_plan() {
        let (mut model, data) = blob_setup(12);
        let plan = TrainPlan::new(StrategyKind::Natural);
        assert!(matches!(
            PdaStrategy::default().run(&mut model, &data, &plan),
            Err(TrainError::StrategyMismatch { .. })
        ));
    }

    #[test]
    fn plan_validation() {
        let mut plan = TrainPlan::new(StrategyKind::Pda);
        plan.pda.lambda = 1.5;
        assert!(plan.validate().is_err());
        let mut plan = TrainPlan::new(StrategyKind::Pda);
        plan.pda.k = 0;
        assert!(plan.validate().is_err());
        let mut plan = TrainPlan::new(StrategyKind::Gda);
        plan.gda.sigma = -0.1;
        assert!(plan.validate().is_err());
        let mut plan = TrainPlan::new(StrategyKind::Natural);
        plan.epochs = 0;
        assert!(plan.validate().is_err());
    }

    #[test]
    fn history_csv_shape() {
        let (mut model, data) = blob_setup(13);
        let mut plan = TrainPlan::new(StrategyKind::Natural);
        plan.epochs = 2;
        let history = NaturalStrategy::default().run(&mut model, &data, &plan).unwrap();
        let mut buf = Vec::new();
        history.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "epoch,eps_t,clean_loss,clean_acc,wall_ms");
        assert_eq!(lines.len(), 3);
    }
}

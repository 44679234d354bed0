//! Adversarial example generators: FGSM, PGD, and a fixed-constant
//! margin-loss L2 attack.
//!
//! Every attack family sits behind the [`Attack`] trait and is looked up by
//! name in [`ATTACK_REGISTRY`]. All attacks clip to the pixel domain `[0,1]`
//! after every step and never exceed their norm budget; outputs are
//! bit-reproducible given `(x, y, seed)`.

use std::fmt;

use pdalab_tensor::{backward, softmax_logloss, Tape, Tensor, TensorError};

use crate::data::Dataset;
use crate::nn::{Model, NnError};
use crate::rng::Rng;

#[derive(Debug)]
pub enum AttackError {
    UnknownFamily(String),
    UnknownNorm(String),
    BadSpec(String),
    Nn(NnError),
    Tensor(TensorError),
}

impl fmt::Display for AttackError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::UnknownFamily(name) => {
                write!(f, "unknown attack '{name}' (fgsm, pgd, cw)")
            }
            Self::UnknownNorm(name) => write!(f, "unknown norm '{name}' (linf, l2)"),
            Self::BadSpec(msg) => write!(f, "bad attack spec: {msg}"),
            Self::Nn(e) => write!(f, "{e}"),
            Self::Tensor(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for AttackError {}

impl From<NnError> for AttackError {
    fn from(e: NnError) -> Self {
        Self::Nn(e)
    }
}
impl From<TensorError> for AttackError {
    fn from(e: TensorError) -> Self {
        Self::Tensor(e)
    }
}

pub type Result<T> = std::result::Result<T, AttackError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    LInf,
    L2,
}

impl NormKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "linf" | "inf" => Ok(Self::LInf),
            "l2" => Ok(Self::L2),
            other => Err(AttackError::UnknownNorm(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::LInf => "linf",
            Self::L2 => "l2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackFamily {
    Fgsm,
    Pgd,
    CwL2,
}

impl AttackFamily {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fgsm" => Ok(Self::Fgsm),
            "pgd" => Ok(Self::Pgd),
            "cw" | "cw_l2" => Ok(Self::CwL2),
            other => Err(AttackError::UnknownFamily(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Fgsm => "fgsm",
            Self::Pgd => "pgd",
            Self::CwL2 => "cw",
        }
    }
}

/// Full description of an attack run. `eps` and `alpha` are in absolute
/// pixel units on the `[0,1]` scale; `alpha` doubles as the descent rate of
/// the L2 margin attack.
#[derive(Debug, Clone)]
pub struct AttackSpec {
    pub family: AttackFamily,
    pub norm: NormKind,
    pub eps: f64,
    pub alpha: f64,
    pub steps: usize,
    pub c: f64,
    pub random_init: bool,
    pub seed: u64,
}

impl AttackSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(AttackError::BadSpec(format!("eps must be >= 0, got {}", self.eps)));
        }
        match self.family {
            AttackFamily::Fgsm => {}
            AttackFamily::Pgd | AttackFamily::CwL2 => {
                if !(self.alpha > 0.0) {
                    return Err(AttackError::BadSpec(format!(
                        "alpha must be > 0 for iterative attacks, got {}",
                        self.alpha
                    )));
                }
                if self.steps < 1 {
                    return Err(AttackError::BadSpec("steps must be >= 1".into()));
                }
            }
        }
        if self.c < 0.0 {
            return Err(AttackError::BadSpec(format!("c must be >= 0, got {}", self.c)));
        }
        Ok(())
    }
}

/// Exact loss gradient with respect to the input batch.
pub fn input_gradient(model: &Model, x: &Tensor, y: &[usize]) -> Result<Tensor> {
    let tape = Tape::new();
    let taped = model.forward_taped(&tape, x)?;
    let loss = softmax_logloss(&taped.logits, y)?;
    let grads = backward(&loss)?;
    Ok(taped.input_grad(&grads))
}

// ── per-example batch helpers ────────────────────────────────────────

/// L2 norm of each example (dimension 0 is the batch).
pub fn per_example_l2(t: &Tensor) -> Vec<f64> {
    let n = t.shape()[0];
    let stride = t.numel() / n;
    t.data()
        .chunks_exact(stride)
        .map(|chunk| chunk.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect()
}

/// Per-example L2 normalization; examples with norm below `floor` map to zero.
pub fn normalize_per_example(t: &Tensor, floor: f64) -> Tensor {
    let norms = per_example_l2(t);
    let n = t.shape()[0];
    let stride = t.numel() / n;
    let mut data = t.data().to_vec();
    for (i, norm) in norms.iter().enumerate() {
        let chunk = &mut data[i * stride..(i + 1) * stride];
        if *norm < floor {
            chunk.fill(0.0);
        } else {
            for v in chunk.iter_mut() {
                *v /= norm;
            }
        }
    }
    Tensor::new(t.shape().to_vec(), data).expect("shape preserved")
}

/// Project `delta` onto the per-example L2 ball of radius `eps`.
pub fn project_l2_per_example(delta: &Tensor, eps: f64) -> Tensor {
    let norms = per_example_l2(delta);
    let n = delta.shape()[0];
    let stride = delta.numel() / n;
    let mut data = delta.data().to_vec();
    for (i, norm) in norms.iter().enumerate() {
        if *norm > eps {
            let scale = eps / norm;
            for v in data[i * stride..(i + 1) * stride].iter_mut() {
                *v *= scale;
            }
        }
    }
    Tensor::new(delta.shape().to_vec(), data).expect("shape preserved")
}

// ── attack trait and registry ────────────────────────────────────────

/// A white-box attack on a frozen model.
pub trait Attack {
    fn name(&self) -> &'static str;

    /// Produce adversarial examples for the batch `(x, y)`.
    fn perturb(&self, model: &Model, x: &Tensor, y: &[usize], rng: &mut Rng) -> Result<Tensor>;
}

type AttackBuilder = fn(&AttackSpec) -> Box<dyn Attack>;

/// Attack families selectable by name.
pub const ATTACK_REGISTRY: &[(&str, AttackBuilder)] = &[
    ("fgsm", |spec| Box::new(FgsmAttack { eps: spec.eps })),
    ("pgd", |spec| {
        Box::new(PgdAttack {
            norm: spec.norm,
            eps: spec.eps,
            alpha: spec.alpha,
            steps: spec.steps,
            random_init: spec.random_init,
        })
    }),
    ("cw", |spec| {
        Box::new(CwL2Attack {
            c: spec.c,
            steps: spec.steps,
            lr: spec.alpha,
        })
    }),
];

pub fn attack_names() -> Vec<&'static str> {
    ATTACK_REGISTRY.iter().map(|(n, _)| *n).collect()
}

/// Instantiate the attack named by `spec.family` from the registry.
pub fn build_attack(spec: &AttackSpec) -> Result<Box<dyn Attack>> {
    spec.validate()?;
    ATTACK_REGISTRY
        .iter()
        .find(|(name, _)| *name == spec.family.name())
        .map(|(_, build)| build(spec))
        .ok_or_else(|| AttackError::UnknownFamily(spec.family.name().to_string()))
}

/// Attack every example of `ds` in batches, returning the adversarial dataset.
pub fn attack_dataset(
    attack: &dyn Attack,
    model: &Model,
    ds: &Dataset,
    batch_size: usize,
    seed: u64,
) -> Result<Dataset> {
    let mut rng = Rng::from_label(seed, "attack-init");
    let mut data = Vec::with_capacity(ds.images.numel());
    let mut start = 0;
    while start < ds.len() {
        let end = (start + batch_size).min(ds.len());
        let (x, y) = ds.batch(start, end);
        let adv = attack.perturb(model, &x, &y, &mut rng)?;
        data.extend_from_slice(adv.data());
        start = end;
    }
    let images = Tensor::new(ds.images.shape().to_vec(), data).expect("batch shapes");
    Dataset::new(
        images,
        ds.labels.clone(),
        ds.num_classes,
        ds.split.clone(),
        format!("{}+{}", ds.provenance, attack.name()),
    )
    .map_err(|e| AttackError::BadSpec(e.to_string()))
}

/// `x' = clip(x + ε·sign(∇_x ℓ))`
pub struct FgsmAttack {
    pub eps: f64,
}

impl Attack for FgsmAttack {
    fn name(&self) -> &'static str {
        "fgsm"
    }

    fn perturb(&self, model: &Model, x: &Tensor, y: &[usize], _rng: &mut Rng) -> Result<Tensor> {
        let grad = input_gradient(model, x, y)?;
        Ok(x.add(&grad.sign().scale(self.eps))?.clip01())
    }
}

/// Iterated gradient steps with projection onto the ε-ball after each step.
pub struct PgdAttack {
    pub norm: NormKind,
    pub eps: f64,
    pub alpha: f64,
    pub steps: usize,
    pub random_init: bool,
}

impl PgdAttack {
    fn random_start(&self, x: &Tensor, rng: &mut Rng) -> Tensor {
        match self.norm {
            NormKind::LInf => {
                let data: Vec<f64> = x
                    .data()
                    .iter()
                    .map(|&v| v + rng.range(-self.eps, self.eps))
                    .collect();
                Tensor::new(x.shape().to_vec(), data).expect("shape").clip01()
            }
            NormKind::L2 => {
                let n = x.shape()[0];
                let stride = x.numel() / n;
                let dir_data: Vec<f64> = (0..x.numel()).map(|_| rng.normal()).collect();
                let dir = normalize_per_example(
                    &Tensor::new(x.shape().to_vec(), dir_data).expect("shape"),
                    1e-12,
                );
                let mut data = x.data().to_vec();
                for i in 0..n {
                    let radius = self.eps * rng.uniform().powf(1.0 / stride as f64);
                    for (v, d) in data[i * stride..(i + 1) * stride]
                        .iter_mut()
                        .zip(&dir.data()[i * stride..(i + 1) * stride])
                    {
                        *v += radius * d;
                    }
                }
                Tensor::new(x.shape().to_vec(), data).expect("shape").clip01()
            }
        }
    }

    fn project(&self, x_adv: &Tensor, x: &Tensor) -> Result<Tensor> {
        let delta = x_adv.sub(x)?;
        let delta = match self.norm {
            NormKind::LInf => delta.clamp(-self.eps, self.eps),
            NormKind::L2 => project_l2_per_example(&delta, self.eps),
        };
        Ok(x.add(&delta)?.clip01())
    }
}

impl Attack for PgdAttack {
    fn name(&self) -> &'static str {
        "pgd"
    }

    fn perturb(&self, model: &Model, x: &Tensor, y: &[usize], rng: &mut Rng) -> Result<Tensor> {
        let mut x_adv = if self.random_init {
            self.project(&self.random_start(x, rng), x)?
        } else {
            x.clone()
        };
        for _ in 0..self.steps {
            let grad = input_gradient(model, &x_adv, y)?;
            let step = match self.norm {
                NormKind::LInf => grad.sign().scale(self.alpha),
                NormKind::L2 => normalize_per_example(&grad, 1e-12).scale(self.alpha),
            };
            x_adv = self.project(&x_adv.add(&step)?, x)?;
        }
        Ok(x_adv)
    }
}

/// Gradient descent on `‖δ‖₂² + c·max(logit_y − max_{i≠y} logit_i, 0)`,
/// keeping the best iterate per example. Fixed constant, no binary search.
pub struct CwL2Attack {
    pub c: f64,
    pub steps: usize,
    pub lr: f64,
}

impl CwL2Attack {
    /// Per-example margins `logit_y − max_{i≠y} logit_i` and runner-up index.
    fn margins(&self, logits: &Tensor, y: &[usize]) -> Vec<(f64, usize)> {
        let m = logits.shape()[1];
        logits
            .data()
            .chunks_exact(m)
            .zip(y)
            .map(|(row, &label)| {
                let (mut best_i, mut best_v) = (usize::MAX, f64::NEG_INFINITY);
                for (i, &v) in row.iter().enumerate() {
                    if i != label && v > best_v {
                        best_v = v;
                        best_i = i;
                    }
                }
                (row[label] - best_v, best_i)
            })
            .collect()
    }

    fn objectives(&self, delta: &Tensor, margins: &[(f64, usize)]) -> Vec<f64> {
        per_example_l2(delta)
            .iter()
            .zip(margins)
            .map(|(norm, (margin, _))| norm * norm + self.c * margin.max(0.0))
            .collect()
    }
}

impl Attack for CwL2Attack {
    fn name(&self) -> &'static str {
        "cw"
    }

    fn perturb(&self, model: &Model, x: &Tensor, y: &[usize], _rng: &mut Rng) -> Result<Tensor> {
        let n = x.shape()[0];
        let m = model.num_classes;
        let stride = x.numel() / n;

        let mut x_adv = x.clone();
        let mut best = x.clone();
        let logits0 = model.forward(x)?;
        let mut best_obj = self.objectives(&Tensor::zeros(x.shape()), &self.margins(&logits0, y));

        for _ in 0..self.steps {
            let delta = x_adv.sub(x)?;
            // margin subgradient via a weighted-logits sum on the tape
            let tape = Tape::new();
            let taped = model.forward_taped(&tape, &x_adv)?;
            let logits = taped.logits.value();
            let margins = self.margins(&logits, y);
            let mut w = vec![0.0; n * m];
            for (r, ((margin, runner_up), &label)) in margins.iter().zip(y).enumerate() {
                if *margin > 0.0 {
                    w[r * m + label] = 1.0;
                    w[r * m + *runner_up] = -1.0;
                }
            }
            let w_leaf = tape.leaf(Tensor::new(vec![n, m], w)?)?;
            let weighted = taped.logits.mul(&w_leaf)?.sum()?;
            let grads = backward(&weighted)?;
            let margin_grad = taped.input_grad(&grads);

            let grad = delta.scale(2.0).add(&margin_grad.scale(self.c))?;
            x_adv = x_adv.sub(&grad.scale(self.lr))?.clip01();

            // track the best iterate per example
            let delta_now = x_adv.sub(x)?;
            let logits_now = model.forward(&x_adv)?;
            let obj_now = self.objectives(&delta_now, &self.margins(&logits_now, y));
            for r in 0..n {
                if obj_now[r] < best_obj[r] {
                    best_obj[r] = obj_now[r];
                    let src = &x_adv.data()[r * stride..(r + 1) * stride];
                    best.data_mut()[r * stride..(r + 1) * stride].copy_from_slice(src);
                }
            }
        }
        Ok(best)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_blobs;
    use crate::nn::{build_model, Arch, DenseLayer, Layer, Sgd};

    fn spec(family: AttackFamily) -> AttackSpec {
        AttackSpec {
            family,
            norm: NormKind::LInf,
            eps: 0.1,
            alpha: 0.02,
            steps: 10,
            c: 1.0,
            random_init: false,
            seed: 0,
        }
    }

    /// Binary logistic model: logits (0, wᵀx).
    fn logistic_model(w: &[f64]) -> Model {
        let d = w.len();
        let mut model = build_model(Arch::Mlp, &[d], 2, 0).unwrap();
        let mut weight = vec![0.0; d * 2];
        for (i, &wi) in w.iter().enumerate() {
            weight[i * 2 + 1] = wi;
        }
        model.layers = vec![
            Layer::Flatten,
            Layer::Dense(DenseLayer {
                weight: Tensor::new(vec![d, 2], weight).unwrap(),
                bias: Tensor::zeros(&[2]),
            }),
        ];
        model
    }

    fn quick_train(model: &mut Model, ds: &Dataset, epochs: usize) {
        let mut opt = Sgd::new(0.5, 0.0);
        for _ in 0..epochs {
            let mut start = 0;
            while start < ds.len() {
                let end = (start + 32).min(ds.len());
                let (x, y) = ds.batch(start, end);
                let tape = Tape::new();
                let taped = model.forward_taped(&tape, &x).unwrap();
                let loss = softmax_logloss(&taped.logits, &y).unwrap();
                let grads = backward(&loss).unwrap();
                opt.step(model, &taped.param_grads(&grads)).unwrap();
                start = end;
            }
        }
    }

    fn mean_loss(model: &Model, x: &Tensor, y: &[usize]) -> f64 {
        pdalab_tensor::softmax_logloss_value(&model.forward(x).unwrap(), y).unwrap()
    }

    #[test]
    fn fgsm_zero_budget_is_identity() {
        let model = build_model(Arch::Mlp, &[2], 2, 1).unwrap();
        let ds = gen_blobs(16, 2, 2, 3.0, 2).unwrap();
        let (x, y) = ds.batch(0, 16);
        let attack = FgsmAttack { eps: 0.0 };
        let adv = attack.perturb(&model, &x, &y, &mut Rng::seeded(0)).unwrap();
        for (a, b) in adv.data().iter().zip(x.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn fgsm_matches_analytic_logistic_gradient() {
        // ∇_x ℓ = p₁·w for label 0 with p₁ > 0, so x' = clip(x + ε·sign(w))
        let w = [0.8, -1.2, 0.3];
        let model = logistic_model(&w);
        let x = Tensor::new(vec![1, 3], vec![0.5, 0.5, 0.5]).unwrap();
        let eps = 0.1;
        let attack = FgsmAttack { eps };
        let adv = attack.perturb(&model, &x, &[0], &mut Rng::seeded(0)).unwrap();
        for i in 0..3 {
            let want = (0.5 + eps * w[i].signum()).clamp(0.0, 1.0);
            assert!((adv.data()[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn fgsm_budget_invariant() {
        let model = build_model(Arch::Mlp, &[2], 2, 3).unwrap();
        let ds = gen_blobs(64, 2, 2, 3.0, 4).unwrap();
        let (x, y) = ds.batch(0, 64);
        let eps = 0.07;
        let adv = FgsmAttack { eps }
            .perturb(&model, &x, &y, &mut Rng::seeded(0))
            .unwrap();
        for (a, b) in adv.data().iter().zip(x.data()) {
            assert!((a - b).abs() <= eps + 1e-12);
            assert!((0.0..=1.0).contains(a));
        }
    }

    #[test]
    fn pgd_single_step_equals_fgsm() {
        // k=1, α=ε, no random start
        let model = build_model(Arch::Mlp, &[2], 2, 5).unwrap();
        let ds = gen_blobs(32, 2, 2, 3.0, 6).unwrap();
        let (x, y) = ds.batch(0, 32);
        let eps = 0.05;
        let fgsm = FgsmAttack { eps }
            .perturb(&model, &x, &y, &mut Rng::seeded(1))
            .unwrap();
        let pgd = PgdAttack {
            norm: NormKind::LInf,
            eps,
            alpha: eps,
            steps: 1,
            random_init: false,
        }
        .perturb(&model, &x, &y, &mut Rng::seeded(1))
        .unwrap();
        for (a, b) in fgsm.data().iter().zip(pgd.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn pgd_budget_invariant_both_norms() {
        let model = build_model(Arch::Mlp, &[4], 2, 7).unwrap();
        let ds = gen_blobs(32, 4, 2, 3.0, 8).unwrap();
        let (x, y) = ds.batch(0, 32);
        let eps = 0.12;
        for norm in [NormKind::LInf, NormKind::L2] {
            let adv = PgdAttack {
                norm,
                eps,
                alpha: 0.03,
                steps: 8,
                random_init: true,
            }
            .perturb(&model, &x, &y, &mut Rng::seeded(2))
            .unwrap();
            match norm {
                NormKind::LInf => {
                    for (a, b) in adv.data().iter().zip(x.data()) {
                        assert!((a - b).abs() <= eps + 1e-9);
                    }
                }
                NormKind::L2 => {
                    for norm_val in per_example_l2(&adv.sub(&x).unwrap()) {
                        assert!(norm_val <= eps + 1e-9);
                    }
                }
            }
            assert!(adv.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn pgd_loss_non_decreasing_in_steps() {
        // on a trained blob model, more steps never hurt the attacker
        let mut model = build_model(Arch::Mlp, &[2], 2, 11).unwrap();
        let train = gen_blobs(256, 2, 2, 3.0, 12).unwrap();
        quick_train(&mut model, &train, 30);
        let test = gen_blobs(512, 2, 2, 3.0, 13).unwrap();
        let (x, y) = test.batch(0, test.len());
        let mut losses = Vec::new();
        for steps in [1usize, 5, 20] {
            let adv = PgdAttack {
                norm: NormKind::LInf,
                eps: 0.1,
                alpha: 0.025,
                steps,
                random_init: true,
            }
            .perturb(&model, &x, &y, &mut Rng::seeded(3))
            .unwrap();
            losses.push(mean_loss(&model, &adv, &y));
        }
        assert!(losses[1] >= losses[0] - 1e-3, "losses {losses:?}");
        assert!(losses[2] >= losses[1] - 1e-3, "losses {losses:?}");
    }

    #[test]
    fn attacks_are_deterministic_given_seed() {
        let model = build_model(Arch::Mlp, &[2], 2, 17).unwrap();
        let ds = gen_blobs(32, 2, 2, 3.0, 18).unwrap();
        let (x, y) = ds.batch(0, 32);
        let attack = PgdAttack {
            norm: NormKind::LInf,
            eps: 0.1,
            alpha: 0.02,
            steps: 5,
            random_init: true,
        };
        let a = attack.perturb(&model, &x, &y, &mut Rng::seeded(9)).unwrap();
        let b = attack.perturb(&model, &x, &y, &mut Rng::seeded(9)).unwrap();
        for (p, q) in a.data().iter().zip(b.data()) {
            assert_eq!(p.to_bits(), q.to_bits());
        }
    }

    #[test]
    fn cw_zero_constant_returns_input() {
        let model = build_model(Arch::Mlp, &[2], 2, 19).unwrap();
        let ds = gen_blobs(8, 2, 2, 3.0, 20).unwrap();
        let (x, y) = ds.batch(0, 8);
        let attack = CwL2Attack {
            c: 0.0,
            steps: 20,
            lr: 0.1,
        };
        let adv = attack.perturb(&model, &x, &y, &mut Rng::seeded(0)).unwrap();
        for (a, b) in adv.data().iter().zip(x.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn cw_leaves_misclassified_points_alone() {
        // flip the labels so every point is already misclassified: margin
        // term is inactive at δ=0, which is stationary
        let mut model = build_model(Arch::Mlp, &[2], 2, 21).unwrap();
        let train = gen_blobs(128, 2, 2, 4.0, 22).unwrap();
        quick_train(&mut model, &train, 20);
        let (x, y) = train.batch(0, 16);
        let wrong: Vec<usize> = y.iter().map(|&v| 1 - v).collect();
        let preds = model.predict(&x).unwrap();
        let all_misclassified = preds.iter().zip(&wrong).all(|(p, w)| p != w);
        assert!(all_misclassified, "training failed to separate blobs");
        let attack = CwL2Attack {
            c: 5.0,
            steps: 15,
            lr: 0.05,
        };
        let adv = attack.perturb(&model, &x, &wrong, &mut Rng::seeded(0)).unwrap();
        for (a, b) in adv.data().iter().zip(x.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn cw_matches_grid_search_on_2d_linear_model() {
        // dense 201×201 grid oracle over δ for a single 2-d point
        let w = [2.0, -1.5];
        let model = logistic_model(&w);
        let x = vec![0.6, 0.4];
        let y = 0usize; // logits (0, wᵀx); wᵀx = 0.6 < 0: correctly classified as 0
        let (c, steps, lr) = (4.0, 400, 0.02);

        let attack = CwL2Attack { c, steps, lr };
        let xt = Tensor::new(vec![1, 2], x.clone()).unwrap();
        let adv = attack.perturb(&model, &xt, &[y], &mut Rng::seeded(0)).unwrap();
        let margin_attack = {
            let logits = model.forward(&adv).unwrap();
            logits.data()[y] - logits.data()[1 - y]
        };

        // oracle: minimize the same objective over a dense grid
        let mut best_obj = f64::INFINITY;
        let mut best_margin = 0.0;
        let radius = 0.5;
        for i in 0..201 {
            for j in 0..201 {
                let dx = -radius + 2.0 * radius * i as f64 / 200.0;
                let dy = -radius + 2.0 * radius * j as f64 / 200.0;
                let px = (x[0] + dx).clamp(0.0, 1.0) - x[0];
                let py = (x[1] + dy).clamp(0.0, 1.0) - x[1];
                let z1 = w[0] * (x[0] + px) + w[1] * (x[1] + py);
                let margin = 0.0 - z1; // logit_y − other
                let obj = px * px + py * py + c * margin.max(0.0);
                if obj < best_obj {
                    best_obj = obj;
                    best_margin = margin;
                }
            }
        }
        let delta = adv.sub(&xt).unwrap();
        let obj_attack = per_example_l2(&delta)[0].powi(2) + c * margin_attack.max(0.0);
        assert!(
            (obj_attack - best_obj).abs() <= 0.05 * best_obj.abs().max(0.05),
            "attack objective {obj_attack} vs grid {best_obj} (margins {margin_attack} vs {best_margin})"
        );
    }

    #[test]
    fn input_gradient_zero_for_constant_model() {
        let mut model = build_model(Arch::Mlp, &[3], 2, 23).unwrap();
        model.zero_params();
        let x = Tensor::full(&[4, 3], 0.5);
        let g = input_gradient(&model, &x, &[0, 1, 0, 1]).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let model = build_model(Arch::Mlp, &[3], 2, 25).unwrap();
        let ds = gen_blobs(4, 3, 2, 3.0, 26).unwrap();
        let (x, y) = ds.batch(0, 4);
        let g = input_gradient(&model, &x, &y).unwrap();
        let h = 1e-5;
        for &i in &[0usize, 5, 11] {
            let mut plus = x.clone();
            plus.data_mut()[i] += h;
            let mut minus = x.clone();
            minus.data_mut()[i] -= h;
            let fd = (mean_loss(&model, &plus, &y) - mean_loss(&model, &minus, &y)) / (2.0 * h);
            let rel = (g.data()[i] - fd).abs() / fd.abs().max(1e-8);
            assert!(rel < 1e-4, "pixel {i}: ad {} fd {fd}", g.data()[i]);
        }
    }

    #[test]
    fn scaling_the_loss_scales_the_gradient() {
        let model = build_model(Arch::Mlp, &[2], 2, 27).unwrap();
        let ds = gen_blobs(4, 2, 2, 3.0, 28).unwrap();
        let (x, y) = ds.batch(0, 4);
        let g1 = input_gradient(&model, &x, &y).unwrap();
        // doubled loss via the scale op
        let tape = Tape::new();
        let taped = model.forward_taped(&tape, &x).unwrap();
        let loss = softmax_logloss(&taped.logits, &y).unwrap().scale(2.0).unwrap();
        let grads = backward(&loss).unwrap();
        let g2 = taped.input_grad(&grads);
        for (a, b) in g1.data().iter().zip(g2.data()) {
            assert!((2.0 * a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn registry_builds_each_family() {
        for family in [AttackFamily::Fgsm, AttackFamily::Pgd, AttackFamily::CwL2] {
            let attack = build_attack(&spec(family)).unwrap();
            assert_eq!(attack.name(), family.name());
        }
        assert!(AttackFamily::parse("bim").is_err());
    }

    #[test]
    fn spec_validation_rejects_bad_values() {
        let mut s = spec(AttackFamily::Pgd);
        s.alpha = 0.0;
        assert!(s.validate().is_err());
        let mut s = spec(AttackFamily::Pgd);
        s.steps = 0;
        assert!(s.validate().is_err());
        let mut s = spec(AttackFamily::Fgsm);
        s.eps = -0.5;
        assert!(s.validate().is_err());
        // fgsm ignores steps entirely
        let mut s = spec(AttackFamily::Fgsm);
        s.steps = 0;
        assert!(s.validate().is_ok());
    }
}

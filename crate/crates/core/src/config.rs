//! Flat `key=value` configuration with `#` comments, and the train-plan
//! schema. Parsing is fail-closed: unknown and duplicate keys are rejected.

use std::fmt;
use std::path::Path;

use crate::train::{StrategyKind, TrainError, TrainPlan};

#[derive(Debug)]
pub enum ConfigError {
    Io(std::io::Error),
    BadLine(String),
    UnknownKey { key: String, known: &'static [&'static str] },
    DuplicateKey(String),
    BadValue { key: String, value: String },
    MissingKey(&'static str),
    Train(TrainError),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Io(e) => write!(f, "config io: {e}"),
            Self::BadLine(line) => write!(f, "expected key=value, got '{line}'"),
            Self::UnknownKey { key, known } => {
                write!(f, "unknown key '{key}' (known: {})", known.join(", "))
            }
            Self::DuplicateKey(key) => write!(f, "duplicate key '{key}'"),
            Self::BadValue { key, value } => write!(f, "bad value for {key}: '{value}'"),
            Self::MissingKey(key) => write!(f, "missing required key '{key}'"),
            Self::Train(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for ConfigError {}

impl From<std::io::Error> for ConfigError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e)
    }
}
impl From<TrainError> for ConfigError {
    fn from(e: TrainError) -> Self {
        Self::Train(e)
    }
}

pub type Result<T> = std::result::Result<T, ConfigError>;

/// Parse `key=value` lines. Blank lines and `#` comments are skipped.
pub fn parse_kv_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for raw in text.lines() {
        let line = match raw.find('#') {
            Some(idx) => &raw[..idx],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(ConfigError::BadLine(line.to_string()));
        };
        let key = k.trim().to_string();
        if out.iter().any(|(existing, _)| *existing == key) {
            return Err(ConfigError::DuplicateKey(key));
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

pub fn parse_kv_file<P: AsRef<Path>>(path: P) -> Result<Vec<(String, String)>> {
    parse_kv_text(&std::fs::read_to_string(path)?)
}

/// Perturbation magnitudes given as whole numbers are in 1/255 pixel units;
/// fractional values below 1 are absolute on the `[0,1]` scale.
pub fn eps_units(value: f64) -> f64 {
    if value >= 1.0 {
        value / 255.0
    } else {
        value
    }
}

/// The train-plan schema.
pub const PLAN_KEYS: &[&str] = &[
    "strategy", "epochs", "eps", "lambda", "k", "sigma", "alpha", "steps", "lr", "momentum",
    "batch", "seed",
];

/// Build a validated [`TrainPlan`] from parsed `key=value` entries.
///
/// `strategy` is required; everything else falls back to the defaults of
/// [`TrainPlan::new`]. `eps` and `alpha` pass through [`eps_units`];
/// `sigma` is always absolute. Fields irrelevant to the chosen strategy are
/// accepted and ignored.
pub fn parse_train_plan(entries: &[(String, String)]) -> Result<TrainPlan> {
    for (key, _) in entries {
        if !PLAN_KEYS.contains(&key.as_str()) {
            return Err(ConfigError::UnknownKey {
                key: key.clone(),
                known: PLAN_KEYS,
            });
        }
    }
    let get = |key: &str| entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str());
    let strategy_name = get("strategy").ok_or(ConfigError::MissingKey("strategy"))?;
    let strategy = StrategyKind::parse(strategy_name)?;
    let mut plan = TrainPlan::new(strategy);

    macro_rules! fill {
        ($key:literal, $slot:expr, $ty:ty) => {
            if let Some(v) = get($key) {
                $slot = v.parse::<$ty>().map_err(|_| ConfigError::BadValue {
                    key: $key.to_string(),
                    value: v.to_string(),
                })?;
            }
        };
    }
    fill!("epochs", plan.epochs, usize);
    fill!("batch", plan.batch, usize);
    fill!("lr", plan.lr, f64);
    fill!("momentum", plan.momentum, f64);
    fill!("seed", plan.seed, u64);
    fill!("lambda", plan.pda.lambda, f64);
    fill!("k", plan.pda.k, usize);
    fill!("sigma", plan.gda.sigma, f64);
    fill!("steps", plan.pgd_at.steps, usize);
    let mut eps = None;
    if let Some(v) = get("eps") {
        eps = Some(eps_units(v.parse::<f64>().map_err(|_| ConfigError::BadValue {
            key: "eps".to_string(),
            value: v.to_string(),
        })?));
    }
    if let Some(v) = get("alpha") {
        plan.pgd_at.alpha = eps_units(v.parse::<f64>().map_err(|_| ConfigError::BadValue {
            key: "alpha".to_string(),
            value: v.to_string(),
        })?);
    }
    if let Some(eps) = eps {
        plan.pda.eps = eps;
        plan.pgd_at.eps = eps;
    }
    plan.validate()?;
    Ok(plan)
}

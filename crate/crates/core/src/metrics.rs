//! Classification error bookkeeping and corruption-robustness scores.
//!
//! `CE_c = Σ_s E^f_{s,c} / Σ_s E^base_{s,c}` over the five severities,
//! `mCE` is the mean CE over corruption kinds, and relative mCE measures
//! the baseline-normalized decline from clean error:
//! `RmCE_c = (Σ_s E^f_{s,c} − E^f_clean) / (Σ_s E^base_{s,c} − E^base_clean)`.
//! The Mixed Test scores accuracy on an equal-proportion union of clean,
//! adversarial, and corrupted examples.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use crate::corruptions::{load_suite_dataset, CorruptionError, SuiteManifest};
use crate::data::{DataError, Dataset};
use crate::nn::{Model, NnError};
use crate::rng::Rng;

#[derive(Debug)]
pub enum MetricsError {
    EmptyInput(&'static str),
    LengthMismatch { left: usize, right: usize },
    ZeroBaseline,
    ZeroDenominator,
    MissingCell { kind: String, severity: usize },
    OutOfRange { what: &'static str, value: f64 },
    Incompatible(String),
    Nn(NnError),
    Data(DataError),
    Corruption(CorruptionError),
    Io(std::io::Error),
}

impl fmt::Display for MetricsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::EmptyInput(what) => write!(f, "empty input: {what}"),
            Self::LengthMismatch { left, right } => {
                write!(f, "length mismatch: {left} vs {right}")
            }
            Self::ZeroBaseline => write!(f, "degenerate baseline: severity errors sum to zero"),
            Self::ZeroDenominator => write!(f, "relative mCE denominator is zero"),
            Self::MissingCell { kind, severity } => {
                write!(f, "error table missing cell ({kind}, severity {severity})")
            }
            Self::OutOfRange { what, value } => write!(f, "{what} = {value} outside [0,1]"),
            Self::Incompatible(msg) => write!(f, "incompatible inputs: {msg}"),
            Self::Nn(e) => write!(f, "{e}"),
            Self::Data(e) => write!(f, "{e}"),
            Self::Corruption(e) => write!(f, "{e}"),
            Self::Io(e) => write!(f, "report io: {e}"),
        }
    }
}

impl std::error::Error for MetricsError {}

impl From<NnError> for MetricsError {
    fn from(e: NnError) -> Self {
        Self::Nn(e)
    }
}
impl From<DataError> for MetricsError {
    fn from(e: DataError) -> Self {
        Self::Data(e)
    }
}
impl From<CorruptionError> for MetricsError {
    fn from(e: CorruptionError) -> Self {
        Self::Corruption(e)
    }
}
impl From<std::io::Error> for MetricsError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// Fraction of mismatched predictions.
pub fn error_rate(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(MetricsError::EmptyInput("predictions"));
    }
    if predictions.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            left: predictions.len(),
            right: labels.len(),
        });
    }
    let wrong = predictions
        .iter()
        .zip(labels)
        .filter(|(p, y)| p != y)
        .count();
    Ok(wrong as f64 / predictions.len() as f64)
}

/// Top-1 error of a model over a dataset.
pub fn evaluate_error(model: &Model, ds: &Dataset) -> Result<f64> {
    let mut wrong = 0usize;
    let mut start = 0;
    while start < ds.len() {
        let end = (start + 256).min(ds.len());
        let (x, y) = ds.batch(start, end);
        let preds = model.predict(&x)?;
        wrong += preds.iter().zip(&y).filter(|(p, y)| p != y).count();
        start = end;
    }
    Ok(wrong as f64 / ds.len() as f64)
}

/// Ratio of severity-summed errors: `Σ E^f / Σ E^base`.
pub fn corruption_error(model_errors: &[f64], baseline_errors: &[f64]) -> Result<f64> {
    if model_errors.is_empty() {
        return Err(MetricsError::EmptyInput("severity errors"));
    }
    if model_errors.len() != baseline_errors.len() {
        return Err(MetricsError::LengthMismatch {
            left: model_errors.len(),
            right: baseline_errors.len(),
        });
    }
    let base_sum: f64 = baseline_errors.iter().sum();
    if base_sum <= 0.0 {
        return Err(MetricsError::ZeroBaseline);
    }
    Ok(model_errors.iter().sum::<f64>() / base_sum)
}

/// Arithmetic mean of per-corruption CE values.
pub fn mce(corruption_errors: &[f64]) -> Result<f64> {
    if corruption_errors.is_empty() {
        return Err(MetricsError::EmptyInput("corruption errors"));
    }
    Ok(corruption_errors.iter().sum::<f64>() / corruption_errors.len() as f64)
}

/// `(Σ E^f − E^f_clean) / (Σ E^base − E^base_clean)`, exactly as displayed:
/// one clean error subtracted from the five-severity sum.
pub fn relative_mce(
    model_errors: &[f64],
    model_clean: f64,
    baseline_errors: &[f64],
    baseline_clean: f64,
) -> Result<f64> {
    if model_errors.is_empty() {
        return Err(MetricsError::EmptyInput("severity errors"));
    }
    if model_errors.len() != baseline_errors.len() {
        return Err(MetricsError::LengthMismatch {
            left: model_errors.len(),
            right: baseline_errors.len(),
        });
    }
    let denom = baseline_errors.iter().sum::<f64>() - baseline_clean;
    if denom == 0.0 {
        return Err(MetricsError::ZeroDenominator);
    }
    Ok((model_errors.iter().sum::<f64>() - model_clean) / denom)
}

/// Per-corruption, per-severity top-1 errors of one model.
#[derive(Debug, Clone)]
pub struct ErrorTable {
    pub model_id: String,
    pub clean_error: f64,
    pub cells: BTreeMap<(String, usize), f64>,
}

impl ErrorTable {
    /// Check all entries lie in `[0,1]` and every `(kind, severity)` cell is
    /// present for the declared corruption set.
    pub fn validate(&self, kinds: &[String]) -> Result<()> {
        if !(0.0..=1.0).contains(&self.clean_error) {
            return Err(MetricsError::OutOfRange {
                what: "clean error",
                value: self.clean_error,
            });
        }
        for kind in kinds {
            for severity in 1..=5 {
                match self.cells.get(&(kind.clone(), severity)) {
                    None => {
                        return Err(MetricsError::MissingCell {
                            kind: kind.clone(),
                            severity,
                        })
                    }
                    Some(&v) if !(0.0..=1.0).contains(&v) => {
                        return Err(MetricsError::OutOfRange {
                            what: "cell error",
                            value: v,
                        })
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    pub fn kinds(&self) -> Vec<String> {
        let mut kinds = Vec::new();
        for (kind, _) in self.cells.keys() {
            if !kinds.contains(kind) {
                kinds.push(kind.clone());
            }
        }
        kinds
    }

    pub fn severity_errors(&self, kind: &str) -> Result<Vec<f64>> {
        (1..=5)
            .map(|s| {
                self.cells
                    .get(&(kind.to_string(), s))
                    .copied()
                    .ok_or_else(|| MetricsError::MissingCell {
                        kind: kind.to_string(),
                        severity: s,
                    })
            })
            .collect()
    }
}

/// Evaluate one model over a corruption suite.
pub fn build_error_table(
    model: &Model,
    model_id: &str,
    clean: &Dataset,
    suite_dir: &Path,
    manifest: &SuiteManifest,
) -> Result<ErrorTable> {
    let mut cells = BTreeMap::new();
    for entry in &manifest.entries {
        let sub = load_suite_dataset(suite_dir, &entry.kind, entry.severity)?;
        let err = evaluate_error(model, &sub)?;
        cells.insert((entry.kind.clone(), entry.severity), err);
    }
    let table = ErrorTable {
        model_id: model_id.to_string(),
        clean_error: evaluate_error(model, clean)?,
        cells,
    };
    table.validate(&manifest.kinds())?;
    Ok(table)
}

/// CE/mCE/RmCE of a model against a baseline over one corruption set.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub model: ErrorTable,
    pub baseline: ErrorTable,
    pub ce: BTreeMap<String, f64>,
    pub mce: f64,
    pub rmce: BTreeMap<String, f64>,
    pub relative_mce: f64,
}

pub fn build_report(model: ErrorTable, baseline: ErrorTable) -> Result<EvalReport> {
    let kinds = model.kinds();
    if kinds != baseline.kinds() {
        return Err(MetricsError::Incompatible(format!(
            "model covers {kinds:?} but baseline covers {:?}",
            baseline.kinds()
        )));
    }
    if kinds.is_empty() {
        return Err(MetricsError::EmptyInput("corruption kinds"));
    }
    model.validate(&kinds)?;
    baseline.validate(&kinds)?;
    let mut ce = BTreeMap::new();
    let mut rmce = BTreeMap::new();
    for kind in &kinds {
        let ef = model.severity_errors(kind)?;
        let eb = baseline.severity_errors(kind)?;
        ce.insert(kind.clone(), corruption_error(&ef, &eb)?);
        rmce.insert(
            kind.clone(),
            relative_mce(&ef, model.clean_error, &eb, baseline.clean_error)?,
        );
    }
    let ce_values: Vec<f64> = kinds.iter().map(|k| ce[k]).collect();
    let rmce_values: Vec<f64> = kinds.iter().map(|k| rmce[k]).collect();
    let mce_value = mce(&ce_values)?;
    let relative = mce(&rmce_values)?;
    Ok(EvalReport {
        model,
        baseline,
        ce,
        mce: mce_value,
        rmce,
        relative_mce: relative,
    })
}

/// CSV rows `corruption,severity,err_model,err_base,CE,RmCE` with footer
/// rows for clean error, mCE, and relative mCE. Rates carry 6 digits.
pub fn write_report_csv<W: Write>(report: &EvalReport, w: &mut W) -> Result<()> {
    writeln!(w, "corruption,severity,err_model,err_base,CE,RmCE")?;
    for kind in report.model.kinds() {
        for severity in 1..=5 {
            let ef = report.model.cells[&(kind.clone(), severity)];
            let eb = report.baseline.cells[&(kind.clone(), severity)];
            writeln!(
                w,
                "{kind},{severity},{ef:.6},{eb:.6},{:.6},{:.6}",
                report.ce[&kind], report.rmce[&kind]
            )?;
        }
    }
    writeln!(
        w,
        "clean_error,,{:.6},{:.6},,",
        report.model.clean_error, report.baseline.clean_error
    )?;
    writeln!(w, "mCE,,,,{:.6},", report.mce)?;
    writeln!(w, "relative_mCE,,,,,{:.6}", report.relative_mce)?;
    Ok(())
}

/// Top-1 accuracy on an equal-proportion union of clean, adversarial, and
/// corrupted examples. All three sets are truncated to the smallest size
/// and the union is shuffled with `seed`.
pub fn mixed_test(
    model: &Model,
    clean: &Dataset,
    adversarial: &Dataset,
    corrupted: &Dataset,
    seed: u64,
) -> Result<f64> {
    for (ds, name) in [
        (clean, "clean"),
        (adversarial, "adversarial"),
        (corrupted, "corrupted"),
    ] {
        if ds.is_empty() {
            return Err(MetricsError::EmptyInput(match name {
                "clean" => "clean set",
                "adversarial" => "adversarial set",
                _ => "corrupted set",
            }));
        }
    }
    let shape = clean.example_shape();
    if adversarial.example_shape() != shape || corrupted.example_shape() != shape {
        return Err(MetricsError::Incompatible(
            "mixed test sets have different example shapes".into(),
        ));
    }
    let n = clean.len().min(adversarial.len()).min(corrupted.len());
    let stride: usize = shape.iter().product();
    let mut images = Vec::with_capacity(3 * n * stride);
    let mut labels = Vec::with_capacity(3 * n);
    for ds in [clean, adversarial, corrupted] {
        images.extend_from_slice(&ds.images.data()[..n * stride]);
        labels.extend_from_slice(&ds.labels[..n]);
    }
    let mut order: Vec<usize> = (0..3 * n).collect();
    let mut rng = Rng::from_label(seed, "mixed-test-shuffle");
    rng.shuffle(&mut order);

    let mut shape_full = vec![3 * n];
    shape_full.extend_from_slice(&shape);
    let mut shuffled = Vec::with_capacity(images.len());
    let mut shuffled_labels = Vec::with_capacity(labels.len());
    for &i in &order {
        shuffled.extend_from_slice(&images[i * stride..(i + 1) * stride]);
        shuffled_labels.push(labels[i]);
    }
    let union = Dataset::new(
        pdalab_tensor::Tensor::new(shape_full, shuffled).map_err(DataError::Tensor)?,
        shuffled_labels,
        clean.num_classes,
        "mixed",
        "mixed-test",
    )?;
    Ok(1.0 - evaluate_error(model, &union)?)
}

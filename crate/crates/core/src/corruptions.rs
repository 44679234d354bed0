//! Procedural image corruptions at five severities each.
//!
//! Twelve kinds across four groups: Noise {gaussian, shot, impulse},
//! Blur {defocus, motion, zoom}, Weather {brightness, fog}, and
//! Digital {contrast, elastic, pixelate, jpeg}. Every kind sits behind the
//! [`Corruption`] trait and is looked up by name; severity parameter tables
//! are fixed constants, strictly monotone in distortion strength.
//!
//! Stochastic kinds are deterministic given `(kind, severity, seed)`; the
//! suite builder derives one seed per `(kind, severity, image index)`, so a
//! corrupted image does not depend on dataset order.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use pdalab_tensor::{Tensor, TensorError};

use crate::data::{dataset_to_bytes, load_dataset, DataError, Dataset};
use crate::rng::{fnv1a64, Rng};

#[derive(Debug)]
pub enum CorruptionError {
    UnknownKind(String),
    BadSeverity(usize),
    NotImages { shape: Vec<usize> },
    Data(DataError),
    Tensor(TensorError),
    Io(std::io::Error),
    BadManifest(String),
}

impl fmt::Display for CorruptionError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::UnknownKind(name) => write!(f, "unknown corruption '{name}'"),
            Self::BadSeverity(s) => write!(f, "severity {s} outside 1..=5"),
            Self::NotImages { shape } => {
                write!(f, "corruptions need [C,H,W] images, got shape {shape:?}")
            }
            Self::Data(e) => write!(f, "{e}"),
            Self::Tensor(e) => write!(f, "{e}"),
            Self::Io(e) => write!(f, "suite io: {e}"),
            Self::BadManifest(msg) => write!(f, "bad suite manifest: {msg}"),
        }
    }
}

impl std::error::Error for CorruptionError {}

impl From<DataError> for CorruptionError {
    fn from(e: DataError) -> Self {
        Self::Data(e)
    }
}
impl From<TensorError> for CorruptionError {
    fn from(e: TensorError) -> Self {
        Self::Tensor(e)
    }
}
impl From<std::io::Error> for CorruptionError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, CorruptionError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorruptionGroup {
    Noise,
    Blur,
    Weather,
    Digital,
}

impl CorruptionGroup {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Noise => "noise",
            Self::Blur => "blur",
            Self::Weather => "weather",
            Self::Digital => "digital",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "noise" => Some(Self::Noise),
            "blur" => Some(Self::Blur),
            "weather" => Some(Self::Weather),
            "digital" => Some(Self::Digital),
            _ => None,
        }
    }
}

/// One corruption at `severity` with a per-image seed.
#[derive(Debug, Clone)]
pub struct CorruptionSpec {
    pub kind: String,
    pub severity: usize,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn new(kind: impl Into<String>, severity: usize, seed: u64) -> Self {
        Self {
            kind: kind.into(),
            severity,
            seed,
        }
    }

    /// Seed for one image of a suite: corruption of image `i` is independent
    /// of dataset order.
    pub fn for_image(base_seed: u64, kind: &str, severity: usize, index: usize) -> Self {
        let label = format!("{kind}/{severity}/{index}");
        Self::new(kind, severity, base_seed ^ fnv1a64(label.as_bytes()))
    }
}

/// A procedural corruption family with a five-entry severity table.
pub trait Corruption {
    fn name(&self) -> &'static str;
    fn group(&self) -> CorruptionGroup;
    /// Severity table entry (1-based severity).
    fn parameter(&self, severity: usize) -> f64;
    fn apply(&self, image: &Image, param: f64, rng: &mut Rng) -> Vec<f64>;
}

/// Borrowed view of one `[C,H,W]` image.
pub struct Image<'a> {
    pub data: &'a [f64],
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

pub fn corruption_registry() -> Vec<Box<dyn Corruption>> {
    vec![
        Box::new(GaussianNoise),
        Box::new(ShotNoise),
        Box::new(ImpulseNoise),
        Box::new(DefocusBlur),
        Box::new(MotionBlur),
        Box::new(ZoomBlur),
        Box::new(Brightness),
        Box::new(Fog),
        Box::new(Contrast),
        Box::new(Elastic),
        Box::new(Pixelate),
        Box::new(Jpeg),
    ]
}

pub fn corruption_names() -> Vec<&'static str> {
    corruption_registry().iter().map(|c| c.name()).collect()
}

pub fn build_corruption(name: &str) -> Result<Box<dyn Corruption>> {
    corruption_registry()
        .into_iter()
        .find(|c| c.name() == name)
        .ok_or_else(|| CorruptionError::UnknownKind(name.to_string()))
}

/// Kinds belonging to `group`, in registry order.
pub fn kinds_in_group(group: CorruptionGroup) -> Vec<&'static str> {
    corruption_registry()
        .iter()
        .filter(|c| c.group() == group)
        .map(|c| c.name())
        .collect()
}

/// Corrupt one `[C,H,W]` image in `[0,1]`. Output stays in `[0,1]` with the
/// input's shape.
pub fn corrupt(image: &Tensor, spec: &CorruptionSpec) -> Result<Tensor> {
    let corruption = build_corruption(&spec.kind)?;
    if !(1..=5).contains(&spec.severity) {
        return Err(CorruptionError::BadSeverity(spec.severity));
    }
    let &[c, h, w] = image.shape() else {
        return Err(CorruptionError::NotImages {
            shape: image.shape().to_vec(),
        });
    };
    let view = Image {
        data: image.data(),
        channels: c,
        height: h,
        width: w,
    };
    let param = corruption.parameter(spec.severity);
    let mut rng = Rng::seeded(spec.seed);
    let mut out = corruption.apply(&view, param, &mut rng);
    for v in out.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(Tensor::new(image.shape().to_vec(), out)?)
}

// ── image helpers ────────────────────────────────────────────────────

fn clamp_idx(v: i64, max: usize) -> usize {
    v.clamp(0, max as i64 - 1) as usize
}

/// Convolve each channel with sparse taps under clamp-to-edge padding.
fn conv_taps(img: &Image, taps: &[(i64, i64, f64)]) -> Vec<f64> {
    let (c, h, w) = (img.channels, img.height, img.width);
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        let plane = &img.data[ch * h * w..(ch + 1) * h * w];
        let out_plane = &mut out[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for &(dy, dx, wt) in taps {
                    let sy = clamp_idx(y as i64 + dy, h);
                    let sx = clamp_idx(x as i64 + dx, w);
                    acc += wt * plane[sy * w + sx];
                }
                out_plane[y * w + x] = acc;
            }
        }
    }
    out
}

/// Bilinear sample of one plane at fractional pixel-index coordinates,
/// clamped to the image border.
fn bilinear(plane: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let y = y.clamp(0.0, h as f64 - 1.0);
    let x = x.clamp(0.0, w as f64 - 1.0);
    let y0 = y.floor() as usize;
    let x0 = x.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let fy = y - y0 as f64;
    let fx = x - x0 as f64;
    let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
    let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
    top * (1.0 - fy) + bottom * fy
}

// ── corruption kinds ─────────────────────────────────────────────────

pub struct GaussianNoise;

impl Corruption for GaussianNoise {
    fn name(&self) -> &'static str {
        "gaussian_noise"
    }
    fn group(&self) -> CorruptionGroup {
        CorruptionGroup::Noise
    }
    fn parameter(&self, severity: usize) -> f64 {
        [0.04, 0.06, 0.08, 0.10, 0.14][severity - 1]
    }
    fn apply(&self, img: &Image, sigma: f64, rng: &mut Rng) -> Vec<f64> {
        img.data.iter().map(|&v| v + sigma * rng.normal()).collect()
    }
}

pub struct ShotNoise;

impl Corruption for ShotNoise {
    fn name(&self) -> &'static str {
        "shot_noise"
    }
    fn group(&self) -> CorruptionGroup {
        CorruptionGroup::Noise
    }
    fn parameter(&self, severity: usize) -> f64 {
        [60.0, 25.0, 12.0, 5.0, 3.0][severity - 1]
    }
    fn apply(&self, img: &Image, scale: f64, rng: &mut Rng) -> Vec<f64> {
        img.data
            .iter()
            .map(|&v| rng.poisson(v * scale) as f64 / scale)
            .collect()
    }
}

pub struct ImpulseNoise;

impl Corruption for ImpulseNoise {
    fn name(&self) -> &'static str {
        "impulse_noise"
    }
    fn group(&self) -> CorruptionGroup {
        CorruptionGroup::Noise
    }
    fn parameter(&self, severity: usize) -> f64 {
        [0.03, 0.06, 0.09, 0.17, 0.27][severity - 1]
    }
    fn apply(&self, img: &Image, fraction: f64, rng: &mut Rng) -> Vec<f64> {
        img.data
            .iter()
            .map(|&v| {
                if rng.uniform() < fraction {
                    if rng.uniform() < 0.5 {
                        0.0
                    } else {
                        1.0
                    }
                } else {
                    v
                }
            })
            .collect()
    }
}

pub struct DefocusBlur;

impl Corruption for DefocusBlur {
    fn name(&self) -> &'static str {
        "defocus_blur"
    }
    fn group(&self) -> CorruptionGroup {
        CorruptionGroup::Blur
    }
    fn parameter(&self, severity: usize) -> f64 {
        [1.0, 2.0, 3.0, 4.0, 6.0][severity - 1]
    }
    fn apply(&self, img: &Image, radius: f64, _rng: &mut Rng) -> Vec<f64> {
        let r = radius as i64;
        let mut taps = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                if (dy * dy + dx * dx) as f64 <= radius * radius {
                    taps.push((dy, dx, 1.0));
                }
            }
        }
        let norm = 1.0 / taps.len() as f64;
        for t in taps.iter_mut() {
            t.2 = norm;
        }
        conv_taps(img, &taps)
    }
}

pub struct MotionBlur;

impl Corruption for MotionBlur {
    fn name(&self) -> &'static str {
        "motion_blur"
    }
    fn group(&self) -> CorruptionGroup {
        CorruptionGroup::Blur
    }
    fn parameter(&self, severity: usize) -> f64 {
        [3.0, 5.0, 7.0, 9.0, 11.0][severity - 1]
    }
    fn apply(&self, img: &Image, length: f64, _rng: &mut Rng) -> Vec<f64> {
        // diagonal streak at 45°
        let half = (length as i64 - 1) / 2;
        let weight = 1.0 / (2 * half + 1) as f64;
        let taps: Vec<(i64, i64, f64)> = (-half..=half).map(|i| (i, i, weight)).collect();
        conv_taps(img, &taps)
    }
}

pub struct ZoomBlur;

impl Corruption for ZoomBlur {
    fn name(&self) -> &'static str {
        "zoom_blur"
    }
    fn group(&self) -> CorruptionGroup {
        CorruptionGroup::Blur
    }
    fn parameter(&self, severity: usize) -> f64 {
        [1.06, 1.11, 1.16, 1.21, 1.26][severity - 1]
    }
    fn apply(&self, img: &Image, max_factor: f64, _rng: &mut Rng) -> Vec<f64> {
        // average of four zooms from 1.0 to the maximum factor
        let (c, h, w) = (img.channels, img.height, img.width);
        let cy = (h as f64 - 1.0) / 2.0;
        let cx = (w as f64 - 1.0) / 2.0;
        let scales: Vec<f64> = (0..4).map(|j| 1.0 + (max_factor - 1.0) * j as f64 / 3.0).collect();
        let mut out = vec![0.0; c * h * w];
        for ch in 0..c {
            let plane = &img.data[ch * h * w..(ch + 1) * h * w];
            let out_plane = &mut out[ch * h * w..(ch + 1) * h * w];
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for &s in &scales {
                        let sy = cy + (y as f64 - cy) / s;
                        let sx = cx + (x as f64 - cx) / s;
                        acc += bilinear(plane, h, w, sy, sx);
                    }
                    out_plane[y * w + x] = acc / scales.len() as f64;
                }
            }
        }
        out
    }
}

pub struct Brightness;

impl Corruption for Brightness {
    fn name(&self) -> &'static str {
        "brightness"
    }
    fn group(&self) -> CorruptionGroup {
        CorruptionGroup::Weather
    }
    fn parameter(&self, severity: usize) -> f64 {
        [0.1, 0.2, 0.3, 0.4, 0.5][severity - 1]
    }
    fn apply(&self, img: &Image, delta: f64, _rng: &mut Rng) -> Vec<f64> {
        img.data.iter().map(|&v| v + delta).collect()
    }
}

pub struct Fog;

impl Fog {
    /// Diamond-square plasma field, min-max normalized to `[0,1]`.
    fn plasma(h: usize, w: usize, rng: &mut Rng) -> Vec<f64> {
        let side = (h.max(w) - 1).next_power_of_two() + 1;
        let mut grid = vec![0.0; side * side];
        let last = side - 1;
        for &(y, x) in &[(0, 0), (0, last), (last, 0), (last, last)] {
            grid[y * side + x] = rng.uniform();
        }
        let mut step = last;
        let mut rough = 0.5;
        while step > 1 {
            let half = step / 2;
            // diamond
            for y in (half..side).step_by(step) {
                for x in (half..side).step_by(step) {
                    let avg = (grid[(y - half) * side + (x - half)]
                        + grid[(y - half) * side + (x + half)]
                        + grid[(y + half) * side + (x - half)]
                        + grid[(y + half) * side + (x + half)])
                        / 4.0;
                    grid[y * side + x] = avg + rng.range(-rough, rough);
                }
            }
            // square
            for y in (0..side).step_by(half) {
                let x_start = if (y / half) % 2 == 0 { half } else { 0 };
                for x in (x_start..side).step_by(step) {
                    let mut sum = 0.0;
                    let mut count = 0.0;
                    for (dy, dx) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                        let sy = y as i64 + dy * half as i64;
                        let sx = x as i64 + dx * half as i64;
                        if sy >= 0 && sx >= 0 && (sy as usize) < side && (sx as usize) < side {
                            sum += grid[sy as usize * side + sx as usize];
                            count += 1.0;
                        }
                    }
                    grid[y * side + x] = sum / count + rng.range(-rough, rough);
                }
            }
            step = half;
            rough *= 0.5;
        }
        let min = grid.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = grid.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = (max - min).max(1e-12);
        let mut out = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                out[y * w + x] = (grid[y * side + x] - min) / span;
            }
        }
        out
    }
}

impl Corruption for Fog {
    fn name(&self) -> &'static str {
        "fog"
    }
    fn group(&self) -> CorruptionGroup {
        CorruptionGroup::Weather
    }
    fn parameter(&self, severity: usize) -> f64 {
        [0.15, 0.25, 0.35, 0.45, 0.55][severity - 1]
    }
    fn apply(&self, img: &Image, blend: f64, rng: &mut Rng) -> Vec<f64> {
        let (c, h, w) = (img.channels, img.height, img.width);
        let fog = Self::plasma(h, w, rng);
        let mut out = Vec::with_capacity(c * h * w);
        for ch in 0..c {
            let plane = &img.data[ch * h * w..(ch + 1) * h * w];
            for (v, f) in plane.iter().zip(&fog) {
                out.push((1.0 - blend) * v + blend * f);
            }
        }
        out
    }
}

pub struct Contrast;

impl Corruption for Contrast {
    fn name(&self) -> &'static str {
        "contrast"
    }
    fn group(&self) -> CorruptionGroup {
        CorruptionGroup::Digital
    }
    fn parameter(&self, severity: usize) -> f64 {
        [0.75, 0.5, 0.4, 0.3, 0.15][severity - 1]
    }
    fn apply(&self, img: &Image, factor: f64, _rng: &mut Rng) -> Vec<f64> {
        img.data.iter().map(|&v| 0.5 + (v - 0.5) * factor).collect()
    }
}

pub struct Elastic;

impl Corruption for Elastic {
    fn name(&self) -> &'static str {
        "elastic"
    }
    fn group(&self) -> CorruptionGroup {
        CorruptionGroup::Digital
    }
    fn parameter(&self, severity: usize) -> f64 {
        [1.0, 2.0, 3.0, 4.0, 6.0][severity - 1]
    }
    fn apply(&self, img: &Image, magnitude: f64, rng: &mut Rng) -> Vec<f64> {
        let (c, h, w) = (img.channels, img.height, img.width);
        // smoothed random displacement field, scaled to a max magnitude
        let mut dy: Vec<f64> = (0..h * w).map(|_| rng.normal()).collect();
        let mut dx: Vec<f64> = (0..h * w).map(|_| rng.normal()).collect();
        for field in [&mut dy, &mut dx] {
            for _ in 0..3 {
                box_blur(field, h, w, 2);
            }
        }
        let max_norm = dy
            .iter()
            .zip(&dx)
            .map(|(a, b)| (a * a + b * b).sqrt())
            .fold(0.0f64, f64::max)
            .max(1e-12);
        let scale = magnitude / max_norm;
        let mut out = vec![0.0; c * h * w];
        for ch in 0..c {
            let plane = &img.data[ch * h * w..(ch + 1) * h * w];
            let out_plane = &mut out[ch * h * w..(ch + 1) * h * w];
            for y in 0..h {
                for x in 0..w {
                    let sy = y as f64 + dy[y * w + x] * scale;
                    let sx = x as f64 + dx[y * w + x] * scale;
                    out_plane[y * w + x] = bilinear(plane, h, w, sy, sx);
                }
            }
        }
        out
    }
}

fn box_blur(field: &mut [f64], h: usize, w: usize, radius: i64) {
    let src = field.to_vec();
    let count = (2 * radius + 1) as f64;
    // horizontal then vertical pass
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for d in -radius..=radius {
                acc += src[y * w + clamp_idx(x as i64 + d, w)];
            }
            tmp[y * w + x] = acc / count;
        }
    }
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for d in -radius..=radius {
                acc += tmp[clamp_idx(y as i64 + d, h) * w + x];
            }
            field[y * w + x] = acc / count;
        }
    }
}

pub struct Pixelate;

impl Corruption for Pixelate {
    fn name(&self) -> &'static str {
        "pixelate"
    }
    fn group(&self) -> CorruptionGroup {
        CorruptionGroup::Digital
    }
    fn parameter(&self, severity: usize) -> f64 {
        [0.9, 0.8, 0.7, 0.6, 0.4][severity - 1]
    }
    fn apply(&self, img: &Image, factor: f64, _rng: &mut Rng) -> Vec<f64> {
        // piecewise-constant projection: every cell of a sh×sw partition is
        // replaced by its own box average, re-upsampling to the input size
        let (c, h, w) = (img.channels, img.height, img.width);
        let sh = ((h as f64 * factor) as usize).max(1);
        let sw = ((w as f64 * factor) as usize).max(1);
        let mut out = vec![0.0; c * h * w];
        for ch in 0..c {
            let plane = &img.data[ch * h * w..(ch + 1) * h * w];
            let out_plane = &mut out[ch * h * w..(ch + 1) * h * w];
            for sy in 0..sh {
                let y0 = sy * h / sh;
                let y1 = ((sy + 1) * h / sh).max(y0 + 1);
                for sx in 0..sw {
                    let x0 = sx * w / sw;
                    let x1 = ((sx + 1) * w / sw).max(x0 + 1);
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        for x in x0..x1 {
                            acc += plane[y * w + x];
                        }
                    }
                    let avg = acc / ((y1 - y0) * (x1 - x0)) as f64;
                    for y in y0..y1 {
                        for x in x0..x1 {
                            out_plane[y * w + x] = avg;
                        }
                    }
                }
            }
        }
        out
    }
}

pub struct Jpeg;

impl Jpeg {
    const LUMA_QUANT: [f64; 64] = [
        16.0, 11.0, 10.0, 16.0, 24.0, 40.0, 51.0, 61.0, //
        12.0, 12.0, 14.0, 19.0, 26.0, 58.0, 60.0, 55.0, //
        14.0, 13.0, 16.0, 24.0, 40.0, 57.0, 69.0, 56.0, //
        14.0, 17.0, 22.0, 29.0, 51.0, 87.0, 80.0, 62.0, //
        18.0, 22.0, 37.0, 56.0, 68.0, 109.0, 103.0, 77.0, //
        24.0, 35.0, 55.0, 64.0, 81.0, 104.0, 113.0, 92.0, //
        49.0, 64.0, 78.0, 87.0, 103.0, 121.0, 120.0, 101.0, //
        72.0, 92.0, 95.0, 98.0, 112.0, 100.0, 103.0, 99.0,
    ];

    fn quant_table(quality: f64) -> [f64; 64] {
        let s = if quality < 50.0 {
            5000.0 / quality
        } else {
            200.0 - 2.0 * quality
        };
        let mut q = [0.0; 64];
        for (out, &base) in q.iter_mut().zip(Self::LUMA_QUANT.iter()) {
            *out = ((base * s + 50.0) / 100.0).floor().clamp(1.0, 255.0);
        }
        q
    }

    fn cos_table() -> [[f64; 8]; 8] {
        let mut t = [[0.0; 8]; 8];
        for (u, row) in t.iter_mut().enumerate() {
            for (x, v) in row.iter_mut().enumerate() {
                *v = ((2.0 * x as f64 + 1.0) * u as f64 * std::f64::consts::PI / 16.0).cos();
            }
        }
        t
    }
}

impl Corruption for Jpeg {
    fn name(&self) -> &'static str {
        "jpeg"
    }
    fn group(&self) -> CorruptionGroup {
        CorruptionGroup::Digital
    }
    fn parameter(&self, severity: usize) -> f64 {
        [25.0, 18.0, 15.0, 10.0, 7.0][severity - 1]
    }
    fn apply(&self, img: &Image, quality: f64, _rng: &mut Rng) -> Vec<f64> {
        let (c, h, w) = (img.channels, img.height, img.width);
        let quant = Self::quant_table(quality);
        let cos = Self::cos_table();
        let alpha = |u: usize| if u == 0 { std::f64::consts::FRAC_1_SQRT_2 } else { 1.0 };
        let bh = h.div_ceil(8);
        let bw = w.div_ceil(8);
        let mut out = vec![0.0; c * h * w];
        for ch in 0..c {
            let plane = &img.data[ch * h * w..(ch + 1) * h * w];
            let out_plane = &mut out[ch * h * w..(ch + 1) * h * w];
            for by in 0..bh {
                for bx in 0..bw {
                    // gather the 8×8 block with edge replication
                    let mut block = [0.0; 64];
                    for y in 0..8 {
                        for x in 0..8 {
                            let sy = (by * 8 + y).min(h - 1);
                            let sx = (bx * 8 + x).min(w - 1);
                            block[y * 8 + x] = plane[sy * w + sx] * 255.0 - 128.0;
                        }
                    }
                    // forward DCT-II, quantize, inverse
                    let mut coeff = [0.0; 64];
                    for u in 0..8 {
                        for v in 0..8 {
                            let mut acc = 0.0;
                            for y in 0..8 {
                                for x in 0..8 {
                                    acc += block[y * 8 + x] * cos[u][y] * cos[v][x];
                                }
                            }
                            let q = quant[u * 8 + v];
                            let val = 0.25 * alpha(u) * alpha(v) * acc;
                            coeff[u * 8 + v] = (val / q).round() * q;
                        }
                    }
                    for y in 0..8 {
                        for x in 0..8 {
                            let oy = by * 8 + y;
                            let ox = bx * 8 + x;
                            if oy >= h || ox >= w {
                                continue;
                            }
                            let mut acc = 0.0;
                            for u in 0..8 {
                                for v in 0..8 {
                                    acc += alpha(u) * alpha(v) * coeff[u * 8 + v] * cos[u][y] * cos[v][x];
                                }
                            }
                            out_plane[oy * w + ox] = (0.25 * acc + 128.0) / 255.0;
                        }
                    }
                }
            }
        }
        out
    }
}

// ── suite building ───────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteEntry {
    pub kind: String,
    pub severity: usize,
    pub param: f64,
    pub count: usize,
    pub checksum: u64,
}

#[derive(Debug, Clone, Default)]
pub struct SuiteManifest {
    pub seed: u64,
    pub source: String,
    pub entries: Vec<SuiteEntry>,
}

impl SuiteManifest {
    pub fn kinds(&self) -> Vec<String> {
        let mut kinds = Vec::new();
        for e in &self.entries {
            if !kinds.contains(&e.kind) {
                kinds.push(e.kind.clone());
            }
        }
        kinds
    }
}

/// Path of one corrupted sub-dataset inside a suite directory.
pub fn suite_data_path(dir: &Path, kind: &str, severity: usize) -> PathBuf {
    dir.join(kind).join(severity.to_string()).join("data.bin")
}

/// Corrupt `dataset` with every requested kind at severities 1..=5 and write
/// `<out>/<kind>/<severity>/data.bin` plus `manifest.txt`. Rebuilding with
/// one seed is byte-identical.
pub fn build_corruption_suite(
    dataset: &Dataset,
    kinds: &[&str],
    seed: u64,
    out_dir: &Path,
) -> Result<SuiteManifest> {
    if dataset.is_empty() {
        return Err(CorruptionError::Data(DataError::InvalidDataset(
            "empty dataset".into(),
        )));
    }
    let &[n, c, h, w] = dataset.images.shape() else {
        return Err(CorruptionError::NotImages {
            shape: dataset.images.shape().to_vec(),
        });
    };
    let mut manifest = SuiteManifest {
        seed,
        source: dataset.provenance.clone(),
        entries: Vec::new(),
    };
    let stride = c * h * w;
    for kind in kinds {
        let corruption = build_corruption(kind)?;
        for severity in 1..=5 {
            let mut data = Vec::with_capacity(n * stride);
            for i in 0..n {
                let image = Tensor::new(
                    vec![c, h, w],
                    dataset.images.data()[i * stride..(i + 1) * stride].to_vec(),
                )?;
                let spec = CorruptionSpec::for_image(seed, kind, severity, i);
                let corrupted = corrupt(&image, &spec)?;
                data.extend_from_slice(corrupted.data());
            }
            let sub = Dataset::new(
                Tensor::new(vec![n, c, h, w], data)?,
                dataset.labels.clone(),
                dataset.num_classes,
                dataset.split.clone(),
                format!("{}+{}:{}", dataset.provenance, kind, severity),
            )?;
            let bytes = dataset_to_bytes(&sub)?;
            let checksum = fnv1a64(&bytes);
            let path = suite_data_path(out_dir, kind, severity);
            fs::create_dir_all(path.parent().expect("suite path has a parent"))?;
            fs::write(&path, &bytes)?;
            manifest.entries.push(SuiteEntry {
                kind: kind.to_string(),
                severity,
                param: corruption.parameter(severity),
                count: n,
                checksum,
            });
        }
    }
    let mut text = String::new();
    text.push_str(&format!("seed={seed}\n"));
    text.push_str(&format!("source={}\n", manifest.source));
    text.push_str("kind,severity,param,count,checksum\n");
    for e in &manifest.entries {
        text.push_str(&format!(
            "{},{},{:.6},{},{:016x}\n",
            e.kind, e.severity, e.param, e.count, e.checksum
        ));
    }
    fs::write(out_dir.join("manifest.txt"), text)?;
    Ok(manifest)
}

/// Parse `<dir>/manifest.txt`.
pub fn load_suite_manifest(dir: &Path) -> Result<SuiteManifest> {
    let text = fs::read_to_string(dir.join("manifest.txt"))?;
    let mut manifest = SuiteManifest::default();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line == "kind,severity,param,count,checksum" {
            continue;
        }
        if let Some(v) = line.strip_prefix("seed=") {
            manifest.seed = v
                .parse()
                .map_err(|_| CorruptionError::BadManifest(format!("bad seed '{v}'")))?;
            continue;
        }
        if let Some(v) = line.strip_prefix("source=") {
            manifest.source = v.to_string();
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(CorruptionError::BadManifest(format!("bad line '{line}'")));
        }
        manifest.entries.push(SuiteEntry {
            kind: fields[0].to_string(),
            severity: fields[1]
                .parse()
                .map_err(|_| CorruptionError::BadManifest(format!("bad severity '{}'", fields[1])))?,
            param: fields[2]
                .parse()
                .map_err(|_| CorruptionError::BadManifest(format!("bad param '{}'", fields[2])))?,
            count: fields[3]
                .parse()
                .map_err(|_| CorruptionError::BadManifest(format!("bad count '{}'", fields[3])))?,
            checksum: u64::from_str_radix(fields[4], 16)
                .map_err(|_| CorruptionError::BadManifest(format!("bad checksum '{}'", fields[4])))?,
        });
    }
    Ok(manifest)
}

/// Load one corrupted sub-dataset of a suite.
pub fn load_suite_dataset(dir: &Path, kind: &str, severity: usize) -> Result<Dataset> {
    Ok(load_dataset(suite_data_path(dir, kind, severity))?)
}

//! Datasets: synthetic generators, the IDX codec, and the on-disk dataset
//! container.
//!
//! Images are `[N,C,H,W]` tensors in `[0,1]`; blob data is `[N,d]` feature
//! vectors in the same range so every attack and corruption stays in the
//! pixel domain. Range and label invariants are enforced at every load and
//! generation boundary.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use pdalab_tensor::{read_tensor, write_tensor, Tensor, TensorError, TensorIoError};

use crate::rng::Rng;

#[derive(Debug)]
pub enum DataError {
    Io(std::io::Error),
    Tensor(TensorError),
    TensorIo(TensorIoError),
    /// IDX magic did not start with 0x00 0x00.
    BadIdxMagic([u8; 4]),
    UnsupportedIdxDtype(u8),
    Truncated { expected_bytes: usize, actual_bytes: usize },
    InvalidDataset(String),
    BadSpec(String),
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Io(e) => write!(f, "dataset io: {e}"),
            Self::Tensor(e) => write!(f, "dataset tensor: {e}"),
            Self::TensorIo(e) => write!(f, "dataset tensor io: {e}"),
            Self::BadIdxMagic(m) => write!(f, "bad IDX magic {m:?}"),
            Self::UnsupportedIdxDtype(d) => {
                write!(f, "unsupported IDX dtype 0x{d:02x}, only u8 (0x08) is supported")
            }
            Self::Truncated {
                expected_bytes,
                actual_bytes,
            } => write!(
                f,
                "truncated payload: expected {expected_bytes} bytes, got {actual_bytes}"
            ),
            Self::InvalidDataset(msg) => write!(f, "invalid dataset: {msg}"),
            Self::BadSpec(msg) => write!(f, "bad dataset spec: {msg}"),
        }
    }
}

impl std::error::Error for DataError {}

impl From<std::io::Error> for DataError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e)
    }
}
impl From<TensorError> for DataError {
    fn from(e: TensorError) -> Self {
        Self::Tensor(e)
    }
}
impl From<TensorIoError> for DataError {
    fn from(e: TensorIoError) -> Self {
        Self::TensorIo(e)
    }
}

pub type Result<T> = std::result::Result<T, DataError>;

/// A labeled dataset with values in `[0,1]`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub split: String,
    pub provenance: String,
}

impl Dataset {
    pub fn new(
        images: Tensor,
        labels: Vec<usize>,
        num_classes: usize,
        split: impl Into<String>,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        let ds = Self {
            images,
            labels,
            num_classes,
            split: split.into(),
            provenance: provenance.into(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if n == 0 {
            return Err(DataError::InvalidDataset("empty dataset".into()));
        }
        if self.images.rank() < 2 {
            return Err(DataError::InvalidDataset(format!(
                "images must have a batch dimension, got shape {:?}",
                self.images.shape()
            )));
        }
        if self.labels.len() != n {
            return Err(DataError::InvalidDataset(format!(
                "{} images but {} labels",
                n,
                self.labels.len()
            )));
        }
        if self.num_classes < 2 {
            return Err(DataError::InvalidDataset(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if let Some(&bad) = self.labels.iter().find(|&&y| y >= self.num_classes) {
            return Err(DataError::InvalidDataset(format!(
                "label {bad} out of range for {} classes",
                self.num_classes
            )));
        }
        if self
            .images
            .data()
            .iter()
            .any(|&v| !(0.0..=1.0).contains(&v))
        {
            return Err(DataError::InvalidDataset(
                "pixel values outside [0,1]".into(),
            ));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per-example shape, without the batch dimension.
    pub fn example_shape(&self) -> Vec<usize> {
        self.images.shape()[1..].to_vec()
    }

    pub fn features_per_example(&self) -> usize {
        self.example_shape().iter().product()
    }

    /// Copy of rows `[start, end)` with their labels.
    pub fn batch(&self, start: usize, end: usize) -> (Tensor, Vec<usize>) {
        let stride = self.features_per_example();
        let mut shape = self.images.shape().to_vec();
        shape[0] = end - start;
        let data = self.images.data()[start * stride..end * stride].to_vec();
        (
            Tensor::new(shape, data).expect("batch shape"),
            self.labels[start..end].to_vec(),
        )
    }

    /// Copy of the selected rows, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let stride = self.features_per_example();
        let mut data = Vec::with_capacity(indices.len() * stride);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * stride..(i + 1) * stride]);
            labels.push(self.labels[i]);
        }
        let mut shape = self.images.shape().to_vec();
        shape[0] = indices.len();
        Dataset::new(
            Tensor::new(shape, data)?,
            labels,
            self.num_classes,
            self.split.clone(),
            format!("{}#subset", self.provenance),
        )
    }

    pub fn take(&self, n: usize) -> Result<Self> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }
}

// ── synthetic generators ─────────────────────────────────────────────

/// Gaussian class clusters with separation-scaled centers, clipped to `[0,1]`.
pub fn gen_blobs(
    n: usize,
    d: usize,
    classes: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes < 2 || n < classes || d < 1 || !separation.is_finite() || separation < 0.0 {
        return Err(DataError::InvalidDataset(format!(
            "degenerate blob parameters: n={n}, d={d}, classes={classes}, separation={separation}"
        )));
    }
    let sigma = 0.05;
    let radius = (0.05 * separation).min(0.4);
    let mut centers = vec![vec![0.5; d]; classes];
    for (c, center) in centers.iter_mut().enumerate() {
        if d == 1 {
            center[0] = 0.5 + radius * (2.0 * c as f64 / (classes - 1) as f64 - 1.0);
        } else {
            let theta = 2.0 * std::f64::consts::PI * c as f64 / classes as f64;
            center[0] = 0.5 + radius * theta.cos();
            center[1] = 0.5 + radius * theta.sin();
        }
    }
    let mut rng = Rng::from_label(seed, "gen-blobs");
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % classes;
        labels.push(class);
        for j in 0..d {
            let v = centers[class][j] + sigma * rng.normal();
            data.push(v.clamp(0.0, 1.0));
        }
    }
    Dataset::new(
        Tensor::new(vec![n, d], data)?,
        labels,
        classes,
        "generated",
        format!("blobs(n={n},d={d},classes={classes},sep={separation},seed={seed})"),
    )
}

/// The four shape classes rendered by [`gen_shapes`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeClass {
    Square,
    Circle,
    Cross,
    Triangle,
}

impl ShapeClass {
    pub fn from_label(label: usize) -> Self {
        match label % 4 {
            0 => Self::Square,
            1 => Self::Circle,
            2 => Self::Cross,
            _ => Self::Triangle,
        }
    }
}

/// Boolean fill mask for a shape centered at `(cx, cy)` with half-extent `a`.
///
/// A pixel `(x, y)` belongs to the shape when its center `(x+0.5, y+0.5)`
/// satisfies the fill predicate.
pub fn shape_mask(class: ShapeClass, size: usize, cx: f64, cy: f64, a: f64) -> Vec<bool> {
    let mut mask = vec![false; size * size];
    for y in 0..size {
        for x in 0..size {
            let px = x as f64 + 0.5;
            let py = y as f64 + 0.5;
            let dx = px - cx;
            let dy = py - cy;
            let inside = match class {
                ShapeClass::Square => dx.abs() <= a && dy.abs() <= a,
                ShapeClass::Circle => dx * dx + dy * dy <= a * a,
                ShapeClass::Cross => {
                    let w = (a / 3.0).max(1.0);
                    (dx.abs() <= w && dy.abs() <= a) || (dy.abs() <= w && dx.abs() <= a)
                }
                ShapeClass::Triangle => {
                    // vertices (cx, cy−a), (cx−a, cy+a), (cx+a, cy+a)
                    let (x0, y0) = (cx, cy - a);
                    let (x1, y1) = (cx - a, cy + a);
                    let (x2, y2) = (cx + a, cy + a);
                    let side = |ax: f64, ay: f64, bx: f64, by: f64| {
                        (bx - ax) * (py - ay) - (by - ay) * (px - ax)
                    };
                    let s0 = side(x0, y0, x1, y1);
                    let s1 = side(x1, y1, x2, y2);
                    let s2 = side(x2, y2, x0, y0);
                    (s0 >= 0.0 && s1 >= 0.0 && s2 >= 0.0) || (s0 <= 0.0 && s1 <= 0.0 && s2 <= 0.0)
                }
            };
            mask[y * size + x] = inside;
        }
    }
    mask
}

/// Grayscale shapes (square, circle, cross, triangle) with position and
/// scale jitter over a noisy background.
pub fn gen_shapes(n: usize, size: usize, seed: u64) -> Result<Dataset> {
    if size < 8 {
        return Err(DataError::InvalidDataset(format!(
            "shape canvas must be at least 8 pixels, got {size}"
        )));
    }
    if n == 0 {
        return Err(DataError::InvalidDataset("empty dataset".into()));
    }
    let classes = 4usize;
    let mut data = Vec::with_capacity(n * size * size);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % classes;
        labels.push(class);
        let mut rng = Rng::from_label(seed, &format!("gen-shapes-{i}"));
        let s = size as f64;
        let cx = s / 2.0 + rng.range(-s / 8.0, s / 8.0);
        let cy = s / 2.0 + rng.range(-s / 8.0, s / 8.0);
        let a = rng.range(0.22, 0.38) * s;
        let fg = rng.range(0.65, 0.95);
        let mask = shape_mask(ShapeClass::from_label(class), size, cx, cy, a);
        for filled in mask {
            let v = if filled {
                fg + rng.range(-0.06, 0.06)
            } else {
                rng.range(0.0, 0.12)
            };
            data.push(v.clamp(0.0, 1.0));
        }
    }
    Dataset::new(
        Tensor::new(vec![n, 1, size, size], data)?,
        labels,
        classes,
        "generated",
        format!("shapes(n={n},size={size},seed={seed})"),
    )
}

// ── IDX codec ────────────────────────────────────────────────────────

/// Decode an IDX file (big-endian header, u8 payload scaled to `[0,1]`).
pub fn read_idx<R: Read>(r: &mut R) -> Result<Tensor> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(map_eof_magic)?;
    if magic[0] != 0 || magic[1] != 0 {
        return Err(DataError::BadIdxMagic(magic));
    }
    if magic[2] != 0x08 {
        return Err(DataError::UnsupportedIdxDtype(magic[2]));
    }
    let rank = magic[3] as usize;
    let mut shape = Vec::with_capacity(rank);
    let mut numel = 1usize;
    for _ in 0..rank {
        let mut buf = [0u8; 4];
        r.read_exact(&mut buf)?;
        let e = u32::from_be_bytes(buf) as usize;
        numel = numel
            .checked_mul(e)
            .ok_or(DataError::InvalidDataset("extent overflow".into()))?;
        shape.push(e);
    }
    let mut payload = vec![0u8; numel];
    let mut read = 0usize;
    while read < numel {
        match r.read(&mut payload[read..])? {
            0 => {
                return Err(DataError::Truncated {
                    expected_bytes: numel,
                    actual_bytes: read,
                })
            }
            k => read += k,
        }
    }
    let data = payload.iter().map(|&b| b as f64 / 255.0).collect();
    Ok(Tensor::new(shape, data)?)
}

fn map_eof_magic(e: std::io::Error) -> DataError {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        DataError::Truncated {
            expected_bytes: 4,
            actual_bytes: 0,
        }
    } else {
        DataError::Io(e)
    }
}

/// Encode a `[0,1]`-valued tensor as an IDX u8 file.
pub fn write_idx<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    w.write_all(&[0, 0, 0x08, t.rank() as u8])?;
    for &e in t.shape() {
        w.write_all(&(e as u32).to_be_bytes())?;
    }
    for &v in t.data() {
        w.write_all(&[(v.clamp(0.0, 1.0) * 255.0).round() as u8])?;
    }
    Ok(())
}

pub fn read_idx_file<P: AsRef<Path>>(path: P) -> Result<Tensor> {
    read_idx(&mut BufReader::new(File::open(path)?))
}

pub fn write_idx_file<P: AsRef<Path>>(path: P, t: &Tensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_idx(&mut w, t)?;
    w.flush()?;
    Ok(())
}

/// Assemble a dataset from an IDX image file and an IDX label file.
///
/// Rank-3 images `[N,H,W]` gain a singleton channel; labels must be rank-1.
/// The class count is inferred as `max(label)+1` unless given.
pub fn load_idx_dataset<P: AsRef<Path>>(
    images_path: P,
    labels_path: P,
    num_classes: Option<usize>,
) -> Result<Dataset> {
    let images = read_idx_file(&images_path)?;
    let labels_t = read_idx_file(&labels_path)?;
    if labels_t.rank() != 1 {
        return Err(DataError::InvalidDataset(format!(
            "labels must be rank-1, got shape {:?}",
            labels_t.shape()
        )));
    }
    let labels: Vec<usize> = labels_t
        .data()
        .iter()
        .map(|&v| (v * 255.0).round() as usize)
        .collect();
    let images = match images.rank() {
        3 => {
            let s = images.shape();
            images.reshape(&[s[0], 1, s[1], s[2]])?
        }
        2 | 4 => images,
        _ => {
            return Err(DataError::InvalidDataset(format!(
                "unsupported image rank {}",
                images.rank()
            )))
        }
    };
    let m = num_classes.unwrap_or_else(|| labels.iter().copied().max().map_or(0, |v| v + 1));
    Dataset::new(
        images,
        labels,
        m,
        "idx",
        format!("idx({})", images_path.as_ref().display()),
    )
}

// ── dataset container ────────────────────────────────────────────────

const DATASET_MAGIC: &[u8; 4] = b"PDAD";

/// Serialize a dataset: magic `"PDAD"`, u32 version, u32 class count, a
/// tensor block, u32 label count, u32 labels, then length-prefixed split
/// and provenance strings.
pub fn dataset_to_bytes(ds: &Dataset) -> Result<Vec<u8>> {
    let mut w = Vec::new();
    w.extend_from_slice(DATASET_MAGIC);
    w.extend_from_slice(&1u32.to_le_bytes());
    w.extend_from_slice(&(ds.num_classes as u32).to_le_bytes());
    write_tensor(&mut w, &ds.images)?;
    w.extend_from_slice(&(ds.labels.len() as u32).to_le_bytes());
    for &y in &ds.labels {
        w.extend_from_slice(&(y as u32).to_le_bytes());
    }
    for s in [&ds.split, &ds.provenance] {
        w.extend_from_slice(&(s.len() as u32).to_le_bytes());
        w.extend_from_slice(s.as_bytes());
    }
    Ok(w)
}

/// Write a dataset as a single binary file in the [`dataset_to_bytes`] format.
pub fn save_dataset<P: AsRef<Path>>(path: P, ds: &Dataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&dataset_to_bytes(ds)?)?;
    w.flush()?;
    Ok(())
}

pub fn load_dataset<P: AsRef<Path>>(path: P) -> Result<Dataset> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != DATASET_MAGIC {
        return Err(DataError::InvalidDataset(format!(
            "bad dataset magic {magic:?}"
        )));
    }
    let version = read_u32(&mut r)?;
    if version != 1 {
        return Err(DataError::InvalidDataset(format!(
            "unsupported dataset version {version}"
        )));
    }
    let num_classes = read_u32(&mut r)? as usize;
    let images = read_tensor(&mut r)?;
    let n = read_u32(&mut r)? as usize;
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        labels.push(read_u32(&mut r)? as usize);
    }
    let split = read_string(&mut r)?;
    let provenance = read_string(&mut r)?;
    Dataset::new(images, labels, num_classes, split, provenance)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_string<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| DataError::InvalidDataset("non-utf8 string".into()))
}

// ── dataset spec strings ─────────────────────────────────────────────

/// Resolve a dataset argument: `blobs:…`, `shapes:…`, `idx:imgs,labels`,
/// or a path to a `.bin` dataset container.
pub fn resolve_dataset(spec: &str) -> Result<Dataset> {
    if let Some(rest) = spec.strip_prefix("blobs:") {
        let kv = parse_spec_kv(rest, &["n", "d", "classes", "sep", "seed"])?;
        return gen_blobs(
            lookup_usize(&kv, "n", 1000)?,
            lookup_usize(&kv, "d", 2)?,
            lookup_usize(&kv, "classes", 2)?,
            lookup_f64(&kv, "sep", 3.0)?,
            lookup_u64(&kv, "seed", 0)?,
        );
    }
    if let Some(rest) = spec.strip_prefix("shapes:") {
        let kv = parse_spec_kv(rest, &["n", "size", "seed"])?;
        return gen_shapes(
            lookup_usize(&kv, "n", 1000)?,
            lookup_usize(&kv, "size", 16)?,
            lookup_u64(&kv, "seed", 0)?,
        );
    }
    if let Some(rest) = spec.strip_prefix("idx:") {
        let parts: Vec<&str> = rest.split(',').collect();
        if parts.len() != 2 {
            return Err(DataError::BadSpec(
                "idx spec must be idx:<images>,<labels>".into(),
            ));
        }
        return load_idx_dataset(parts[0], parts[1], None);
    }
    load_dataset(spec)
}

fn parse_spec_kv(s: &str, known: &[&str]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for part in s.split(',').filter(|p| !p.is_empty()) {
        let Some((k, v)) = part.split_once('=') else {
            return Err(DataError::BadSpec(format!("expected key=value, got '{part}'")));
        };
        if !known.contains(&k) {
            return Err(DataError::BadSpec(format!(
                "unknown key '{k}' (known: {})",
                known.join(", ")
            )));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

fn lookup<'a>(kv: &'a [(String, String)], key: &str) -> Option<&'a str> {
    kv.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
}

fn lookup_usize(kv: &[(String, String)], key: &str, default: usize) -> Result<usize> {
    lookup(kv, key).map_or(Ok(default), |v| {
        v.parse()
            .map_err(|_| DataError::BadSpec(format!("bad value for {key}: '{v}'")))
    })
}

fn lookup_u64(kv: &[(String, String)], key: &str, default: u64) -> Result<u64> {
    lookup(kv, key).map_or(Ok(default), |v| {
        v.parse()
            .map_err(|_| DataError::BadSpec(format!("bad value for {key}: '{v}'")))
    })
}

fn lookup_f64(kv: &[(String, String)], key: &str, default: f64) -> Result<f64> {
    lookup(kv, key).map_or(Ok(default), |v| {
        v.parse()
            .map_err(|_| DataError::BadSpec(format!("bad value for {key}: '{v}'")))
    })
}

//! Binary PGM (P5) and PPM (P6) writers for image-valued outputs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

/// Write `[0,1]` grayscale data as an 8-bit binary PGM.
pub fn write_pgm<P: AsRef<Path>>(
    path: P,
    height: usize,
    width: usize,
    data: &[f64],
) -> std::io::Result<()> {
    assert_eq!(data.len(), height * width);
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{width} {height}\n255\n")?;
    let bytes: Vec<u8> = data
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    w.write_all(&bytes)?;
    w.flush()
}

/// Write `[0,1]` grayscale data rescaled over its own `[min, max]` range.
pub fn write_pgm_autoscale<P: AsRef<Path>>(
    path: P,
    height: usize,
    width: usize,
    data: &[f64],
) -> std::io::Result<()> {
    let min = data.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    let scaled: Vec<f64> = if span < 1e-12 {
        vec![0.5; data.len()]
    } else {
        data.iter().map(|&v| (v - min) / span).collect()
    };
    write_pgm(path, height, width, &scaled)
}

/// Write `[0,1]` channel-planar RGB data `[3,H,W]` as a binary PPM.
pub fn write_ppm<P: AsRef<Path>>(
    path: P,
    height: usize,
    width: usize,
    planes: &[f64],
) -> std::io::Result<()> {
    assert_eq!(planes.len(), 3 * height * width);
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P6\n{width} {height}\n255\n")?;
    let plane = height * width;
    let mut bytes = Vec::with_capacity(3 * plane);
    for i in 0..plane {
        for c in 0..3 {
            bytes.push((planes[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    w.write_all(&bytes)?;
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_header_and_payload() {
        let dir = std::env::temp_dir().join("pdalab-pgm-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.pgm");
        write_pgm(&path, 2, 3, &[0.0, 0.5, 1.0, 1.0, 0.5, 0.0]).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(&bytes[bytes.len() - 6..], &[0, 128, 255, 255, 128, 0]);
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn autoscale_spreads_to_full_range() {
        let dir = std::env::temp_dir().join("pdalab-pgm-test2");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.pgm");
        write_pgm_autoscale(&path, 1, 3, &[0.4, 0.45, 0.5]).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[bytes.len() - 3..], &[0, 128, 255]);
        std::fs::remove_file(&path).unwrap();
    }
}

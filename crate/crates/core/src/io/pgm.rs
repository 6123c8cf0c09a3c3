//! 8-bit binary PGM previews.

use std::path::Path;

use crate::error::Result;

use super::atomic_write;

/// Encodes values as P5 PGM. Nonnegative data is scaled by its maximum;
/// signed data maps `[-m, m]` to `[0, 255]` with `m = max |v|`.
pub fn encode_pgm(values: &[f64], width: usize, height: usize) -> Vec<u8> {
    let signed = values.iter().any(|&v| v < 0.0);
    let m = values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let mut buf = format!("P5\n{width} {height}\n255\n").into_bytes();
    for &v in values {
        let level = if m <= 0.0 {
            if signed { 0.5 } else { 0.0 }
        } else if signed {
            0.5 + 0.5 * v / m
        } else {
            v / m
        };
        buf.push((level.clamp(0.0, 1.0) * 255.0).round() as u8);
    }
    buf
}

pub fn write_pgm(path: &Path, values: &[f64], width: usize, height: usize) -> Result<()> {
    atomic_write(path, &encode_pgm(values, width, height))
}

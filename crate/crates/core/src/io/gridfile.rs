//! `FPGD` binary grid files.
//!
//! Layout (little-endian): magic `FPGD`, `u16` version, `u8` dtype tag
//! (`0` = f32, `1` = f64), `u32` width, `u32` height, then `width * height`
//! row-major values.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::ImageGrid;
use crate::projector::Sinogram;

use super::atomic_write;

const MAGIC: &[u8; 4] = b"FPGD";
const VERSION: u16 = 1;
const HEADER_LEN: usize = 15;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn tag(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridData {
    pub width: usize,
    pub height: usize,
    pub dtype: Dtype,
    pub values: Vec<f64>,
}

pub fn encode_grid(values: &[f64], width: usize, height: usize, dtype: Dtype) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + values.len() * dtype.size());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(dtype.tag());
    buf.extend_from_slice(&(width as u32).to_le_bytes());
    buf.extend_from_slice(&(height as u32).to_le_bytes());
    for &v in values {
        match dtype {
            Dtype::F32 => buf.extend_from_slice(&(v as f32).to_le_bytes()),
            Dtype::F64 => buf.extend_from_slice(&v.to_le_bytes()),
        }
    }
    buf
}

pub fn decode_grid(bytes: &[u8]) -> Result<GridData> {
    let err = |m: &str| Error::Format(format!("grid file: {m}"));
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(err("missing FPGD magic"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(err(&format!("unsupported version {version}")));
    }
    let dtype = match bytes[6] {
        0 => Dtype::F32,
        1 => Dtype::F64,
        t => return Err(err(&format!("unknown dtype tag {t}"))),
    };
    let width = u32::from_le_bytes(bytes[7..11].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(bytes[11..15].try_into().unwrap()) as usize;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != width * height * dtype.size() {
        return Err(err(&format!(
            "payload of {} bytes does not match {width}x{height} {:?}",
            payload.len(),
            dtype
        )));
    }
    let values = match dtype {
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        Dtype::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    Ok(GridData {
        width,
        height,
        dtype,
        values,
    })
}

pub fn write_grid(path: &Path, values: &[f64], width: usize, height: usize, dtype: Dtype) -> Result<()> {
    atomic_write(path, &encode_grid(values, width, height, dtype))
}

pub fn read_grid(path: &Path) -> Result<GridData> {
    let bytes = fs::read(path)?;
    decode_grid(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn save_image(path: &Path, img: &ImageGrid) -> Result<()> {
    write_grid(path, img.values(), img.width(), img.height(), Dtype::F64)
}

pub fn load_image(path: &Path) -> Result<ImageGrid> {
    let g = read_grid(path)?;
    ImageGrid::new(g.width, g.height, g.values)
}

/// Sinograms are stored with `width = n_bins` and `height = n_angles`.
pub fn save_sinogram(path: &Path, y: &Sinogram) -> Result<()> {
    write_grid(path, &y.counts, y.n_bins, y.n_angles, Dtype::F64)
}

pub fn load_sinogram(path: &Path) -> Result<Sinogram> {
    let g = read_grid(path)?;
    Sinogram::new(g.height, g.width, g.values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn f64_round_trip_is_bit_exact(values in proptest::collection::vec(-1e6f64..1e6, 12)) {
            let bytes = encode_grid(&values, 4, 3, Dtype::F64);
            let back = decode_grid(&bytes).unwrap();
            prop_assert_eq!(back.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            values.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!((back.width, back.height, back.dtype), (4, 3, Dtype::F64));
        }

        #[test]
        fn f32_round_trip_is_bit_exact_for_f32_values(values in proptest::collection::vec(-1e6f32..1e6, 6)) {
            let wide: Vec<f64> = values.iter().map(|&v| v as f64).collect();
            let back = decode_grid(&encode_grid(&wide, 2, 3, Dtype::F32)).unwrap();
            prop_assert_eq!(back.values, wide);
        }
    }

    #[test]
    fn rejects_bad_headers_and_truncation() {
        let mut bytes = encode_grid(&[1.0, 2.0, 3.0, 4.0], 2, 2, Dtype::F64);
        assert!(decode_grid(&bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'X';
        assert!(decode_grid(&bytes).is_err());
    }

    #[test]
    fn sinogram_file_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("y.grid");
        let y = Sinogram::new(3, 5, (0..15).map(|v| v as f64).collect()).unwrap();
        save_sinogram(&p, &y).unwrap();
        let g = read_grid(&p).unwrap();
        assert_eq!((g.width, g.height), (5, 3));
        assert_eq!(load_sinogram(&p).unwrap(), y);
    }
}

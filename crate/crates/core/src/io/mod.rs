//! File formats and configuration: binary grids, PGM previews, `key = value`
//! run configs and dataset manifests.

pub mod config;
pub mod gridfile;
pub mod keyvalue;
pub mod manifest;
pub mod pgm;

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::Result;

pub use config::RunConfig;
pub use gridfile::{load_image, load_sinogram, read_grid, save_image, save_sinogram, write_grid, Dtype, GridData};
pub use manifest::PairManifest;

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir)?;
    }
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = path.with_file_name(format!(".{file_name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

//! Per-pair dataset manifests: a `key = value` file listing the simulation
//! parameters and the grid files (relative to the manifest) of one phantom.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid::ImageGrid;
use crate::io::{atomic_write, gridfile, keyvalue};
use crate::simulator::{Acquisition, DegradationConfig, Phantom, PhantomKind, Roi};

pub const EXTENSION: &str = "manifest";

#[derive(Clone, Debug, PartialEq)]
pub struct PairManifest {
    pub name: String,
    pub phantom_kind: PhantomKind,
    pub phantom_seed: u64,
    pub width: usize,
    pub height: usize,
    pub n_angles: usize,
    pub n_bins: usize,
    pub degradation: DegradationConfig,
    pub count_scale: f64,
    pub lesion_peaks: Vec<f64>,
    pub truth: String,
    pub biased: String,
    pub y_low: String,
    pub y_full: String,
    pub roi_labels: String,
}

impl PairManifest {
    pub fn to_text(&self) -> String {
        let d = &self.degradation;
        let peaks = self
            .lesion_peaks
            .iter()
            .map(|p| format!("{p:?}"))
            .collect::<Vec<_>>()
            .join(",");
        keyvalue::render(&[
            ("name", self.name.clone()),
            ("phantom_kind", self.phantom_kind.to_string()),
            ("phantom_seed", self.phantom_seed.to_string()),
            ("width", self.width.to_string()),
            ("height", self.height.to_string()),
            ("n_angles", self.n_angles.to_string()),
            ("n_bins", self.n_bins.to_string()),
            ("dose_fraction", format!("{:?}", d.dose_fraction)),
            ("ac_bias_strength", format!("{:?}", d.ac_bias_strength)),
            ("ac_bias_scale", format!("{:?}", d.ac_bias_scale)),
            ("full_count_mean", format!("{:?}", d.full_count_mean)),
            ("noise_seed", d.seed.to_string()),
            ("count_scale", format!("{:?}", self.count_scale)),
            ("lesion_peaks", peaks),
            ("truth", self.truth.clone()),
            ("biased", self.biased.clone()),
            ("y_low", self.y_low.clone()),
            ("y_full", self.y_full.clone()),
            ("roi_labels", self.roi_labels.clone()),
        ])
    }

    pub fn parse(text: &str) -> Result<Self> {
        let kv = keyvalue::parse(text)?;
        let get = |key: &str| -> Result<&str> {
            kv.iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::Format(format!("manifest is missing `{key}`")))
        };
        let num = |key: &str| -> Result<f64> { keyvalue::parse_value(key, get(key)?) };
        let int = |key: &str| -> Result<usize> { keyvalue::parse_value(key, get(key)?) };
        let peaks = get("lesion_peaks")?;
        Ok(Self {
            name: get("name")?.to_string(),
            phantom_kind: get("phantom_kind")?.parse()?,
            phantom_seed: keyvalue::parse_value("phantom_seed", get("phantom_seed")?)?,
            width: int("width")?,
            height: int("height")?,
            n_angles: int("n_angles")?,
            n_bins: int("n_bins")?,
            degradation: DegradationConfig {
                dose_fraction: num("dose_fraction")?,
                ac_bias_strength: num("ac_bias_strength")?,
                ac_bias_scale: num("ac_bias_scale")?,
                full_count_mean: num("full_count_mean")?,
                seed: keyvalue::parse_value("noise_seed", get("noise_seed")?)?,
            },
            count_scale: num("count_scale")?,
            lesion_peaks: if peaks.is_empty() {
                Vec::new()
            } else {
                keyvalue::parse_list("lesion_peaks", peaks)?
            },
            truth: get("truth")?.to_string(),
            biased: get("biased")?.to_string(),
            y_low: get("y_low")?.to_string(),
            y_full: get("y_full")?.to_string(),
            roi_labels: get("roi_labels")?.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Format(format!("cannot read manifest {}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

/// A simulated pair as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedPair {
    pub manifest: PairManifest,
    pub phantom: Phantom,
    pub acquisition: Acquisition,
}

/// Encodes ROIs as a label image: 0 outside, 1 background, `2 + i` lesion `i`.
fn roi_label_image(phantom: &Phantom) -> Result<ImageGrid> {
    let (w, h) = phantom.activity.dims();
    let mut labels = vec![0.0; w * h];
    for roi in &phantom.rois {
        let label = if roi.name == "background" {
            1.0
        } else {
            let idx: usize = roi
                .name
                .strip_prefix("lesion_")
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Format(format!("unexpected ROI name `{}`", roi.name)))?;
            2.0 + idx as f64
        };
        for (l, &m) in labels.iter_mut().zip(&roi.mask) {
            if m {
                *l = label;
            }
        }
    }
    ImageGrid::new(w, h, labels)
}

fn rois_from_labels(labels: &ImageGrid, peaks: &[f64]) -> Vec<Roi> {
    let mask_of = |label: f64| labels.values().iter().map(|&v| v == label).collect();
    let mut rois: Vec<Roi> = peaks
        .iter()
        .enumerate()
        .map(|(i, &p)| Roi {
            name: format!("lesion_{i}"),
            mask: mask_of(2.0 + i as f64),
            peak: Some(p),
        })
        .collect();
    rois.push(Roi {
        name: "background".into(),
        mask: mask_of(1.0),
        peak: None,
    });
    rois
}

/// Writes the grids and manifest of one pair into `dir`; returns the manifest path.
pub fn write_pair(
    dir: &Path,
    name: &str,
    phantom: &Phantom,
    acq: &Acquisition,
    degradation: &DegradationConfig,
) -> Result<PathBuf> {
    let file = |suffix: &str| format!("{name}_{suffix}.grid");
    let (w, h) = phantom.activity.dims();
    let manifest = PairManifest {
        name: name.to_string(),
        phantom_kind: phantom.kind,
        phantom_seed: phantom.seed,
        width: w,
        height: h,
        n_angles: acq.y_full.n_angles,
        n_bins: acq.y_full.n_bins,
        degradation: *degradation,
        count_scale: acq.count_scale,
        lesion_peaks: phantom.lesions().filter_map(|r| r.peak).collect(),
        truth: file("truth"),
        biased: file("biased"),
        y_low: file("ylow"),
        y_full: file("yfull"),
        roi_labels: file("roi"),
    };
    gridfile::save_image(&dir.join(&manifest.truth), &phantom.activity)?;
    gridfile::save_image(&dir.join(&manifest.biased), &acq.biased_activity)?;
    gridfile::save_sinogram(&dir.join(&manifest.y_low), &acq.y_low)?;
    gridfile::save_sinogram(&dir.join(&manifest.y_full), &acq.y_full)?;
    gridfile::save_image(&dir.join(&manifest.roi_labels), &roi_label_image(phantom)?)?;
    let path = dir.join(format!("{name}.{EXTENSION}"));
    atomic_write(&path, manifest.to_text().as_bytes())?;
    Ok(path)
}

pub fn load_pair(path: &Path) -> Result<LoadedPair> {
    let manifest = PairManifest::load(path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let truth = gridfile::load_image(&dir.join(&manifest.truth))?;
    let labels = gridfile::load_image(&dir.join(&manifest.roi_labels))?;
    let phantom = Phantom {
        kind: manifest.phantom_kind,
        rois: rois_from_labels(&labels, &manifest.lesion_peaks),
        activity: truth,
        seed: manifest.phantom_seed,
    };
    let acquisition = Acquisition {
        y_low: gridfile::load_sinogram(&dir.join(&manifest.y_low))?,
        y_full: gridfile::load_sinogram(&dir.join(&manifest.y_full))?,
        count_scale: manifest.count_scale,
        biased_activity: gridfile::load_image(&dir.join(&manifest.biased))?,
    };
    let expected = (manifest.n_angles, manifest.n_bins);
    for y in [&acquisition.y_low, &acquisition.y_full] {
        if (y.n_angles, y.n_bins) != expected {
            return Err(crate::error::shape_mismatch(
                format!("sinogram {}x{}", expected.0, expected.1),
                format!("sinogram {}", y.shape_string()),
            ));
        }
    }
    Ok(LoadedPair {
        manifest,
        phantom,
        acquisition,
    })
}

/// Manifest files directly inside `dir`, sorted by name.
pub fn list_manifests(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == EXTENSION))
        .collect();
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projector::build_parallel_projector;
    use crate::simulator::{make_phantom, simulate_counts};

    #[test]
    fn pair_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let a = build_parallel_projector((32, 32), 16, 32).unwrap();
        let p = make_phantom(PhantomKind::HotSpheres, (32, 32), 4).unwrap();
        let cfg = DegradationConfig {
            seed: 11,
            ..Default::default()
        };
        let acq = simulate_counts(&a, &p, &cfg).unwrap();
        let path = write_pair(dir.path(), "pair_0000", &p, &acq, &cfg).unwrap();
        let loaded = load_pair(&path).unwrap();
        assert_eq!(loaded.phantom, p);
        assert_eq!(loaded.acquisition, acq);
        assert_eq!(loaded.manifest.degradation, cfg);
        assert_eq!(list_manifests(dir.path()).unwrap(), vec![path]);
    }

    #[test]
    fn missing_key_is_reported() {
        let err = PairManifest::parse("name = x\n").unwrap_err();
        assert!(err.to_string().contains("manifest is missing"));
    }
}

//! Image-sequence directories described by a `manifest.json`.
//!
//! ```json
//! {
//!   "width": 160, "height": 120,
//!   "intrinsics": {"fx": 150.0, "fy": 150.0, "cx": 79.5, "cy": 59.5},
//!   "frames": [{"image": "frame_000.pgm", "timestamp": 0.0, "depth": "depth_000.fmap"}],
//!   "groundtruth": "groundtruth.txt"
//! }
//! ```
//!
//! `timestamp` defaults to the frame index. `depth` (single-channel metric
//! z-depth FMAP) and `groundtruth` (TUM) are optional and only needed by
//! the oracle flow provider and for evaluation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::correlation::{FeatureMap, GroundTruth};
use crate::error::{Error, Result};
use crate::eval::Trajectory;
use crate::geometry::Intrinsics;
use crate::image::Image;
use crate::io::{read_fmap, read_pnm, read_trajectory, write_atomic, write_fmap, write_pgm, write_trajectory};
use crate::synthetic::SyntheticSequence;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFrame {
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub width: usize,
    pub height: usize,
    pub intrinsics: Intrinsics,
    pub frames: Vec<ManifestFrame>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groundtruth: Option<String>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
    pub images: Vec<Image>,
    pub timestamps: Vec<f64>,
    /// Present when every frame lists a depth map.
    pub depths: Option<Vec<FeatureMap>>,
    pub groundtruth: Option<Trajectory>,
}

impl Dataset {
    /// Ground truth for the oracle provider; needs depth maps and one
    /// ground-truth pose per frame.
    pub fn ground_truth(&self) -> Result<GroundTruth> {
        let depths = self
            .depths
            .as_ref()
            .ok_or_else(|| Error::Config("the dataset has no depth maps".into()))?;
        let gt = self
            .groundtruth
            .as_ref()
            .ok_or_else(|| Error::Config("the dataset has no ground-truth trajectory".into()))?;
        if gt.len() != self.images.len() {
            return Err(Error::Config(format!(
                "ground truth has {} poses for {} frames",
                gt.len(),
                self.images.len()
            )));
        }
        Ok(GroundTruth {
            intrinsics: self.manifest.intrinsics,
            width: self.manifest.width,
            height: self.manifest.height,
            poses: gt.poses().copied().collect(),
            depths: depths.clone(),
        })
    }
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    manifest.intrinsics.validate()?;
    if manifest.frames.is_empty() {
        return Err(Error::Format(format!("{}: no frames listed", path.display())));
    }
    Ok(manifest)
}

/// Loads every file the manifest lists and checks sizes and timestamps.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    let (w, h) = (manifest.width, manifest.height);
    let mut images = Vec::with_capacity(manifest.frames.len());
    let mut timestamps = Vec::with_capacity(manifest.frames.len());
    for (i, f) in manifest.frames.iter().enumerate() {
        let image = read_pnm(&dir.join(&f.image))?;
        if image.width() != w || image.height() != h {
            return Err(Error::DimensionMismatch {
                width: w,
                height: h,
                got_width: image.width(),
                got_height: image.height(),
            });
        }
        let t = f.timestamp.unwrap_or(i as f64);
        if timestamps.last().is_some_and(|&prev| t <= prev) {
            return Err(Error::NonMonotoneTimestamps { line: i + 1 });
        }
        images.push(image);
        timestamps.push(t);
    }
    let depths = if manifest.frames.iter().all(|f| f.depth.is_some()) {
        let maps = manifest
            .frames
            .iter()
            .map(|f| {
                let map = read_fmap(&dir.join(f.depth.as_deref().expect("checked")))?;
                if map.width() != w || map.height() != h || map.channels() != 1 {
                    return Err(Error::Format(format!(
                        "depth map {:?} must be {w}x{h} with one channel",
                        f.depth
                    )));
                }
                Ok(map)
            })
            .collect::<Result<Vec<_>>>()?;
        Some(maps)
    } else {
        None
    };
    let groundtruth = manifest
        .groundtruth
        .as_ref()
        .map(|g| read_trajectory(&dir.join(g)))
        .transpose()?;
    Ok(Dataset {
        root: dir.to_path_buf(),
        manifest,
        images,
        timestamps,
        depths,
        groundtruth,
    })
}

/// Writes frames, depth maps, ground truth and the manifest into `dir`.
pub fn write_synthetic_dataset(seq: &SyntheticSequence, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut frames = Vec::with_capacity(seq.len());
    for (i, (image, depth)) in seq.images.iter().zip(&seq.depths).enumerate() {
        let name = format!("frame_{i:03}.pgm");
        let depth_name = format!("depth_{i:03}.fmap");
        write_pgm(image, &dir.join(&name))?;
        write_fmap(depth, &dir.join(&depth_name))?;
        frames.push(ManifestFrame {
            image: name,
            timestamp: Some(i as f64),
            depth: Some(depth_name),
        });
    }
    write_trajectory(&seq.trajectory(), &dir.join("groundtruth.txt"))?;
    let manifest = Manifest {
        width: seq.width,
        height: seq.height,
        intrinsics: seq.intrinsics,
        frames,
        groundtruth: Some("groundtruth.txt".into()),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    write_atomic(&dir.join(MANIFEST_FILE), (json + "\n").as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{render_sequence, SceneConfig};

    #[test]
    fn synthetic_round_trip() {
        let seq = render_sequence(&SceneConfig {
            frames: 3,
            ..SceneConfig::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_synthetic_dataset(&seq, dir.path()).unwrap();
        let ds = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.images.len(), 3);
        assert_eq!(ds.timestamps, vec![0.0, 1.0, 2.0]);
        assert_eq!(ds.depths.as_ref().unwrap(), &seq.depths);
        let gt = ds.ground_truth().unwrap();
        for (a, b) in gt.poses.iter().zip(&seq.poses) {
            assert!((a.translation() - b.translation()).norm() < 1e-9);
        }
        // 8-bit quantization of the rendered intensities
        for (a, b) in ds.images.iter().zip(&seq.images) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() <= 0.5 + 1e-3);
            }
        }
    }

    #[test]
    fn unknown_manifest_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join(MANIFEST_FILE),
            r#"{"width":4,"height":4,"intrinsics":{"fx":1,"fy":1,"cx":0,"cy":0},"frames":[],"extra":1}"#,
        )
        .unwrap();
        assert!(matches!(read_manifest(dir.path()), Err(Error::Format(_))));
    }
}

//! Video records and the JSON manifest that lists them.
//!
//! ```json
//! { "videos": [ { "video_id": "v0",
//!                 "appearance": "tensors/v0.app.orgt",
//!                 "motion": "tensors/v0.mot.orgt",
//!                 "objects": "tensors/v0.obj.orgt",
//!                 "captions": ["a man rides a bike"] } ] }
//! ```
//!
//! Tensor paths are resolved relative to the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tensor::{read_tensor_file, FeatureTensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub video_id: String,
    pub appearance: String,
    pub motion: String,
    pub objects: String,
    pub captions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub videos: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("manifest {}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

/// Features and reference captions for one video.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord {
    pub video_id: String,
    /// `[L, d_a]`
    pub appearance: FeatureTensor,
    /// `[L, d_m]`
    pub motion: FeatureTensor,
    /// `[L, N, d_o]`
    pub objects: FeatureTensor,
    pub captions: Vec<String>,
}

impl VideoRecord {
    pub fn new(
        video_id: impl Into<String>,
        appearance: FeatureTensor,
        motion: FeatureTensor,
        objects: FeatureTensor,
        captions: Vec<String>,
    ) -> Result<Self> {
        let video_id = video_id.into();
        let shape_err = |reason: String| Error::Load {
            video_id: video_id.clone(),
            reason,
        };
        if appearance.rank() != 2 || motion.rank() != 2 || objects.rank() != 3 {
            return Err(shape_err(format!(
                "expected ranks 2/2/3, got {}/{}/{}",
                appearance.rank(),
                motion.rank(),
                objects.rank()
            )));
        }
        let l = appearance.leading_dim();
        if motion.leading_dim() != l || objects.leading_dim() != l {
            return Err(Error::Shape(format!(
                "video {video_id}: frame counts differ (appearance {l}, motion {}, objects {})",
                motion.leading_dim(),
                objects.leading_dim()
            )));
        }
        if l == 0 || objects.shape()[1] == 0 {
            return Err(shape_err("video has no frames or no objects".into()));
        }
        if captions.is_empty() {
            return Err(shape_err("video has no captions".into()));
        }
        Ok(Self {
            video_id,
            appearance,
            motion,
            objects,
            captions,
        })
    }

    /// `L`
    pub fn frames(&self) -> usize {
        self.appearance.shape()[0]
    }

    /// `N`
    pub fn objects_per_frame(&self) -> usize {
        self.objects.shape()[1]
    }

    pub fn appearance_dim(&self) -> usize {
        self.appearance.shape()[1]
    }

    pub fn motion_dim(&self) -> usize {
        self.motion.shape()[1]
    }

    pub fn object_dim(&self) -> usize {
        self.objects.shape()[2]
    }
}

fn load_entry(base: &Path, entry: &ManifestEntry) -> Result<VideoRecord> {
    let read = |rel: &str| -> Result<FeatureTensor> {
        let p: PathBuf = base.join(rel);
        read_tensor_file(&p).map_err(|e| Error::Load {
            video_id: entry.video_id.clone(),
            reason: e.to_string(),
        })
    };
    VideoRecord::new(
        entry.video_id.clone(),
        read(&entry.appearance)?,
        read(&entry.motion)?,
        read(&entry.objects)?,
        entry.captions.clone(),
    )
}

/// Loads every video listed in the manifest, preserving manifest order.
pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<Vec<VideoRecord>> {
    let manifest_path = manifest_path.as_ref();
    let manifest = Manifest::load(manifest_path)?;
    let base = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    manifest
        .videos
        .par_iter()
        .map(|e| load_entry(&base, e))
        .collect()
}

/// All captions of a dataset, in video then caption order.
pub fn all_captions(videos: &[VideoRecord]) -> Vec<String> {
    videos
        .iter()
        .flat_map(|v| v.captions.iter().cloned())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_store::tensor::write_tensor_file;

    fn write_video(dir: &Path, id: &str, l_app: usize, l_mot: usize) -> ManifestEntry {
        let names = [
            (format!("{id}.app.orgt"), vec![l_app, 3]),
            (format!("{id}.mot.orgt"), vec![l_mot, 2]),
            (format!("{id}.obj.orgt"), vec![l_app, 4, 5]),
        ];
        for (name, shape) in &names {
            write_tensor_file(dir.join(name), &FeatureTensor::zeros(shape.clone())).unwrap();
        }
        ManifestEntry {
            video_id: id.into(),
            appearance: names[0].0.clone(),
            motion: names[1].0.clone(),
            objects: names[2].0.clone(),
            captions: vec![format!("caption for {id}")],
        }
    }

    #[test]
    fn loads_in_manifest_order() {
        let dir = tempfile::tempdir().unwrap();
        let m = Manifest {
            videos: vec![
                write_video(dir.path(), "b", 8, 8),
                write_video(dir.path(), "a", 8, 8),
            ],
        };
        let p = dir.path().join("manifest.json");
        m.save(&p).unwrap();
        let recs = load_dataset(&p).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].video_id, "b");
        assert_eq!(recs[1].video_id, "a");
        assert_eq!(recs[0].objects_per_frame(), 4);
    }

    #[test]
    fn frame_mismatch_is_shape_error_naming_video() {
        let dir = tempfile::tempdir().unwrap();
        let m = Manifest {
            videos: vec![write_video(dir.path(), "bad", 8, 7)],
        };
        let p = dir.path().join("manifest.json");
        m.save(&p).unwrap();
        match load_dataset(&p) {
            Err(Error::Shape(msg)) => assert!(msg.contains("bad")),
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn missing_tensor_is_load_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut e = write_video(dir.path(), "gone", 2, 2);
        e.motion = "nope.orgt".into();
        let p = dir.path().join("manifest.json");
        Manifest { videos: vec![e] }.save(&p).unwrap();
        match load_dataset(&p) {
            Err(Error::Load { video_id, .. }) => assert_eq!(video_id, "gone"),
            other => panic!("expected load error, got {other:?}"),
        }
    }
}

//! Seeded synthetic captioning datasets.
//!
//! Every video carries a latent `(subject, verb, object)` triple. Fixed
//! random token embeddings (standard normal, drawn once per dataset) are
//! written into the feature streams: appearance and motion frames carry the
//! subject and verb, object slot 0 carries the subject and slot 1 the object
//! noun, remaining slots carry fixed background vectors. The caption is
//! always `a <subject> <verb> a <object>`.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::dataset::{Manifest, ManifestEntry, VideoRecord};
use super::tensor::{write_tensor_file, FeatureTensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub videos: usize,
    pub frames: usize,
    pub objects: usize,
    pub appearance_dim: usize,
    pub motion_dim: usize,
    pub object_dim: usize,
    pub subjects: Vec<String>,
    pub verbs: Vec<String>,
    pub nouns: Vec<String>,
    pub noise: f64,
}

fn words(ws: &[&str]) -> Vec<String> {
    ws.iter().map(|s| s.to_string()).collect()
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            videos: 20,
            frames: 8,
            objects: 4,
            appearance_dim: 32,
            motion_dim: 32,
            object_dim: 32,
            subjects: words(&["man", "woman", "dog", "cat", "child"]),
            verbs: words(&["rides", "holds", "chases", "watches", "pushes"]),
            nouns: words(&["bike", "ball", "car", "box", "kite"]),
            noise: 0.1,
        }
    }
}

impl SyntheticConfig {
    fn validate(&self) -> Result<()> {
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return Err(Error::config(format!(
                "noise level must be finite and >= 0, got {}",
                self.noise
            )));
        }
        if self.videos == 0 || self.frames == 0 {
            return Err(Error::config("videos and frames must be positive"));
        }
        if self.objects < 2 {
            return Err(Error::config("need at least 2 object slots"));
        }
        if self.appearance_dim == 0 || self.motion_dim == 0 || self.object_dim == 0 {
            return Err(Error::config("feature dims must be positive"));
        }
        if self.subjects.is_empty() || self.verbs.is_empty() || self.nouns.is_empty() {
            return Err(Error::config("grammar word lists must be nonempty"));
        }
        Ok(())
    }
}

/// One synthesized video before it is written to disk.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticVideo {
    pub video_id: String,
    pub triple: (usize, usize, usize),
    pub appearance: FeatureTensor,
    pub motion: FeatureTensor,
    pub objects: FeatureTensor,
    pub caption: String,
}

impl SyntheticVideo {
    /// The in-memory record `load_dataset` would return for this video.
    pub fn to_record(&self) -> Result<VideoRecord> {
        VideoRecord::new(
            self.video_id.clone(),
            self.appearance.clone(),
            self.motion.clone(),
            self.objects.clone(),
            vec![self.caption.clone()],
        )
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn normal_table(rng: &mut ChaCha8Rng, rows: usize, n: usize) -> Vec<Vec<f64>> {
    (0..rows).map(|_| normal_vec(rng, n)).collect()
}

/// Each word index appears `count / n` or `count / n + 1` times, shuffled.
fn balanced_indices(rng: &mut ChaCha8Rng, count: usize, n: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (0..count).map(|i| i % n).collect();
    v.shuffle(rng);
    v
}

/// Pure function of `(cfg, seed)`.
pub fn synthesize(cfg: &SyntheticConfig, seed: u64) -> Result<Vec<SyntheticVideo>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (ns, nv, nn) = (cfg.subjects.len(), cfg.verbs.len(), cfg.nouns.len());
    let app_subj = normal_table(&mut rng, ns, cfg.appearance_dim);
    let app_verb = normal_table(&mut rng, nv, cfg.appearance_dim);
    let mot_subj = normal_table(&mut rng, ns, cfg.motion_dim);
    let mot_verb = normal_table(&mut rng, nv, cfg.motion_dim);
    let obj_subj = normal_table(&mut rng, ns, cfg.object_dim);
    let obj_noun = normal_table(&mut rng, nn, cfg.object_dim);
    let background = normal_table(&mut rng, cfg.objects, cfg.object_dim);

    let subj_idx = balanced_indices(&mut rng, cfg.videos, ns);
    let verb_idx = balanced_indices(&mut rng, cfg.videos, nv);
    let noun_idx = balanced_indices(&mut rng, cfg.videos, nn);

    let width = cfg.videos.to_string().len().max(3);
    let mut out = Vec::with_capacity(cfg.videos);
    for v in 0..cfg.videos {
        let (s, vb, o) = (subj_idx[v], verb_idx[v], noun_idx[v]);
        let mut noisy = |base: f64| -> f32 {
            let e: f64 = if cfg.noise > 0.0 {
                StandardNormal.sample(&mut rng)
            } else {
                0.0
            };
            (base + cfg.noise * e) as f32
        };
        let l = cfg.frames;
        let mut app = Vec::with_capacity(l * cfg.appearance_dim);
        let mut mot = Vec::with_capacity(l * cfg.motion_dim);
        let mut obj = Vec::with_capacity(l * cfg.objects * cfg.object_dim);
        for _ in 0..l {
            for k in 0..cfg.appearance_dim {
                app.push(noisy(app_subj[s][k] + app_verb[vb][k]));
            }
            for k in 0..cfg.motion_dim {
                mot.push(noisy(mot_subj[s][k] + mot_verb[vb][k]));
            }
            for slot in 0..cfg.objects {
                let base = match slot {
                    0 => &obj_subj[s],
                    1 => &obj_noun[o],
                    _ => &background[slot],
                };
                for &b in base {
                    obj.push(noisy(b));
                }
            }
        }
        out.push(SyntheticVideo {
            video_id: format!("video{v:0width$}"),
            triple: (s, vb, o),
            appearance: FeatureTensor::new(vec![l, cfg.appearance_dim], app)?,
            motion: FeatureTensor::new(vec![l, cfg.motion_dim], mot)?,
            objects: FeatureTensor::new(vec![l, cfg.objects, cfg.object_dim], obj)?,
            caption: format!("a {} {} a {}", cfg.subjects[s], cfg.verbs[vb], cfg.nouns[o]),
        });
    }
    Ok(out)
}

/// Writes `manifest.json` and `tensors/*.orgt` under `dir`.
pub fn generate_synthetic(
    cfg: &SyntheticConfig,
    seed: u64,
    dir: impl AsRef<Path>,
) -> Result<Manifest> {
    let dir = dir.as_ref();
    let videos = synthesize(cfg, seed)?;
    let tensor_dir = dir.join("tensors");
    fs::create_dir_all(&tensor_dir).map_err(|e| Error::io(&tensor_dir, e))?;
    let mut manifest = Manifest::default();
    for v in &videos {
        let rel = |kind: &str| format!("tensors/{}.{kind}.orgt", v.video_id);
        let entry = ManifestEntry {
            video_id: v.video_id.clone(),
            appearance: rel("app"),
            motion: rel("mot"),
            objects: rel("obj"),
            captions: vec![v.caption.clone()],
        };
        write_tensor_file(dir.join(&entry.appearance), &v.appearance)?;
        write_tensor_file(dir.join(&entry.motion), &v.motion)?;
        write_tensor_file(dir.join(&entry.objects), &v.objects)?;
        manifest.videos.push(entry);
    }
    manifest.save(dir.join("manifest.json"))?;
    Ok(manifest)
}

/// Captions whose words follow a Zipf law with the given exponent over a
/// vocabulary of `vocab_size` words named `w0000`, `w0001`, ...
pub fn long_tail_corpus(
    vocab_size: usize,
    captions: usize,
    words_per_caption: usize,
    exponent: f64,
    seed: u64,
) -> Result<Vec<String>> {
    if vocab_size == 0 || words_per_caption == 0 {
        return Err(Error::config(
            "vocab_size and words_per_caption must be positive",
        ));
    }
    if !(exponent > 0.0) {
        return Err(Error::config("Zipf exponent must be positive"));
    }
    let weights: Vec<f64> = (1..=vocab_size)
        .map(|r| (r as f64).powf(-exponent))
        .collect();
    let total: f64 = weights.iter().sum();
    let mut cdf = Vec::with_capacity(vocab_size);
    let mut acc = 0.0;
    for w in &weights {
        acc += w / total;
        cdf.push(acc);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..captions)
        .map(|_| {
            (0..words_per_caption)
                .map(|_| {
                    let u: f64 = rng.random();
                    let r = cdf.partition_point(|&c| c < u).min(vocab_size - 1);
                    format!("w{r:04}")
                })
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_store::dataset::load_dataset;

    fn small() -> SyntheticConfig {
        SyntheticConfig::default()
    }

    fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
        let mut out = Vec::new();
        let mut stack = vec![dir.to_path_buf()];
        while let Some(d) = stack.pop() {
            for e in fs::read_dir(&d).unwrap() {
                let p = e.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    let rel = p.strip_prefix(dir).unwrap().display().to_string();
                    out.push((rel, fs::read(&p).unwrap()));
                }
            }
        }
        out.sort();
        out
    }

    #[test]
    fn same_seed_is_byte_identical() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        generate_synthetic(&small(), 13, a.path()).unwrap();
        generate_synthetic(&small(), 13, b.path()).unwrap();
        let (ba, bb) = (dir_bytes(a.path()), dir_bytes(b.path()));
        assert_eq!(ba.len(), 61);
        assert_eq!(ba, bb);
    }

    #[test]
    fn different_seed_differs() {
        let a = synthesize(&small(), 13).unwrap();
        let b = synthesize(&small(), 14).unwrap();
        assert!(a
            .iter()
            .zip(&b)
            .any(|(x, y)| x.appearance.to_bytes() != y.appearance.to_bytes()));
    }

    #[test]
    fn noiseless_equal_triples_give_equal_features() {
        let cfg = SyntheticConfig {
            noise: 0.0,
            videos: 40,
            ..small()
        };
        let vids = synthesize(&cfg, 3).unwrap();
        let mut found = false;
        for i in 0..vids.len() {
            for j in i + 1..vids.len() {
                if vids[i].triple == vids[j].triple {
                    found = true;
                    assert_eq!(vids[i].appearance, vids[j].appearance);
                    assert_eq!(vids[i].motion, vids[j].motion);
                    assert_eq!(vids[i].objects, vids[j].objects);
                }
            }
        }
        assert!(
            found,
            "40 videos over 125 triples should repeat one at seed 3"
        );
    }

    #[test]
    fn negative_noise_rejected() {
        let cfg = SyntheticConfig {
            noise: -0.5,
            ..small()
        };
        assert!(matches!(synthesize(&cfg, 1), Err(Error::Config(_))));
    }

    #[test]
    fn captions_follow_template_and_words_are_balanced() {
        let vids = synthesize(&small(), 13).unwrap();
        let cfg = small();
        for v in &vids {
            let (s, vb, o) = v.triple;
            assert_eq!(
                v.caption,
                format!("a {} {} a {}", cfg.subjects[s], cfg.verbs[vb], cfg.nouns[o])
            );
        }
        for s in 0..5 {
            assert_eq!(vids.iter().filter(|v| v.triple.0 == s).count(), 4);
        }
    }

    #[test]
    fn generated_dataset_loads() {
        let dir = tempfile::tempdir().unwrap();
        generate_synthetic(&small(), 13, dir.path()).unwrap();
        let recs = load_dataset(dir.path().join("manifest.json")).unwrap();
        assert_eq!(recs.len(), 20);
        assert!(recs
            .iter()
            .all(|r| r.objects_per_frame() == 4 && r.frames() == 8));
    }

    #[test]
    fn long_tail_corpus_is_skewed() {
        let c = long_tail_corpus(200, 500, 8, 1.1, 5).unwrap();
        let first = c
            .iter()
            .flat_map(|s| s.split(' '))
            .filter(|w| *w == "w0000")
            .count();
        let tenth = c
            .iter()
            .flat_map(|s| s.split(' '))
            .filter(|w| *w == "w0009")
            .count();
        assert!(first > 5 * tenth);
    }
}

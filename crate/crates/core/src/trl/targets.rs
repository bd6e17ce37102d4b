//! Top-k soft targets and their on-disk store.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;

use super::elm::ExternalLanguageModel;
use crate::error::{Error, Result};
use crate::feature_store::TokenSequence;

/// `(word id, probability)` pairs in descending probability, ties by lower
/// word id. Probabilities are the raw ELM values, not renormalized.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftTargetSet(Vec<(usize, f64)>);

impl SoftTargetSet {
    pub fn new(pairs: Vec<(usize, f64)>) -> Result<Self> {
        for w in pairs.windows(2) {
            if w[0].1 < w[1].1 || (w[0].1 == w[1].1 && w[0].0 >= w[1].0) {
                return Err(Error::Validation(
                    "soft targets must be sorted by descending probability".into(),
                ));
            }
        }
        if pairs.iter().any(|&(_, p)| !(p > 0.0 && p <= 1.0)) {
            return Err(Error::Validation(
                "soft target probability outside (0, 1]".into(),
            ));
        }
        let mut ids: Vec<usize> = pairs.iter().map(|&(w, _)| w).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != pairs.len() {
            return Err(Error::Validation("duplicate soft target word".into()));
        }
        Ok(Self(pairs))
    }

    pub fn pairs(&self) -> &[(usize, f64)] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Total probability mass kept.
    pub fn mass(&self) -> f64 {
        self.0.iter().map(|&(_, p)| p).sum()
    }
}

/// The `k` most probable words of `q`.
pub fn soft_targets(q: &[f64], k: usize) -> Result<SoftTargetSet> {
    if k == 0 || k > q.len() {
        return Err(Error::config(format!(
            "soft target k must be in 1..={}, got {k}",
            q.len()
        )));
    }
    let mut order: Vec<usize> = (0..q.len()).collect();
    order.sort_by(|&a, &b| q[b].total_cmp(&q[a]).then(a.cmp(&b)));
    SoftTargetSet::new(order[..k].iter().map(|&w| (w, q[w])).collect())
}

const MAGIC: &[u8; 4] = b"ORGS";
const VERSION: u8 = 1;

/// Soft targets keyed by `(caption id, step)`, step `t` predicting the
/// `t`-th target token from the ground-truth prefix `w_{<t}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftTargetStore {
    k: usize,
    entries: BTreeMap<(u32, u16), SoftTargetSet>,
}

impl SoftTargetStore {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            entries: BTreeMap::new(),
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, caption: u32, step: u16, set: SoftTargetSet) -> Result<()> {
        if set.len() != self.k {
            return Err(Error::Validation(format!(
                "soft target set has {} pairs, store holds {}",
                set.len(),
                self.k
            )));
        }
        self.entries.insert((caption, step), set);
        Ok(())
    }

    pub fn get(&self, caption: u32, step: u16) -> Option<&SoftTargetSet> {
        self.entries.get(&(caption, step))
    }

    /// Sets for steps `1..=steps` of one caption.
    pub fn caption(&self, caption: u32, steps: usize) -> Result<Vec<&SoftTargetSet>> {
        (1..=steps)
            .map(|t| {
                u16::try_from(t)
                    .ok()
                    .and_then(|t| self.get(caption, t))
                    .ok_or_else(|| {
                        Error::Validation(format!("no soft targets for caption {caption} step {t}"))
                    })
            })
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = ((u32, u16), &SoftTargetSet)> {
        self.entries.iter().map(|(&k, v)| (k, v))
    }

    /// Header `ORGS`, version byte, `k` as u32, then per entry: caption id
    /// u32, step u16, `k` pairs of (word id u32, probability f32), all
    /// little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(9 + self.entries.len() * (6 + 8 * self.k));
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&(self.k as u32).to_le_bytes());
        for (&(caption, step), set) in &self.entries {
            out.extend_from_slice(&caption.to_le_bytes());
            out.extend_from_slice(&step.to_le_bytes());
            for &(w, p) in set.pairs() {
                out.extend_from_slice(&(w as u32).to_le_bytes());
                out.extend_from_slice(&(p as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 9 || &bytes[..4] != MAGIC {
            return Err(Error::Format("not a soft target store".into()));
        }
        if bytes[4] != VERSION {
            return Err(Error::Format(format!(
                "unsupported soft target store version {}",
                bytes[4]
            )));
        }
        let k = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let entry_len = 6 + 8 * k;
        let body = &bytes[9..];
        if body.len() % entry_len != 0 {
            return Err(Error::Corruption("soft target store ends mid-entry".into()));
        }
        let mut store = Self::new(k);
        for chunk in body.chunks_exact(entry_len) {
            let caption = u32::from_le_bytes(chunk[0..4].try_into().unwrap());
            let step = u16::from_le_bytes(chunk[4..6].try_into().unwrap());
            let pairs = chunk[6..]
                .chunks_exact(8)
                .map(|p| {
                    let w = u32::from_le_bytes(p[0..4].try_into().unwrap()) as usize;
                    let prob = f32::from_le_bytes(p[4..8].try_into().unwrap()) as f64;
                    (w, prob)
                })
                .collect();
            let set = SoftTargetSet::new(pairs).map_err(|e| Error::Corruption(e.to_string()))?;
            store.entries.insert((caption, step), set);
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Queries the ELM at every target position of every caption. Captions are
/// identified by their index in `captions`. Probabilities are stored at 32-bit
/// precision, so the sets are rounded the same way here.
pub fn precompute_soft_targets<E: ExternalLanguageModel>(
    captions: &[TokenSequence],
    elm: &E,
    vocab_size: usize,
    k: usize,
    temperature: f64,
) -> Result<SoftTargetStore> {
    if elm.vocab_size() != vocab_size {
        return Err(Error::Validation(format!(
            "language model covers {} words, vocabulary has {vocab_size}",
            elm.vocab_size()
        )));
    }
    let k = k.min(vocab_size);
    if k == 0 {
        return Err(Error::config("trl.k must be positive"));
    }
    let per_caption: Vec<Vec<(u16, SoftTargetSet)>> = captions
        .par_iter()
        .map(|seq| {
            let ids = seq.ids();
            if let Some(&bad) = ids.iter().find(|&&i| i >= vocab_size) {
                return Err(Error::Index {
                    index: bad,
                    size: vocab_size,
                });
            }
            (1..ids.len())
                .map(|t| {
                    let step = u16::try_from(t)
                        .map_err(|_| Error::Validation("caption too long".into()))?;
                    let q = elm.query(&ids[..t], temperature)?;
                    let set = soft_targets(&q, k)?;
                    Ok((step, round_to_f32(&set)?))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut store = SoftTargetStore::new(k);
    for (i, steps) in per_caption.into_iter().enumerate() {
        let id = u32::try_from(i).map_err(|_| Error::Validation("too many captions".into()))?;
        for (step, set) in steps {
            store.insert(id, step, set)?;
        }
    }
    Ok(store)
}

/// Rounds probabilities to 32-bit; a tie created by rounding keeps id order.
fn round_to_f32(set: &SoftTargetSet) -> Result<SoftTargetSet> {
    let mut pairs: Vec<(usize, f64)> = set
        .pairs()
        .iter()
        .map(|&(w, p)| (w, (p as f32).max(f32::MIN_POSITIVE) as f64))
        .collect();
    pairs.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    SoftTargetSet::new(pairs)
}

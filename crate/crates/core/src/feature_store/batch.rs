use super::dataset::VideoRecord;
use super::tensor::FeatureTensor;
use super::vocab::TokenSequence;
use crate::error::{Error, Result};

/// Stacked video features and padded token matrix for one minibatch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// `[B, L, d_a]`
    pub appearance: FeatureTensor,
    /// `[B, L, d_m]`
    pub motion: FeatureTensor,
    /// `[B, L, N, d_o]`
    pub objects: FeatureTensor,
    /// Row-major `[B, T_max]`, padded with the pad id.
    pub tokens: Vec<usize>,
    pub lengths: Vec<usize>,
    /// Row-major `[B, T_max]`, `true` on non-pad positions.
    pub mask: Vec<bool>,
    pub max_len: usize,
    pub pad_id: usize,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.lengths.len()
    }

    pub fn row(&self, b: usize) -> &[usize] {
        &self.tokens[b * self.max_len..(b + 1) * self.max_len]
    }

    pub fn mask_row(&self, b: usize) -> &[bool] {
        &self.mask[b * self.max_len..(b + 1) * self.max_len]
    }

    /// Strips padding from row `b`.
    pub fn unpad(&self, b: usize) -> Result<TokenSequence> {
        TokenSequence::new(self.row(b)[..self.lengths[b]].to_vec())
    }
}

fn stack(parts: Vec<&FeatureTensor>) -> Result<FeatureTensor> {
    let mut shape = vec![parts.len()];
    shape.extend_from_slice(parts[0].shape());
    let mut data = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
    for p in &parts {
        data.extend_from_slice(p.data());
    }
    FeatureTensor::new(shape, data)
}

pub fn make_batch(examples: &[(&VideoRecord, &TokenSequence)], pad_id: usize) -> Result<Batch> {
    let Some((first, _)) = examples.first() else {
        return Err(Error::Empty("batch needs at least one example".into()));
    };
    for (v, _) in examples {
        if v.appearance.shape() != first.appearance.shape()
            || v.motion.shape() != first.motion.shape()
            || v.objects.shape() != first.objects.shape()
        {
            return Err(Error::shape(format!(
                "video {} has feature shapes differing from video {}",
                v.video_id, first.video_id
            )));
        }
    }
    let max_len = examples.iter().map(|(_, s)| s.len()).max().unwrap_or(0);
    let mut tokens = Vec::with_capacity(examples.len() * max_len);
    let mut mask = Vec::with_capacity(examples.len() * max_len);
    let mut lengths = Vec::with_capacity(examples.len());
    for (_, seq) in examples {
        tokens.extend_from_slice(seq.ids());
        tokens.extend(std::iter::repeat_n(pad_id, max_len - seq.len()));
        mask.extend((0..max_len).map(|i| i < seq.len()));
        lengths.push(seq.len());
    }
    Ok(Batch {
        appearance: stack(examples.iter().map(|(v, _)| &v.appearance).collect())?,
        motion: stack(examples.iter().map(|(v, _)| &v.motion).collect())?,
        objects: stack(examples.iter().map(|(v, _)| &v.objects).collect())?,
        tokens,
        lengths,
        mask,
        max_len,
        pad_id,
    })
}

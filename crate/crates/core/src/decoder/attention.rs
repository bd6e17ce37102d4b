//! Global features and the temporal/spatial attention modules.

use rand::Rng;

use super::align::AlignmentMap;
use crate::error::{Error, Result};
use crate::nn::{Linear, ParamId, ParameterStore, Tape, Var};
use crate::scalar::Scalar;

/// Additive attention `softmax(w^T tanh(W x_i + U h))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionParams {
    /// `W`, `[feature_dim, attn_dim]`
    pub feature: ParamId,
    /// `U`, `[query_dim, attn_dim]`
    pub query: ParamId,
    /// `w`, `[attn_dim, 1]`
    pub score: ParamId,
}

impl AttentionParams {
    pub fn register<T: Scalar, R: Rng>(
        store: &mut ParameterStore<T>,
        name: &str,
        feature_dim: usize,
        query_dim: usize,
        attn_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            feature: store.insert_xavier(
                format!("{name}.w_feature"),
                feature_dim,
                attn_dim,
                rng,
            )?,
            query: store.insert_xavier(format!("{name}.w_query"), query_dim, attn_dim, rng)?,
            score: store.insert_xavier(format!("{name}.w_score"), attn_dim, 1, rng)?,
        })
    }
}

/// Projected per-frame features and their mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalFeatures {
    /// `[L, d_h]`
    pub frames: Var,
    /// `[1, d_h]`
    pub mean: Var,
}

/// Projects `[f_i, m_i]` to the hidden width and mean-pools over frames.
pub fn global_features<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParameterStore<T>,
    projection: &Linear,
    appearance: Var,
    motion: Var,
) -> Result<GlobalFeatures> {
    let (la, lm) = (tape.shape(appearance).0, tape.shape(motion).0);
    if la != lm {
        return Err(Error::shape(format!(
            "appearance has {la} frames, motion has {lm}"
        )));
    }
    let joined = tape.concat_cols(&[appearance, motion])?;
    let frames = projection.forward(tape, store, joined)?;
    let mean = tape.mean_rows(frames)?;
    Ok(GlobalFeatures { frames, mean })
}

fn additive_attention<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParameterStore<T>,
    params: &AttentionParams,
    items: Var,
    query: Var,
    mask: Option<&[bool]>,
) -> Result<(Var, Var)> {
    let n = tape.shape(items).0;
    if n == 0 {
        return Err(Error::Empty("attention over zero items".into()));
    }
    if let Some(m) = mask {
        if m.len() != n {
            return Err(Error::shape(format!(
                "attention mask has {} entries for {n} items",
                m.len()
            )));
        }
    }
    let w = tape.param(store, params.feature);
    let u = tape.param(store, params.query);
    let s = tape.param(store, params.score);
    let keys = tape.matmul(items, w)?;
    let q = tape.matmul(query, u)?;
    let pre = tape.add_row(keys, q)?;
    let act = tape.tanh(pre);
    let scores = tape.matmul(act, s)?;
    let scores = tape.transpose(scores);
    let weights = tape.softmax_rows(scores, mask.map(<[bool]>::to_vec))?;
    let context = tape.matmul(weights, items)?;
    Ok((weights, context))
}

/// Returns `(α [1, L], c_g [1, d_h])`. `frame_mask` marks valid frames.
pub fn temporal_attention<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParameterStore<T>,
    params: &AttentionParams,
    frames: Var,
    h_attn: Var,
    frame_mask: Option<&[bool]>,
) -> Result<(Var, Var)> {
    additive_attention(tape, store, params, frames, h_attn, frame_mask)
}

/// Returns `(β [1, N], c_l [1, d])`.
pub fn spatial_attention<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParameterStore<T>,
    params: &AttentionParams,
    aligned: Var,
    h_attn: Var,
) -> Result<(Var, Var)> {
    additive_attention(tape, store, params, aligned, h_attn, None)
}

/// `ũ_j = Σ_i α_i · enhanced[i][align_i(j)]` over frame-major `[L·N, d]`
/// features.
pub fn merge_aligned<T: Scalar>(
    tape: &mut Tape<T>,
    enhanced: Var,
    alignment: &AlignmentMap,
    alpha: Var,
) -> Result<Var> {
    let (rows, _) = tape.shape(enhanced);
    let (l, n) = (alignment.frames(), alignment.per_frame());
    if rows != l * n || tape.shape(alpha) != (1, l) {
        return Err(Error::shape(format!(
            "merge of {rows} object rows with {l}x{n} alignment and weights {:?}",
            tape.shape(alpha)
        )));
    }
    let ordered = tape.gather_rows(enhanced, &alignment.gather_indices())?;
    tape.frame_mix(alpha, ordered, n)
}

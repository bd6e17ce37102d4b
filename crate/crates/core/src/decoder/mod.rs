//! Hierarchical attention decoder.
//!
//! Each step runs the attention LSTM on `[v̄, W_e w_{t-1}, h_lang]`, attends
//! over frames (α), merges the aligned object features of every frame with
//! α, attends over the merged objects (β), and feeds both contexts to the
//! language LSTM whose hidden state is projected to vocabulary logits.

mod align;
mod attention;
mod beam;

pub use align::{align_objects, AlignmentMap};
pub use attention::{
    global_features, merge_aligned, spatial_attention, temporal_attention, AttentionParams,
    GlobalFeatures,
};
pub use beam::{beam_search, greedy_decode, Hypothesis, SearchConfig, StepModel};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::feature_store::{FeatureTensor, VideoRecord, BOS, PAD, UNK};
use crate::nn::{
    embedding_lookup, Linear, LstmCell, LstmState, Mat, ParamId, ParameterStore, Tape, Var,
};
use crate::org::{encode_objects, OrgConfig, OrgEncoding, OrgParams};
use crate::scalar::Scalar;

/// Shapes of the captioning model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub appearance_dim: usize,
    pub motion_dim: usize,
    pub object_dim: usize,
    pub vocab_size: usize,
    pub org: OrgConfig,
    /// `d_h`, shared by both LSTMs and the frame projection.
    pub hidden: usize,
    pub word_dim: usize,
    pub attn_dim: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("appearance_dim", self.appearance_dim),
            ("motion_dim", self.motion_dim),
            ("object_dim", self.object_dim),
            ("org.dim", self.org.dim),
            ("decoder.hidden", self.hidden),
            ("decoder.word_dim", self.word_dim),
            ("decoder.attn_dim", self.attn_dim),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if self.vocab_size < 4 {
            return Err(Error::config(
                "vocabulary must hold at least the reserved tokens",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub org: OrgParams,
    /// `[f_i, m_i] → d_h`
    pub frame_proj: Linear,
    /// `W_e`, `[D, d_w]`
    pub embedding: ParamId,
    pub attn_lstm: LstmCell,
    pub temporal: AttentionParams,
    pub spatial: AttentionParams,
    pub lang_lstm: LstmCell,
    /// `W_z`, `b_z`
    pub output: Linear,
}

impl ModelParams {
    fn register<T: Scalar>(
        cfg: &ModelConfig,
        store: &mut ParameterStore<T>,
        seed: u64,
    ) -> Result<Self> {
        let rng = &mut ChaCha8Rng::seed_from_u64(seed);
        let (h, d) = (cfg.hidden, cfg.org.dim);
        Ok(Self {
            org: OrgParams::register(store, cfg.object_dim, d, rng)?,
            frame_proj: Linear::register(
                store,
                "frame_proj",
                cfg.appearance_dim + cfg.motion_dim,
                h,
                true,
                rng,
            )?,
            embedding: store.insert_xavier("embedding", cfg.vocab_size, cfg.word_dim, rng)?,
            attn_lstm: LstmCell::register(store, "attn_lstm", h + cfg.word_dim + h, h, rng)?,
            temporal: AttentionParams::register(store, "temporal", h, h, cfg.attn_dim, rng)?,
            spatial: AttentionParams::register(store, "spatial", d, h, cfg.attn_dim, rng)?,
            lang_lstm: LstmCell::register(store, "lang_lstm", h + d + h, h, rng)?,
            output: Linear::register(store, "output", h, cfg.vocab_size, true, rng)?,
        })
    }
}

/// Per-video quantities computed once before decoding.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoContext {
    pub global: GlobalFeatures,
    pub objects: OrgEncoding,
    pub alignment: AlignmentMap,
    pub frame_mask: Option<Vec<bool>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoderState {
    pub attn: LstmState,
    pub lang: LstmState,
    /// `[1, L]`, absent before the first step.
    pub alpha: Option<Var>,
    /// `[1, N]`, absent before the first step.
    pub beta: Option<Var>,
}

/// Result of one decoding step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutput {
    /// Unnormalized vocabulary scores `[1, D]`.
    pub logits: Var,
    pub state: DecoderState,
}

/// Parameters plus their layout.
#[derive(Debug, Clone)]
pub struct CaptionModel<T> {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub store: ParameterStore<T>,
}

fn tensor_to_mat<T: Scalar>(t: &FeatureTensor, rows: usize) -> Result<Mat<T>> {
    let cols = if rows == 0 { 0 } else { t.len() / rows };
    Mat::from_vec(rows, cols, t.data().iter().map(|&v| T::of_f32(v)).collect())
}

impl<T: Scalar> CaptionModel<T> {
    /// Fresh model with parameters drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParameterStore::new();
        let params = ModelParams::register(&config, &mut store, seed)?;
        Ok(Self {
            config,
            params,
            store,
        })
    }

    /// Same layout and values at another precision.
    pub fn cast<U: Scalar>(&self) -> CaptionModel<U> {
        CaptionModel {
            config: self.config,
            params: self.params,
            store: self.store.cast(),
        }
    }

    fn check_video(&self, video: &VideoRecord) -> Result<()> {
        let c = &self.config;
        if video.appearance_dim() != c.appearance_dim
            || video.motion_dim() != c.motion_dim
            || video.object_dim() != c.object_dim
        {
            return Err(Error::shape(format!(
                "video {} has feature widths ({}, {}, {}), model expects ({}, {}, {})",
                video.video_id,
                video.appearance_dim(),
                video.motion_dim(),
                video.object_dim(),
                c.appearance_dim,
                c.motion_dim,
                c.object_dim
            )));
        }
        Ok(())
    }

    /// Projects global features, runs the relational encoder and aligns
    /// objects across frames.
    pub fn encode_video(&self, tape: &mut Tape<T>, video: &VideoRecord) -> Result<VideoContext> {
        self.check_video(video)?;
        let (l, n) = (video.frames(), video.objects_per_frame());
        let app = tape.constant(tensor_to_mat(&video.appearance, l)?);
        let mot = tape.constant(tensor_to_mat(&video.motion, l)?);
        let obj = tape.constant(tensor_to_mat(&video.objects, l * n)?);
        let global = global_features(tape, &self.store, &self.params.frame_proj, app, mot)?;
        let objects = encode_objects(
            tape,
            &self.store,
            &self.params.org,
            &self.config.org,
            obj,
            l,
            n,
        )?;
        let alignment = align_objects(&video.objects)?;
        Ok(VideoContext {
            global,
            objects,
            alignment,
            frame_mask: None,
        })
    }

    pub fn initial_state(&self, tape: &mut Tape<T>) -> DecoderState {
        DecoderState {
            attn: LstmState::zeros(tape, self.config.hidden),
            lang: LstmState::zeros(tape, self.config.hidden),
            alpha: None,
            beta: None,
        }
    }

    pub fn attention_lstm_step(
        &self,
        tape: &mut Tape<T>,
        mean: Var,
        prev_word: usize,
        prev_lang_hidden: Var,
        state: LstmState,
    ) -> Result<LstmState> {
        let table = tape.param(&self.store, self.params.embedding);
        let word = embedding_lookup(tape, table, prev_word)?;
        let x = tape.concat_cols(&[mean, word, prev_lang_hidden])?;
        self.params.attn_lstm.step(tape, &self.store, x, state)
    }

    pub fn language_lstm_step(
        &self,
        tape: &mut Tape<T>,
        global_context: Var,
        local_context: Var,
        h_attn: Var,
        state: LstmState,
    ) -> Result<LstmState> {
        let x = tape.concat_cols(&[global_context, local_context, h_attn])?;
        self.params.lang_lstm.step(tape, &self.store, x, state)
    }

    /// `W_z h + b_z`.
    pub fn vocab_logits(&self, tape: &mut Tape<T>, h_lang: Var) -> Result<Var> {
        self.params.output.forward(tape, &self.store, h_lang)
    }

    /// `P_t = softmax(W_z h + b_z)`.
    pub fn vocab_distribution(&self, tape: &mut Tape<T>, h_lang: Var) -> Result<Var> {
        let logits = self.vocab_logits(tape, h_lang)?;
        tape.softmax_rows(logits, None)
    }

    pub fn decode_step(
        &self,
        tape: &mut Tape<T>,
        ctx: &VideoContext,
        prev_word: usize,
        state: DecoderState,
    ) -> Result<StepOutput> {
        let attn = self.attention_lstm_step(
            tape,
            ctx.global.mean,
            prev_word,
            state.lang.hidden,
            state.attn,
        )?;
        let (alpha, c_g) = temporal_attention(
            tape,
            &self.store,
            &self.params.temporal,
            ctx.global.frames,
            attn.hidden,
            ctx.frame_mask.as_deref(),
        )?;
        let merged = merge_aligned(tape, ctx.objects.enhanced, &ctx.alignment, alpha)?;
        let (beta, c_l) =
            spatial_attention(tape, &self.store, &self.params.spatial, merged, attn.hidden)?;
        let lang = self.language_lstm_step(tape, c_g, c_l, attn.hidden, state.lang)?;
        let logits = self.vocab_logits(tape, lang.hidden)?;
        Ok(StepOutput {
            logits,
            state: DecoderState {
                attn,
                lang,
                alpha: Some(alpha),
                beta: Some(beta),
            },
        })
    }

    /// Logits `[T, D]` for every target of a `BOS .. EOS` sequence, feeding
    /// the ground-truth previous word at each step.
    pub fn teacher_forced_logits(
        &self,
        tape: &mut Tape<T>,
        ctx: &VideoContext,
        tokens: &[usize],
    ) -> Result<Var> {
        if tokens.len() < 2 {
            return Err(Error::Validation(
                "teacher forcing needs at least one target".into(),
            ));
        }
        let mut state = self.initial_state(tape);
        let mut rows = Vec::with_capacity(tokens.len() - 1);
        for &prev in &tokens[..tokens.len() - 1] {
            let out = self.decode_step(tape, ctx, prev, state)?;
            rows.push(out.logits);
            state = out.state;
        }
        tape.concat_rows(&rows)
    }

    /// Beam-decodes one video; returns content ids without EOS.
    pub fn generate(&self, video: &VideoRecord, beam: usize, max_len: usize) -> Result<Vec<usize>> {
        let mut tape = Tape::new();
        let ctx = self.encode_video(&mut tape, video)?;
        let search = SearchConfig::for_model(beam, max_len + 1);
        let mut stepper = ModelStepper {
            model: self,
            tape: &mut tape,
            ctx: &ctx,
        };
        Ok(beam_search(&mut stepper, &search)?.tokens)
    }
}

/// Adapts a model and a video context to the [`StepModel`] interface.
pub struct ModelStepper<'a, T: Scalar> {
    pub model: &'a CaptionModel<T>,
    pub tape: &'a mut Tape<T>,
    pub ctx: &'a VideoContext,
}

impl<T: Scalar> StepModel for ModelStepper<'_, T> {
    type State = DecoderState;

    fn initial(&mut self) -> Result<DecoderState> {
        Ok(self.model.initial_state(self.tape))
    }

    fn step(&mut self, state: &DecoderState, prev: usize) -> Result<(Vec<f64>, DecoderState)> {
        let out = self.model.decode_step(self.tape, self.ctx, prev, *state)?;
        let logp = self.tape.log_softmax_rows(out.logits);
        Ok((self.tape.value(logp).to_f64(), out.state))
    }
}

impl SearchConfig {
    /// Search settings that never emit PAD, BOS or UNK.
    pub fn for_model(beam: usize, max_steps: usize) -> Self {
        Self {
            beam,
            max_steps,
            bos: BOS,
            eos: crate::feature_store::EOS,
            banned: vec![PAD, BOS, UNK],
        }
    }
}

#[cfg(test)]
mod tests;

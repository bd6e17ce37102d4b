//! Adam training loop with teacher forcing, checkpointing and evaluation.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::Pairing;
use crate::decoder::CaptionModel;
use crate::error::{Error, Result};
use crate::feature_store::{encode_caption, TokenSequence, VideoRecord, Vocabulary};
use crate::metrics::{MetricReport, ScoredCorpus};
use crate::nn::{load_checkpoint, save_checkpoint, ParameterStore, Tape, Var};
use crate::scalar::Scalar;
use crate::trl::{tel_term, trl_term, LossReport, Objective, SoftTargetStore};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update from the gradients in `store`.
pub fn adam_step<T: Scalar>(store: &mut ParameterStore<T>, cfg: &AdamConfig) -> Result<()> {
    if let Some(p) = store
        .iter()
        .find(|p| p.grad.data().iter().any(|g| !g.is_finite()))
    {
        return Err(Error::NonFinite(format!("gradient of {}", p.name)));
    }
    store.adam_steps += 1;
    let t = store.adam_steps as i32;
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let c1 = T::one() - T::of(cfg.beta1.powi(t));
    let c2 = T::one() - T::of(cfg.beta2.powi(t));
    let (lr, eps) = (T::of(cfg.lr), T::of(cfg.eps));
    for p in store.iter_mut() {
        let n = p.value.len();
        let (value, grad) = (p.value.data_mut(), p.grad.data());
        let (m, v) = (p.first_moment.data_mut(), p.second_moment.data_mut());
        for i in 0..n {
            let g = grad[i];
            m[i] = b1 * m[i] + (T::one() - b1) * g;
            v[i] = b2 * v[i] + (T::one() - b2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            value[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Rescales gradients to global norm `clip`; fails above `abort`.
/// Returns the norm before clipping.
pub fn clip_gradients<T: Scalar>(
    store: &mut ParameterStore<T>,
    clip: f64,
    abort: f64,
) -> Result<f64> {
    let norm = store.grad_norm().as_f64();
    if !norm.is_finite() {
        return Err(Error::NonFinite("gradient norm".into()));
    }
    if norm > abort {
        return Err(Error::Aborted(format!(
            "gradient norm {norm} exceeds {abort}"
        )));
    }
    if norm > clip {
        store.scale_grads(T::of(clip / norm));
    }
    Ok(norm)
}

/// One caption paired with its video.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub video: usize,
    /// Index of the caption in manifest order, the soft-target store key.
    pub caption_id: u32,
    pub tokens: TokenSequence,
}

/// Videos with their encoded captions.
#[derive(Debug, Clone)]
pub struct TrainData<'a> {
    pub videos: &'a [VideoRecord],
    /// Examples grouped by video, in manifest order.
    pub captions: Vec<Vec<Example>>,
}

impl<'a> TrainData<'a> {
    pub fn new(videos: &'a [VideoRecord], vocab: &Vocabulary, max_len: usize) -> Result<Self> {
        if videos.is_empty() {
            return Err(Error::Empty("training set".into()));
        }
        let mut next = 0u32;
        let captions = videos
            .iter()
            .enumerate()
            .map(|(v, rec)| {
                rec.captions
                    .iter()
                    .map(|text| {
                        let ex = Example {
                            video: v,
                            caption_id: next,
                            tokens: encode_caption(vocab, text, max_len),
                        };
                        next += 1;
                        ex
                    })
                    .collect()
            })
            .collect();
        Ok(Self { videos, captions })
    }

    /// All token sequences in caption-id order.
    pub fn sequences(&self) -> Vec<TokenSequence> {
        self.captions
            .iter()
            .flatten()
            .map(|e| e.tokens.clone())
            .collect()
    }

    /// The shuffled examples of one epoch.
    pub fn epoch(&self, pairing: Pairing, seed: u64, epoch: usize) -> Vec<&Example> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch as u64);
        let mut out: Vec<&Example> = match pairing {
            Pairing::PerCaption => self.captions.iter().flatten().collect(),
            Pairing::Sample => self
                .captions
                .iter()
                .filter(|c| !c.is_empty())
                .map(|c| &c[rng.random_range(0..c.len())])
                .collect(),
        };
        out.shuffle(&mut rng);
        out
    }
}

/// Builds the batch loss on `tape`: per-token mean cross-entropy and, when
/// soft targets are given, the truncated KL term.
pub fn batch_loss<T: Scalar>(
    model: &CaptionModel<T>,
    tape: &mut Tape<T>,
    videos: &[VideoRecord],
    batch: &[&Example],
    objective: Objective,
    soft: Option<&SoftTargetStore>,
) -> Result<(Var, LossReport)> {
    if batch.is_empty() {
        return Err(Error::Empty("batch".into()));
    }
    if objective.needs_soft_targets() && soft.is_none() {
        return Err(Error::Validation(
            "trl.lambda > 0 needs a soft-target store".into(),
        ));
    }
    let tokens: usize = batch.iter().map(|e| e.tokens.target_count()).sum();
    let scale = 1.0 / tokens as f64;
    let mut ce_parts = Vec::with_capacity(batch.len());
    let mut kl_parts = Vec::with_capacity(batch.len());
    for ex in batch {
        let video = videos.get(ex.video).ok_or(Error::Index {
            index: ex.video,
            size: videos.len(),
        })?;
        let ctx = model.encode_video(tape, video)?;
        let ids = ex.tokens.ids();
        let logits = model.teacher_forced_logits(tape, &ctx, ids)?;
        let log_probs = tape.log_softmax_rows(logits);
        ce_parts.push(tel_term(tape, log_probs, &ids[1..], scale)?);
        if let Some(store) = soft {
            let sets = store.caption(ex.caption_id, ids.len() - 1)?;
            kl_parts.push(trl_term(tape, log_probs, &sets, scale)?);
        }
    }
    let ce = sum_vars(tape, &ce_parts)?;
    let kl = match kl_parts.is_empty() {
        true => None,
        false => Some(sum_vars(tape, &kl_parts)?),
    };
    let loss = match (objective, kl) {
        (Objective::Tel, _) => ce,
        (Objective::Combined { lambda }, Some(kl)) => {
            let a = tape.scale(kl, T::of(lambda));
            let b = tape.scale(ce, T::of(1.0 - lambda));
            tape.add(a, b)?
        }
        (Objective::Combined { lambda }, None) => tape.scale(ce, T::of(1.0 - lambda)),
    };
    let report = LossReport {
        ce: tape.value(ce).scalar().as_f64(),
        kl: kl.map_or(0.0, |k| tape.value(k).scalar().as_f64()),
        combined: tape.value(loss).scalar().as_f64(),
        tokens,
    };
    Ok((loss, report))
}

fn sum_vars<T: Scalar>(tape: &mut Tape<T>, parts: &[Var]) -> Result<Var> {
    let mut acc = parts[0];
    for &p in &parts[1..] {
        acc = tape.add(acc, p)?;
    }
    Ok(acc)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub adam: AdamConfig,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub clip: f64,
    pub abort_norm: f64,
    pub pairing: Pairing,
    pub objective: Objective,
    /// Epochs without validation CIDEr improvement before stopping.
    pub patience: usize,
    pub checkpoint_dir: Option<PathBuf>,
    pub log_path: Option<PathBuf>,
    pub resume: bool,
}

impl TrainOptions {
    pub fn new(lr: f64, batch: usize, epochs: usize, seed: u64, objective: Objective) -> Self {
        Self {
            adam: AdamConfig::with_lr(lr),
            batch,
            epochs,
            seed,
            clip: 5.0,
            abort_norm: 1e4,
            pairing: Pairing::PerCaption,
            objective,
            patience: 10,
            checkpoint_dir: None,
            log_path: None,
            resume: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogEntry {
    pub epoch: usize,
    pub step: u64,
    pub ce: f64,
    pub kl: f64,
    pub loss: f64,
    pub grad_norm: f64,
    /// Seconds since the run (or resumed run) started.
    pub wall: f64,
}

/// Held-out videos used for early stopping.
pub struct Validation<'a> {
    pub videos: &'a [VideoRecord],
    pub vocab: &'a Vocabulary,
    pub beam: usize,
    pub max_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub entries: Vec<TrainLogEntry>,
    /// Last completed epoch (1-based).
    pub last_epoch: usize,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

/// One optimization step; returns the losses and the pre-clip norm.
pub fn train_step<T: Scalar>(
    model: &mut CaptionModel<T>,
    videos: &[VideoRecord],
    batch: &[&Example],
    soft: Option<&SoftTargetStore>,
    opts: &TrainOptions,
) -> Result<(LossReport, f64)> {
    let mut tape = Tape::new();
    let (loss, report) = batch_loss(model, &mut tape, videos, batch, opts.objective, soft)?;
    if !report.combined.is_finite() {
        return Err(Error::NonFinite(format!("loss {}", report.combined)));
    }
    model.store.zero_grad();
    tape.backward(loss, &mut model.store)?;
    let norm = clip_gradients(&mut model.store, opts.clip, opts.abort_norm)?;
    adam_step(&mut model.store, &opts.adam)?;
    Ok((report, norm))
}

/// Name of the checkpoint directory written after `epoch`.
pub fn epoch_dir_name(epoch: usize) -> String {
    format!("epoch_{epoch:04}")
}

/// Highest-numbered `epoch_NNNN` checkpoint under `dir`.
pub fn latest_checkpoint(dir: &Path) -> Result<Option<(usize, PathBuf)>> {
    let Ok(entries) = fs::read_dir(dir) else {
        return Ok(None);
    };
    let mut best: Option<(usize, PathBuf)> = None;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let Some(n) = name
            .to_str()
            .and_then(|s| s.strip_prefix("epoch_"))
            .and_then(|s| s.parse().ok())
        else {
            continue;
        };
        if best.as_ref().is_none_or(|(b, _)| n > *b) {
            best = Some((n, entry.path()));
        }
    }
    Ok(best)
}

const BEST_FILE: &str = "best.txt";

/// Checkpoint recorded as best by early stopping, if any.
pub fn best_checkpoint(dir: &Path) -> Result<Option<(usize, f64)>> {
    let path = dir.join(BEST_FILE);
    let Ok(text) = fs::read_to_string(&path) else {
        return Ok(None);
    };
    let mut epoch = None;
    let mut score = None;
    for line in text.lines() {
        if let Some(v) = line.strip_prefix("epoch=") {
            epoch = v.trim().parse().ok();
        } else if let Some(v) = line.strip_prefix("cider=") {
            score = v.trim().parse().ok();
        }
    }
    match (epoch, score) {
        (Some(e), Some(s)) => Ok(Some((e, s))),
        _ => Err(Error::Format(format!("malformed {}", path.display()))),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Runs the training loop, writing one checkpoint per epoch and one log
/// line per step when the corresponding paths are set.
pub fn train<T: Scalar>(
    model: &mut CaptionModel<T>,
    data: &TrainData<'_>,
    soft: Option<&SoftTargetStore>,
    opts: &TrainOptions,
    validation: Option<&Validation<'_>>,
) -> Result<TrainSummary> {
    if opts.batch == 0 {
        return Err(Error::config("train.batch must be positive"));
    }
    if opts.objective.needs_soft_targets() && soft.is_none() {
        return Err(Error::Validation(
            "trl.lambda > 0 needs a soft-target store".into(),
        ));
    }
    let mut start = 1;
    let mut best: Option<(usize, f64)> = None;
    if let (true, Some(dir)) = (opts.resume, &opts.checkpoint_dir) {
        if let Some((epoch, path)) = latest_checkpoint(dir)? {
            load_checkpoint(&mut model.store, path)?;
            start = epoch + 1;
            best = best_checkpoint(dir)?;
        }
    }
    let mut log = match &opts.log_path {
        Some(path) => {
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            let file = if opts.resume {
                OpenOptions::new().create(true).append(true).open(path)
            } else {
                File::create(path)
            };
            Some(BufWriter::new(file.map_err(|e| Error::io(path, e))?))
        }
        None => None,
    };
    let clock = Instant::now();
    let mut summary = TrainSummary {
        entries: Vec::new(),
        last_epoch: start - 1,
        best_epoch: best.map(|b| b.0),
        stopped_early: false,
    };
    for epoch in start..=opts.epochs {
        if let (Some(v), Some((b, _))) = (validation, best) {
            if opts.patience > 0 && epoch - 1 - b >= opts.patience && v.videos.len() >= 2 {
                summary.stopped_early = true;
                break;
            }
        }
        let examples = data.epoch(opts.pairing, opts.seed, epoch);
        for chunk in examples.chunks(opts.batch) {
            let (report, norm) = train_step(model, data.videos, chunk, soft, opts)?;
            let entry = TrainLogEntry {
                epoch,
                step: model.store.adam_steps,
                ce: report.ce,
                kl: report.kl,
                loss: report.combined,
                grad_norm: norm,
                wall: clock.elapsed().as_secs_f64(),
            };
            if let Some(w) = log.as_mut() {
                let line = serde_json::to_string(&entry).expect("log entry serializes");
                writeln!(w, "{line}").map_err(|e| Error::io(opts.log_path.as_ref().unwrap(), e))?;
            }
            summary.entries.push(entry);
        }
        if let Some(w) = log.as_mut() {
            w.flush()
                .map_err(|e| Error::io(opts.log_path.as_ref().unwrap(), e))?;
        }
        if let Some(dir) = &opts.checkpoint_dir {
            save_checkpoint(&model.store, dir.join(epoch_dir_name(epoch)))?;
        }
        if let Some(v) = validation.filter(|v| v.videos.len() >= 2) {
            let captions = generate_captions(model, v.videos, v.vocab, v.beam, v.max_len)?;
            let score = score_captions(&captions, v.videos)?.cider;
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((epoch, score));
                summary.best_epoch = Some(epoch);
                if let Some(dir) = &opts.checkpoint_dir {
                    write_text(
                        &dir.join(BEST_FILE),
                        &format!("epoch={epoch}\ncider={score}\n"),
                    )?;
                }
            }
        }
        summary.last_epoch = epoch;
    }
    Ok(summary)
}

/// Beam-decodes every video; returns `(video_id, caption)` in input order.
pub fn generate_captions<T: Scalar>(
    model: &CaptionModel<T>,
    videos: &[VideoRecord],
    vocab: &Vocabulary,
    beam: usize,
    max_len: usize,
) -> Result<Vec<(String, String)>> {
    videos
        .par_iter()
        .map(|v| {
            let ids = model.generate(v, beam, max_len)?;
            Ok((v.video_id.clone(), vocab.decode(&ids)))
        })
        .collect()
}

/// Scores captions against the reference captions of the same videos.
pub fn score_captions(
    captions: &[(String, String)],
    videos: &[VideoRecord],
) -> Result<MetricReport> {
    if videos.is_empty() {
        return Err(Error::Empty("evaluation set".into()));
    }
    let entries: Vec<(String, String, Vec<String>)> = videos
        .iter()
        .map(|v| {
            let hyp = captions
                .iter()
                .find(|(id, _)| *id == v.video_id)
                .map(|(_, c)| c.clone())
                .ok_or_else(|| {
                    Error::Validation(format!("no caption generated for {}", v.video_id))
                })?;
            Ok((v.video_id.clone(), hyp, v.captions.clone()))
        })
        .collect::<Result<_>>()?;
    MetricReport::compute(&ScoredCorpus::from_text(&entries)?)
}

/// Decodes and scores a dataset.
pub fn evaluate<T: Scalar>(
    model: &CaptionModel<T>,
    videos: &[VideoRecord],
    vocab: &Vocabulary,
    beam: usize,
    max_len: usize,
) -> Result<(Vec<(String, String)>, MetricReport)> {
    if videos.is_empty() {
        return Err(Error::Empty("evaluation set".into()));
    }
    let captions = generate_captions(model, videos, vocab, beam, max_len)?;
    let report = score_captions(&captions, videos)?;
    Ok((captions, report))
}

/// `video_id<TAB>caption` lines.
pub fn captions_to_tsv(captions: &[(String, String)]) -> String {
    captions
        .iter()
        .map(|(id, c)| format!("{id}\t{c}\n"))
        .collect()
}

pub fn read_captions_tsv(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.split_once('\t')
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .ok_or_else(|| Error::Format(format!("caption line without a tab: {l:?}")))
        })
        .collect()
}

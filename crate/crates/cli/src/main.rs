//! `orgtrl`: every pipeline stage as a subcommand.
//!
//! Pipeline order: gen-synth, build-vocab, train-elm, precompute-soft,
//! train, infer, eval. `stats` and `grad-check` are diagnostics.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use orgtrl::config::{keys_help, Config};
use orgtrl::decoder::CaptionModel;
use orgtrl::diagnostics::gradient_suite;
use orgtrl::feature_store::{
    all_captions, build_vocabulary, corpus_stats, generate_synthetic, load_dataset, VideoRecord,
    Vocabulary,
};
use orgtrl::nn::load_checkpoint;
use orgtrl::trainer::{
    best_checkpoint, captions_to_tsv, epoch_dir_name, generate_captions, latest_checkpoint,
    read_captions_tsv, score_captions, train, TrainData, TrainOptions, Validation,
};
use orgtrl::trl::{precompute_soft_targets, train_elm, NgramElm, Objective, SoftTargetStore};
use orgtrl::{CaptionModelF32, Error, Result};

const USAGE_ERROR: u8 = 1;
const RUNTIME_ERROR: u8 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "orgtrl",
    version,
    about = "Object relational graph captioning with teacher-recommended learning",
    after_help = keys_help()
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
struct Common {
    /// Configuration file of `key = value` lines.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override one key; applied after the file, in order.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Overrides the `seed` key.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory that relative paths in the configuration resolve against.
    #[arg(long, value_name = "DIR", default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset (manifest and feature tensors).
    #[command(after_help = keys_help())]
    GenSynth(Common),
    /// Build the vocabulary from the dataset captions.
    #[command(after_help = keys_help())]
    BuildVocab(Common),
    /// Print word-frequency statistics of the captions.
    #[command(after_help = keys_help())]
    Stats(Common),
    /// Train the external n-gram language model.
    #[command(after_help = keys_help())]
    TrainElm(Common),
    /// Compute and store the soft targets of every training caption.
    #[command(after_help = keys_help())]
    PrecomputeSoft(Common),
    /// Train the captioning model.
    #[command(after_help = keys_help())]
    Train(Common),
    /// Caption every video with beam search.
    #[command(after_help = keys_help())]
    Infer(Common),
    /// Score generated captions against the references.
    #[command(after_help = keys_help())]
    Eval(Common),
    /// Verify reverse-mode gradients against finite differences.
    #[command(after_help = keys_help())]
    GradCheck(Common),
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Self::GenSynth(c)
            | Self::BuildVocab(c)
            | Self::Stats(c)
            | Self::TrainElm(c)
            | Self::PrecomputeSoft(c)
            | Self::Train(c)
            | Self::Infer(c)
            | Self::Eval(c)
            | Self::GradCheck(c) => c,
        }
    }
}

/// Loaded configuration plus the directory it resolves paths against.
struct Run {
    cfg: Config,
    out: PathBuf,
}

impl Run {
    fn new(common: &Common) -> Result<Self> {
        let mut cfg = match &common.config {
            Some(path) => Config::load(path)?,
            None => Config::default(),
        };
        for assignment in &common.overrides {
            cfg.apply_override(assignment)?;
        }
        if let Some(seed) = common.seed {
            cfg.seed = seed;
        }
        Ok(Self {
            cfg,
            out: common.out.clone(),
        })
    }

    fn path(&self, p: &Path) -> PathBuf {
        self.out.join(p)
    }

    fn dataset(&self) -> Result<Vec<VideoRecord>> {
        load_dataset(self.path(&self.cfg.manifest))
    }

    fn vocab(&self) -> Result<Vocabulary> {
        Vocabulary::load(self.path(&self.cfg.vocab_path))
    }

    fn model(&self, videos: &[VideoRecord], vocab: &Vocabulary) -> Result<CaptionModelF32> {
        let first = videos
            .first()
            .ok_or_else(|| Error::Empty("dataset has no videos".into()))?;
        let config = self.cfg.model_config(
            first.appearance_dim(),
            first.motion_dim(),
            first.object_dim(),
            vocab.len(),
        );
        CaptionModel::new(config, self.cfg.seed)
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn gen_synth(run: &Run) -> Result<()> {
    let dir = run.path(&run.cfg.data_dir);
    let manifest = generate_synthetic(&run.cfg.synth, run.cfg.seed, &dir)?;
    println!(
        "wrote {} videos to {}",
        manifest.videos.len(),
        dir.display()
    );
    Ok(())
}

fn build_vocab(run: &Run) -> Result<()> {
    let videos = run.dataset()?;
    let vocab = build_vocabulary(&all_captions(&videos), run.cfg.min_count)?;
    let path = run.path(&run.cfg.vocab_path);
    vocab.save(&path)?;
    println!(
        "vocabulary of {} words written to {}",
        vocab.len(),
        path.display()
    );
    Ok(())
}

fn stats(run: &Run) -> Result<()> {
    let videos = run.dataset()?;
    let report = corpus_stats(&all_captions(&videos))?;
    print!("{}", report.render(20));
    Ok(())
}

fn train_elm_cmd(run: &Run) -> Result<()> {
    let videos = run.dataset()?;
    let vocab = run.vocab()?;
    let data = TrainData::new(&videos, &vocab, run.cfg.caption_max_len)?;
    let elm = train_elm(&data.sequences(), vocab.len(), run.cfg.elm)?;
    let path = run.path(&run.cfg.elm_path);
    elm.save(&path)?;
    println!(
        "order-{} language model written to {}",
        elm.order(),
        path.display()
    );
    Ok(())
}

fn precompute_soft(run: &Run) -> Result<()> {
    let videos = run.dataset()?;
    let vocab = run.vocab()?;
    let elm = NgramElm::load(run.path(&run.cfg.elm_path))?;
    let data = TrainData::new(&videos, &vocab, run.cfg.caption_max_len)?;
    let store = precompute_soft_targets(
        &data.sequences(),
        &elm,
        vocab.len(),
        run.cfg.trl_k,
        run.cfg.temperature,
    )?;
    let path = run.path(&run.cfg.soft_path);
    store.save(&path)?;
    println!(
        "{} soft-target sets (k={}) written to {}",
        store.len(),
        store.k(),
        path.display()
    );
    Ok(())
}

fn train_cmd(run: &Run) -> Result<()> {
    let cfg = &run.cfg;
    let videos = run.dataset()?;
    let vocab = run.vocab()?;
    let data = TrainData::new(&videos, &vocab, cfg.caption_max_len)?;
    let objective = Objective::new(cfg.lambda)?;
    let soft = if objective.needs_soft_targets() {
        Some(SoftTargetStore::load(run.path(&cfg.soft_path))?)
    } else {
        None
    };
    let held_out = match &cfg.validation {
        Some(p) => Some(load_dataset(run.path(p))?),
        None => None,
    };
    let validation = held_out.as_deref().map(|videos| Validation {
        videos,
        vocab: &vocab,
        beam: cfg.beam,
        max_len: cfg.decode_max_len,
    });
    let mut opts = TrainOptions::new(cfg.lr, cfg.batch, cfg.epochs, cfg.seed, objective);
    opts.clip = cfg.clip;
    opts.abort_norm = cfg.abort_norm;
    opts.pairing = cfg.pairing;
    opts.patience = cfg.patience;
    opts.checkpoint_dir = Some(run.path(&cfg.checkpoints));
    opts.log_path = Some(run.path(&cfg.log));
    opts.resume = cfg.resume;

    let mut model = run.model(&videos, &vocab)?;
    let summary = train(&mut model, &data, soft.as_ref(), &opts, validation.as_ref())?;
    if let Some(last) = summary.entries.last() {
        println!(
            "epoch {} step {}: loss={:.6} ce={:.6} kl={:.6}",
            last.epoch, last.step, last.loss, last.ce, last.kl
        );
    }
    if summary.stopped_early {
        println!("stopped early after epoch {}", summary.last_epoch);
    }
    if let Some(best) = summary.best_epoch {
        println!("best validation epoch {best}");
    }
    Ok(())
}

fn checkpoint_to_load(run: &Run) -> Result<PathBuf> {
    if let Some(p) = &run.cfg.checkpoint {
        return Ok(run.path(p));
    }
    let dir = run.path(&run.cfg.checkpoints);
    if let Some((epoch, _)) = best_checkpoint(&dir)? {
        return Ok(dir.join(epoch_dir_name(epoch)));
    }
    latest_checkpoint(&dir)?
        .map(|(_, p)| p)
        .ok_or_else(|| Error::Validation(format!("no checkpoint under {}", dir.display())))
}

fn infer(run: &Run) -> Result<()> {
    let videos = run.dataset()?;
    let vocab = run.vocab()?;
    let mut model = run.model(&videos, &vocab)?;
    let checkpoint = checkpoint_to_load(run)?;
    load_checkpoint(&mut model.store, &checkpoint)?;
    let captions = generate_captions(
        &model,
        &videos,
        &vocab,
        run.cfg.beam,
        run.cfg.decode_max_len,
    )?;
    let path = run.path(&run.cfg.captions);
    write(&path, &captions_to_tsv(&captions))?;
    println!(
        "{} captions from {} written to {}",
        captions.len(),
        checkpoint.display(),
        path.display()
    );
    Ok(())
}

fn eval(run: &Run) -> Result<()> {
    let videos = run.dataset()?;
    let captions = read_captions_tsv(&run.path(&run.cfg.captions))?;
    let report = score_captions(&captions, &videos)?;
    write(&run.path(&run.cfg.metrics), &report.summary())?;
    write(
        &run.path(&run.cfg.metrics_per_video),
        &report.per_video_table(),
    )?;
    print!("{}", report.summary());
    Ok(())
}

fn grad_check(run: &Run) -> Result<()> {
    let cfg = &run.cfg;
    let results = gradient_suite(cfg.grad_eps, cfg.grad_samples, cfg.seed)?;
    let mut worst = 0.0f64;
    for r in &results {
        let at = r
            .report
            .worst
            .as_ref()
            .map(|(name, i)| format!("{name}[{i}]"))
            .unwrap_or_default();
        println!(
            "{}: max_relative_error={:.3e} checked={} worst={at}",
            r.name, r.report.max_relative_error, r.report.checked
        );
        worst = worst.max(r.report.max_relative_error);
    }
    println!("max_relative_error={worst:.3e}");
    if worst < cfg.grad_tolerance {
        Ok(())
    } else {
        Err(Error::Validation(format!(
            "max relative error {worst:.3e} exceeds gradcheck.tolerance {}",
            cfg.grad_tolerance
        )))
    }
}

fn dispatch(command: &Command) -> std::result::Result<(), (u8, Error)> {
    let run = Run::new(command.common()).map_err(|e| (USAGE_ERROR, e))?;
    let result = match command {
        Command::GenSynth(_) => gen_synth(&run),
        Command::BuildVocab(_) => build_vocab(&run),
        Command::Stats(_) => stats(&run),
        Command::TrainElm(_) => train_elm_cmd(&run),
        Command::PrecomputeSoft(_) => precompute_soft(&run),
        Command::Train(_) => train_cmd(&run),
        Command::Infer(_) => infer(&run),
        Command::Eval(_) => eval(&run),
        Command::GradCheck(_) => grad_check(&run),
    };
    result.map_err(|e| (RUNTIME_ERROR, e))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(USAGE_ERROR),
            };
        }
    };
    match dispatch(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, e)) => {
            eprintln!("error: {e}");
            ExitCode::from(code)
        }
    }
}

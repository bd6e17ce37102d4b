use orgtrl::decoder::{CaptionModel, ModelConfig};
use orgtrl::feature_store::{build_vocabulary, synthesize, SyntheticConfig, VideoRecord};
use orgtrl::nn::{load_checkpoint, save_checkpoint};
use orgtrl::org::{OrgConfig, OrgMode, TopK};
use orgtrl::trainer::{train, TrainData, TrainOptions};
use orgtrl::trl::{
    precompute_soft_targets, train_elm, ElmConfig, ExternalLanguageModel, NgramElm, Objective,
    SoftTargetStore,
};
use orgtrl::CaptionModelF32;

fn videos() -> Vec<VideoRecord> {
    let cfg = SyntheticConfig {
        videos: 6,
        frames: 4,
        objects: 3,
        appearance_dim: 8,
        motion_dim: 8,
        object_dim: 8,
        ..SyntheticConfig::default()
    };
    synthesize(&cfg, 21)
        .unwrap()
        .iter()
        .map(|v| v.to_record().unwrap())
        .collect()
}

fn config(vocab_size: usize) -> ModelConfig {
    ModelConfig {
        appearance_dim: 8,
        motion_dim: 8,
        object_dim: 8,
        vocab_size,
        org: OrgConfig {
            mode: OrgMode::Partial,
            top_k: TopK::All,
            dim: 12,
        },
        hidden: 16,
        word_dim: 8,
        attn_dim: 8,
    }
}

#[test]
fn artifacts_round_trip_and_training_reduces_loss() {
    let dir = tempfile::tempdir().unwrap();
    let videos = videos();
    let captions: Vec<String> = videos.iter().flat_map(|v| v.captions.clone()).collect();
    let vocab = build_vocabulary(&captions, 1).unwrap();
    let data = TrainData::new(&videos, &vocab, 12).unwrap();
    let seqs = data.sequences();

    let elm = train_elm(&seqs, vocab.len(), ElmConfig::default()).unwrap();
    elm.save(dir.path().join("elm.json")).unwrap();
    let reloaded = NgramElm::load(dir.path().join("elm.json")).unwrap();
    for seq in &seqs {
        let prefix = &seq.ids()[..2];
        assert_eq!(
            elm.query(prefix, 1.5).unwrap(),
            reloaded.query(prefix, 1.5).unwrap()
        );
    }

    let soft = precompute_soft_targets(&seqs, &elm, vocab.len(), 6, 1.5).unwrap();
    soft.save(dir.path().join("soft.bin")).unwrap();
    let soft_back = SoftTargetStore::load(dir.path().join("soft.bin")).unwrap();
    assert_eq!(soft.len(), soft_back.len());
    for ((c, t), set) in soft.iter() {
        assert_eq!(soft_back.get(c, t), Some(set));
    }

    let mut model: CaptionModelF32 = CaptionModel::new(config(vocab.len()), 3).unwrap();
    let opts = TrainOptions::new(1e-2, 3, 60, 3, Objective::new(0.3).unwrap());
    let summary = train(&mut model, &data, Some(&soft_back), &opts, None).unwrap();
    let first = summary.entries.first().unwrap().ce;
    let last = summary.entries.last().unwrap().ce;
    assert!(last < 0.5 * first, "cross-entropy {first} -> {last}");

    save_checkpoint(&model.store, dir.path().join("ckpt")).unwrap();
    let mut restored: CaptionModelF32 = CaptionModel::new(config(vocab.len()), 99).unwrap();
    load_checkpoint(&mut restored.store, dir.path().join("ckpt")).unwrap();
    for video in &videos {
        assert_eq!(
            model.generate(video, 3, 12).unwrap(),
            restored.generate(video, 3, 12).unwrap()
        );
    }
}

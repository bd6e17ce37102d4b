//! Data model, on-disk formats, vocabulary and synthetic data.

mod batch;
mod dataset;
mod stats;
mod synthetic;
mod tensor;
mod vocab;

pub use batch::{make_batch, Batch};
pub use dataset::{all_captions, load_dataset, Manifest, ManifestEntry, VideoRecord};
pub use stats::{corpus_stats, FrequencyReport, HEAD_SIZE};
pub use synthetic::{
    generate_synthetic, long_tail_corpus, synthesize, SyntheticConfig, SyntheticVideo,
};
pub use tensor::{
    read_tensor_file, write_tensor_file, FeatureTensor, DTYPE_F32, TENSOR_MAGIC, TENSOR_VERSION,
};
pub use vocab::{
    build_vocabulary, encode_caption, tokenize, TokenSequence, Vocabulary, BOS, EOS, PAD, RESERVED,
    UNK,
};

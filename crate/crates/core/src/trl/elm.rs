//! External language model interface and the n-gram reference model.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_store::{TokenSequence, BOS};

/// A fixed language model over the task vocabulary.
pub trait ExternalLanguageModel: Sync {
    fn vocab_size(&self) -> usize;

    /// Next-word distribution after `prefix` (ground-truth history, with or
    /// without the leading BOS).
    fn base_distribution(&self, prefix: &[usize]) -> Vec<f64>;

    /// `Q_t`: the base distribution sharpened or flattened by `temperature`.
    fn query(&self, prefix: &[usize], temperature: f64) -> Result<Vec<f64>> {
        apply_temperature(&self.base_distribution(prefix), temperature)
    }
}

/// `q^(1/T)` renormalized; `T = 1` returns `q` unchanged.
pub fn apply_temperature(q: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::config(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if temperature == 1.0 {
        return Ok(q.to_vec());
    }
    let logs: Vec<f64> = q.iter().map(|&p| p.ln() / temperature).collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logs.iter().map(|&l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / z).collect())
}

/// How lower orders are combined with higher ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    /// `P_n(w|h) = (c(h,w) + αV·P_{n-1}(w|h')) / (c(h) + αV)`.
    Recursive,
    /// Equal-weight mixture of the add-α estimates of every order.
    Uniform,
}

impl FromStr for Interpolation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "recursive" => Ok(Self::Recursive),
            "uniform" => Ok(Self::Uniform),
            other => Err(Error::config(format!(
                "elm.interpolation must be recursive or uniform, got {other:?}"
            ))),
        }
    }
}

impl fmt::Display for Interpolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Recursive => "recursive",
            Self::Uniform => "uniform",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElmConfig {
    pub order: usize,
    pub alpha: f64,
    pub interpolation: Interpolation,
}

impl Default for ElmConfig {
    fn default() -> Self {
        Self {
            order: 3,
            alpha: 0.01,
            interpolation: Interpolation::Recursive,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
struct ContextCounts {
    total: u64,
    next: HashMap<usize, u64>,
}

#[derive(Serialize, Deserialize)]
struct StoredContext {
    context: Vec<usize>,
    next: Vec<(usize, u64)>,
}

#[derive(Serialize, Deserialize)]
struct StoredElm {
    order: usize,
    alpha: f64,
    interpolation: Interpolation,
    vocab_size: usize,
    /// One list per context length `0..order`, sorted by context.
    tables: Vec<Vec<StoredContext>>,
}

/// Interpolated add-α n-gram model with BOS-padded contexts.
#[derive(Debug, Clone, PartialEq)]
pub struct NgramElm {
    config: ElmConfig,
    vocab_size: usize,
    /// `tables[j]` maps a context of length `j` to its successor counts.
    tables: Vec<HashMap<Vec<usize>, ContextCounts>>,
}

/// Counts every `(context, next)` event of the corpus.
pub fn train_elm(
    corpus: &[TokenSequence],
    vocab_size: usize,
    config: ElmConfig,
) -> Result<NgramElm> {
    if config.order == 0 {
        return Err(Error::config("elm.order must be at least 1"));
    }
    if !(config.alpha > 0.0) || !config.alpha.is_finite() {
        return Err(Error::config(format!(
            "elm.alpha must be positive, got {}",
            config.alpha
        )));
    }
    if corpus.is_empty() {
        return Err(Error::Empty("language model corpus".into()));
    }
    let mut tables: Vec<HashMap<Vec<usize>, ContextCounts>> = vec![HashMap::new(); config.order];
    for seq in corpus {
        let ids = seq.ids();
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab_size) {
            return Err(Error::Index {
                index: bad,
                size: vocab_size,
            });
        }
        for t in 1..ids.len() {
            let history = padded_history(&ids[..t], config.order - 1);
            for (j, table) in tables.iter_mut().enumerate() {
                let ctx = history[history.len() - j..].to_vec();
                let entry = table.entry(ctx).or_default();
                entry.total += 1;
                *entry.next.entry(ids[t]).or_default() += 1;
            }
        }
    }
    Ok(NgramElm {
        config,
        vocab_size,
        tables,
    })
}

/// Last `len` tokens of `prefix`, left-padded with BOS.
fn padded_history(prefix: &[usize], len: usize) -> Vec<usize> {
    let take = prefix.len().min(len);
    let mut h = vec![BOS; len - take];
    h.extend_from_slice(&prefix[prefix.len() - take..]);
    h
}

impl NgramElm {
    pub fn config(&self) -> ElmConfig {
        self.config
    }

    pub fn order(&self) -> usize {
        self.config.order
    }

    fn counts(&self, context: &[usize]) -> Option<&ContextCounts> {
        self.tables[context.len()].get(context)
    }

    fn add_alpha(&self, context: &[usize]) -> Vec<f64> {
        let v = self.vocab_size as f64;
        let a = self.config.alpha;
        let c = self.counts(context);
        let total = c.map_or(0, |c| c.total) as f64;
        let mut out = vec![a / (total + a * v); self.vocab_size];
        if let Some(c) = c {
            for (&w, &n) in &c.next {
                out[w] = (n as f64 + a) / (total + a * v);
            }
        }
        out
    }

    fn recursive(&self, history: &[usize]) -> Vec<f64> {
        let mut p = self.add_alpha(&[]);
        let av = self.config.alpha * self.vocab_size as f64;
        for j in 1..self.config.order {
            let ctx = &history[history.len() - j..];
            let Some(c) = self.counts(ctx) else { continue };
            let denom = c.total as f64 + av;
            let mut next: Vec<f64> = p.iter().map(|&lower| av * lower / denom).collect();
            for (&w, &n) in &c.next {
                next[w] += n as f64 / denom;
            }
            p = next;
        }
        p
    }

    fn uniform(&self, history: &[usize]) -> Vec<f64> {
        let n = self.config.order as f64;
        let mut p = vec![0.0; self.vocab_size];
        for j in 0..self.config.order {
            let est = self.add_alpha(&history[history.len() - j..]);
            for (acc, e) in p.iter_mut().zip(est) {
                *acc += e / n;
            }
        }
        p
    }

    pub fn to_json(&self) -> String {
        let tables = self
            .tables
            .iter()
            .map(|table| {
                let mut entries: Vec<StoredContext> = table
                    .iter()
                    .map(|(ctx, c)| {
                        let mut next: Vec<(usize, u64)> =
                            c.next.iter().map(|(&w, &n)| (w, n)).collect();
                        next.sort_unstable();
                        StoredContext {
                            context: ctx.clone(),
                            next,
                        }
                    })
                    .collect();
                entries.sort_by(|a, b| a.context.cmp(&b.context));
                entries
            })
            .collect();
        let stored = StoredElm {
            order: self.config.order,
            alpha: self.config.alpha,
            interpolation: self.config.interpolation,
            vocab_size: self.vocab_size,
            tables,
        };
        serde_json::to_string(&stored).expect("language model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let stored: StoredElm = serde_json::from_str(text)
            .map_err(|e| Error::Format(format!("language model file: {e}")))?;
        if stored.order == 0 || stored.tables.len() != stored.order {
            return Err(Error::Format(
                "language model tables do not match its order".into(),
            ));
        }
        let mut tables = Vec::with_capacity(stored.order);
        for (j, list) in stored.tables.into_iter().enumerate() {
            let mut table = HashMap::with_capacity(list.len());
            for entry in list {
                if entry.context.len() != j
                    || entry.next.iter().any(|&(w, _)| w >= stored.vocab_size)
                {
                    return Err(Error::Format("malformed language model entry".into()));
                }
                let total = entry.next.iter().map(|&(_, n)| n).sum();
                table.insert(
                    entry.context,
                    ContextCounts {
                        total,
                        next: entry.next.into_iter().collect(),
                    },
                );
            }
            tables.push(table);
        }
        Ok(Self {
            config: ElmConfig {
                order: stored.order,
                alpha: stored.alpha,
                interpolation: stored.interpolation,
            },
            vocab_size: stored.vocab_size,
            tables,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

impl ExternalLanguageModel for NgramElm {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn base_distribution(&self, prefix: &[usize]) -> Vec<f64> {
        let history = padded_history(prefix, self.config.order - 1);
        match self.config.interpolation {
            Interpolation::Recursive => self.recursive(&history),
            Interpolation::Uniform => self.uniform(&history),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_store::EOS;
    use proptest::prelude::*;

    fn seq(content: &[usize]) -> TokenSequence {
        let mut ids = vec![BOS];
        ids.extend_from_slice(content);
        ids.push(EOS);
        TokenSequence::new(ids).unwrap()
    }

    fn cfg(order: usize, alpha: f64) -> ElmConfig {
        ElmConfig {
            order,
            alpha,
            interpolation: Interpolation::Recursive,
        }
    }

    #[test]
    fn forced_bigram_approaches_one() {
        // vocabulary: reserved 0..4, a=4, b=5
        let corpus = [seq(&[4, 5]), seq(&[4, 5])];
        let mut last = 0.0;
        for alpha in [1e-1, 1e-3, 1e-6] {
            let elm = train_elm(&corpus, 6, cfg(2, alpha)).unwrap();
            let p = elm.base_distribution(&[BOS, 4])[5];
            assert!(p > last);
            last = p;
        }
        assert!(last > 1.0 - 1e-5);
    }

    #[test]
    fn unigram_ignores_prefix_and_matches_counts() {
        let corpus = [seq(&[4, 5, 4]), seq(&[6])];
        let elm = train_elm(&corpus, 7, cfg(1, 0.5)).unwrap();
        // targets: 4,5,4,EOS,6,EOS -> N = 6
        let mut counts = [0.0; 7];
        for w in [4, 5, 4, EOS, 6, EOS] {
            counts[w] += 1.0;
        }
        let oracle: Vec<f64> = counts
            .iter()
            .map(|c| (c + 0.5) / (6.0 + 0.5 * 7.0))
            .collect();
        for prefix in [&[][..], &[BOS, 4][..], &[BOS, 6, 5, 4][..]] {
            let q = elm.base_distribution(prefix);
            for (a, b) in q.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn uniform_interpolation_mixes_orders() {
        let corpus = [seq(&[4, 5])];
        let mut c = cfg(2, 1.0);
        c.interpolation = Interpolation::Uniform;
        let elm = train_elm(&corpus, 6, c).unwrap();
        // unigram: targets 4,5,EOS; bigram after 4: only 5
        let uni = (1.0 + 1.0) / (3.0 + 6.0);
        let bi = (1.0 + 1.0) / (1.0 + 6.0);
        let q = elm.base_distribution(&[BOS, 4]);
        assert!((q[5] - 0.5 * (uni + bi)).abs() < 1e-15);
        assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bos_padding_aligns_sentence_start() {
        let corpus = [seq(&[4, 5]), seq(&[6, 5])];
        let elm = train_elm(&corpus, 7, cfg(3, 1e-6)).unwrap();
        let q = elm.base_distribution(&[]);
        assert!((q[4] - 0.5).abs() < 1e-4 && (q[6] - 0.5).abs() < 1e-4);
        assert_eq!(elm.base_distribution(&[BOS]), q);
        let after = elm.base_distribution(&[BOS, 4, 5]);
        assert!(after[EOS] > 0.999);
    }

    #[test]
    fn temperature_cases() {
        let q = [0.8, 0.2];
        assert_eq!(apply_temperature(&q, 1.0).unwrap(), q.to_vec());
        let flat = apply_temperature(&q, 1000.0).unwrap();
        assert!(flat.iter().all(|p| (p - 0.5).abs() < 1e-3));
        let sharp = apply_temperature(&q, 0.5).unwrap();
        assert!((sharp[0] - 16.0 / 17.0).abs() < 1e-12);
        assert!((sharp[1] - 1.0 / 17.0).abs() < 1e-12);
        assert!(matches!(apply_temperature(&q, 0.0), Err(Error::Config(_))));
        assert!(matches!(apply_temperature(&q, -1.0), Err(Error::Config(_))));
    }

    #[test]
    fn invalid_training_inputs() {
        assert!(matches!(
            train_elm(&[], 6, cfg(2, 0.1)),
            Err(Error::Empty(_))
        ));
        assert!(matches!(
            train_elm(&[seq(&[4])], 6, cfg(0, 0.1)),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            train_elm(&[seq(&[4])], 6, cfg(2, 0.0)),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            train_elm(&[seq(&[9])], 6, cfg(2, 0.1)),
            Err(Error::Index { .. })
        ));
    }

    #[test]
    fn json_round_trip() {
        let corpus = [seq(&[4, 5, 6]), seq(&[6, 5]), seq(&[4])];
        let elm = train_elm(&corpus, 8, cfg(3, 0.01)).unwrap();
        let text = elm.to_json();
        assert_eq!(text, elm.clone().to_json());
        let back = NgramElm::from_json(&text).unwrap();
        assert_eq!(back, elm);
        assert!(matches!(NgramElm::from_json("{"), Err(Error::Format(_))));
    }

    fn corpus_strategy() -> impl Strategy<Value = Vec<Vec<usize>>> {
        prop::collection::vec(prop::collection::vec(4usize..12, 0..6), 1..6)
    }

    proptest! {
        #[test]
        fn distributions_are_normalized_and_positive(
            corpus in corpus_strategy(),
            prefix in prop::collection::vec(1usize..12, 0..5),
            order in 1usize..5,
            uniform in any::<bool>(),
            temperature in 0.1f64..10.0,
        ) {
            let seqs: Vec<TokenSequence> = corpus.iter().map(|c| seq(c)).collect();
            let mut c = cfg(order, 0.01);
            if uniform {
                c.interpolation = Interpolation::Uniform;
            }
            let elm = train_elm(&seqs, 12, c).unwrap();
            let q = elm.query(&prefix, temperature).unwrap();
            prop_assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(q.iter().all(|&p| p > 0.0));
        }

        #[test]
        fn higher_temperature_is_closer_to_uniform(
            raw in prop::collection::vec(0.01f64..1.0, 2..8),
            t1 in 0.1f64..5.0,
            dt in 0.0f64..5.0,
        ) {
            let z: f64 = raw.iter().sum();
            let q: Vec<f64> = raw.iter().map(|r| r / z).collect();
            let u = 1.0 / q.len() as f64;
            let tv = |p: &[f64]| p.iter().map(|x| (x - u).abs()).sum::<f64>() / 2.0;
            let a = apply_temperature(&q, t1).unwrap();
            let b = apply_temperature(&q, t1 + dt).unwrap();
            prop_assert!(tv(&b) <= tv(&a) + 1e-12);
        }
    }
}

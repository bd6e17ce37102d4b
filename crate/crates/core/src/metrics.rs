//! Corpus-level caption metrics: BLEU-4, ROUGE-L and CIDEr.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::feature_store::tokenize;

/// Smoothing floor substituted for a zero n-gram precision.
pub const BLEU_EPSILON: f64 = 1e-9;
pub const ROUGE_BETA: f64 = 1.2;
pub const CIDER_SCALE: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScoredItem {
    pub video_id: String,
    pub hypothesis: Vec<String>,
    pub references: Vec<Vec<String>>,
}

/// Hypotheses paired with their reference sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScoredCorpus {
    items: Vec<ScoredItem>,
}

impl ScoredCorpus {
    pub fn new(items: Vec<ScoredItem>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::Empty("no hypotheses to score".into()));
        }
        if let Some(item) = items.iter().find(|i| i.references.is_empty()) {
            return Err(Error::Validation(format!(
                "video {} has no references",
                item.video_id
            )));
        }
        Ok(Self { items })
    }

    /// Tokenizes raw strings with the captioning tokenizer.
    pub fn from_text<S: AsRef<str>>(entries: &[(S, S, Vec<S>)]) -> Result<Self> {
        Self::new(
            entries
                .iter()
                .map(|(id, hyp, refs)| ScoredItem {
                    video_id: id.as_ref().to_string(),
                    hypothesis: tokenize(hyp.as_ref()),
                    references: refs.iter().map(|r| tokenize(r.as_ref())).collect(),
                })
                .collect(),
        )
    }

    pub fn items(&self) -> &[ScoredItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

fn ngrams(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for g in tokens.windows(n) {
            *out.entry(g).or_insert(0) += 1;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct BleuStats {
    matches: [usize; 4],
    totals: [usize; 4],
    hyp_len: usize,
    ref_len: usize,
}

fn bleu_stats(item: &ScoredItem) -> BleuStats {
    let mut s = BleuStats {
        hyp_len: item.hypothesis.len(),
        ..Default::default()
    };
    let h = s.hyp_len as i64;
    s.ref_len = item
        .references
        .iter()
        .map(|r| r.len())
        .min_by_key(|&len| ((len as i64 - h).abs(), len))
        .unwrap_or(0);
    for n in 1..=4 {
        let hyp = ngrams(&item.hypothesis, n);
        let mut max_ref: HashMap<&[String], usize> = HashMap::new();
        for r in &item.references {
            for (g, c) in ngrams(r, n) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(c);
            }
        }
        s.matches[n - 1] = hyp
            .iter()
            .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)))
            .sum();
        s.totals[n - 1] = hyp.values().sum();
    }
    s
}

fn bleu_from_stats(stats: &[BleuStats], smooth: bool) -> f64 {
    let mut total = BleuStats::default();
    for s in stats {
        for n in 0..4 {
            total.matches[n] += s.matches[n];
            total.totals[n] += s.totals[n];
        }
        total.hyp_len += s.hyp_len;
        total.ref_len += s.ref_len;
    }
    if total.hyp_len == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 0..4 {
        let p = if total.totals[n] == 0 {
            0.0
        } else {
            total.matches[n] as f64 / total.totals[n] as f64
        };
        let p = if p == 0.0 {
            if !smooth {
                return 0.0;
            }
            BLEU_EPSILON
        } else {
            p
        };
        log_sum += p.ln() / 4.0;
    }
    let (c, r) = (total.hyp_len as f64, total.ref_len as f64);
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    bp * log_sum.exp()
}

fn corpus_bleu_stats(corpus: &ScoredCorpus) -> Vec<BleuStats> {
    corpus.items.par_iter().map(bleu_stats).collect()
}

/// Corpus BLEU-4; a zero n-gram precision is replaced by [`BLEU_EPSILON`].
pub fn bleu4(corpus: &ScoredCorpus) -> f64 {
    bleu_from_stats(&corpus_bleu_stats(corpus), true)
}

/// Corpus BLEU-4 without smoothing; any zero precision gives 0.
pub fn bleu4_unsmoothed(corpus: &ScoredCorpus) -> f64 {
    bleu_from_stats(&corpus_bleu_stats(corpus), false)
}

fn lcs(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS F-measure of one hypothesis against one reference.
pub fn rouge_l_pair(hyp: &[String], reference: &[String]) -> f64 {
    let l = lcs(hyp, reference);
    if l == 0 {
        return 0.0;
    }
    let p = l as f64 / hyp.len() as f64;
    let r = l as f64 / reference.len() as f64;
    let b2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + b2) * p * r / (r + b2 * p)
}

fn rouge_l_item(item: &ScoredItem) -> f64 {
    item.references
        .iter()
        .map(|r| rouge_l_pair(&item.hypothesis, r))
        .fold(0.0, f64::max)
}

/// Mean over videos of the best-reference ROUGE-L F-measure.
pub fn rouge_l(corpus: &ScoredCorpus) -> f64 {
    let per: Vec<f64> = corpus.items.par_iter().map(rouge_l_item).collect();
    per.iter().sum::<f64>() / per.len() as f64
}

/// Document frequencies over reference sets, one document per video.
struct Idf<'a> {
    log_docs: f64,
    df: [HashMap<&'a [String], usize>; 4],
}

impl<'a> Idf<'a> {
    fn new(corpus: &'a ScoredCorpus) -> Self {
        let mut df: [HashMap<&[String], usize>; 4] = Default::default();
        for item in &corpus.items {
            for (n, table) in df.iter_mut().enumerate() {
                let seen: HashSet<&[String]> = item
                    .references
                    .iter()
                    .flat_map(|r| ngrams(r, n + 1).into_keys())
                    .collect();
                for g in seen {
                    *table.entry(g).or_insert(0) += 1;
                }
            }
        }
        Self {
            log_docs: (corpus.items.len() as f64).ln(),
            df,
        }
    }

    fn vector(&self, tokens: &'a [String], n: usize) -> HashMap<&'a [String], f64> {
        ngrams(tokens, n)
            .into_iter()
            .map(|(g, tf)| {
                let df = self.df[n - 1].get(g).copied().unwrap_or(0).max(1) as f64;
                (g, tf as f64 * (self.log_docs - df.ln()))
            })
            .collect()
    }
}

fn cosine(a: &HashMap<&[String], f64>, b: &HashMap<&[String], f64>) -> f64 {
    let norm = |v: &HashMap<&[String], f64>| v.values().map(|x| x * x).sum::<f64>().sqrt();
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a
        .iter()
        .map(|(g, x)| x * b.get(g).copied().unwrap_or(0.0))
        .sum();
    dot / (na * nb)
}

fn cider_item(idf: &Idf<'_>, item: &ScoredItem) -> f64 {
    let mut total = 0.0;
    for n in 1..=4 {
        let h = idf.vector(&item.hypothesis, n);
        let sum: f64 = item
            .references
            .iter()
            .map(|r| cosine(&h, &idf.vector(r, n)))
            .sum();
        total += sum / item.references.len() as f64;
    }
    CIDER_SCALE * total / 4.0
}

/// Per-video CIDEr scores in corpus order.
pub fn cider_per_video(corpus: &ScoredCorpus) -> Result<Vec<f64>> {
    if corpus.items.len() < 2 {
        return Err(Error::Validation(
            "CIDEr needs at least two videos for document frequencies".into(),
        ));
    }
    let idf = Idf::new(corpus);
    Ok(corpus
        .items
        .par_iter()
        .map(|i| cider_item(&idf, i))
        .collect())
}

/// Mean per-video CIDEr (TF-IDF cosine over 1- to 4-grams, ×10).
pub fn cider(corpus: &ScoredCorpus) -> Result<f64> {
    let per = cider_per_video(corpus)?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoScore {
    pub video_id: String,
    pub hypothesis: String,
    pub rouge_l: f64,
    pub cider: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub bleu4: f64,
    pub rouge_l: f64,
    pub cider: f64,
    pub per_video: Vec<VideoScore>,
}

impl MetricReport {
    pub fn compute(corpus: &ScoredCorpus) -> Result<Self> {
        let cider_scores = cider_per_video(corpus)?;
        let per_video = corpus
            .items
            .iter()
            .zip(&cider_scores)
            .map(|(item, &c)| VideoScore {
                video_id: item.video_id.clone(),
                hypothesis: item.hypothesis.join(" "),
                rouge_l: rouge_l_item(item),
                cider: c,
            })
            .collect();
        Ok(Self {
            bleu4: bleu4(corpus),
            rouge_l: rouge_l(corpus),
            cider: cider_scores.iter().sum::<f64>() / cider_scores.len() as f64,
            per_video,
        })
    }

    /// `key=value` lines for the corpus scores.
    pub fn summary(&self) -> String {
        format!(
            "bleu4={:.6}\nrouge_l={:.6}\ncider={:.6}\n",
            self.bleu4, self.rouge_l, self.cider
        )
    }

    /// Tab-separated per-video breakdown with a header line.
    pub fn per_video_table(&self) -> String {
        let mut out = String::from("video_id\trouge_l\tcider\thypothesis\n");
        for v in &self.per_video {
            let _ = writeln!(
                out,
                "{}\t{:.6}\t{:.6}\t{}",
                v.video_id, v.rouge_l, v.cider, v.hypothesis
            );
        }
        out
    }
}

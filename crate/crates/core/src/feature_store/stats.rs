use std::collections::HashMap;
use std::fmt::Write;

use super::vocab::tokenize;
use crate::error::{Error, Result};

pub const HEAD_SIZE: usize = 50;

/// Word frequencies of a caption corpus, most frequent first.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyReport {
    pub counts: Vec<(String, usize)>,
    pub total_tokens: usize,
    /// Fraction of all tokens covered by the top-50 words.
    pub head_mass: f64,
    /// Words that occur exactly once.
    pub singletons: usize,
}

impl FrequencyReport {
    pub fn render(&self, top: usize) -> String {
        let mut s = String::new();
        writeln!(s, "total_tokens={}", self.total_tokens).unwrap();
        writeln!(s, "distinct_words={}", self.counts.len()).unwrap();
        writeln!(s, "top{HEAD_SIZE}_mass={:.6}", self.head_mass).unwrap();
        writeln!(s, "singletons={}", self.singletons).unwrap();
        for (w, c) in self.counts.iter().take(top) {
            writeln!(s, "{w}\t{c}").unwrap();
        }
        s
    }
}

pub fn corpus_stats<S: AsRef<str>>(captions: &[S]) -> Result<FrequencyReport> {
    let mut map: HashMap<String, usize> = HashMap::new();
    let mut total = 0;
    for c in captions {
        for t in tokenize(c.as_ref()) {
            *map.entry(t).or_default() += 1;
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::Empty("caption corpus has no tokens".into()));
    }
    let mut counts: Vec<(String, usize)> = map.into_iter().collect();
    counts.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let head: usize = counts.iter().take(HEAD_SIZE).map(|(_, c)| c).sum();
    let singletons = counts.iter().filter(|(_, c)| *c == 1).count();
    Ok(FrequencyReport {
        head_mass: head as f64 / total as f64,
        counts,
        total_tokens: total,
        singletons,
    })
}

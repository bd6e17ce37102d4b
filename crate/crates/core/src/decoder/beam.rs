//! Beam search and greedy decoding over any step-wise scorer.

use std::cmp::Ordering;

use crate::error::{Error, Result};

/// A scorer that maps `(state, previous token)` to log-probabilities over
/// the vocabulary and a successor state.
pub trait StepModel {
    type State: Clone;

    fn initial(&mut self) -> Result<Self::State>;

    fn step(&mut self, state: &Self::State, prev: usize) -> Result<(Vec<f64>, Self::State)>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchConfig {
    pub beam: usize,
    /// Maximum number of emitted tokens, EOS included.
    pub max_steps: usize,
    pub bos: usize,
    pub eos: usize,
    /// Tokens never expanded.
    pub banned: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Emitted tokens without BOS and without the final EOS.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub finished: bool,
}

impl Hypothesis {
    /// Emitted token count, EOS included.
    pub fn emitted(&self) -> usize {
        self.tokens.len() + usize::from(self.finished)
    }

    /// Length-normalized log-probability.
    pub fn score(&self) -> f64 {
        match self.emitted() {
            0 => 0.0,
            n => self.log_prob / n as f64,
        }
    }
}

struct Live<S> {
    hyp: Hypothesis,
    last: usize,
    state: S,
}

fn validate(cfg: &SearchConfig) -> Result<()> {
    if cfg.beam == 0 {
        return Err(Error::config("beam must be at least 1"));
    }
    if cfg.max_steps == 0 {
        return Err(Error::config("max_len must be at least 1"));
    }
    Ok(())
}

fn allowed(cfg: &SearchConfig, token: usize) -> bool {
    !cfg.banned.contains(&token)
}

/// Argmax decoding; ties go to the lower token id.
pub fn greedy_decode<M: StepModel>(model: &mut M, cfg: &SearchConfig) -> Result<Hypothesis> {
    validate(cfg)?;
    let mut state = model.initial()?;
    let mut prev = cfg.bos;
    let mut hyp = Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        finished: false,
    };
    for _ in 0..cfg.max_steps {
        let (logp, next) = model.step(&state, prev)?;
        let best = logp
            .iter()
            .enumerate()
            .filter(|&(t, _)| allowed(cfg, t))
            .fold(None, |acc: Option<(usize, f64)>, (t, &lp)| match acc {
                Some((_, b)) if b >= lp => acc,
                _ => Some((t, lp)),
            })
            .ok_or_else(|| Error::config("every token is banned"))?;
        hyp.log_prob += best.1;
        if best.0 == cfg.eos {
            hyp.finished = true;
            break;
        }
        hyp.tokens.push(best.0);
        prev = best.0;
        state = next;
    }
    Ok(hyp)
}

/// Beam search with length-normalized scores.
///
/// At every step the finished hypotheses and all expansions of the live
/// ones compete for `beam` slots; ties go to the earlier hypothesis, then
/// the lower token id. Finished hypotheses are frozen. The best finished
/// hypothesis is returned, or the best live one if none finished.
pub fn beam_search<M: StepModel>(model: &mut M, cfg: &SearchConfig) -> Result<Hypothesis> {
    validate(cfg)?;
    let mut beams = vec![Live {
        hyp: Hypothesis {
            tokens: Vec::new(),
            log_prob: 0.0,
            finished: false,
        },
        last: cfg.bos,
        state: model.initial()?,
    }];
    for _ in 0..cfg.max_steps {
        if beams.iter().all(|b| b.hyp.finished) {
            break;
        }
        // (score, source beam, token or None for a carried hypothesis)
        let mut candidates: Vec<(f64, usize, Option<usize>)> = Vec::new();
        let mut successors = Vec::with_capacity(beams.len());
        for (i, b) in beams.iter().enumerate() {
            if b.hyp.finished {
                candidates.push((b.hyp.score(), i, None));
                successors.push(None);
                continue;
            }
            let (logp, next) = model.step(&b.state, b.last)?;
            let n = (b.hyp.tokens.len() + 1) as f64;
            for (t, &lp) in logp.iter().enumerate() {
                if allowed(cfg, t) {
                    candidates.push(((b.hyp.log_prob + lp) / n, i, Some(t)));
                }
            }
            successors.push(Some((logp, next)));
        }
        if candidates.is_empty() {
            return Err(Error::config("every token is banned"));
        }
        candidates.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(Ordering::Equal)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        candidates.truncate(cfg.beam);
        beams = candidates
            .into_iter()
            .map(|(_, i, tok)| {
                let src = &beams[i];
                match tok {
                    None => Live {
                        hyp: src.hyp.clone(),
                        last: src.last,
                        state: src.state.clone(),
                    },
                    Some(t) => {
                        let (logp, next) = successors[i].as_ref().expect("expanded beam");
                        let mut hyp = src.hyp.clone();
                        hyp.log_prob += logp[t];
                        if t == cfg.eos {
                            hyp.finished = true;
                        } else {
                            hyp.tokens.push(t);
                        }
                        Live {
                            hyp,
                            last: t,
                            state: next.clone(),
                        }
                    }
                }
            })
            .collect();
    }
    let pick = |finished: bool| {
        beams
            .iter()
            .filter(|b| b.hyp.finished == finished)
            .fold(None, |acc: Option<&Hypothesis>, b| match acc {
                Some(a) if a.score() >= b.hyp.score() => acc,
                _ => Some(&b.hyp),
            })
            .cloned()
    };
    Ok(pick(true)
        .or_else(|| pick(false))
        .expect("beam is never empty"))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Log-probabilities looked up from a table keyed by the full prefix.
    struct Table<F: Fn(&[usize]) -> Vec<f64>> {
        dist: F,
    }

    impl<F: Fn(&[usize]) -> Vec<f64>> StepModel for Table<F> {
        type State = Vec<usize>;

        fn initial(&mut self) -> Result<Vec<usize>> {
            Ok(Vec::new())
        }

        fn step(&mut self, state: &Vec<usize>, prev: usize) -> Result<(Vec<f64>, Vec<usize>)> {
            let mut next = state.clone();
            if !(next.is_empty() && prev == 9) {
                next.push(prev);
            }
            let p = (self.dist)(&next);
            Ok((p.iter().map(|v| v.ln()).collect(), next))
        }
    }

    fn cfg(beam: usize, max_steps: usize) -> SearchConfig {
        SearchConfig {
            beam,
            max_steps,
            bos: 9,
            eos: 0,
            banned: vec![],
        }
    }

    #[test]
    fn eos_peaked_model_returns_empty_caption() {
        let mut m = Table {
            dist: |_: &[usize]| vec![0.9, 0.05, 0.05],
        };
        for beam in 1..=3 {
            let h = beam_search(&mut m, &cfg(beam, 5)).unwrap();
            assert!(h.tokens.is_empty());
            assert!(h.finished);
        }
    }

    #[test]
    fn beam_recovers_path_greedy_misses() {
        // greedy takes 1 first, but the 2 branch is far better afterwards
        let mut m = Table {
            dist: |prefix: &[usize]| match prefix {
                [] => vec![0.0001, 0.5, 0.4999],
                [1] => vec![0.34, 0.33, 0.33],
                [2] => vec![0.98, 0.01, 0.01],
                _ => vec![0.98, 0.01, 0.01],
            },
        };
        let g = greedy_decode(&mut m, &cfg(1, 4)).unwrap();
        assert_eq!(g.tokens, vec![1]);
        let b = beam_search(&mut m, &cfg(2, 4)).unwrap();
        assert_eq!(b.tokens, vec![2]);
        assert!(b.finished);
        assert_eq!(beam_search(&mut m, &cfg(1, 4)).unwrap(), g);
    }

    #[test]
    fn unfinished_best_is_returned_at_max_len() {
        let mut m = Table {
            dist: |_: &[usize]| vec![0.01, 0.98, 0.01],
        };
        let h = beam_search(&mut m, &cfg(1, 3)).unwrap();
        assert_eq!(h.tokens, vec![1, 1, 1]);
        assert!(!h.finished);
        assert!(h.log_prob <= 0.0);
    }

    #[test]
    fn banned_tokens_never_appear() {
        let mut m = Table {
            dist: |p: &[usize]| {
                if p.len() < 3 {
                    vec![0.1, 0.2, 0.7]
                } else {
                    vec![0.8, 0.1, 0.1]
                }
            },
        };
        let mut c = cfg(3, 6);
        c.banned = vec![2];
        let h = beam_search(&mut m, &c).unwrap();
        assert!(!h.tokens.contains(&2));
        assert!(greedy_decode(&mut m, &c)
            .unwrap()
            .tokens
            .iter()
            .all(|&t| t == 1));
    }

    #[test]
    fn invalid_settings() {
        let mut m = Table {
            dist: |_: &[usize]| vec![1.0],
        };
        assert!(matches!(
            beam_search(&mut m, &cfg(0, 3)),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            beam_search(&mut m, &cfg(2, 0)),
            Err(Error::Config(_))
        ));
    }
}

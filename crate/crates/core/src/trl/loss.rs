//! Teacher-enforced and teacher-recommended losses.
//!
//! Value-level functions take per-step distributions and are used for
//! reporting and verification; the tape-level builders operate on
//! log-probabilities and carry gradients.

use super::targets::SoftTargetSet;
use crate::error::{Error, Result};
use crate::nn::{Tape, Var};
use crate::scalar::Scalar;

/// Loss values of one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub ce: f64,
    pub kl: f64,
    pub combined: f64,
    pub tokens: usize,
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::config(format!(
            "trl.lambda must lie in [0, 1], got {lambda}"
        )));
    }
    Ok(())
}

fn masked_count(mask: &[bool], steps: usize) -> Result<usize> {
    if mask.len() != steps {
        return Err(Error::shape(format!(
            "mask covers {} steps, got {steps}",
            mask.len()
        )));
    }
    match mask.iter().filter(|&&m| m).count() {
        0 => Err(Error::Empty("no unmasked target positions".into())),
        n => Ok(n),
    }
}

/// `−Σ_t log P_t[x_t] / n` over masked steps; `probs[t]` predicts `targets[t]`.
pub fn ce_loss(probs: &[Vec<f64>], targets: &[usize], mask: &[bool]) -> Result<f64> {
    if targets.len() != probs.len() {
        return Err(Error::shape("one target per step is required"));
    }
    let n = masked_count(mask, probs.len())?;
    let mut total = 0.0;
    for ((p, &x), _) in probs.iter().zip(targets).zip(mask).filter(|(_, &m)| m) {
        let px = *p.get(x).ok_or(Error::Index {
            index: x,
            size: p.len(),
        })?;
        total -= px.ln();
    }
    Ok(total / n as f64)
}

/// `−Σ_t Σ_{d ∈ top-k} Q_t^d log P_t^d / n` over masked steps.
pub fn kl_soft_loss(
    probs: &[Vec<f64>],
    soft: &[Option<&SoftTargetSet>],
    mask: &[bool],
) -> Result<f64> {
    if soft.len() != probs.len() {
        return Err(Error::shape("one soft target slot per step is required"));
    }
    let n = masked_count(mask, probs.len())?;
    let mut total = 0.0;
    for (t, (p, s)) in probs.iter().zip(soft).enumerate() {
        if !mask[t] {
            continue;
        }
        let s = s.ok_or_else(|| Error::Validation(format!("missing soft targets at step {t}")))?;
        for &(d, q) in s.pairs() {
            let pd = *p.get(d).ok_or(Error::Index {
                index: d,
                size: p.len(),
            })?;
            total -= q * pd.ln();
        }
    }
    Ok(total / n as f64)
}

/// `λ·kl + (1−λ)·ce`.
pub fn combined_loss(ce: f64, kl: f64, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    Ok(lambda * kl + (1.0 - lambda) * ce)
}

/// Which terms the training loss contains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    /// Cross-entropy against hard targets only.
    Tel,
    /// `λ·kl + (1−λ)·ce`.
    Combined { lambda: f64 },
}

impl Objective {
    pub fn new(lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        Ok(Self::Combined { lambda })
    }

    pub fn lambda(&self) -> f64 {
        match self {
            Self::Tel => 0.0,
            Self::Combined { lambda } => *lambda,
        }
    }

    pub fn needs_soft_targets(&self) -> bool {
        self.lambda() > 0.0
    }
}

/// Sum of `−log P[row, target] · scale` on the tape; `log_probs` is `[T, D]`.
pub fn tel_term<T: Scalar>(
    tape: &mut Tape<T>,
    log_probs: Var,
    targets: &[usize],
    scale: f64,
) -> Result<Var> {
    if tape.shape(log_probs).0 != targets.len() {
        return Err(Error::shape(
            "one target per log-probability row is required",
        ));
    }
    let w = T::of(-scale);
    let entries = targets
        .iter()
        .enumerate()
        .map(|(r, &x)| (r, x, w))
        .collect();
    tape.weighted_pick(log_probs, entries)
}

/// Sum of `−Q · log P[row, d] · scale` over each row's soft targets.
pub fn trl_term<T: Scalar>(
    tape: &mut Tape<T>,
    log_probs: Var,
    soft: &[&SoftTargetSet],
    scale: f64,
) -> Result<Var> {
    if tape.shape(log_probs).0 != soft.len() {
        return Err(Error::shape(
            "one soft target set per log-probability row is required",
        ));
    }
    let entries = soft
        .iter()
        .enumerate()
        .flat_map(|(r, s)| {
            s.pairs()
                .iter()
                .map(move |&(d, q)| (r, d, T::of(-q * scale)))
        })
        .collect();
    tape.weighted_pick(log_probs, entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Mat, Tape};
    use crate::trl::targets::soft_targets;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dist(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        let raw: Vec<f64> = (0..d).map(|_| rng.random_range(0.01..1.0)).collect();
        let z: f64 = raw.iter().sum();
        raw.into_iter().map(|r| r / z).collect()
    }

    #[test]
    fn ce_cases() {
        let one_hot = vec![vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 0.0]];
        assert_eq!(ce_loss(&one_hot, &[1, 0], &[true, true]).unwrap(), 0.0);
        let uniform = vec![vec![1.0 / 8.0; 8]; 3];
        let l = ce_loss(&uniform, &[1, 2, 3], &[true; 3]).unwrap();
        assert!((l - 8f64.ln()).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p: Vec<Vec<f64>> = (0..4).map(|_| random_dist(&mut rng, 6)).collect();
        let targets = [5, 0, 2, 2];
        let mask = [true, true, false, true];
        let oracle = -(p[0][5].ln() + p[1][0].ln() + p[3][2].ln()) / 3.0;
        assert!((ce_loss(&p, &targets, &mask).unwrap() - oracle).abs() < 1e-12);
        assert!(matches!(
            ce_loss(&p, &targets, &[false; 4]),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn kl_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p: Vec<Vec<f64>> = (0..3).map(|_| random_dist(&mut rng, 5)).collect();
        let targets = [4, 1, 0];
        let unit: Vec<SoftTargetSet> = targets
            .iter()
            .map(|&x| SoftTargetSet::new(vec![(x, 1.0)]).unwrap())
            .collect();
        let refs: Vec<Option<&SoftTargetSet>> = unit.iter().map(Some).collect();
        let kl = kl_soft_loss(&p, &refs, &[true; 3]).unwrap();
        assert!((kl - ce_loss(&p, &targets, &[true; 3]).unwrap()).abs() < 1e-15);

        let uniform_p = vec![vec![0.2; 5]; 2];
        let q = SoftTargetSet::new(vec![(0, 1.0 / 3.0), (2, 1.0 / 3.0), (3, 1.0 / 3.0)]).unwrap();
        let kl = kl_soft_loss(&uniform_p, &[Some(&q), Some(&q)], &[true, true]).unwrap();
        assert!((kl - 5f64.ln()).abs() < 1e-12);

        let qd = random_dist(&mut rng, 5);
        let full = soft_targets(&qd, 5).unwrap();
        let kl = kl_soft_loss(&p[..1], &[Some(&full)], &[true]).unwrap();
        let div: f64 = qd.iter().zip(&p[0]).map(|(q, p)| q * (q / p).ln()).sum();
        let ent: f64 = -qd.iter().map(|q| q * q.ln()).sum::<f64>();
        assert!((kl - (div + ent)).abs() < 1e-12);

        assert!(matches!(
            kl_soft_loss(&p, &[Some(&q), None, Some(&q)], &[true; 3]),
            Err(Error::Validation(_))
        ));
        assert!(kl_soft_loss(&p, &[Some(&q), None, Some(&q)], &[true, false, true]).is_ok());
    }

    #[test]
    fn combined_cases() {
        assert_eq!(combined_loss(2.0, 4.0, 0.0).unwrap(), 2.0);
        assert_eq!(combined_loss(2.0, 4.0, 1.0).unwrap(), 4.0);
        assert_eq!(combined_loss(2.0, 4.0, 0.5).unwrap(), 3.0);
        assert!(matches!(
            combined_loss(2.0, 4.0, 1.5),
            Err(Error::Config(_))
        ));
        assert!(matches!(Objective::new(-0.1), Err(Error::Config(_))));
        assert!(!Objective::new(0.0).unwrap().needs_soft_targets());
        assert!(!Objective::Tel.needs_soft_targets());
    }

    #[test]
    fn tape_terms_match_value_losses() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let logits: Vec<f64> = (0..3 * 6).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut t = Tape::<f64>::new();
        let x = t.constant(Mat::from_vec(3, 6, logits).unwrap());
        let lp = t.log_softmax_rows(x);
        let probs: Vec<Vec<f64>> = (0..3)
            .map(|r| t.value(lp).row(r).iter().map(|v| v.exp()).collect())
            .collect();
        let targets = [1, 5, 2];
        let ce = tel_term(&mut t, lp, &targets, 1.0 / 3.0).unwrap();
        assert!(
            (t.value(ce).scalar() - ce_loss(&probs, &targets, &[true; 3]).unwrap()).abs() < 1e-12
        );

        let sets: Vec<SoftTargetSet> = (0..3)
            .map(|_| soft_targets(&random_dist(&mut rng, 6), 4).unwrap())
            .collect();
        let refs: Vec<&SoftTargetSet> = sets.iter().collect();
        let kl = trl_term(&mut t, lp, &refs, 1.0 / 3.0).unwrap();
        let opt: Vec<Option<&SoftTargetSet>> = sets.iter().map(Some).collect();
        assert!(
            (t.value(kl).scalar() - kl_soft_loss(&probs, &opt, &[true; 3]).unwrap()).abs() < 1e-12
        );
        assert!(tel_term(&mut t, lp, &[1, 2], 1.0).is_err());
    }

    proptest! {
        #[test]
        fn kl_is_nonnegative_and_monotone_in_k(seed in 0u64..1000, d in 2usize..10) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = vec![random_dist(&mut rng, d)];
            let q = random_dist(&mut rng, d);
            let mut last = 0.0;
            for k in 1..=d {
                let s = soft_targets(&q, k).unwrap();
                let v = kl_soft_loss(&p, &[Some(&s)], &[true]).unwrap();
                prop_assert!(v >= 0.0);
                prop_assert!(v >= last);
                last = v;
            }
        }
    }
}

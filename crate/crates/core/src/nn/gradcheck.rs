//! Central-difference verification of reverse-mode gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::ParameterStore;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

fn eval<F>(loss_fn: &mut F, params: &ParameterStore<f64>) -> Result<f64>
where
    F: FnMut(&mut Tape<f64>, &ParameterStore<f64>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = loss_fn(&mut tape, params)?;
    let v = tape.value(out).scalar();
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("loss evaluated to {v}")));
    }
    Ok(v)
}

/// Compares reverse-mode gradients against `(L(θ+ε) − L(θ−ε)) / 2ε` on
/// `sample` coordinates drawn uniformly (all coordinates if `sample` covers
/// them). Relative error is `|g_a − g_n| / max(1e-8, |g_a| + |g_n|)`.
///
/// Leaves parameter values unchanged and gradient buffers zeroed.
pub fn grad_check<F>(
    params: &mut ParameterStore<f64>,
    loss_fn: F,
    eps: f64,
    sample_count: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape<f64>, &ParameterStore<f64>) -> Result<Var>,
{
    grad_check_where(params, loss_fn, eps, sample_count, seed, |_| true)
}

/// [`grad_check`] restricted to parameters whose name passes `include`.
pub fn grad_check_where<F, P>(
    params: &mut ParameterStore<f64>,
    mut loss_fn: F,
    eps: f64,
    sample_count: usize,
    seed: u64,
    include: P,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape<f64>, &ParameterStore<f64>) -> Result<Var>,
    P: Fn(&str) -> bool,
{
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::config(format!(
            "grad_check eps must be > 0, got {eps}"
        )));
    }
    params.zero_grad();
    let mut tape = Tape::new();
    let out = loss_fn(&mut tape, params)?;
    if !tape.value(out).scalar().is_finite() {
        return Err(Error::NonFinite("loss is not finite".into()));
    }
    tape.backward(out, params)?;

    let coords: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .filter(|(_, param)| include(&param.name))
        .flat_map(|(p, param)| (0..param.value.len()).map(move |i| (p, i)))
        .collect();
    let picked: Vec<usize> = if sample_count >= coords.len() {
        (0..coords.len()).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = sample(&mut rng, coords.len(), sample_count).into_vec();
        v.sort_unstable();
        v
    };

    let ids: Vec<_> = params.iter().map(|p| params.id(&p.name).unwrap()).collect();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        checked: picked.len(),
    };
    for k in picked {
        let (p, i) = coords[k];
        let id = ids[p];
        let original = params.get(id).value.data()[i];
        let analytic = params.get(id).grad.data()[i];
        params.get_mut(id).value.data_mut()[i] = original + eps;
        let up = eval(&mut loss_fn, params);
        params.get_mut(id).value.data_mut()[i] = original - eps;
        let down = eval(&mut loss_fn, params);
        params.get_mut(id).value.data_mut()[i] = original;
        let numeric = (up? - down?) / (2.0 * eps);
        let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8);
        if report.worst.is_none() || rel > report.max_relative_error {
            report.max_relative_error = rel;
            report.worst = Some((params.get(id).name.clone(), i));
        }
    }
    params.zero_grad();
    Ok(report)
}

//! The primitive layers the captioning model is assembled from.

use rand::Rng;

use super::mat::Mat;
use super::params::{ParamId, ParameterStore};
use super::tape::{softmax_rows, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `x W + b` for `x` of shape `[r, in]`.
pub fn linear_forward<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    w: Var,
    b: Option<Var>,
) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    match b {
        Some(b) => tape.add_row(y, b),
        None => Ok(y),
    }
}

/// Numerically stable softmax over one vector; masked entries are exactly 0.
pub fn softmax_stable<T: Scalar>(logits: &[T], mask: Option<&[bool]>) -> Result<Vec<T>> {
    if let Some(m) = mask {
        if m.len() != logits.len() {
            return Err(Error::shape("softmax mask length differs from logits"));
        }
    }
    let m = Mat::row_vector(logits.to_vec());
    Ok(softmax_rows(&m, mask)?.into_data())
}

/// Affine layer parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn register<T: Scalar, R: Rng>(
        store: &mut ParameterStore<T>,
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = store.insert_xavier(format!("{name}.weight"), input, output, rng)?;
        let bias = if bias {
            Some(store.insert_zeros(format!("{name}.bias"), 1, output)?)
        } else {
            None
        };
        Ok(Self { weight, bias })
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParameterStore<T>,
        x: Var,
    ) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = self.bias.map(|b| tape.param(store, b));
        linear_forward(tape, x, w, b)
    }
}

/// Hidden and cell vectors, each `[1, d_h]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LstmState {
    pub hidden: Var,
    pub cell: Var,
}

impl LstmState {
    pub fn zeros<T: Scalar>(tape: &mut Tape<T>, hidden: usize) -> Self {
        Self {
            hidden: tape.constant(Mat::zeros(1, hidden)),
            cell: tape.constant(Mat::zeros(1, hidden)),
        }
    }
}

/// Standard LSTM cell, gate blocks ordered input, forget, output, candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LstmCell {
    pub input_weight: ParamId,
    pub hidden_weight: ParamId,
    pub bias: ParamId,
    pub input_size: usize,
    pub hidden_size: usize,
}

impl LstmCell {
    pub const FORGET_BIAS: f64 = 1.0;

    pub fn register<T: Scalar, R: Rng>(
        store: &mut ParameterStore<T>,
        name: &str,
        input_size: usize,
        hidden_size: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let input_weight =
            store.insert_xavier(format!("{name}.w_input"), input_size, 4 * hidden_size, rng)?;
        let hidden_weight = store.insert_xavier(
            format!("{name}.w_hidden"),
            hidden_size,
            4 * hidden_size,
            rng,
        )?;
        let mut b = Mat::zeros(1, 4 * hidden_size);
        for v in &mut b.data_mut()[hidden_size..2 * hidden_size] {
            *v = T::of(Self::FORGET_BIAS);
        }
        let bias = store.insert(format!("{name}.bias"), b)?;
        Ok(Self {
            input_weight,
            hidden_weight,
            bias,
            input_size,
            hidden_size,
        })
    }

    pub fn step<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParameterStore<T>,
        x: Var,
        state: LstmState,
    ) -> Result<LstmState> {
        if tape.shape(x) != (1, self.input_size) {
            return Err(Error::shape(format!(
                "lstm input {:?}, expected (1, {})",
                tape.shape(x),
                self.input_size
            )));
        }
        let h = self.hidden_size;
        if tape.shape(state.hidden) != (1, h) || tape.shape(state.cell) != (1, h) {
            return Err(Error::shape("lstm state width differs from hidden size"));
        }
        let wx = tape.param(store, self.input_weight);
        let wh = tape.param(store, self.hidden_weight);
        let b = tape.param(store, self.bias);
        let gx = tape.matmul(x, wx)?;
        let gh = tape.matmul(state.hidden, wh)?;
        let pre = tape.add(gx, gh)?;
        let gates = tape.add(pre, b)?;
        let i = tape.slice_cols(gates, 0, h)?;
        let f = tape.slice_cols(gates, h, h)?;
        let o = tape.slice_cols(gates, 2 * h, h)?;
        let g = tape.slice_cols(gates, 3 * h, h)?;
        let (i, f, o, g) = (
            tape.sigmoid(i),
            tape.sigmoid(f),
            tape.sigmoid(o),
            tape.tanh(g),
        );
        let keep = tape.mul(f, state.cell)?;
        let write = tape.mul(i, g)?;
        let cell = tape.add(keep, write)?;
        let squashed = tape.tanh(cell);
        let hidden = tape.mul(o, squashed)?;
        Ok(LstmState { hidden, cell })
    }
}

/// Row `id` of the embedding matrix; gradient reaches only that row.
pub fn embedding_lookup<T: Scalar>(tape: &mut Tape<T>, table: Var, id: usize) -> Result<Var> {
    let rows = tape.shape(table).0;
    if id >= rows {
        return Err(Error::Index {
            index: id,
            size: rows,
        });
    }
    tape.gather_rows(table, &[id])
}

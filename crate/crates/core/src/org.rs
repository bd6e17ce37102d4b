//! Object relational graph encoder.
//!
//! Object features `R [K, d]` are related through `A = φ(R) ψ(R)^T` with
//! `φ(R) = R W_i + b_i`, `ψ(R) = R W_j + b_j`. Rows of `A` are optionally
//! sparsified to the top-k neighbours, normalized with a masked softmax into
//! `Â`, and object features are updated as `R̂ = Â R W_r`.
//!
//! The partial graph (P-ORG) relates the `N` objects of one frame, with
//! relation parameters shared across frames. The complete graph (C-ORG)
//! relates all `N·L` objects of a video and keeps the top-k neighbours per
//! node.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Linear, Mat, ParamId, ParameterStore, Tape, Var};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrgMode {
    Partial,
    Complete,
}

impl FromStr for OrgMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "p_org" => Ok(Self::Partial),
            "c_org" => Ok(Self::Complete),
            other => Err(Error::config(format!(
                "org.mode must be p_org or c_org, got {other:?}"
            ))),
        }
    }
}

impl fmt::Display for OrgMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Partial => "p_org",
            Self::Complete => "c_org",
        })
    }
}

/// Neighbour budget per node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopK {
    All,
    Count(usize),
}

impl FromStr for TopK {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "all" {
            return Ok(Self::All);
        }
        match s.parse::<usize>() {
            Ok(k) if k > 0 => Ok(Self::Count(k)),
            _ => Err(Error::config(format!(
                "top_k must be a positive integer or \"all\", got {s:?}"
            ))),
        }
    }
}

impl fmt::Display for TopK {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::All => f.write_str("all"),
            Self::Count(k) => write!(f, "{k}"),
        }
    }
}

/// Whether the self edge is forced into each row's neighbour set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelfLoop {
    /// The diagonal is always kept and counts against the budget.
    Keep,
    /// The diagonal competes like any other entry.
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OrgConfig {
    pub mode: OrgMode,
    pub top_k: TopK,
    /// Width `d` of graph node features (`d' = d`).
    pub dim: usize,
}

impl Default for OrgConfig {
    fn default() -> Self {
        Self {
            mode: OrgMode::Complete,
            top_k: TopK::Count(5),
            dim: 512,
        }
    }
}

/// Per-row neighbour mask over `a`: the `k` largest entries of each row,
/// ties broken towards the lower column.
pub fn topk_mask<T: Scalar>(a: &Mat<T>, k: TopK, self_loop: SelfLoop) -> Result<Vec<bool>> {
    let (rows, cols) = a.shape();
    let k = match k {
        TopK::All => return Ok(vec![true; rows * cols]),
        TopK::Count(0) => return Err(Error::config("top_k must be positive")),
        TopK::Count(k) if k > cols => {
            return Err(Error::config(format!(
                "top_k {k} exceeds node count {cols}"
            )))
        }
        TopK::Count(k) => k,
    };
    let mut mask = vec![false; rows * cols];
    let mut order: Vec<usize> = Vec::with_capacity(cols);
    for r in 0..rows {
        let row = a.row(r);
        order.clear();
        order.extend(0..cols);
        let forced = self_loop == SelfLoop::Keep && r < cols;
        order.sort_by(|&x, &y| {
            let fx = forced && x == r;
            let fy = forced && y == r;
            fy.cmp(&fx)
                .then_with(|| {
                    row[y]
                        .partial_cmp(&row[x])
                        .unwrap_or(std::cmp::Ordering::Equal)
                })
                .then_with(|| x.cmp(&y))
        });
        for &c in &order[..k] {
            mask[r * cols + c] = true;
        }
    }
    Ok(mask)
}

/// `A = (R W_i + b_i)(R W_j + b_j)^T`.
pub fn relation_coefficients<T: Scalar>(
    tape: &mut Tape<T>,
    r: Var,
    w_i: Var,
    b_i: Var,
    w_j: Var,
    b_j: Var,
) -> Result<Var> {
    if tape.shape(r).0 == 0 {
        return Err(Error::shape("relational graph needs at least one node"));
    }
    let phi = tape.matmul(r, w_i)?;
    let phi = tape.add_row(phi, b_i)?;
    let psi = tape.matmul(r, w_j)?;
    let psi = tape.add_row(psi, b_j)?;
    let psi_t = tape.transpose(psi);
    tape.matmul(phi, psi_t)
}

/// Row-wise masked softmax of `A`.
pub fn normalize_graph<T: Scalar>(tape: &mut Tape<T>, a: Var, mask: Vec<bool>) -> Result<Var> {
    tape.softmax_rows(a, Some(mask))
}

/// `R̂ = Â R W_r`.
pub fn gcn_update<T: Scalar>(tape: &mut Tape<T>, a_hat: Var, r: Var, w_r: Var) -> Result<Var> {
    let (k, _) = tape.shape(a_hat);
    if tape.shape(a_hat).1 != k || tape.shape(r).0 != k {
        return Err(Error::shape(format!(
            "graph {:?} does not match node features {:?}",
            tape.shape(a_hat),
            tape.shape(r)
        )));
    }
    let mixed = tape.matmul(a_hat, r)?;
    tape.matmul(mixed, w_r)
}

/// Learnable parameters of the encoder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrgParams {
    /// Affine projection of raw object features to width `d`.
    pub input: Linear,
    pub phi: Linear,
    pub psi: Linear,
    pub w_r: ParamId,
}

impl OrgParams {
    pub fn register<T: Scalar, R: Rng>(
        store: &mut ParameterStore<T>,
        object_dim: usize,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            input: Linear::register(store, "org.input", object_dim, dim, true, rng)?,
            phi: Linear::register(store, "org.phi", dim, dim, true, rng)?,
            psi: Linear::register(store, "org.psi", dim, dim, true, rng)?,
            w_r: store.insert_xavier("org.w_r", dim, dim, rng)?,
        })
    }
}

/// Tape handles of one relational graph.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphVars {
    pub coefficients: Var,
    pub normalized: Var,
    pub mask: Vec<bool>,
}

/// Materialized relational graph over `K` nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationalGraph<T> {
    pub coefficients: Mat<T>,
    pub normalized: Mat<T>,
    pub mask: Vec<bool>,
}

impl<T: Scalar> RelationalGraph<T> {
    pub fn from_tape(tape: &Tape<T>, g: &GraphVars) -> Self {
        Self {
            coefficients: tape.value(g.coefficients).clone(),
            normalized: tape.value(g.normalized).clone(),
            mask: g.mask.clone(),
        }
    }

    pub fn nodes(&self) -> usize {
        self.coefficients.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrgEncoding {
    /// Projected node features `[L·N, d]`, frame-major.
    pub projected: Var,
    /// Enhanced node features `[L·N, d]`, frame-major.
    pub enhanced: Var,
    /// One graph per frame (P-ORG) or a single graph (C-ORG).
    pub graphs: Vec<GraphVars>,
}

fn build_graph<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParameterStore<T>,
    params: &OrgParams,
    nodes: Var,
    top_k: TopK,
) -> Result<(Var, GraphVars)> {
    let w_i = tape.param(store, params.phi.weight);
    let b_i = tape.param(store, params.phi.bias.expect("phi has bias"));
    let w_j = tape.param(store, params.psi.weight);
    let b_j = tape.param(store, params.psi.bias.expect("psi has bias"));
    let a = relation_coefficients(tape, nodes, w_i, b_i, w_j, b_j)?;
    let mask = topk_mask(tape.value(a), top_k, SelfLoop::Keep)?;
    let a_hat = normalize_graph(tape, a, mask.clone())?;
    let w_r = tape.param(store, params.w_r);
    let out = gcn_update(tape, a_hat, nodes, w_r)?;
    Ok((
        out,
        GraphVars {
            coefficients: a,
            normalized: a_hat,
            mask,
        },
    ))
}

/// Encodes raw objects `[L·N, d_o]` (frame-major rows) into enhanced
/// features `[L·N, d]`.
pub fn encode_objects<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParameterStore<T>,
    params: &OrgParams,
    cfg: &OrgConfig,
    objects: Var,
    frames: usize,
    per_frame: usize,
) -> Result<OrgEncoding> {
    let (rows, _) = tape.shape(objects);
    if rows != frames * per_frame || rows == 0 {
        return Err(Error::shape(format!(
            "objects have {rows} rows, expected {frames} frames x {per_frame} objects"
        )));
    }
    let projected = params.input.forward(tape, store, objects)?;
    match cfg.mode {
        OrgMode::Partial => {
            let mut outs = Vec::with_capacity(frames);
            let mut graphs = Vec::with_capacity(frames);
            for i in 0..frames {
                let nodes = tape.slice_rows(projected, i * per_frame, per_frame)?;
                let (out, g) = build_graph(tape, store, params, nodes, TopK::All)?;
                outs.push(out);
                graphs.push(g);
            }
            let enhanced = tape.concat_rows(&outs)?;
            Ok(OrgEncoding {
                projected,
                enhanced,
                graphs,
            })
        }
        OrgMode::Complete => {
            if let TopK::Count(k) = cfg.top_k {
                if k > rows {
                    return Err(Error::config(format!(
                        "C-ORG top_k {k} exceeds the {rows} objects per video"
                    )));
                }
            }
            let (enhanced, g) = build_graph(tape, store, params, projected, cfg.top_k)?;
            Ok(OrgEncoding {
                projected,
                enhanced,
                graphs: vec![g],
            })
        }
    }
}

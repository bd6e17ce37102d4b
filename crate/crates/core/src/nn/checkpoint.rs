//! Parameter checkpoints: one `ORGT` tensor file per parameter plus a text
//! index.
//!
//! ```text
//! <dir>/index.txt          name<TAB>rows,cols  (one line per parameter)
//! <dir>/params/<name>.orgt
//! <dir>/adam/<name>.m.orgt
//! <dir>/adam/<name>.v.orgt
//! <dir>/state.txt          adam_steps=<n>
//! ```

use std::fs;
use std::path::Path;

use super::mat::Mat;
use super::params::ParameterStore;
use crate::error::{Error, Result};
use crate::feature_store::{read_tensor_file, write_tensor_file, FeatureTensor};
use crate::scalar::Scalar;

fn to_tensor<T: Scalar>(m: &Mat<T>) -> Result<FeatureTensor> {
    FeatureTensor::new(
        vec![m.rows(), m.cols()],
        m.data().iter().map(|v| v.as_f32()).collect(),
    )
}

fn from_tensor<T: Scalar>(t: &FeatureTensor, rows: usize, cols: usize) -> Result<Mat<T>> {
    if t.shape() != [rows, cols] {
        return Err(Error::shape(format!(
            "checkpoint tensor {:?}, expected [{rows}, {cols}]",
            t.shape()
        )));
    }
    Mat::from_vec(rows, cols, t.data().iter().map(|&v| T::of_f32(v)).collect())
}

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

pub fn save_checkpoint<T: Scalar>(store: &ParameterStore<T>, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    mkdir(&dir.join("params"))?;
    mkdir(&dir.join("adam"))?;
    let mut index = String::new();
    for p in store.iter() {
        let (r, c) = p.shape();
        index.push_str(&format!("{}\t{r},{c}\n", p.name));
        write_tensor_file(
            dir.join("params").join(format!("{}.orgt", p.name)),
            &to_tensor(&p.value)?,
        )?;
        write_tensor_file(
            dir.join("adam").join(format!("{}.m.orgt", p.name)),
            &to_tensor(&p.first_moment)?,
        )?;
        write_tensor_file(
            dir.join("adam").join(format!("{}.v.orgt", p.name)),
            &to_tensor(&p.second_moment)?,
        )?;
    }
    let index_path = dir.join("index.txt");
    fs::write(&index_path, index).map_err(|e| Error::io(&index_path, e))?;
    let state_path = dir.join("state.txt");
    fs::write(&state_path, format!("adam_steps={}\n", store.adam_steps))
        .map_err(|e| Error::io(&state_path, e))
}

/// Loads values and optimizer state into an existing store with the same
/// names and shapes.
pub fn load_checkpoint<T: Scalar>(
    store: &mut ParameterStore<T>,
    dir: impl AsRef<Path>,
) -> Result<()> {
    let dir = dir.as_ref();
    let index_path = dir.join("index.txt");
    let index = fs::read_to_string(&index_path).map_err(|e| Error::io(&index_path, e))?;
    let mut seen = 0;
    for line in index.lines().filter(|l| !l.trim().is_empty()) {
        let (name, shape) = line
            .split_once('\t')
            .ok_or_else(|| Error::Format(format!("bad index line {line:?}")))?;
        let id = store
            .id(name)
            .ok_or_else(|| Error::Validation(format!("checkpoint has unknown parameter {name}")))?;
        let (rows, cols) = shape
            .split_once(',')
            .and_then(|(r, c)| Some((r.parse::<usize>().ok()?, c.parse::<usize>().ok()?)))
            .ok_or_else(|| Error::Format(format!("bad shape in index line {line:?}")))?;
        if store.get(id).shape() != (rows, cols) {
            return Err(Error::shape(format!(
                "parameter {name} is {:?} in the model, ({rows}, {cols}) in the checkpoint",
                store.get(id).shape()
            )));
        }
        let value = read_tensor_file(dir.join("params").join(format!("{name}.orgt")))?;
        let m = read_tensor_file(dir.join("adam").join(format!("{name}.m.orgt")))?;
        let v = read_tensor_file(dir.join("adam").join(format!("{name}.v.orgt")))?;
        let p = store.get_mut(id);
        p.value = from_tensor(&value, rows, cols)?;
        p.first_moment = from_tensor(&m, rows, cols)?;
        p.second_moment = from_tensor(&v, rows, cols)?;
        seen += 1;
    }
    if seen != store.len() {
        return Err(Error::Validation(format!(
            "checkpoint holds {seen} parameters, model has {}",
            store.len()
        )));
    }
    let state_path = dir.join("state.txt");
    let state = fs::read_to_string(&state_path).map_err(|e| Error::io(&state_path, e))?;
    store.adam_steps = state
        .lines()
        .find_map(|l| l.strip_prefix("adam_steps="))
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| Error::Format("state.txt lacks adam_steps".into()))?;
    store.zero_grad();
    Ok(())
}

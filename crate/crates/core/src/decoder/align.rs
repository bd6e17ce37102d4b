use crate::error::{Error, Result};
use crate::feature_store::FeatureTensor;

/// Per-frame injective map from anchor slot (frame 0 object index) to the
/// matching object index in that frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentMap {
    frames: Vec<Vec<usize>>,
}

impl AlignmentMap {
    pub fn identity(frames: usize, per_frame: usize) -> Self {
        Self {
            frames: vec![(0..per_frame).collect(); frames],
        }
    }

    pub fn frames(&self) -> usize {
        self.frames.len()
    }

    pub fn per_frame(&self) -> usize {
        self.frames.first().map_or(0, Vec::len)
    }

    /// Object index in `frame` aligned with anchor `slot`.
    pub fn get(&self, frame: usize, slot: usize) -> usize {
        self.frames[frame][slot]
    }

    pub fn frame(&self, frame: usize) -> &[usize] {
        &self.frames[frame]
    }

    /// Flat row indices into frame-major `[L·N, d]` features, ordered so
    /// that row `i·N + j` holds the object aligned with anchor `j`.
    pub fn gather_indices(&self) -> Vec<usize> {
        let n = self.per_frame();
        self.frames
            .iter()
            .enumerate()
            .flat_map(|(i, m)| m.iter().map(move |&j| i * n + j))
            .collect()
    }
}

/// Cosine similarity; 0 when either vector has zero norm.
fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

/// Aligns each frame's objects to the first frame's objects.
///
/// Uses raw detector features. For every frame, the pair with the largest
/// remaining cosine similarity among unassigned anchors and objects is
/// matched first; ties prefer the lower `(anchor, object)` pair.
pub fn align_objects(objects: &FeatureTensor) -> Result<AlignmentMap> {
    let shape = objects.shape();
    if shape.len() != 3 {
        return Err(Error::shape(format!(
            "objects must be [L, N, d], got {shape:?}"
        )));
    }
    let (l, n, d) = (shape[0], shape[1], shape[2]);
    let data = objects.data();
    let obj = |i: usize, j: usize| &data[(i * n + j) * d..(i * n + j + 1) * d];
    let mut frames = Vec::with_capacity(l);
    if l > 0 {
        frames.push((0..n).collect());
    }
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(n * n);
    for i in 1..l {
        pairs.clear();
        for j in 0..n {
            for k in 0..n {
                pairs.push((cosine(obj(0, j), obj(i, k)), j, k));
            }
        }
        pairs.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        let mut map = vec![usize::MAX; n];
        let mut taken = vec![false; n];
        for &(_, j, k) in &pairs {
            if map[j] == usize::MAX && !taken[k] {
                map[j] = k;
                taken[k] = true;
            }
        }
        frames.push(map);
    }
    Ok(AlignmentMap { frames })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor(l: usize, n: usize, d: usize, data: Vec<f32>) -> FeatureTensor {
        FeatureTensor::new(vec![l, n, d], data).unwrap()
    }

    #[test]
    fn identical_frames_align_identically() {
        let frame = vec![1.0, 0.2, -0.3, 0.5, 0.9, 0.1, -1.0, 0.0, 0.4];
        let data: Vec<f32> = frame.iter().cycle().take(9 * 4).copied().collect();
        let m = align_objects(&tensor(4, 3, 3, data)).unwrap();
        assert_eq!(m, AlignmentMap::identity(4, 3));
    }

    #[test]
    fn swapped_pair_is_recovered() {
        let data = vec![1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0];
        let m = align_objects(&tensor(2, 2, 2, data)).unwrap();
        assert_eq!(m.frame(1), &[1, 0]);
        assert_eq!(m.gather_indices(), vec![0, 1, 3, 2]);
    }

    #[test]
    fn single_object_maps_to_itself() {
        let data = vec![1.0, 2.0, -5.0, 0.0, 0.0, 0.0];
        let m = align_objects(&tensor(3, 1, 2, data)).unwrap();
        assert_eq!(m, AlignmentMap::identity(3, 1));
    }

    #[test]
    fn zero_vectors_do_not_divide_by_zero() {
        let data = vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let m = align_objects(&tensor(2, 2, 2, data)).unwrap();
        let mut f = m.frame(1).to_vec();
        f.sort();
        assert_eq!(f, vec![0, 1]);
    }
}

//! Dense `f32` tensors and the `ORGT` binary file format.
//!
//! Layout: magic `ORGT`, version byte `0x01`, dtype byte `0x01` (f32), rank
//! byte, `rank` little-endian `u32` dims, then the row-major little-endian
//! `f32` payload.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"ORGT";
pub const TENSOR_VERSION: u8 = 0x01;
pub const DTYPE_F32: u8 = 0x01;

/// Dense row-major tensor with an explicit shape.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl FeatureTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {expected} elements, got {}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "tensor element {pos} is not finite"
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Size of the leading axis, or 0 for a scalar.
    pub fn leading_dim(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(7 + 4 * self.shape.len() + 4 * self.data.len());
        out.extend_from_slice(TENSOR_MAGIC);
        out.push(TENSOR_VERSION);
        out.push(DTYPE_F32);
        out.push(self.shape.len() as u8);
        for &d in &self.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != TENSOR_MAGIC {
            return Err(Error::Format("missing ORGT magic".into()));
        }
        if bytes.len() < 7 {
            return Err(Error::Corruption("truncated tensor header".into()));
        }
        if bytes[4] != TENSOR_VERSION {
            return Err(Error::Format(format!("unsupported version {}", bytes[4])));
        }
        if bytes[5] != DTYPE_F32 {
            return Err(Error::Format(format!("unsupported dtype {}", bytes[5])));
        }
        let rank = bytes[6] as usize;
        let dims_end = 7 + 4 * rank;
        if bytes.len() < dims_end {
            return Err(Error::Corruption("truncated tensor dims".into()));
        }
        let shape: Vec<usize> = bytes[7..dims_end]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
            .collect();
        let count: usize = shape.iter().product();
        let payload = &bytes[dims_end..];
        if payload.len() != 4 * count {
            return Err(Error::Corruption(format!(
                "payload has {} bytes, header shape {shape:?} needs {}",
                payload.len(),
                4 * count
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::new(shape, data)
    }
}

pub fn write_tensor_file(path: impl AsRef<Path>, tensor: &FeatureTensor) -> Result<()> {
    let path = path.as_ref();
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&tensor.to_bytes())
        .map_err(|e| Error::io(path, e))
}

pub fn read_tensor_file(path: impl AsRef<Path>) -> Result<FeatureTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    FeatureTensor::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reads_back_small_tensor() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.orgt");
        let t = FeatureTensor::new(vec![2, 3], (0..6).map(|v| v as f32).collect()).unwrap();
        write_tensor_file(&path, &t).unwrap();
        let back = read_tensor_file(&path).unwrap();
        assert_eq!(back.shape(), &[2, 3]);
        assert_eq!(back.data(), &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn zero_dim_is_empty() {
        let t = FeatureTensor::new(vec![0], vec![]).unwrap();
        let back = FeatureTensor::from_bytes(&t.to_bytes()).unwrap();
        assert_eq!(back.len(), 0);
        assert_eq!(back.shape(), &[0]);
    }

    #[test]
    fn random_payload_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let data: Vec<f32> = (0..8 * 4 * 16)
            .map(|_| rng.random_range(-3.0..3.0))
            .collect();
        let t = FeatureTensor::new(vec![8, 4, 16], data).unwrap();
        let bytes = t.to_bytes();
        let back = FeatureTensor::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert!(back
            .data()
            .iter()
            .zip(t.data())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn header_layout_is_fixed() {
        let t = FeatureTensor::new(vec![1, 2], vec![1.0, -2.0]).unwrap();
        let b = t.to_bytes();
        assert_eq!(&b[..4], b"ORGT");
        assert_eq!(b[4], 1);
        assert_eq!(b[5], 1);
        assert_eq!(b[6], 2);
        assert_eq!(&b[7..11], &1u32.to_le_bytes());
        assert_eq!(&b[11..15], &2u32.to_le_bytes());
        assert_eq!(&b[15..19], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 23);
    }

    #[test]
    fn bad_magic_is_format_error() {
        let mut b = FeatureTensor::zeros(vec![2]).to_bytes();
        b[0] = b'X';
        assert!(matches!(
            FeatureTensor::from_bytes(&b),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn truncated_payload_is_corruption() {
        let mut b = FeatureTensor::zeros(vec![2, 2]).to_bytes();
        b.truncate(b.len() - 2);
        assert!(matches!(
            FeatureTensor::from_bytes(&b),
            Err(Error::Corruption(_))
        ));
    }

    #[test]
    fn non_finite_payload_is_validation_error() {
        let mut b = FeatureTensor::zeros(vec![2]).to_bytes();
        let n = b.len();
        b[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            FeatureTensor::from_bytes(&b),
            Err(Error::Validation(_))
        ));
    }

    proptest! {
        #[test]
        fn bytes_round_trip(shape in proptest::collection::vec(1usize..4, 0..4), seed in any::<u64>()) {
            let n: usize = shape.iter().product();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f32> = (0..n).map(|_| rng.random_range(-1e6f32..1e6)).collect();
            let t = FeatureTensor::new(shape, data).unwrap();
            prop_assert_eq!(FeatureTensor::from_bytes(&t.to_bytes()).unwrap(), t);
        }
    }
}

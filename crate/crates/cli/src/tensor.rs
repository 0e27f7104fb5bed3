//! The tensor exchange format: magic `XTF1`, one dtype byte (0 = f32
//! little-endian, 1 = u32 little-endian), one ndims byte, `ndims` u32
//! little-endian extents, then the row-major payload with the innermost
//! dimension last. Parse-then-serialize is byte-identical, so any
//! environment can read and write fixtures with a few lines of code.

use std::path::Path;

use crowdmask::edpsam::Image;
use crowdmask::field::{FeatureMap, ScalarField};
use crowdmask::grid::{Dims, InstanceLabelMap};

use crate::{CliError, CliResult};

pub const MAGIC: [u8; 4] = *b"XTF1";

const DTYPE_F32: u8 = 0;
const DTYPE_U32: u8 = 1;

/// Hard cap on the element count of a parsed tensor, to keep malformed
/// headers from requesting absurd allocations.
const MAX_ELEMENTS: u64 = 1 << 31;

#[derive(Clone, Debug, PartialEq)]
pub enum Tensor {
    F32 { dims: Vec<u32>, data: Vec<f32> },
    U32 { dims: Vec<u32>, data: Vec<u32> },
}

impl Tensor {
    pub fn dims(&self) -> &[u32] {
        match self {
            Tensor::F32 { dims, .. } => dims,
            Tensor::U32 { dims, .. } => dims,
        }
    }

    pub fn element_count(&self) -> usize {
        match self {
            Tensor::F32 { data, .. } => data.len(),
            Tensor::U32 { data, .. } => data.len(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (dtype, dims, payload_len) = match self {
            Tensor::F32 { dims, data } => (DTYPE_F32, dims, data.len() * 4),
            Tensor::U32 { dims, data } => (DTYPE_U32, dims, data.len() * 4),
        };
        let mut out = Vec::with_capacity(4 + 2 + dims.len() * 4 + payload_len);
        out.extend_from_slice(&MAGIC);
        out.push(dtype);
        out.push(dims.len() as u8);
        for &d in dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        match self {
            Tensor::F32 { data, .. } => {
                for v in data {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            Tensor::U32 { data, .. } => {
                for v in data {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> CliResult<Self> {
        if bytes.len() < 6 {
            return Err(CliError::input("tensor header truncated"));
        }
        if bytes[0..4] != MAGIC {
            return Err(CliError::input(format!(
                "bad magic {:?}, expected \"XTF1\"",
                &bytes[0..4]
            )));
        }
        let dtype = bytes[4];
        let ndims = bytes[5] as usize;
        let mut offset = 6;
        if bytes.len() < offset + 4 * ndims {
            return Err(CliError::input("tensor dims truncated"));
        }
        let mut dims = Vec::with_capacity(ndims);
        let mut count: u64 = 1;
        for _ in 0..ndims {
            let d = u32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap());
            offset += 4;
            dims.push(d);
            count = count.saturating_mul(d as u64);
        }
        if count > MAX_ELEMENTS {
            return Err(CliError::input(format!(
                "tensor with {count} elements exceeds the supported size"
            )));
        }
        let count = count as usize;
        let expect = offset + 4 * count;
        if bytes.len() < expect {
            return Err(CliError::input(format!(
                "tensor payload truncated: need {} bytes, have {}",
                expect,
                bytes.len()
            )));
        }
        if bytes.len() > expect {
            return Err(CliError::input(format!(
                "{} trailing bytes after tensor payload",
                bytes.len() - expect
            )));
        }
        match dtype {
            DTYPE_F32 => {
                let mut data = Vec::with_capacity(count);
                for i in 0..count {
                    let o = offset + 4 * i;
                    data.push(f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()));
                }
                Ok(Tensor::F32 { dims, data })
            }
            DTYPE_U32 => {
                let mut data = Vec::with_capacity(count);
                for i in 0..count {
                    let o = offset + 4 * i;
                    data.push(u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()));
                }
                Ok(Tensor::U32 { dims, data })
            }
            other => Err(CliError::input(format!("unsupported dtype byte {other}"))),
        }
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        std::fs::write(path, self.to_bytes())
            .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        Ok(())
    }

    fn expect_shape(&self, ndims: usize, what: &str) -> CliResult<Vec<usize>> {
        let dims = self.dims();
        if dims.len() != ndims {
            return Err(CliError::input(format!(
                "{what}: expected {ndims} dims, file has {}",
                dims.len()
            )));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(CliError::input(format!("{what}: zero-sized dimension")));
        }
        Ok(dims.iter().map(|&d| d as usize).collect())
    }

    pub fn from_feature_map(fmap: &FeatureMap) -> Self {
        Tensor::F32 {
            dims: vec![
                fmap.channels() as u32,
                fmap.dims().h as u32,
                fmap.dims().w as u32,
            ],
            data: fmap.as_slice().iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn to_feature_map(&self) -> CliResult<FeatureMap> {
        let shape = self.expect_shape(3, "feature map")?;
        let Tensor::F32 { data, .. } = self else {
            return Err(CliError::input("feature map: dtype must be f32"));
        };
        let fmap = FeatureMap::new(
            shape[0],
            Dims::new(shape[1], shape[2]),
            data.iter().map(|&v| v as f64).collect(),
        )?;
        Ok(fmap)
    }

    pub fn from_scalar_field(field: &ScalarField) -> Self {
        Tensor::F32 {
            dims: vec![field.dims().h as u32, field.dims().w as u32],
            data: field.data().iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn to_scalar_field(&self) -> CliResult<ScalarField> {
        let shape = self.expect_shape(2, "scalar field")?;
        let Tensor::F32 { data, .. } = self else {
            return Err(CliError::input("scalar field: dtype must be f32"));
        };
        Ok(ScalarField::new(
            Dims::new(shape[0], shape[1]),
            data.iter().map(|&v| v as f64).collect(),
        )?)
    }

    pub fn from_label_map(labels: &InstanceLabelMap) -> Self {
        Tensor::U32 {
            dims: vec![labels.dims().h as u32, labels.dims().w as u32],
            data: labels.data().to_vec(),
        }
    }

    pub fn to_label_map(&self) -> CliResult<InstanceLabelMap> {
        let shape = self.expect_shape(2, "label map")?;
        let Tensor::U32 { data, .. } = self else {
            return Err(CliError::input("label map: dtype must be u32"));
        };
        Ok(InstanceLabelMap::new(
            Dims::new(shape[0], shape[1]),
            data.clone(),
        )?)
    }

    pub fn from_image(img: &Image) -> Self {
        Tensor::F32 {
            dims: vec![3, img.dims().h as u32, img.dims().w as u32],
            data: img.data().iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn to_image(&self) -> CliResult<Image> {
        let shape = self.expect_shape(3, "image")?;
        if shape[0] != 3 {
            return Err(CliError::input(format!(
                "image: expected 3 channels, file has {}",
                shape[0]
            )));
        }
        let Tensor::F32 { data, .. } = self else {
            return Err(CliError::input("image: dtype must be f32"));
        };
        Ok(Image::new(
            Dims::new(shape[1], shape[2]),
            data.iter().map(|&v| v as f64).collect(),
        )?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_byte_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let ndims = rng.gen_range(1..=4);
            let dims: Vec<u32> = (0..ndims).map(|_| rng.gen_range(1..6)).collect();
            let count: usize = dims.iter().product::<u32>() as usize;
            let tensor = if rng.gen_bool(0.5) {
                Tensor::F32 {
                    dims,
                    data: (0..count).map(|_| rng.gen_range(-10.0..10.0)).collect(),
                }
            } else {
                Tensor::U32 {
                    dims,
                    data: (0..count).map(|_| rng.gen()).collect(),
                }
            };
            let bytes = tensor.to_bytes();
            let parsed = Tensor::from_bytes(&bytes).unwrap();
            assert_eq!(parsed, tensor);
            assert_eq!(parsed.to_bytes(), bytes);
        }
    }

    #[test]
    fn parser_names_the_offending_field() {
        assert!(Tensor::from_bytes(b"NOPE\x00\x01")
            .unwrap_err()
            .message
            .contains("magic"));
        let mut ok = Tensor::U32 {
            dims: vec![2],
            data: vec![1, 2],
        }
        .to_bytes();
        ok[4] = 9;
        assert!(Tensor::from_bytes(&ok).unwrap_err().message.contains("dtype"));
        let short = &Tensor::U32 {
            dims: vec![2],
            data: vec![1, 2],
        }
        .to_bytes()[..8];
        assert!(Tensor::from_bytes(short)
            .unwrap_err()
            .message
            .contains("truncated"));
        let mut long = Tensor::U32 {
            dims: vec![2],
            data: vec![1, 2],
        }
        .to_bytes();
        long.push(0);
        assert!(Tensor::from_bytes(&long)
            .unwrap_err()
            .message
            .contains("trailing"));
    }

    #[test]
    fn conversions_preserve_values() {
        let dims = Dims::new(3, 4);
        let fmap = FeatureMap::new(
            2,
            dims,
            (0..24).map(|i| i as f64 * 0.25).collect(),
        )
        .unwrap();
        let back = Tensor::from_feature_map(&fmap).to_feature_map().unwrap();
        assert_eq!(back.as_slice(), fmap.as_slice());

        let labels = InstanceLabelMap::new(dims, (0..12).collect()).unwrap();
        let back = Tensor::from_label_map(&labels).to_label_map().unwrap();
        assert_eq!(&back, &labels);

        // dtype mismatches are input errors
        assert!(Tensor::from_label_map(&labels).to_feature_map().is_err());
        assert!(Tensor::from_feature_map(&fmap).to_label_map().is_err());
    }
}

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifest::{DataLayout, ElementType};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TensorError {
    #[error("dims {dims:?} describe {expected} elements but data has {actual}")]
    Length {
        dims: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("expected a rank-{expected} tensor, got dims {dims:?}")]
    Rank { expected: usize, dims: Vec<usize> },
}

/// Dense tensor. Scalars are stored as `f32` whatever the element type;
/// `uint8`/`int8` values are exactly representable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub layout: DataLayout,
    pub element_type: ElementType,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(
        dims: Vec<usize>,
        layout: DataLayout,
        element_type: ElementType,
        data: Vec<f32>,
    ) -> Result<Self, TensorError> {
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(TensorError::Length {
                dims,
                expected,
                actual: data.len(),
            });
        }
        Ok(Self {
            dims,
            layout,
            element_type,
            data,
        })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(n, h, w, c)` read from the dims according to the layout.
    pub fn nhwc_dims(&self) -> Result<(usize, usize, usize, usize), TensorError> {
        let [a, b, c, d] = self.dims[..] else {
            return Err(TensorError::Rank {
                expected: 4,
                dims: self.dims.clone(),
            });
        };
        Ok(match self.layout {
            DataLayout::Nhwc => (a, b, c, d),
            DataLayout::Nchw => (a, c, d, b),
        })
    }

    /// Bit pattern of the data, for byte-identity checks.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|x| x.to_le_bytes()).collect()
    }
}

/// Physically transposes a rank-4 tensor between NHWC and NCHW.
pub fn to_layout(t: &Tensor, target: DataLayout) -> Result<Tensor, TensorError> {
    let (n, h, w, c) = t.nhwc_dims()?;
    if t.layout == target {
        return Ok(t.clone());
    }
    let mut data = vec![0f32; t.data.len()];
    for b in 0..n {
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let nhwc = ((b * h + y) * w + x) * c + ch;
                    let nchw = ((b * c + ch) * h + y) * w + x;
                    match target {
                        DataLayout::Nchw => data[nchw] = t.data[nhwc],
                        DataLayout::Nhwc => data[nhwc] = t.data[nchw],
                    }
                }
            }
        }
    }
    let dims = match target {
        DataLayout::Nchw => vec![n, c, h, w],
        DataLayout::Nhwc => vec![n, h, w, c],
    };
    Ok(Tensor {
        dims,
        layout: target,
        element_type: t.element_type,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nhwc_to_nchw_explicit() {
        let t = Tensor::new(
            vec![1, 2, 2, 3],
            DataLayout::Nhwc,
            ElementType::Float32,
            (0..12).map(|x| x as f32).collect(),
        )
        .unwrap();
        let nchw = to_layout(&t, DataLayout::Nchw).unwrap();
        assert_eq!(nchw.dims, vec![1, 3, 2, 2]);
        assert_eq!(
            nchw.data,
            [0., 3., 6., 9., 1., 4., 7., 10., 2., 5., 8., 11.]
        );
        assert_eq!(to_layout(&nchw, DataLayout::Nhwc).unwrap(), t);
        assert_eq!(to_layout(&t, DataLayout::Nhwc).unwrap(), t);
    }

    #[test]
    fn wrong_rank() {
        let t = Tensor::new(vec![2, 3], DataLayout::Nhwc, ElementType::Float32, vec![0.; 6]).unwrap();
        assert!(matches!(to_layout(&t, DataLayout::Nchw), Err(TensorError::Rank { .. })));
        assert!(Tensor::new(vec![2, 3], DataLayout::Nhwc, ElementType::Float32, vec![0.; 5]).is_err());
    }
}

use crate::error::{Error, Result};
use crate::voxel::VoxelGrid;

/// Dense `(channels, width, depth, height)` tensor.
///
/// Spatial axes map to x, y, z and are stored x-fastest, one channel after
/// the other, so a single-channel tensor shares the layout of a
/// [`VoxelGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    channels: usize,
    dims: [usize; 3],
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(channels: usize, dims: [usize; 3]) -> Self {
        Self {
            channels,
            dims,
            data: vec![0.0; channels * dims[0] * dims[1] * dims[2]],
        }
    }

    pub fn from_vec(channels: usize, dims: [usize; 3], data: Vec<f64>) -> Result<Self> {
        if channels == 0 || dims.contains(&0) {
            return Err(Error::ShapeMismatch(format!(
                "empty tensor shape ({channels}, {dims:?})"
            )));
        }
        if data.len() != channels * dims.iter().product::<usize>() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for shape ({channels}, {dims:?})",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "tensor holds non-finite values".into(),
            ));
        }
        Ok(Self {
            channels,
            dims,
            data,
        })
    }

    /// Single-channel tensor holding a voxel grid.
    pub fn from_grid(grid: &VoxelGrid) -> Self {
        let s = grid.size();
        Self {
            channels: 1,
            dims: [s, s, s],
            data: grid.values().to_vec(),
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn shape(&self) -> (usize, [usize; 3]) {
        (self.channels, self.dims)
    }

    pub fn plane_len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Values of channel `c`.
    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub(crate) fn same_shape(&self, other: &Tensor4) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch(format!(
                "({}, {:?}) vs ({}, {:?})",
                self.channels, self.dims, other.channels, other.dims
            )));
        }
        Ok(())
    }

    pub(crate) fn map(&self, f: impl Fn(f64) -> f64) -> Tensor4 {
        Tensor4 {
            channels: self.channels,
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

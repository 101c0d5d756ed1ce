//! Scalar, label and disease-coordinate volumes sharing one voxel geometry.
//!
//! Every volume stores its voxels in linear order `x + X * (y + Y * z)`.
//! Multi-channel fields are channel-major: all voxels of channel 0, then all
//! voxels of channel 1.

mod io;
mod resample;

pub use io::{read_volume, write_dcmap, write_labels, write_scalar, AnyVolume, DType};
pub use resample::{downscale_by_2, downscale_channels_by_2, normalize_intensity, upscale_to};

use serde::{Deserialize, Serialize};

use crate::dc_space::DcPoint;
use crate::error::{data_err, geometry, Result};

/// Voxel counts along x, y and z.
pub type Dims = [usize; 3];

pub fn voxel_count(dims: Dims) -> usize {
    dims[0] * dims[1] * dims[2]
}

#[inline]
pub fn linear_index(dims: Dims, x: usize, y: usize, z: usize) -> usize {
    x + dims[0] * (y + dims[1] * z)
}

fn check_dims(dims: Dims) -> Result<()> {
    if dims.contains(&0) {
        return Err(geometry!("dims {dims:?} must all be positive"));
    }
    Ok(())
}

/// Real-valued intensity grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Volume3D {
    dims: Dims,
    data: Vec<f64>,
}

impl Volume3D {
    pub fn new(dims: Dims, data: Vec<f64>) -> Result<Self> {
        check_dims(dims)?;
        if data.len() != voxel_count(dims) {
            return Err(geometry!(
                "data length {} does not match dims {dims:?}",
                data.len()
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(data_err!("non-finite intensity at voxel {i}"));
        }
        Ok(Self { dims, data })
    }

    pub fn filled(dims: Dims, value: f64) -> Result<Self> {
        Self::new(dims, vec![value; voxel_count(dims)])
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
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

    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[linear_index(self.dims, x, y, z)]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

/// Integer structure labels: 0 is outside the intracranial cavity, 1..=s are
/// brain structures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelVolume {
    dims: Dims,
    labels: Vec<u16>,
    num_structures: u16,
}

impl LabelVolume {
    pub fn new(dims: Dims, labels: Vec<u16>, num_structures: u16) -> Result<Self> {
        check_dims(dims)?;
        if labels.len() != voxel_count(dims) {
            return Err(geometry!(
                "label length {} does not match dims {dims:?}",
                labels.len()
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l > num_structures) {
            return Err(data_err!(
                "label {bad} exceeds structure count {num_structures}"
            ));
        }
        Ok(Self {
            dims,
            labels,
            num_structures,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn num_structures(&self) -> usize {
        self.num_structures as usize
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> u16 {
        self.labels[linear_index(self.dims, x, y, z)]
    }

    /// Voxel counts per label, index 0 being the outside-ICC count.
    pub fn label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_structures() + 1];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    /// 1.0 inside the ICC, 0.0 outside.
    pub fn icc_mask(&self) -> Vec<f64> {
        self.labels
            .iter()
            .map(|&l| if l > 0 { 1.0 } else { 0.0 })
            .collect()
    }
}

/// Two-channel field of disease coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcMap {
    dims: Dims,
    data: Vec<f64>,
}

impl DcMap {
    pub const CHANNELS: usize = 2;

    /// `data` holds the x channel followed by the y channel.
    pub fn new(dims: Dims, data: Vec<f64>) -> Result<Self> {
        check_dims(dims)?;
        if data.len() != Self::CHANNELS * voxel_count(dims) {
            return Err(geometry!(
                "dc map length {} does not match 2 x {dims:?}",
                data.len()
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(data_err!("non-finite disease coordinate at element {i}"));
        }
        Ok(Self { dims, data })
    }

    pub fn filled(dims: Dims, point: DcPoint) -> Result<Self> {
        let n = voxel_count(dims);
        let mut data = vec![point.x; 2 * n];
        data[n..].fill(point.y);
        Self::new(dims, data)
    }

    pub fn zeros(dims: Dims) -> Result<Self> {
        Self::filled(dims, DcPoint::ORIGIN)
    }

    pub fn from_points(dims: Dims, points: &[DcPoint]) -> Result<Self> {
        let mut data = Vec::with_capacity(2 * points.len());
        data.extend(points.iter().map(|p| p.x));
        data.extend(points.iter().map(|p| p.y));
        Self::new(dims, data)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn voxels(&self) -> usize {
        voxel_count(self.dims)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.voxels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn point(&self, index: usize) -> DcPoint {
        let n = self.voxels();
        DcPoint::new(self.data[index], self.data[n + index])
    }

    pub fn point_at(&self, x: usize, y: usize, z: usize) -> DcPoint {
        self.point(linear_index(self.dims, x, y, z))
    }

    pub fn max_norm(&self) -> f64 {
        (0..self.voxels())
            .map(|i| self.point(i).norm())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn rejects_length_mismatch() {
        assert!(matches!(
            Volume3D::new([2, 2, 2], vec![0.0; 7]),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn rejects_non_finite_intensity() {
        let mut data = vec![0.0; 8];
        data[3] = f64::NAN;
        assert!(matches!(Volume3D::new([2, 2, 2], data), Err(Error::Data(_))));
        let mut data = vec![0.0; 8];
        data[5] = f64::INFINITY;
        assert!(matches!(Volume3D::new([2, 2, 2], data), Err(Error::Data(_))));
    }

    #[test]
    fn labels_bounded_by_structure_count() {
        assert!(LabelVolume::new([2, 1, 1], vec![0, 3], 2).is_err());
        let lab = LabelVolume::new([3, 1, 1], vec![0, 2, 2], 2).unwrap();
        assert_eq!(lab.label_counts(), vec![1, 0, 2]);
    }

    #[test]
    fn linear_index_is_x_fastest() {
        let dims = [3, 4, 5];
        assert_eq!(linear_index(dims, 1, 0, 0), 1);
        assert_eq!(linear_index(dims, 0, 1, 0), 3);
        assert_eq!(linear_index(dims, 0, 0, 1), 12);
        let v = Volume3D::new(dims, (0..60).map(f64::from).collect()).unwrap();
        assert_eq!(v.get(2, 3, 4), 59.0);
    }

    #[test]
    fn dcmap_is_channel_major() {
        let m = DcMap::filled([2, 1, 1], DcPoint::new(0.25, -0.5)).unwrap();
        assert_eq!(m.data(), &[0.25, 0.25, -0.5, -0.5]);
        assert_eq!(m.point(1), DcPoint::new(0.25, -0.5));
    }
}

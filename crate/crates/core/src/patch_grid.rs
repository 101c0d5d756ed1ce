//! Evenly spaced overlapping patch grid over a volume.
//!
//! Patches are enumerated in raster order of their grid coordinate (x
//! fastest, then y, then z). Reconstruction averages every patch output
//! covering a voxel, as a running mean over its exact coverage count.

use serde::{Deserialize, Serialize};

use crate::error::{geometry, Result};
use crate::volume::{linear_index, voxel_count, DcMap, Dims, Volume3D};

/// Offsets `round(i * (dim - patch) / (k - 1))`, rounding half away from zero.
pub fn grid_starts(dim: usize, patch_dim: usize, k: usize) -> Result<Vec<usize>> {
    if patch_dim == 0 || k == 0 {
        return Err(geometry!("patch size and k must be positive"));
    }
    if patch_dim > dim {
        return Err(geometry!("patch size {patch_dim} exceeds volume size {dim}"));
    }
    let span = dim - patch_dim;
    if k == 1 {
        if span != 0 {
            return Err(geometry!(
                "a single patch of size {patch_dim} cannot cover {dim} voxels"
            ));
        }
        return Ok(vec![0]);
    }
    let denom = k - 1;
    // integer form of floor(i * span / denom + 1/2), exact for nonnegative values
    let starts: Vec<usize> = (0..k)
        .map(|i| (2 * i * span + denom) / (2 * denom))
        .collect();
    if starts.windows(2).any(|w| w[1] <= w[0]) {
        return Err(geometry!(
            "{k} patches of size {patch_dim} over {dim} voxels would repeat offsets"
        ));
    }
    if starts.windows(2).any(|w| w[1] - w[0] > patch_dim) {
        return Err(geometry!(
            "{k} patches of size {patch_dim} leave gaps over {dim} voxels"
        ));
    }
    Ok(starts)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub k: usize,
    pub patch_dims: Dims,
    pub volume_dims: Dims,
    pub starts: [Vec<usize>; 3],
}

impl GridSpec {
    pub fn new(volume_dims: Dims, patch_dims: Dims, k: usize) -> Result<Self> {
        let starts = [
            grid_starts(volume_dims[0], patch_dims[0], k)?,
            grid_starts(volume_dims[1], patch_dims[1], k)?,
            grid_starts(volume_dims[2], patch_dims[2], k)?,
        ];
        Ok(Self {
            k,
            patch_dims,
            volume_dims,
            starts,
        })
    }

    /// Checks a deserialized spec against its own construction rule.
    pub fn validate(&self) -> Result<()> {
        let rebuilt = GridSpec::new(self.volume_dims, self.patch_dims, self.k)?;
        if rebuilt.starts != self.starts {
            return Err(geometry!("grid offsets do not match the even-spacing rule"));
        }
        Ok(())
    }

    pub fn num_patches(&self) -> usize {
        self.k * self.k * self.k
    }

    pub fn coord(&self, index: usize) -> [usize; 3] {
        let k = self.k;
        [index % k, (index / k) % k, index / (k * k)]
    }

    pub fn index_of(&self, coord: [usize; 3]) -> usize {
        coord[0] + self.k * (coord[1] + self.k * coord[2])
    }

    pub fn offset(&self, index: usize) -> [usize; 3] {
        let c = self.coord(index);
        [self.starts[0][c[0]], self.starts[1][c[1]], self.starts[2][c[2]]]
    }

    fn check_volume(&self, dims: Dims) -> Result<()> {
        if dims != self.volume_dims {
            return Err(geometry!(
                "volume dims {dims:?} do not match grid dims {:?}",
                self.volume_dims
            ));
        }
        Ok(())
    }

    /// Number of patches covering each voxel.
    pub fn coverage(&self) -> Vec<u32> {
        let mut count = vec![0u32; voxel_count(self.volume_dims)];
        for p in 0..self.num_patches() {
            self.for_each_voxel(p, |_, v| count[v] += 1);
        }
        count
    }

    /// Calls `f(patch_linear, volume_linear)` for every voxel of patch `p`.
    fn for_each_voxel(&self, p: usize, mut f: impl FnMut(usize, usize)) {
        let [ox, oy, oz] = self.offset(p);
        let pd = self.patch_dims;
        let mut i = 0;
        for z in 0..pd[2] {
            for y in 0..pd[1] {
                let row = linear_index(self.volume_dims, ox, oy + y, oz + z);
                for x in 0..pd[0] {
                    f(i, row + x);
                    i += 1;
                }
            }
        }
    }

    /// Copies patch `p` of one channel.
    pub fn extract_channel(&self, data: &[f64], p: usize) -> Vec<f64> {
        let mut out = vec![0.0; voxel_count(self.patch_dims)];
        self.for_each_voxel(p, |i, v| out[i] = data[v]);
        out
    }
}

pub fn extract_patches(v: &Volume3D, g: &GridSpec) -> Result<Vec<Volume3D>> {
    g.check_volume(v.dims())?;
    (0..g.num_patches())
        .map(|p| Volume3D::new(g.patch_dims, g.extract_channel(v.data(), p)))
        .collect()
}

/// Two-channel counterpart of [`extract_patches`], used for target fields.
pub fn extract_dc_patches(m: &DcMap, g: &GridSpec) -> Result<Vec<DcMap>> {
    g.check_volume(m.dims())?;
    (0..g.num_patches())
        .map(|p| {
            let mut data = g.extract_channel(m.channel(0), p);
            data.extend(g.extract_channel(m.channel(1), p));
            DcMap::new(g.patch_dims, data)
        })
        .collect()
}

pub fn reconstruct(outputs: &[DcMap], g: &GridSpec) -> Result<DcMap> {
    if outputs.len() != g.num_patches() {
        return Err(geometry!(
            "expected {} patch outputs, got {}",
            g.num_patches(),
            outputs.len()
        ));
    }
    if let Some(bad) = outputs.iter().position(|o| o.dims() != g.patch_dims) {
        return Err(geometry!(
            "patch output {bad} has dims {:?}, expected {:?}",
            outputs[bad].dims(),
            g.patch_dims
        ));
    }
    let n = voxel_count(g.volume_dims);
    // running mean: m += (x - m) / count, exact whenever covering values agree
    let mut mean = vec![0.0; 2 * n];
    let mut count = vec![0u32; n];
    for (p, out) in outputs.iter().enumerate() {
        let (cx, cy) = (out.channel(0), out.channel(1));
        g.for_each_voxel(p, |i, v| {
            count[v] += 1;
            let c = f64::from(count[v]);
            mean[v] += (cx[i] - mean[v]) / c;
            mean[n + v] += (cy[i] - mean[n + v]) / c;
        });
    }
    if let Some(v) = count.iter().position(|&c| c == 0) {
        return Err(geometry!("voxel {v} is not covered by any patch"));
    }
    DcMap::new(g.volume_dims, mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dc_space::DcPoint;
    use crate::error::Error;
    use proptest::prelude::*;

    #[test]
    fn starts_examples() {
        assert_eq!(grid_starts(91, 32, 5).unwrap(), vec![0, 15, 30, 44, 59]);
        assert_eq!(grid_starts(109, 48, 5).unwrap(), vec![0, 15, 31, 46, 61]);
        assert_eq!(grid_starts(40, 24, 2).unwrap(), vec![0, 16]);
        assert_eq!(grid_starts(16, 16, 1).unwrap(), vec![0]);
    }

    #[test]
    fn starts_match_float_rounding() {
        // f64::round rounds half away from zero
        for (dim, patch, k) in [(91, 32, 5), (109, 48, 5), (37, 10, 4), (50, 7, 9)] {
            let expected: Vec<usize> = (0..k)
                .map(|i| (i as f64 * (dim - patch) as f64 / (k - 1) as f64).round() as usize)
                .collect();
            assert_eq!(grid_starts(dim, patch, k).unwrap(), expected);
        }
    }

    #[test]
    fn starts_errors() {
        assert!(matches!(grid_starts(10, 11, 2), Err(Error::Geometry(_))));
        // would leave a gap between patches
        assert!(grid_starts(40, 8, 2).is_err());
        // would repeat offsets
        assert!(grid_starts(10, 9, 3).is_err());
        assert!(grid_starts(10, 8, 1).is_err());
    }

    #[test]
    fn full_resolution_grid_has_125_patches() {
        let g = GridSpec::new([91, 109, 91], [32, 48, 32], 5).unwrap();
        let v = Volume3D::filled([91, 109, 91], 0.0).unwrap();
        let patches = extract_patches(&v, &g).unwrap();
        assert_eq!(patches.len(), 125);
        assert!(patches.iter().all(|p| p.dims() == [32, 48, 32]));
    }

    #[test]
    fn raster_order() {
        let g = GridSpec::new([8, 8, 8], [4, 4, 4], 2).unwrap();
        assert_eq!(g.coord(1), [1, 0, 0]);
        assert_eq!(g.coord(2), [0, 1, 0]);
        assert_eq!(g.coord(4), [0, 0, 1]);
        assert_eq!(g.offset(7), [4, 4, 4]);
        for p in 0..8 {
            assert_eq!(g.index_of(g.coord(p)), p);
        }
    }

    #[test]
    fn constant_volume_gives_constant_patches() {
        let g = GridSpec::new([10, 12, 9], [6, 7, 5], 2).unwrap();
        let v = Volume3D::filled([10, 12, 9], 3.5).unwrap();
        let patches = extract_patches(&v, &g).unwrap();
        assert_eq!(patches.len(), 8);
        assert!(patches.iter().all(|p| p.data().iter().all(|&x| x == 3.5)));
    }

    #[test]
    fn constant_outputs_reconstruct_constant() {
        let g = GridSpec::new([10, 12, 9], [6, 7, 5], 2).unwrap();
        let outs = vec![DcMap::filled(g.patch_dims, DcPoint::new(0.2, -0.7)).unwrap(); 8];
        let m = reconstruct(&outs, &g).unwrap();
        assert!(m.channel(0).iter().all(|&x| x == 0.2));
        assert!(m.channel(1).iter().all(|&x| x == -0.7));
    }

    #[test]
    fn overlap_is_averaged() {
        let g = GridSpec::new([10, 4, 4], [6, 3, 3], 2).unwrap();
        assert_eq!(g.starts, [vec![0, 4], vec![0, 1], vec![0, 1]]);
        // patch 0 emits (1, 0), every other patch (0, 0)
        let outs: Vec<DcMap> = (0..8)
            .map(|p| {
                let v = if p == 0 { 1.0 } else { 0.0 };
                DcMap::filled(g.patch_dims, DcPoint::new(v, 0.0)).unwrap()
            })
            .collect();
        let m = reconstruct(&outs, &g).unwrap();
        // oracle: enumerate covering patches per voxel directly
        for z in 0..4 {
            for y in 0..4 {
                for x in 0..10 {
                    let covering: Vec<usize> = (0..8)
                        .filter(|&p| {
                            let o = g.offset(p);
                            (0..3).all(|a| {
                                let c = [x, y, z][a];
                                o[a] <= c && c < o[a] + g.patch_dims[a]
                            })
                        })
                        .collect();
                    assert!(!covering.is_empty());
                    let hits = covering.iter().filter(|&&p| p == 0).count() as f64;
                    let expected = hits / covering.len() as f64;
                    let got = m.point_at(x, y, z);
                    assert!((got.x - expected).abs() < 1e-15 && got.y == 0.0);
                }
            }
        }
        // exclusive voxel of patch 0 keeps its value, x-overlap slab halves it
        assert_eq!(m.point_at(0, 0, 0).x, 1.0);
        assert_eq!(m.point_at(5, 0, 0).x, 0.5);
        assert_eq!(m.point_at(9, 0, 0).x, 0.0);
    }

    #[test]
    fn reconstruct_rejects_wrong_count_or_shape() {
        let g = GridSpec::new([10, 4, 4], [6, 3, 3], 2).unwrap();
        let outs = vec![DcMap::zeros(g.patch_dims).unwrap(); 7];
        assert!(matches!(reconstruct(&outs, &g), Err(Error::Geometry(_))));
        let mut outs = vec![DcMap::zeros(g.patch_dims).unwrap(); 8];
        outs[3] = DcMap::zeros([6, 3, 2]).unwrap();
        assert!(matches!(reconstruct(&outs, &g), Err(Error::Geometry(_))));
    }

    #[test]
    fn extraction_checks_volume_dims() {
        let g = GridSpec::new([10, 4, 4], [6, 3, 3], 2).unwrap();
        let v = Volume3D::filled([10, 4, 5], 0.0).unwrap();
        assert!(matches!(extract_patches(&v, &g), Err(Error::Geometry(_))));
    }

    #[test]
    fn target_field_round_trip() {
        use crate::dc_space::{voxel_target, DiagnosticClass};
        let dims = [12, 9, 10];
        let g = GridSpec::new(dims, [7, 5, 6], 3).unwrap();
        let points: Vec<DcPoint> = (0..voxel_count(dims))
            .map(|i| voxel_target(DiagnosticClass::FTD, i % 3 != 0))
            .collect();
        let field = DcMap::from_points(dims, &points).unwrap();
        let back = reconstruct(&extract_dc_patches(&field, &g).unwrap(), &g).unwrap();
        assert_eq!(back, field);
    }

    proptest! {
        #[test]
        fn starts_anchor_both_ends(dim in 2usize..80, frac in 0.05f64..1.0, k in 2usize..6) {
            let patch = ((dim as f64 * frac).ceil() as usize).clamp(1, dim);
            if let Ok(s) = grid_starts(dim, patch, k) {
                prop_assert_eq!(s[0], 0);
                prop_assert_eq!(*s.last().unwrap(), dim - patch);
                prop_assert!(s.windows(2).all(|w| w[0] < w[1] && w[1] - w[0] <= patch));
            }
        }
    }
}

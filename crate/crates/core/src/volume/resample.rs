use super::{linear_index, voxel_count, DcMap, Dims, Volume3D};
use crate::error::{data_err, geometry, Result};

/// Affine min-max rescale to [0, 1]. A constant volume maps to all zeros.
pub fn normalize_intensity(v: &Volume3D) -> Result<Volume3D> {
    if v.is_empty() {
        return Err(data_err!("cannot normalize an empty volume"));
    }
    if v.data().iter().any(|x| !x.is_finite()) {
        return Err(data_err!("non-finite intensity in input volume"));
    }
    let (lo, hi) = v
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    let range = hi - lo;
    let data = if range > 0.0 {
        v.data().iter().map(|&x| (x - lo) / range).collect()
    } else {
        vec![0.0; v.len()]
    };
    Volume3D::new(v.dims(), data)
}

fn half_dims(dims: Dims) -> Result<Dims> {
    if dims.iter().any(|&d| d < 2) {
        return Err(geometry!("cannot downscale dims {dims:?}: every axis needs at least 2 voxels"));
    }
    Ok(dims.map(|d| d.div_ceil(2)))
}

/// 2x2x2 mean pooling of one channel. Blocks cut by an odd boundary average
/// only the voxels they contain.
fn pool_channel(src: &[f64], dims: Dims, out_dims: Dims) -> Vec<f64> {
    let mut sum = vec![0.0; voxel_count(out_dims)];
    let mut count = vec![0u32; sum.len()];
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let o = linear_index(out_dims, x / 2, y / 2, z / 2);
                sum[o] += src[linear_index(dims, x, y, z)];
                count[o] += 1;
            }
        }
    }
    sum.iter()
        .zip(&count)
        .map(|(s, &c)| s / f64::from(c))
        .collect()
}

pub fn downscale_by_2(v: &Volume3D) -> Result<Volume3D> {
    let out_dims = half_dims(v.dims())?;
    Volume3D::new(out_dims, pool_channel(v.data(), v.dims(), out_dims))
}

/// Mean-pools both channels of a disease-coordinate field.
pub fn downscale_channels_by_2(m: &DcMap) -> Result<DcMap> {
    let out_dims = half_dims(m.dims())?;
    let mut data = pool_channel(m.channel(0), m.dims(), out_dims);
    data.extend(pool_channel(m.channel(1), m.dims(), out_dims));
    DcMap::new(out_dims, data)
}

/// Per-axis sample positions for corner-aligned resampling: lower index,
/// upper index and interpolation weight of the upper index.
fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    (0..dst)
        .map(|i| {
            if src == 1 || dst == 1 {
                return (0, 0, 0.0);
            }
            let pos = i as f64 * (src - 1) as f64 / (dst - 1) as f64;
            let lo = (pos.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

fn trilinear(src: &[f64], src_dims: Dims, dst_dims: Dims) -> Vec<f64> {
    let tx = axis_taps(src_dims[0], dst_dims[0]);
    let ty = axis_taps(src_dims[1], dst_dims[1]);
    let tz = axis_taps(src_dims[2], dst_dims[2]);
    let at = |x, y, z| src[linear_index(src_dims, x, y, z)];
    let mut out = Vec::with_capacity(voxel_count(dst_dims));
    for &(z0, z1, wz) in &tz {
        for &(y0, y1, wy) in &ty {
            for &(x0, x1, wx) in &tx {
                let c00 = at(x0, y0, z0) * (1.0 - wx) + at(x1, y0, z0) * wx;
                let c10 = at(x0, y1, z0) * (1.0 - wx) + at(x1, y1, z0) * wx;
                let c01 = at(x0, y0, z1) * (1.0 - wx) + at(x1, y0, z1) * wx;
                let c11 = at(x0, y1, z1) * (1.0 - wx) + at(x1, y1, z1) * wx;
                let c0 = c00 * (1.0 - wy) + c10 * wy;
                let c1 = c01 * (1.0 - wy) + c11 * wy;
                out.push(c0 * (1.0 - wz) + c1 * wz);
            }
        }
    }
    out
}

/// Corner-aligned trilinear upsampling of both channels.
pub fn upscale_to(m: &DcMap, target: Dims) -> Result<DcMap> {
    let src = m.dims();
    if (0..3).any(|a| target[a] < src[a]) {
        return Err(geometry!("upscale target {target:?} is smaller than source {src:?}"));
    }
    if target == src {
        return Ok(m.clone());
    }
    let mut data = trilinear(m.channel(0), src, target);
    data.extend(trilinear(m.channel(1), src, target));
    DcMap::new(target, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dc_space::DcPoint;
    use crate::error::Error;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn vol(dims: Dims, data: Vec<f64>) -> Volume3D {
        Volume3D::new(dims, data).unwrap()
    }

    #[test]
    fn normalize_examples() {
        let v = normalize_intensity(&vol([3, 1, 1], vec![2.0, 4.0, 6.0])).unwrap();
        assert_eq!(v.data(), &[0.0, 0.5, 1.0]);
        let v = normalize_intensity(&vol([3, 1, 1], vec![5.0; 3])).unwrap();
        assert_eq!(v.data(), &[0.0; 3]);
        let v = normalize_intensity(&vol([2, 1, 1], vec![0.0, 1.0])).unwrap();
        assert_eq!(v.data(), &[0.0, 1.0]);
    }

    #[test]
    fn downscale_full_resolution_geometry() {
        let v = Volume3D::filled([182, 218, 182], 0.5).unwrap();
        let d = downscale_by_2(&v).unwrap();
        assert_eq!(d.dims(), [91, 109, 91]);
        assert!(d.data().iter().all(|&x| x == 0.5));
    }

    #[test]
    fn downscale_odd_block_matches_enumeration() {
        let dims = [3, 2, 2];
        let v = vol(dims, (0..12).map(f64::from).collect());
        // brute force: enumerate every voxel and bucket by its output cell
        let mut buckets: Vec<Vec<f64>> = vec![Vec::new(); 2];
        for z in 0..2 {
            for y in 0..2 {
                for x in 0..3 {
                    buckets[x / 2].push((x + 3 * (y + 2 * z)) as f64);
                }
            }
        }
        let expected: Vec<f64> = buckets
            .iter()
            .map(|b| b.iter().sum::<f64>() / b.len() as f64)
            .collect();
        assert_eq!(expected, vec![5.0, 6.5]);
        let d = downscale_by_2(&v).unwrap();
        assert_eq!(d.dims(), [2, 1, 1]);
        assert_eq!(d.data(), expected.as_slice());
    }

    #[test]
    fn downscale_rejects_thin_axis() {
        let v = Volume3D::filled([4, 1, 4], 0.0).unwrap();
        assert!(matches!(downscale_by_2(&v), Err(Error::Geometry(_))));
    }

    #[test]
    fn upscale_identity_and_constants() {
        let m = DcMap::new([2, 2, 2], (0..16).map(|i| i as f64 / 16.0).collect()).unwrap();
        assert_eq!(upscale_to(&m, [2, 2, 2]).unwrap(), m);
        let c = DcMap::filled([3, 2, 2], DcPoint::new(0.3, -0.2)).unwrap();
        let up = upscale_to(&c, [7, 5, 9]).unwrap();
        for i in 0..up.voxels() {
            assert_abs_diff_eq!(up.point(i).x, 0.3, epsilon = 1e-15);
            assert_abs_diff_eq!(up.point(i).y, -0.2, epsilon = 1e-15);
        }
    }

    #[test]
    fn upscale_linear_ramp() {
        // channel 0 = x coordinate, channel 1 = 1 - x
        let dims = [2, 2, 2];
        let mut data = Vec::new();
        for c in 0..2 {
            for i in 0..8 {
                let x = (i % 2) as f64;
                data.push(if c == 0 { x } else { 1.0 - x });
            }
        }
        let m = DcMap::new(dims, data).unwrap();
        let up = upscale_to(&m, [4, 4, 4]).unwrap();
        // corner-aligned: output x index i samples source position i/3
        let expected_x = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        for z in 0..4 {
            for y in 0..4 {
                for x in 0..4 {
                    let p = up.point_at(x, y, z);
                    assert_abs_diff_eq!(p.x, expected_x[x], epsilon = 1e-12);
                    assert_abs_diff_eq!(p.y, 1.0 - expected_x[x], epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn upscale_rejects_smaller_target() {
        let m = DcMap::zeros([4, 4, 4]).unwrap();
        assert!(matches!(upscale_to(&m, [4, 3, 4]), Err(Error::Geometry(_))));
    }

    proptest! {
        #[test]
        fn downscale_preserves_mean_on_even_dims(
            hx in 1usize..4, hy in 1usize..4, hz in 1usize..4,
            seed in proptest::collection::vec(-10.0f64..10.0, 216)
        ) {
            let dims = [2 * hx, 2 * hy, 2 * hz];
            let n = voxel_count(dims);
            let v = vol(dims, seed[..n].to_vec());
            let d = downscale_by_2(&v).unwrap();
            prop_assert!((d.mean() - v.mean()).abs() < 1e-12);
        }

        #[test]
        fn normalize_is_idempotent(data in proptest::collection::vec(-1e3f64..1e3, 1..40)) {
            let v = vol([data.len(), 1, 1], data);
            let once = normalize_intensity(&v).unwrap();
            let twice = normalize_intensity(&once).unwrap();
            for (a, b) in once.data().iter().zip(twice.data()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

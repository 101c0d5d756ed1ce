//! Channel-major activation tensors and the layer primitives of the grader:
//! same-padded 3D convolution, 2x max pooling, nearest-neighbour upsampling.

use crate::volume::{voxel_count, Dims};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub channels: usize,
    pub dims: Dims,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(channels: usize, dims: Dims) -> Self {
        Self {
            channels,
            dims,
            data: vec![0.0; channels * voxel_count(dims)],
        }
    }

    pub fn from_data(channels: usize, dims: Dims, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), channels * voxel_count(dims), "tensor size mismatch");
        Self {
            channels,
            dims,
            data,
        }
    }

    pub fn voxels(&self) -> usize {
        voxel_count(self.dims)
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.voxels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.voxels();
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Stacks `a`'s channels before `b`'s.
    pub fn concat(a: &Tensor, b: &Tensor) -> Tensor {
        assert_eq!(a.dims, b.dims);
        let mut data = Vec::with_capacity(a.data.len() + b.data.len());
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        Tensor::from_data(a.channels + b.channels, a.dims, data)
    }

    /// Splits off the first `c` channels.
    pub fn split(self, c: usize) -> (Tensor, Tensor) {
        let n = self.voxels();
        let mut head = self.data;
        let tail = head.split_off(c * n);
        let rest = self.channels - c;
        (
            Tensor::from_data(c, self.dims, head),
            Tensor::from_data(rest, self.dims, tail),
        )
    }
}

/// Visits every contiguous x-row shared by an output grid and the input grid
/// shifted by `off`: `f(out_start, in_start, len)`.
#[inline]
fn for_each_row(dims: Dims, off: [isize; 3], mut f: impl FnMut(usize, usize, usize)) {
    let range = |d: usize, o: isize| {
        let lo = (-o).max(0) as usize;
        let hi = (d as isize - o).min(d as isize).max(0) as usize;
        (lo, hi)
    };
    let (x0, x1) = range(dims[0], off[0]);
    let (y0, y1) = range(dims[1], off[1]);
    let (z0, z1) = range(dims[2], off[2]);
    if x0 >= x1 {
        return;
    }
    let len = x1 - x0;
    let (nx, ny) = (dims[0] as isize, dims[1] as isize);
    for z in z0..z1 {
        for y in y0..y1 {
            let out = x0 as isize + nx * (y as isize + ny * z as isize);
            let inp = out + off[0] + nx * (off[1] + ny * off[2]);
            f(out as usize, inp as usize, len);
        }
    }
}

/// Shape of a cubic same-padded convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl ConvShape {
    pub fn weight_len(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel.pow(3)
    }

    pub fn param_len(&self) -> usize {
        self.weight_len() + self.out_channels
    }

    fn taps(&self) -> impl Iterator<Item = (usize, [isize; 3])> {
        let k = self.kernel;
        let pad = (k / 2) as isize;
        (0..k * k * k).map(move |t| {
            let (dx, dy, dz) = (t % k, (t / k) % k, t / (k * k));
            (t, [dx as isize - pad, dy as isize - pad, dz as isize - pad])
        })
    }

}

/// Unfolds the same-padded neighbourhoods of `input` into a
/// `(channels * k^3) x voxels` row-major matrix; out-of-volume taps are zero.
fn im2col(shape: &ConvShape, input: &Tensor) -> Vec<f64> {
    let n = input.voxels();
    if shape.kernel == 1 {
        return input.data.clone();
    }
    let taps = shape.kernel.pow(3);
    let mut col = vec![0.0; shape.in_channels * taps * n];
    for i in 0..shape.in_channels {
        let src = input.channel(i);
        for (tap, off) in shape.taps() {
            let row = &mut col[(i * taps + tap) * n..(i * taps + tap + 1) * n];
            for_each_row(input.dims, off, |os, is, len| {
                row[os..os + len].copy_from_slice(&src[is..is + len]);
            });
        }
    }
    col
}

/// Adds the columns of `col` back onto the voxels they were read from.
fn col2im(shape: &ConvShape, col: &[f64], dims: Dims) -> Tensor {
    let n = voxel_count(dims);
    if shape.kernel == 1 {
        return Tensor::from_data(shape.in_channels, dims, col.to_vec());
    }
    let taps = shape.kernel.pow(3);
    let mut out = Tensor::zeros(shape.in_channels, dims);
    for i in 0..shape.in_channels {
        let dst = out.channel_mut(i);
        for (tap, off) in shape.taps() {
            let row = &col[(i * taps + tap) * n..(i * taps + tap + 1) * n];
            for_each_row(dims, off, |os, is, len| {
                for (d, s) in dst[is..is + len].iter_mut().zip(&row[os..os + len]) {
                    *d += s;
                }
            });
        }
    }
    out
}

/// `c = alpha * a * b + beta * c` with explicit row/column strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    debug_assert!(c.len() >= m * n);
    // SAFETY: the asserted extents keep every strided access inside the
    // slices, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `params` holds the kernel `[out][in][dz][dy][dx]` followed by the biases.
pub fn conv_forward(shape: &ConvShape, params: &[f64], input: &Tensor) -> Tensor {
    debug_assert_eq!(input.channels, shape.in_channels);
    let (weights, bias) = params.split_at(shape.weight_len());
    let n = input.voxels();
    let kk = shape.in_channels * shape.kernel.pow(3);
    let col = im2col(shape, input);
    let mut out = Tensor::zeros(shape.out_channels, input.dims);
    for o in 0..shape.out_channels {
        out.channel_mut(o).fill(bias[o]);
    }
    gemm(shape.out_channels, kk, n, weights, (kk, 1), &col, (n, 1), 1.0, &mut out.data);
    out
}

/// Accumulates parameter gradients into `grad_params` and returns the
/// gradient with respect to the input when `need_input` is set.
pub fn conv_backward(
    shape: &ConvShape,
    params: &[f64],
    input: &Tensor,
    grad_out: &Tensor,
    grad_params: &mut [f64],
    need_input: bool,
) -> Option<Tensor> {
    let (weights, _) = params.split_at(shape.weight_len());
    let (gw, gb) = grad_params.split_at_mut(shape.weight_len());
    let n = input.voxels();
    let kk = shape.in_channels * shape.kernel.pow(3);
    for o in 0..shape.out_channels {
        gb[o] += grad_out.channel(o).iter().sum::<f64>();
    }
    let col = im2col(shape, input);
    // dW (O x K) += dY (O x V) * col^T (V x K)
    gemm(shape.out_channels, n, kk, &grad_out.data, (n, 1), &col, (1, n), 1.0, gw);
    if !need_input {
        return None;
    }
    // dcol (K x V) = W^T (K x O) * dY (O x V)
    let mut dcol = vec![0.0; kk * n];
    gemm(kk, shape.out_channels, n, weights, (1, kk), &grad_out.data, (n, 1), 0.0, &mut dcol);
    Some(col2im(shape, &dcol, input.dims))
}

pub fn relu_in_place(t: &mut Tensor) {
    for v in &mut t.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes gradient entries where the activation was clipped.
pub fn relu_backward_in_place(grad: &mut Tensor, activation: &Tensor) {
    for (g, &a) in grad.data.iter_mut().zip(&activation.data) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// 2x2x2 max pooling over even dims. Returns the pooled tensor and, per
/// pooled element, the flat input index of the selected maximum (first
/// maximum in x, y, z scan order on ties).
pub fn max_pool(input: &Tensor) -> (Tensor, Vec<usize>) {
    let d = input.dims;
    let od = [d[0] / 2, d[1] / 2, d[2] / 2];
    let mut out = Tensor::zeros(input.channels, od);
    let mut argmax = vec![0usize; out.data.len()];
    let n_in = input.voxels();
    let n_out = out.voxels();
    for c in 0..input.channels {
        let src = input.channel(c);
        for z in 0..od[2] {
            for y in 0..od[1] {
                for x in 0..od[0] {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = 0;
                    for dz in 0..2 {
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let i = (2 * x + dx) + d[0] * ((2 * y + dy) + d[1] * (2 * z + dz));
                                if src[i] > best {
                                    best = src[i];
                                    best_i = i;
                                }
                            }
                        }
                    }
                    let o = x + od[0] * (y + od[1] * z);
                    out.data[c * n_out + o] = best;
                    argmax[c * n_out + o] = c * n_in + best_i;
                }
            }
        }
    }
    (out, argmax)
}

pub fn max_pool_backward(grad_out: &Tensor, argmax: &[usize], input_dims: Dims) -> Tensor {
    let mut grad_in = Tensor::zeros(grad_out.channels, input_dims);
    for (&g, &i) in grad_out.data.iter().zip(argmax) {
        grad_in.data[i] += g;
    }
    grad_in
}

pub fn upsample_nearest(input: &Tensor) -> Tensor {
    let d = input.dims;
    let od = [2 * d[0], 2 * d[1], 2 * d[2]];
    let mut out = Tensor::zeros(input.channels, od);
    for c in 0..input.channels {
        let src = input.channel(c);
        let dst = out.channel_mut(c);
        for z in 0..od[2] {
            for y in 0..od[1] {
                for x in 0..od[0] {
                    dst[x + od[0] * (y + od[1] * z)] = src[x / 2 + d[0] * (y / 2 + d[1] * (z / 2))];
                }
            }
        }
    }
    out
}

pub fn upsample_nearest_backward(grad_out: &Tensor) -> Tensor {
    let od = grad_out.dims;
    let d = [od[0] / 2, od[1] / 2, od[2] / 2];
    let mut grad_in = Tensor::zeros(grad_out.channels, d);
    for c in 0..grad_out.channels {
        let src = grad_out.channel(c);
        let dst = grad_in.channel_mut(c);
        for z in 0..od[2] {
            for y in 0..od[1] {
                for x in 0..od[0] {
                    dst[x / 2 + d[0] * (y / 2 + d[1] * (z / 2))] += src[x + od[0] * (y + od[1] * z)];
                }
            }
        }
    }
    grad_in
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop convolution with explicit zero padding.
    fn conv_oracle(shape: &ConvShape, params: &[f64], input: &Tensor) -> Tensor {
        let k = shape.kernel as isize;
        let pad = k / 2;
        let d = input.dims;
        let mut out = Tensor::zeros(shape.out_channels, d);
        let wlen = shape.weight_len();
        for o in 0..shape.out_channels {
            for z in 0..d[2] as isize {
                for y in 0..d[1] as isize {
                    for x in 0..d[0] as isize {
                        let mut acc = params[wlen + o];
                        for i in 0..shape.in_channels {
                            for kz in 0..k {
                                for ky in 0..k {
                                    for kx in 0..k {
                                        let (sx, sy, sz) = (x + kx - pad, y + ky - pad, z + kz - pad);
                                        if sx < 0 || sy < 0 || sz < 0 {
                                            continue;
                                        }
                                        let (sx, sy, sz) = (sx as usize, sy as usize, sz as usize);
                                        if sx >= d[0] || sy >= d[1] || sz >= d[2] {
                                            continue;
                                        }
                                        let w = params[(((o * shape.in_channels + i) * k as usize + kz as usize)
                                            * k as usize
                                            + ky as usize)
                                            * k as usize
                                            + kx as usize];
                                        acc += w * input.channel(i)[sx + d[0] * (sy + d[1] * sz)];
                                    }
                                }
                            }
                        }
                        let (x, y, z) = (x as usize, y as usize, z as usize);
                        out.channel_mut(o)[x + d[0] * (y + d[1] * z)] = acc;
                    }
                }
            }
        }
        out
    }

    fn pseudo(n: usize, seed: u64) -> Vec<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn conv_matches_nested_loop_oracle() {
        for (shape, dims) in [
            (ConvShape { in_channels: 2, out_channels: 3, kernel: 3 }, [5, 4, 3]),
            (ConvShape { in_channels: 3, out_channels: 2, kernel: 1 }, [3, 3, 2]),
            (ConvShape { in_channels: 1, out_channels: 1, kernel: 3 }, [1, 2, 1]),
        ] {
            let params = pseudo(shape.param_len(), 7);
            let input = Tensor::from_data(shape.in_channels, dims, pseudo(shape.in_channels * voxel_count(dims), 8));
            let fast = conv_forward(&shape, &params, &input);
            let slow = conv_oracle(&shape, &params, &input);
            for (a, b) in fast.data.iter().zip(&slow.data) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn conv_backward_is_adjoint() {
        // <conv(x) - b, g> == <x, conv^T(g)> for the linear part
        let shape = ConvShape { in_channels: 2, out_channels: 3, kernel: 3 };
        let dims = [4, 3, 5];
        let mut params = pseudo(shape.param_len(), 1);
        let wl = shape.weight_len();
        params[wl..].fill(0.0);
        let x = Tensor::from_data(2, dims, pseudo(2 * voxel_count(dims), 2));
        let g = Tensor::from_data(3, dims, pseudo(3 * voxel_count(dims), 3));
        let y = conv_forward(&shape, &params, &x);
        let mut gp = vec![0.0; shape.param_len()];
        let gx = conv_backward(&shape, &params, &x, &g, &mut gp, true).unwrap();
        let lhs: f64 = y.data.iter().zip(&g.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&gx.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn pool_and_upsample_round_shapes() {
        let t = Tensor::from_data(2, [4, 2, 2], pseudo(32, 4));
        let (p, arg) = max_pool(&t);
        assert_eq!(p.dims, [2, 1, 1]);
        for (v, &i) in p.data.iter().zip(&arg) {
            assert_eq!(*v, t.data[i]);
        }
        let u = upsample_nearest(&p);
        assert_eq!(u.dims, [4, 2, 2]);
        let back = upsample_nearest_backward(&u);
        for (a, b) in back.data.iter().zip(&p.data) {
            assert!((a - 8.0 * b).abs() < 1e-12);
        }
    }
}

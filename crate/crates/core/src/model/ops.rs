//! Channel-major tensors and the layer kernels with their adjoints.
//!
//! Spatial layout is x-fastest, matching [`crate::volume::Geometry::index`].

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Tensor {
    pub channels: usize,
    pub dims: [usize; 3],
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(channels: usize, dims: [usize; 3]) -> Self {
        Tensor { channels, dims, data: vec![0.0; channels * dims[0] * dims[1] * dims[2]] }
    }

    pub fn plane(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let p = self.plane();
        &self.data[c * p..(c + 1) * p]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let p = self.plane();
        &mut self.data[c * p..(c + 1) * p]
    }
}

/// Valid output range along one axis for a kernel offset `d`.
#[inline]
fn span(n: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d.max(0)) as usize;
    (lo, hi)
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Visits every kernel tap of a 3×3×3 same-padded convolution as aligned
/// row pairs: `f(tap, out_start, in_start, len)`.
#[inline]
fn for_each_row(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize, usize)) {
    let [nx, ny, nz] = dims;
    for kz in 0..3 {
        let dz = kz as isize - 1;
        let (z0, z1) = span(nz, dz);
        for ky in 0..3 {
            let dy = ky as isize - 1;
            let (y0, y1) = span(ny, dy);
            for kx in 0..3 {
                let dx = kx as isize - 1;
                let (x0, x1) = span(nx, dx);
                if x1 <= x0 {
                    continue;
                }
                let tap = (kz * 3 + ky) * 3 + kx;
                for z in z0..z1 {
                    let zi = (z as isize + dz) as usize;
                    for y in y0..y1 {
                        let yi = (y as isize + dy) as usize;
                        let out = (z * ny + y) * nx + x0;
                        let inp = (zi * ny + yi) * nx + (x0 as isize + dx) as usize;
                        f(tap, out, inp, x1 - x0);
                    }
                }
            }
        }
    }
}

/// Same-padded 3×3×3 convolution. Weights are `[cout][cin][27]`.
pub(crate) fn conv3(input: &Tensor, weight: &[f64], bias: &[f64]) -> Tensor {
    let cin = input.channels;
    let cout = bias.len();
    debug_assert_eq!(weight.len(), cout * cin * 27);
    let mut out = Tensor::zeros(cout, input.dims);
    for co in 0..cout {
        let dst = out.channel_mut(co);
        dst.fill(bias[co]);
        for ci in 0..cin {
            let src = input.channel(ci);
            let w = &weight[(co * cin + ci) * 27..][..27];
            for_each_row(input.dims, |tap, o, i, n| axpy(&mut dst[o..o + n], w[tap], &src[i..i + n]));
        }
    }
    out
}

/// Accumulates weight and bias gradients of [`conv3`]; returns the input
/// gradient when `want_input` is set.
pub(crate) fn conv3_backward(
    input: &Tensor,
    weight: &[f64],
    grad_out: &Tensor,
    grad_weight: &mut [f64],
    grad_bias: &mut [f64],
    want_input: bool,
) -> Option<Tensor> {
    let cin = input.channels;
    let cout = grad_out.channels;
    let mut grad_in = want_input.then(|| Tensor::zeros(cin, input.dims));
    for co in 0..cout {
        let g = grad_out.channel(co);
        grad_bias[co] += g.iter().sum::<f64>();
        for ci in 0..cin {
            let src = input.channel(ci);
            let base = (co * cin + ci) * 27;
            let gw = &mut grad_weight[base..base + 27];
            for_each_row(input.dims, |tap, o, i, n| gw[tap] += dot(&g[o..o + n], &src[i..i + n]));
            if let Some(gi) = grad_in.as_mut() {
                let w = &weight[base..base + 27];
                let dst = gi.channel_mut(ci);
                for_each_row(input.dims, |tap, o, i, n| axpy(&mut dst[i..i + n], w[tap], &g[o..o + n]));
            }
        }
    }
    grad_in
}

pub(crate) fn relu_in_place(t: &mut Tensor) {
    for v in &mut t.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes gradient entries where the rectified output was not positive.
pub(crate) fn relu_backward(activated: &Tensor, grad: &mut Tensor) {
    for (g, &a) in grad.data.iter_mut().zip(&activated.data) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// 2×2×2 max pooling over even dimensions. The recorded argmax is the first
/// maximum in x-fastest block order.
pub(crate) fn max_pool2(input: &Tensor) -> (Tensor, Vec<u32>) {
    let [nx, ny, _] = input.dims;
    let dims = input.dims.map(|d| d / 2);
    let [ox, oy, oz] = dims;
    let mut out = Tensor::zeros(input.channels, dims);
    let mut arg = vec![0u32; out.data.len()];
    let out_plane = out.plane();
    for c in 0..input.channels {
        let src = input.channel(c);
        for z in 0..oz {
            for y in 0..oy {
                for x in 0..ox {
                    let mut best = f64::NEG_INFINITY;
                    let mut at = 0;
                    for dz in 0..2 {
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let i = ((2 * z + dz) * ny + 2 * y + dy) * nx + 2 * x + dx;
                                if src[i] > best {
                                    best = src[i];
                                    at = i;
                                }
                            }
                        }
                    }
                    let o = c * out_plane + (z * oy + y) * ox + x;
                    out.data[o] = best;
                    arg[o] = at as u32;
                }
            }
        }
    }
    (out, arg)
}

pub(crate) fn max_pool2_backward(grad_out: &Tensor, arg: &[u32], input_dims: [usize; 3]) -> Tensor {
    let mut grad_in = Tensor::zeros(grad_out.channels, input_dims);
    let out_plane = grad_out.plane();
    for c in 0..grad_out.channels {
        let dst = grad_in.channel_mut(c);
        for (k, &g) in grad_out.channel(c).iter().enumerate() {
            dst[arg[c * out_plane + k] as usize] += g;
        }
    }
    grad_in
}

/// Visits every (input voxel row, tap) pair of a stride-2 2×2×2 transposed
/// convolution: `f(tap, in_row, out_row_start, len)` where outputs are strided
/// by 2 along x.
#[inline]
fn for_each_up_row(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize, usize)) {
    let [nx, ny, nz] = dims;
    let (ux, uy) = (2 * nx, 2 * ny);
    for kz in 0..2 {
        for ky in 0..2 {
            for kx in 0..2 {
                let tap = (kz * 2 + ky) * 2 + kx;
                for z in 0..nz {
                    for y in 0..ny {
                        let out = ((2 * z + kz) * uy + 2 * y + ky) * ux + kx;
                        f(tap, (z * ny + y) * nx, out, nx);
                    }
                }
            }
        }
    }
}

/// Stride-2 transposed convolution with a 2×2×2 kernel. Weights are
/// `[cin][cout][8]`.
pub(crate) fn up_conv2(input: &Tensor, weight: &[f64], bias: &[f64]) -> Tensor {
    let cin = input.channels;
    let cout = bias.len();
    debug_assert_eq!(weight.len(), cin * cout * 8);
    let mut out = Tensor::zeros(cout, input.dims.map(|d| 2 * d));
    for co in 0..cout {
        let dst = out.channel_mut(co);
        dst.fill(bias[co]);
        for ci in 0..cin {
            let src = input.channel(ci);
            let w = &weight[(ci * cout + co) * 8..][..8];
            for_each_up_row(input.dims, |tap, i, o, n| {
                let wv = w[tap];
                for k in 0..n {
                    dst[o + 2 * k] += wv * src[i + k];
                }
            });
        }
    }
    out
}

pub(crate) fn up_conv2_backward(
    input: &Tensor,
    weight: &[f64],
    grad_out: &Tensor,
    grad_weight: &mut [f64],
    grad_bias: &mut [f64],
) -> Tensor {
    let cin = input.channels;
    let cout = grad_out.channels;
    let mut grad_in = Tensor::zeros(cin, input.dims);
    for co in 0..cout {
        let g = grad_out.channel(co);
        grad_bias[co] += g.iter().sum::<f64>();
        for ci in 0..cin {
            let src = input.channel(ci);
            let base = (ci * cout + co) * 8;
            let w = &weight[base..base + 8];
            let (gw, dst) = (&mut grad_weight[base..base + 8], grad_in.channel_mut(ci));
            for_each_up_row(input.dims, |tap, i, o, n| {
                let wv = w[tap];
                let mut acc = 0.0;
                for k in 0..n {
                    let gk = g[o + 2 * k];
                    acc += gk * src[i + k];
                    dst[i + k] += wv * gk;
                }
                gw[tap] += acc;
            });
        }
    }
    grad_in
}

/// Pointwise linear map to one channel.
pub(crate) fn head(input: &Tensor, weight: &[f64], bias: f64) -> Vec<f64> {
    let mut out = vec![bias; input.plane()];
    for (ci, &w) in weight.iter().enumerate() {
        axpy(&mut out, w, input.channel(ci));
    }
    out
}

pub(crate) fn head_backward(
    input: &Tensor,
    weight: &[f64],
    grad_out: &[f64],
    grad_weight: &mut [f64],
    grad_bias: &mut f64,
) -> Tensor {
    *grad_bias += grad_out.iter().sum::<f64>();
    let mut grad_in = Tensor::zeros(input.channels, input.dims);
    for (ci, &w) in weight.iter().enumerate() {
        grad_weight[ci] += dot(grad_out, input.channel(ci));
        axpy(grad_in.channel_mut(ci), w, grad_out);
    }
    grad_in
}

pub(crate) fn concat(a: &Tensor, b: &Tensor) -> Tensor {
    debug_assert_eq!(a.dims, b.dims);
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Tensor { channels: a.channels + b.channels, dims: a.dims, data }
}

/// Splits a gradient on a concatenation back into its two parts.
pub(crate) fn split(t: Tensor, first: usize) -> (Tensor, Tensor) {
    let cut = first * t.plane();
    let mut data = t.data;
    let rest = data.split_off(cut);
    (
        Tensor { channels: first, dims: t.dims, data },
        Tensor { channels: t.channels - first, dims: t.dims, data: rest },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(channels: usize, dims: [usize; 3], rng: &mut ChaCha8Rng) -> Tensor {
        let mut t = Tensor::zeros(channels, dims);
        t.data.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        t
    }

    fn at(t: &Tensor, c: usize, x: isize, y: isize, z: isize) -> f64 {
        let [nx, ny, nz] = t.dims.map(|d| d as isize);
        if x < 0 || y < 0 || z < 0 || x >= nx || y >= ny || z >= nz {
            return 0.0;
        }
        t.channel(c)[((z * ny + y) * nx + x) as usize]
    }

    #[test]
    fn conv3_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let input = random(2, [4, 3, 5], &mut rng);
        let w: Vec<f64> = (0..3 * 2 * 27).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b = [0.1, -0.2, 0.3];
        let out = conv3(&input, &w, &b);
        for co in 0..3 {
            for z in 0..5isize {
                for y in 0..3isize {
                    for x in 0..4isize {
                        let mut s = b[co];
                        for ci in 0..2 {
                            for k in 0..27 {
                                let (kz, ky, kx) = (k / 9, (k / 3) % 3, k % 3);
                                s += w[(co * 2 + ci) * 27 + k]
                                    * at(&input, ci, x + kx as isize - 1, y + ky as isize - 1, z + kz as isize - 1);
                            }
                        }
                        assert!((at(&out, co, x, y, z) - s).abs() < 1e-12);
                    }
                }
            }
        }
    }

    /// `<A x, g> = <x, A^T g>` for every linear kernel and its adjoint.
    #[test]
    fn adjoints_satisfy_inner_product_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(2, [4, 2, 6], &mut rng);

        let w: Vec<f64> = (0..3 * 2 * 27).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = conv3(&x, &w, &[0.0; 3]);
        let g = random(3, y.dims, &mut rng);
        let (mut gw, mut gb) = (vec![0.0; w.len()], vec![0.0; 3]);
        let gx = conv3_backward(&x, &w, &g, &mut gw, &mut gb, true).unwrap();
        assert!((dot(&y.data, &g.data) - dot(&x.data, &gx.data)).abs() < 1e-10);
        // bilinear in (x, w): <y, g> is also <w, dL/dw>
        assert!((dot(&y.data, &g.data) - dot(&w, &gw)).abs() < 1e-10);

        let w: Vec<f64> = (0..2 * 3 * 8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = up_conv2(&x, &w, &[0.0; 3]);
        let g = random(3, y.dims, &mut rng);
        let (mut gw, mut gb) = (vec![0.0; w.len()], vec![0.0; 3]);
        let gx = up_conv2_backward(&x, &w, &g, &mut gw, &mut gb);
        assert!((dot(&y.data, &g.data) - dot(&x.data, &gx.data)).abs() < 1e-10);
        assert!((dot(&y.data, &g.data) - dot(&w, &gw)).abs() < 1e-10);
        assert!((gb.iter().sum::<f64>() - g.data.iter().sum::<f64>()).abs() < 1e-10);

        let w = [0.5, -1.5];
        let y = head(&x, &w, 0.0);
        let g: Vec<f64> = (0..y.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (mut gw, mut gb) = (vec![0.0; 2], 0.0);
        let gx = head_backward(&x, &w, &g, &mut gw, &mut gb);
        assert!((dot(&y, &g) - dot(&x.data, &gx.data)).abs() < 1e-10);
    }

    #[test]
    fn up_conv_places_each_tap() {
        let x = Tensor { channels: 1, dims: [1, 1, 1], data: vec![2.0] };
        let w: Vec<f64> = (0..8).map(f64::from).collect();
        let y = up_conv2(&x, &w, &[1.0]);
        assert_eq!(y.dims, [2, 2, 2]);
        // tap (kz, ky, kx) lands at x-fastest index kx + 2 ky + 4 kz
        assert_eq!(y.data, (0..8).map(|t| 1.0 + 2.0 * t as f64).collect::<Vec<_>>());
    }

    #[test]
    fn pooling_routes_gradient_to_first_maximum() {
        let mut x = Tensor::zeros(1, [2, 2, 2]);
        x.data = vec![1.0, 3.0, 3.0, 0.0, -1.0, 2.0, 3.0, 0.5];
        let (y, arg) = max_pool2(&x);
        assert_eq!(y.data, vec![3.0]);
        assert_eq!(arg, vec![1]);
        let g = Tensor { channels: 1, dims: [1, 1, 1], data: vec![5.0] };
        let gx = max_pool2_backward(&g, &arg, [2, 2, 2]);
        assert_eq!(gx.data, vec![0.0, 5.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn split_inverts_concat() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(2, [2, 3, 2], &mut rng);
        let b = random(3, [2, 3, 2], &mut rng);
        let (a2, b2) = split(concat(&a, &b), 2);
        assert_eq!((a2, b2), (a, b));
    }
}

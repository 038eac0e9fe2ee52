use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::gemm::gemm;
use super::param::{FeatureMap, Param};
use crate::error::{Error, Result};

/// Sliding-window geometry over a `[d, h, w]` volume. 2D convolutions use
/// depth 1 with a depth-1 kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_dims: [usize; 3],
    pub out_dims: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

impl ConvGeom {
    pub fn new(
        in_dims: [usize; 3],
        kernel: [usize; 3],
        stride: [usize; 3],
        pad: [usize; 3],
    ) -> Result<Self> {
        let mut out_dims = [0; 3];
        for a in 0..3 {
            if stride[a] == 0 || kernel[a] == 0 || in_dims[a] + 2 * pad[a] < kernel[a] {
                return Err(Error::Dimension(format!(
                    "kernel {kernel:?} / stride {stride:?} / pad {pad:?} do not fit input {in_dims:?}"
                )));
            }
            out_dims[a] = (in_dims[a] + 2 * pad[a] - kernel[a]) / stride[a] + 1;
        }
        Ok(ConvGeom {
            in_dims,
            out_dims,
            kernel,
            stride,
            pad,
        })
    }

    pub fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    pub fn in_volume(&self) -> usize {
        self.in_dims.iter().product()
    }

    pub fn out_volume(&self) -> usize {
        self.out_dims.iter().product()
    }

    /// Unfolds `channels × in_volume` into `(channels·kvol) × out_volume`.
    fn im2col(&self, channels: usize, input: &[f64], cols: &mut [f64]) {
        self.walk(channels, |dst, src| match src {
            Some((off, step)) => {
                let dst = &mut cols[dst.clone()];
                if step == 1 {
                    dst.copy_from_slice(&input[off..off + dst.len()]);
                } else {
                    for (i, d) in dst.iter_mut().enumerate() {
                        *d = input[off + i * step];
                    }
                }
            }
            None => cols[dst].fill(0.0),
        });
    }

    /// Adjoint of [`im2col`](Self::im2col); accumulates into `out`.
    fn col2im(&self, channels: usize, cols: &[f64], out: &mut [f64]) {
        self.walk(channels, |dst, src| {
            if let Some((off, step)) = src {
                for (i, v) in cols[dst].iter().enumerate() {
                    out[off + i * step] += v;
                }
            }
        });
    }

    /// Visits every output row segment `cols[range]` together with the
    /// strided input run it reads from, or `None` for padding.
    #[inline]
    fn walk(&self, channels: usize, mut f: impl FnMut(std::ops::Range<usize>, Option<(usize, usize)>)) {
        let [id, ih, iw] = self.in_dims;
        let [od, oh, ow] = self.out_dims;
        let [kd, kh, kw] = self.kernel;
        let [sd, sh, sw] = self.stride;
        let [pd, ph, pw] = self.pad;
        let ov = od * oh * ow;
        let mut row = 0;
        for c in 0..channels {
            let cbase = c * id * ih * iw;
            for a in 0..kd {
                for b in 0..kh {
                    for e in 0..kw {
                        let (xl, xh) = valid_range(ow, iw, e, sw, pw);
                        let mut line = row * ov;
                        for z in 0..od {
                            let iz = (z * sd + a).checked_sub(pd).filter(|&v| v < id);
                            for y in 0..oh {
                                let iy = (y * sh + b).checked_sub(ph).filter(|&v| v < ih);
                                match (iz, iy) {
                                    (Some(iz), Some(iy)) if xl < xh => {
                                        f(line..line + xl, None);
                                        let off = cbase + (iz * ih + iy) * iw + xl * sw + e - pw;
                                        f(line + xl..line + xh, Some((off, sw)));
                                        f(line + xh..line + ow, None);
                                    }
                                    _ => f(line..line + ow, None),
                                }
                                line += ow;
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }
}

/// Output positions `[lo, hi)` along one axis whose tap `k` lands inside
/// an input of length `n`.
fn valid_range(out: usize, n: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let hi = if n + pad > k { ((n + pad - k - 1) / stride + 1).min(out) } else { 0 };
    (lo.min(hi), hi)
}

fn he_normal(rng: &mut impl Rng, n: usize, fan_in: usize) -> Vec<f64> {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("finite std");
    (0..n).map(|_| dist.sample(rng)).collect()
}

/// Strided convolution. Weight layout `[out, in·kvol]`.
#[derive(Clone, Debug)]
pub struct Conv {
    pub in_channels: usize,
    pub out_channels: usize,
    pub geom: ConvGeom,
    pub weight: Param,
    pub bias: Param,
}

#[derive(Clone, Debug)]
pub struct ConvCache {
    cols: Vec<f64>,
    batch: usize,
}

impl Conv {
    pub fn new(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        geom: ConvGeom,
        rng: &mut impl Rng,
    ) -> Self {
        let rows = in_channels * geom.kernel_volume();
        Conv {
            in_channels,
            out_channels,
            geom,
            weight: Param::new(
                format!("{name}.weight"),
                vec![out_channels, rows],
                he_normal(rng, out_channels * rows, rows),
            ),
            bias: Param::zeros(format!("{name}.bias"), vec![out_channels]),
        }
    }

    pub fn forward(&self, x: &FeatureMap) -> Result<(FeatureMap, ConvCache)> {
        if x.channels != self.in_channels || x.dims != self.geom.in_dims {
            return Err(Error::Dimension(format!(
                "{}: input {}x{:?}, expected {}x{:?}",
                self.weight.name, x.channels, x.dims, self.in_channels, self.geom.in_dims
            )));
        }
        let rows = self.in_channels * self.geom.kernel_volume();
        let ov = self.geom.out_volume();
        let mut cols = vec![0.0; x.batch * rows * ov];
        let mut y = FeatureMap::zeros(x.batch, self.out_channels, self.geom.out_dims);
        for b in 0..x.batch {
            let c = &mut cols[b * rows * ov..(b + 1) * rows * ov];
            self.geom.im2col(self.in_channels, x.sample(b), c);
            let out = y.sample_mut(b);
            for (o, bias) in self.bias.value.iter().enumerate() {
                out[o * ov..(o + 1) * ov].fill(*bias);
            }
            gemm(self.out_channels, rows, ov, 1.0, &self.weight.value, false, c, false, 1.0, out);
        }
        Ok((
            y,
            ConvCache {
                cols,
                batch: x.batch,
            },
        ))
    }

    /// Returns the input gradient; parameter gradients are accumulated
    /// only when `weight_grads` is set.
    pub fn backward(
        &mut self,
        cache: &ConvCache,
        dy: &FeatureMap,
        weight_grads: bool,
    ) -> Result<FeatureMap> {
        let rows = self.in_channels * self.geom.kernel_volume();
        let ov = self.geom.out_volume();
        if dy.batch != cache.batch || dy.sample_len() != self.out_channels * ov {
            return Err(Error::Dimension(format!("{}: gradient shape", self.weight.name)));
        }
        let mut dx = FeatureMap::zeros(cache.batch, self.in_channels, self.geom.in_dims);
        let mut dcols = vec![0.0; rows * ov];
        for b in 0..cache.batch {
            let g = dy.sample(b);
            let c = &cache.cols[b * rows * ov..(b + 1) * rows * ov];
            if weight_grads {
                gemm(self.out_channels, ov, rows, 1.0, g, false, c, true, 1.0, &mut self.weight.grad);
                for o in 0..self.out_channels {
                    self.bias.grad[o] += g[o * ov..(o + 1) * ov].iter().sum::<f64>();
                }
            }
            gemm(rows, self.out_channels, ov, 1.0, &self.weight.value, true, g, false, 0.0, &mut dcols);
            self.geom.col2im(self.in_channels, &dcols, dx.sample_mut(b));
        }
        Ok(dx)
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> [&Param; 2] {
        [&self.weight, &self.bias]
    }
}

/// Transposed convolution, the adjoint of [`Conv`] with the same geometry
/// read in reverse. Weight layout `[in, out·kvol]`.
#[derive(Clone, Debug)]
pub struct ConvTranspose {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Geometry of the equivalent forward convolution from this layer's
    /// output volume back to its input volume.
    pub geom: ConvGeom,
    pub weight: Param,
    pub bias: Param,
}

#[derive(Clone, Debug)]
pub struct ConvTransposeCache {
    input: FeatureMap,
}

impl ConvTranspose {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        in_dims: [usize; 3],
        kernel: [usize; 3],
        stride: [usize; 3],
        pad: [usize; 3],
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut out_dims = [0; 3];
        for a in 0..3 {
            let span = (in_dims[a].max(1) - 1) * stride[a] + kernel[a];
            if span < 2 * pad[a] + 1 {
                return Err(Error::Dimension(format!(
                    "transposed conv with kernel {kernel:?} pad {pad:?} collapses {in_dims:?}"
                )));
            }
            out_dims[a] = span - 2 * pad[a];
        }
        let geom = ConvGeom::new(out_dims, kernel, stride, pad)?;
        if geom.out_dims != in_dims {
            return Err(Error::Dimension(format!(
                "transposed conv geometry does not invert: {in_dims:?} -> {out_dims:?}"
            )));
        }
        let cols = out_channels * geom.kernel_volume();
        let taps: usize = (0..3).map(|a| kernel[a].div_ceil(stride[a])).product();
        Ok(ConvTranspose {
            in_channels,
            out_channels,
            geom,
            weight: Param::new(
                format!("{name}.weight"),
                vec![in_channels, cols],
                he_normal(rng, in_channels * cols, in_channels * taps),
            ),
            bias: Param::zeros(format!("{name}.bias"), vec![out_channels]),
        })
    }

    /// Output size is the input size of the mirrored forward convolution.
    #[allow(clippy::misnamed_getters)]
    pub fn out_dims(&self) -> [usize; 3] {
        self.geom.in_dims
    }

    pub fn forward(&self, x: &FeatureMap) -> Result<(FeatureMap, ConvTransposeCache)> {
        if x.channels != self.in_channels || x.dims != self.geom.out_dims {
            return Err(Error::Dimension(format!(
                "{}: input {}x{:?}, expected {}x{:?}",
                self.weight.name, x.channels, x.dims, self.in_channels, self.geom.out_dims
            )));
        }
        let rows = self.out_channels * self.geom.kernel_volume();
        let iv = self.geom.out_volume();
        let ov = self.geom.in_volume();
        let mut cols = vec![0.0; rows * iv];
        let mut y = FeatureMap::zeros(x.batch, self.out_channels, self.out_dims());
        for b in 0..x.batch {
            gemm(rows, self.in_channels, iv, 1.0, &self.weight.value, true, x.sample(b), false, 0.0, &mut cols);
            let out = y.sample_mut(b);
            for (o, bias) in self.bias.value.iter().enumerate() {
                out[o * ov..(o + 1) * ov].fill(*bias);
            }
            self.geom.col2im(self.out_channels, &cols, out);
        }
        Ok((y, ConvTransposeCache { input: x.clone() }))
    }

    pub fn backward(
        &mut self,
        cache: &ConvTransposeCache,
        dy: &FeatureMap,
        weight_grads: bool,
    ) -> Result<FeatureMap> {
        let x = &cache.input;
        let rows = self.out_channels * self.geom.kernel_volume();
        let iv = self.geom.out_volume();
        let ov = self.geom.in_volume();
        if dy.batch != x.batch || dy.sample_len() != self.out_channels * ov {
            return Err(Error::Dimension(format!("{}: gradient shape", self.weight.name)));
        }
        let mut dx = FeatureMap::zeros(x.batch, self.in_channels, x.dims);
        let mut dcols = vec![0.0; rows * iv];
        for b in 0..x.batch {
            let g = dy.sample(b);
            self.geom.im2col(self.out_channels, g, &mut dcols);
            gemm(self.in_channels, rows, iv, 1.0, &self.weight.value, false, &dcols, false, 0.0, dx.sample_mut(b));
            if weight_grads {
                gemm(self.in_channels, iv, rows, 1.0, x.sample(b), false, &dcols, true, 1.0, &mut self.weight.grad);
                for o in 0..self.out_channels {
                    self.bias.grad[o] += g[o * ov..(o + 1) * ov].iter().sum::<f64>();
                }
            }
        }
        Ok(dx)
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> [&Param; 2] {
        [&self.weight, &self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_map(rng: &mut ChaCha8Rng, b: usize, c: usize, dims: [usize; 3]) -> FeatureMap {
        let n = b * c * dims.iter().product::<usize>();
        FeatureMap::new(b, c, dims, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Direct-loop convolution, independent of im2col.
    fn naive_conv(conv: &Conv, x: &FeatureMap) -> FeatureMap {
        let g = conv.geom;
        let mut y = FeatureMap::zeros(x.batch, conv.out_channels, g.out_dims);
        let kv = g.kernel_volume();
        for b in 0..x.batch {
            for o in 0..conv.out_channels {
                for z in 0..g.out_dims[0] {
                    for yy in 0..g.out_dims[1] {
                        for xx in 0..g.out_dims[2] {
                            let mut acc = conv.bias.value[o];
                            for c in 0..conv.in_channels {
                                for a in 0..g.kernel[0] {
                                    for bb in 0..g.kernel[1] {
                                        for e in 0..g.kernel[2] {
                                            let iz = (z * g.stride[0] + a) as isize - g.pad[0] as isize;
                                            let iy = (yy * g.stride[1] + bb) as isize - g.pad[1] as isize;
                                            let ix = (xx * g.stride[2] + e) as isize - g.pad[2] as isize;
                                            if iz < 0 || iy < 0 || ix < 0 {
                                                continue;
                                            }
                                            let (iz, iy, ix) = (iz as usize, iy as usize, ix as usize);
                                            if iz >= g.in_dims[0] || iy >= g.in_dims[1] || ix >= g.in_dims[2] {
                                                continue;
                                            }
                                            let w = conv.weight.value[o * conv.in_channels * kv
                                                + c * kv
                                                + (a * g.kernel[1] + bb) * g.kernel[2]
                                                + e];
                                            let xi = ((b * conv.in_channels + c) * g.in_dims[0] + iz)
                                                * g.in_dims[1]
                                                * g.in_dims[2]
                                                + iy * g.in_dims[2]
                                                + ix;
                                            acc += w * x.data[xi];
                                        }
                                    }
                                }
                            }
                            let yi = ((b * conv.out_channels + o) * g.out_dims[0] + z) * g.out_dims[1] * g.out_dims[2]
                                + yy * g.out_dims[2]
                                + xx;
                            y.data[yi] = acc;
                        }
                    }
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let geom = ConvGeom::new([1, 7, 6], [1, 3, 3], [1, 2, 2], [0, 1, 1]).unwrap();
        assert_eq!(geom.out_dims, [1, 4, 3]);
        let mut conv = Conv::new("c", 2, 3, geom, &mut rng);
        conv.bias.value = vec![0.1, -0.2, 0.3];
        let x = random_map(&mut rng, 2, 2, [1, 7, 6]);
        let (y, _) = conv.forward(&x).unwrap();
        let r = naive_conv(&conv, &x);
        for (a, b) in y.data.iter().zip(&r.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn transposed_doubles_resolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = ConvTranspose::new("t", 2, 3, [2, 2, 2], [4; 3], [2; 3], [1; 3], &mut rng).unwrap();
        assert_eq!(t.out_dims(), [4, 4, 4]);
        let t = ConvTranspose::new("t", 2, 1, [4, 4, 4], [3; 3], [1; 3], [1; 3], &mut rng).unwrap();
        assert_eq!(t.out_dims(), [4, 4, 4]);
    }

    /// <T x, y> == <x, C y> where C is the conv sharing T's weights.
    #[test]
    fn transposed_is_adjoint_of_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut t = ConvTranspose::new("t", 2, 3, [2, 3, 2], [4, 4, 4], [2; 3], [1; 3], &mut rng).unwrap();
        t.bias.value = vec![0.0; 3];
        let conv = Conv {
            in_channels: 3,
            out_channels: 2,
            geom: t.geom,
            weight: t.weight.clone(),
            bias: Param::zeros("b", vec![2]),
        };
        let x = random_map(&mut rng, 1, 2, [2, 3, 2]);
        let y = random_map(&mut rng, 1, 3, t.out_dims());
        let (tx, _) = t.forward(&x).unwrap();
        let (cy, _) = conv.forward(&y).unwrap();
        let lhs: f64 = tx.data.iter().zip(&y.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&cy.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }

    fn dot(a: &FeatureMap, w: &[f64]) -> f64 {
        a.data.iter().zip(w).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn conv_backward_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let geom = ConvGeom::new([3, 4, 4], [3; 3], [2, 1, 2], [1; 3]).unwrap();
        let mut conv = Conv::new("c", 2, 2, geom, &mut rng);
        let x = random_map(&mut rng, 2, 2, [3, 4, 4]);
        let (y, cache) = conv.forward(&x).unwrap();
        let w: Vec<f64> = (0..y.data.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dy = FeatureMap::new(y.batch, y.channels, y.dims, w.clone()).unwrap();
        let dx = conv.backward(&cache, &dy, true).unwrap();
        let h = 1e-6;
        for i in (0..x.data.len()).step_by(7) {
            let (mut a, mut b) = (x.clone(), x.clone());
            a.data[i] += h;
            b.data[i] -= h;
            let fd = (dot(&conv.forward(&a).unwrap().0, &w) - dot(&conv.forward(&b).unwrap().0, &w)) / (2.0 * h);
            assert!((fd - dx.data[i]).abs() < 1e-7);
        }
        for i in (0..conv.weight.len()).step_by(5) {
            let (mut a, mut b) = (conv.clone(), conv.clone());
            a.weight.value[i] += h;
            b.weight.value[i] -= h;
            let fd = (dot(&a.forward(&x).unwrap().0, &w) - dot(&b.forward(&x).unwrap().0, &w)) / (2.0 * h);
            assert!((fd - conv.weight.grad[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn transposed_backward_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut t = ConvTranspose::new("t", 2, 2, [2, 2, 2], [4; 3], [2; 3], [1; 3], &mut rng).unwrap();
        let x = random_map(&mut rng, 2, 2, [2, 2, 2]);
        let (y, cache) = t.forward(&x).unwrap();
        let w: Vec<f64> = (0..y.data.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dy = FeatureMap::new(y.batch, y.channels, y.dims, w.clone()).unwrap();
        let dx = t.backward(&cache, &dy, true).unwrap();
        let h = 1e-6;
        for i in 0..x.data.len() {
            let (mut a, mut b) = (x.clone(), x.clone());
            a.data[i] += h;
            b.data[i] -= h;
            let fd = (dot(&t.forward(&a).unwrap().0, &w) - dot(&t.forward(&b).unwrap().0, &w)) / (2.0 * h);
            assert!((fd - dx.data[i]).abs() < 1e-7);
        }
        for i in (0..t.weight.len()).step_by(3) {
            let (mut a, mut b) = (t.clone(), t.clone());
            a.weight.value[i] += h;
            b.weight.value[i] -= h;
            let fd = (dot(&a.forward(&x).unwrap().0, &w) - dot(&b.forward(&x).unwrap().0, &w)) / (2.0 * h);
            assert!((fd - t.weight.grad[i]).abs() < 1e-7);
        }
        for i in 0..2 {
            let (mut a, mut b) = (t.clone(), t.clone());
            a.bias.value[i] += h;
            b.bias.value[i] -= h;
            let fd = (dot(&a.forward(&x).unwrap().0, &w) - dot(&b.forward(&x).unwrap().0, &w)) / (2.0 * h);
            assert!((fd - t.bias.grad[i]).abs() < 1e-7);
        }
    }
}

use super::param::{FeatureMap, Param};
use crate::error::{Error, Result};

/// Variance guard inside the normalization.
pub const BN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    /// Normalize with batch statistics.
    Train,
    /// Normalize with running statistics.
    Eval,
}

/// Batch normalization whose affine parameters are looked up per sample
/// from a `rows × channels` table. A plain batch-norm layer is the
/// one-row case. Running statistics are shared by all rows.
#[derive(Clone, Debug)]
pub struct CondBatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Clone, Debug)]
pub struct NormCache {
    mode: NormMode,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    rows: Vec<usize>,
    batch_mean: Vec<f64>,
    batch_var: Vec<f64>,
    count: usize,
    batch: usize,
    channels: usize,
    dims: [usize; 3],
}

impl CondBatchNorm {
    /// Identity affine (`γ = 1`, `β = 0`) for every row.
    pub fn new(name: &str, rows: usize, channels: usize) -> Self {
        CondBatchNorm {
            gamma: Param::filled(format!("{name}.gamma"), vec![rows, channels], 1.0),
            beta: Param::zeros(format!("{name}.beta"), vec![rows, channels]),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.1,
            eps: BN_EPS,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.shape[1]
    }

    pub fn rows(&self) -> usize {
        self.gamma.shape[0]
    }

    pub fn forward(
        &self,
        x: &FeatureMap,
        rows: &[usize],
        mode: NormMode,
    ) -> Result<(FeatureMap, NormCache)> {
        let c = self.channels();
        if x.channels != c {
            return Err(Error::Dimension(format!(
                "{}: {} input channels, expected {c}",
                self.gamma.name, x.channels
            )));
        }
        if rows.len() != x.batch {
            return Err(Error::Dimension(format!(
                "{} class ids for a batch of {}",
                rows.len(),
                x.batch
            )));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.rows()) {
            return Err(Error::Index(format!(
                "class row {bad} outside affine table of {} rows",
                self.rows()
            )));
        }
        let s = x.volume();
        let count = x.batch * s;
        let (mean, var) = match mode {
            NormMode::Train => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for b in 0..x.batch {
                    let sample = x.sample(b);
                    for ch in 0..c {
                        mean[ch] += sample[ch * s..(ch + 1) * s].iter().sum::<f64>();
                    }
                }
                mean.iter_mut().for_each(|m| *m /= count as f64);
                for b in 0..x.batch {
                    let sample = x.sample(b);
                    for ch in 0..c {
                        var[ch] += sample[ch * s..(ch + 1) * s]
                            .iter()
                            .map(|v| (v - mean[ch]).powi(2))
                            .sum::<f64>();
                    }
                }
                var.iter_mut().for_each(|v| *v /= count as f64);
                (mean, var)
            }
            NormMode::Eval => (self.running_mean.clone(), self.running_var.clone()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();

        let mut xhat = vec![0.0; x.data.len()];
        let mut out = FeatureMap::zeros(x.batch, c, x.dims);
        for b in 0..x.batch {
            let row = rows[b];
            let gamma = self.gamma.row(row);
            let beta = self.beta.row(row);
            let base = b * c * s;
            for ch in 0..c {
                for i in base + ch * s..base + (ch + 1) * s {
                    let h = (x.data[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = h;
                    out.data[i] = gamma[ch] * h + beta[ch];
                }
            }
        }
        Ok((
            out,
            NormCache {
                mode,
                xhat,
                inv_std,
                rows: rows.to_vec(),
                batch_mean: mean,
                batch_var: var,
                count,
                batch: x.batch,
                channels: c,
                dims: x.dims,
            },
        ))
    }

    /// Folds a training-mode batch into the running statistics.
    pub fn update_running(&mut self, cache: &NormCache) {
        if cache.mode != NormMode::Train {
            return;
        }
        let n = cache.count as f64;
        let unbias = if cache.count > 1 { n / (n - 1.0) } else { 1.0 };
        let m = self.momentum;
        for ch in 0..self.channels() {
            self.running_mean[ch] = (1.0 - m) * self.running_mean[ch] + m * cache.batch_mean[ch];
            self.running_var[ch] =
                (1.0 - m) * self.running_var[ch] + m * cache.batch_var[ch] * unbias;
        }
    }

    /// Accumulates affine gradients and returns the input gradient.
    pub fn backward(&mut self, cache: &NormCache, dy: &FeatureMap) -> Result<FeatureMap> {
        if dy.data.len() != cache.xhat.len() {
            return Err(Error::Dimension("norm backward: gradient shape".into()));
        }
        let c = cache.channels;
        let s: usize = cache.dims.iter().product();
        let mut dxhat = vec![0.0; dy.data.len()];
        for b in 0..cache.batch {
            let row = cache.rows[b];
            let w = self.gamma.row_width();
            let base = b * c * s;
            for ch in 0..c {
                let g = self.gamma.value[row * w + ch];
                let (mut dg, mut db) = (0.0, 0.0);
                for i in base + ch * s..base + (ch + 1) * s {
                    dg += dy.data[i] * cache.xhat[i];
                    db += dy.data[i];
                    dxhat[i] = dy.data[i] * g;
                }
                self.gamma.grad[row * w + ch] += dg;
                self.beta.grad[row * w + ch] += db;
            }
        }

        let mut dx = FeatureMap::zeros(cache.batch, c, cache.dims);
        match cache.mode {
            NormMode::Eval => {
                for b in 0..cache.batch {
                    let base = b * c * s;
                    for ch in 0..c {
                        for i in base + ch * s..base + (ch + 1) * s {
                            dx.data[i] = dxhat[i] * cache.inv_std[ch];
                        }
                    }
                }
            }
            NormMode::Train => {
                let n = cache.count as f64;
                let mut sum1 = vec![0.0; c];
                let mut sum2 = vec![0.0; c];
                for b in 0..cache.batch {
                    let base = b * c * s;
                    for ch in 0..c {
                        for i in base + ch * s..base + (ch + 1) * s {
                            sum1[ch] += dxhat[i];
                            sum2[ch] += dxhat[i] * cache.xhat[i];
                        }
                    }
                }
                for b in 0..cache.batch {
                    let base = b * c * s;
                    for ch in 0..c {
                        let k = cache.inv_std[ch] / n;
                        for i in base + ch * s..base + (ch + 1) * s {
                            dx.data[i] = k * (n * dxhat[i] - sum1[ch] - cache.xhat[i] * sum2[ch]);
                        }
                    }
                }
            }
        }
        Ok(dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(rng: &mut ChaCha8Rng, b: usize, c: usize, dims: [usize; 3]) -> FeatureMap {
        let n = b * c * dims.iter().product::<usize>();
        FeatureMap::new(b, c, dims, (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn identity_affine_equals_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_map(&mut rng, 4, 3, [2, 2, 1]);
        let plain = CondBatchNorm::new("p", 1, 3);
        let cond = CondBatchNorm::new("c", 5, 3);
        for mode in [NormMode::Train, NormMode::Eval] {
            let (a, _) = plain.forward(&x, &[0; 4], mode).unwrap();
            let (b, _) = cond.forward(&x, &[0, 3, 1, 4], mode).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn per_class_gamma_scales() {
        let mut bn = CondBatchNorm::new("c", 2, 1);
        bn.gamma.value = vec![1.0, 2.0];
        // batch of two identical samples with a non-constant channel
        let x = FeatureMap::new(2, 1, [3, 1, 1], vec![0.0, 1.0, 5.0, 0.0, 1.0, 5.0]).unwrap();
        let (y, _) = bn.forward(&x, &[0, 1], NormMode::Train).unwrap();
        for i in 0..3 {
            assert_eq!(y.data[3 + i], 2.0 * y.data[i]);
        }
    }

    #[test]
    fn constant_channel_maps_to_beta() {
        let mut bn = CondBatchNorm::new("c", 2, 1);
        bn.beta.value = vec![0.25, -0.75];
        let x = FeatureMap::new(2, 1, [2, 1, 1], vec![3.0; 4]).unwrap();
        let (y, _) = bn.forward(&x, &[1, 0], NormMode::Train).unwrap();
        assert_eq!(y.data, vec![-0.75, -0.75, 0.25, 0.25]);
    }

    #[test]
    fn bad_class_row() {
        let bn = CondBatchNorm::new("c", 2, 1);
        let x = FeatureMap::zeros(1, 1, [1, 1, 1]);
        assert!(matches!(
            bn.forward(&x, &[2], NormMode::Eval),
            Err(Error::Index(_))
        ));
    }

    fn objective(bn: &CondBatchNorm, x: &FeatureMap, rows: &[usize], w: &[f64], mode: NormMode) -> f64 {
        let (y, _) = bn.forward(x, rows, mode).unwrap();
        y.data.iter().zip(w).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_map(&mut rng, 3, 2, [2, 1, 1]);
        let rows = [0, 1, 0];
        let mut bn = CondBatchNorm::new("c", 2, 2);
        bn.gamma.value = (0..4).map(|_| rng.random_range(0.5..1.5)).collect();
        bn.beta.value = (0..4).map(|_| rng.random_range(-0.5..0.5)).collect();
        bn.running_mean = vec![0.3, -0.2];
        bn.running_var = vec![1.7, 0.4];
        let w: Vec<f64> = (0..x.data.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h = 1e-6;
        for mode in [NormMode::Train, NormMode::Eval] {
            let mut layer = bn.clone();
            let (_, cache) = layer.forward(&x, &rows, mode).unwrap();
            let dy = FeatureMap::new(x.batch, x.channels, x.dims, w.clone()).unwrap();
            let dx = layer.backward(&cache, &dy).unwrap();
            for i in 0..x.data.len() {
                let (mut a, mut b) = (x.clone(), x.clone());
                a.data[i] += h;
                b.data[i] -= h;
                let fd = (objective(&bn, &a, &rows, &w, mode) - objective(&bn, &b, &rows, &w, mode))
                    / (2.0 * h);
                assert!((fd - dx.data[i]).abs() < 1e-7, "{mode:?} x[{i}]: {fd} vs {}", dx.data[i]);
            }
            for i in 0..4 {
                let (mut a, mut b) = (bn.clone(), bn.clone());
                a.gamma.value[i] += h;
                b.gamma.value[i] -= h;
                let fd = (objective(&a, &x, &rows, &w, mode) - objective(&b, &x, &rows, &w, mode))
                    / (2.0 * h);
                assert!((fd - layer.gamma.grad[i]).abs() < 1e-7);
            }
        }
    }
}

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::gemm::gemm;
use super::param::{FeatureMap, Param};
use crate::error::{Error, Result};

/// Dense layer `y = x Wᵀ + b`, weight layout `[out, in]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Param,
    pub bias: Param,
}

#[derive(Clone, Debug)]
pub struct LinearCache {
    input: Vec<f64>,
    batch: usize,
}

impl Linear {
    pub fn new(name: &str, in_features: usize, out_features: usize, rng: &mut impl Rng) -> Self {
        let dist = Normal::new(0.0, (2.0 / in_features as f64).sqrt()).expect("finite std");
        let w = (0..in_features * out_features).map(|_| dist.sample(rng)).collect();
        Linear {
            in_features,
            out_features,
            weight: Param::new(format!("{name}.weight"), vec![out_features, in_features], w),
            bias: Param::zeros(format!("{name}.bias"), vec![out_features]),
        }
    }

    /// Flattens each sample of `x` and maps it to `out_features`.
    pub fn forward(&self, x: &FeatureMap) -> Result<(FeatureMap, LinearCache)> {
        if x.sample_len() != self.in_features {
            return Err(Error::Dimension(format!(
                "{}: {} input features, expected {}",
                self.weight.name,
                x.sample_len(),
                self.in_features
            )));
        }
        let mut y = vec![0.0; x.batch * self.out_features];
        for row in y.chunks_mut(self.out_features) {
            row.copy_from_slice(&self.bias.value);
        }
        gemm(x.batch, self.in_features, self.out_features, 1.0, &x.data, false, &self.weight.value, true, 1.0, &mut y);
        Ok((
            FeatureMap::vectors(x.batch, self.out_features, y)?,
            LinearCache {
                input: x.data.clone(),
                batch: x.batch,
            },
        ))
    }

    /// Returns the input gradient as a `[batch, in_features]` map.
    pub fn backward(&mut self, cache: &LinearCache, dy: &FeatureMap, weight_grads: bool) -> Result<FeatureMap> {
        if dy.batch != cache.batch || dy.sample_len() != self.out_features {
            return Err(Error::Dimension(format!("{}: gradient shape", self.weight.name)));
        }
        let b = cache.batch;
        if weight_grads {
            gemm(self.out_features, b, self.in_features, 1.0, &dy.data, true, &cache.input, false, 1.0, &mut self.weight.grad);
            for row in dy.data.chunks(self.out_features) {
                for (g, d) in self.bias.grad.iter_mut().zip(row) {
                    *g += d;
                }
            }
        }
        let mut dx = vec![0.0; b * self.in_features];
        gemm(b, self.out_features, self.in_features, 1.0, &dy.data, false, &self.weight.value, false, 0.0, &mut dx);
        FeatureMap::vectors(b, self.in_features, dx)
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> [&Param; 2] {
        [&self.weight, &self.bias]
    }
}

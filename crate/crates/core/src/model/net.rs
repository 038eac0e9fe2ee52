//! Encoder and decoder networks with hand-written backward passes.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::config::{DecoderConfig, EncoderConfig};
use crate::error::{Error, Result};
use crate::nn::{
    relu_backward, relu_forward, CondBatchNorm, Conv, ConvCache, ConvGeom, ConvTranspose,
    ConvTransposeCache, FeatureMap, Linear, LinearCache, NormCache, NormMode, Param,
};

#[derive(Clone, Debug)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub convs: Vec<Conv>,
    pub norms: Vec<CondBatchNorm>,
    pub fc: Linear,
}

#[derive(Clone, Debug)]
pub struct EncoderCache {
    layers: Vec<(ConvCache, NormCache, Vec<bool>)>,
    fc: LinearCache,
}

impl Encoder {
    pub fn new(config: &EncoderConfig, rng: &mut impl Rng) -> Result<Self> {
        let mut convs = Vec::new();
        let mut norms = Vec::new();
        let mut size = config.image_size;
        let mut in_ch = 1;
        for (i, &ch) in config.channels.iter().enumerate() {
            let geom = ConvGeom::new([1, size, size], [1, 3, 3], [1, 2, 2], [0, 1, 1])?;
            convs.push(Conv::new(&format!("enc.conv{i}"), in_ch, ch, geom, rng));
            norms.push(CondBatchNorm::new(&format!("enc.bn{i}"), 1, ch));
            size = geom.out_dims[1];
            in_ch = ch;
        }
        let fc = Linear::new("enc.fc", in_ch * size * size, config.embed_dim, rng);
        Ok(Encoder {
            config: config.clone(),
            convs,
            norms,
            fc,
        })
    }

    /// Maps `[B, 1, 1, S, S]` images to `[B, D]` embeddings.
    pub fn forward(&self, x: &FeatureMap, mode: NormMode) -> Result<(FeatureMap, EncoderCache)> {
        let s = self.config.image_size;
        if x.channels != 1 || x.dims != [1, s, s] {
            return Err(Error::Dimension(format!(
                "encoder expects {s}×{s} single-channel images, got {}×{:?}",
                x.channels, x.dims
            )));
        }
        let rows = vec![0; x.batch];
        let mut h = x.clone();
        let mut layers = Vec::with_capacity(self.convs.len());
        for (conv, norm) in self.convs.iter().zip(&self.norms) {
            let (y, cc) = conv.forward(&h)?;
            let (mut y, nc) = norm.forward(&y, &rows, mode)?;
            let mask = relu_forward(&mut y);
            layers.push((cc, nc, mask));
            h = y;
        }
        let (e, fc) = self.fc.forward(&h)?;
        Ok((e, EncoderCache { layers, fc }))
    }

    pub fn update_running(&mut self, cache: &EncoderCache) {
        for (norm, (_, nc, _)) in self.norms.iter_mut().zip(&cache.layers) {
            norm.update_running(nc);
        }
    }

    pub fn backward(&mut self, cache: &EncoderCache, de: &FeatureMap) -> Result<()> {
        let mut g = self.fc.backward(&cache.fc, de, true)?;
        for i in (0..self.convs.len()).rev() {
            let (cc, nc, mask) = &cache.layers[i];
            let last = self.convs[i].geom.out_dims;
            g = g.reshaped(self.convs[i].out_channels, last)?;
            relu_backward(mask, &mut g);
            g = self.norms[i].backward(nc, &g)?;
            g = self.convs[i].backward(cc, &g, true)?;
        }
        Ok(())
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v = Vec::new();
        for (c, n) in self.convs.iter().zip(&self.norms) {
            v.extend(c.params());
            v.extend([&n.gamma, &n.beta]);
        }
        v.extend(self.fc.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = Vec::new();
        for (c, n) in self.convs.iter_mut().zip(self.norms.iter_mut()) {
            v.extend(c.params_mut());
            v.extend([&mut n.gamma, &mut n.beta]);
        }
        v.extend(self.fc.params_mut());
        v
    }
}

#[derive(Clone, Debug)]
pub struct Decoder {
    pub config: DecoderConfig,
    pub fc: Linear,
    pub fc_norm: CondBatchNorm,
    /// Upsampling layers followed by refinement layers.
    pub stages: Vec<ConvTranspose>,
    pub norms: Vec<CondBatchNorm>,
    pub head: ConvTranspose,
}

#[derive(Clone, Debug)]
pub struct DecoderCache {
    fc: LinearCache,
    fc_norm: NormCache,
    fc_mask: Vec<bool>,
    stages: Vec<(ConvTransposeCache, NormCache, Vec<bool>)>,
    head: ConvTransposeCache,
}

impl Decoder {
    /// `rows` is the number of conditional affine rows per normalization
    /// layer: one for plain batch norm, the class count for MCCE.
    pub fn new(config: &DecoderConfig, input_dim: usize, rows: usize, rng: &mut impl Rng) -> Result<Self> {
        let s0 = config.start_size()?;
        let c0 = config.fc_channels;
        let fc = Linear::new("dec.fc", input_dim, c0 * s0.pow(3), rng);
        let fc_norm = CondBatchNorm::new("dec.bn_fc", rows, c0);
        let mut stages = Vec::new();
        let mut norms = Vec::new();
        let (mut size, mut in_ch) = (s0, c0);
        for (i, &ch) in config.up_channels.iter().enumerate() {
            let t = ConvTranspose::new(&format!("dec.up{i}"), in_ch, ch, [size; 3], [4; 3], [2; 3], [1; 3], rng)?;
            size = t.out_dims()[0];
            stages.push(t);
            norms.push(CondBatchNorm::new(&format!("dec.bn_up{i}"), rows, ch));
            in_ch = ch;
        }
        for (i, &ch) in config.refine_channels.iter().enumerate() {
            stages.push(ConvTranspose::new(&format!("dec.refine{i}"), in_ch, ch, [size; 3], [3; 3], [1; 3], [1; 3], rng)?);
            norms.push(CondBatchNorm::new(&format!("dec.bn_refine{i}"), rows, ch));
            in_ch = ch;
        }
        let head = ConvTranspose::new("dec.head", in_ch, 1, [size; 3], [3; 3], [1; 3], [1; 3], rng)?;
        Ok(Decoder {
            config: config.clone(),
            fc,
            fc_norm,
            stages,
            norms,
            head,
        })
    }

    pub fn all_norms(&self) -> impl Iterator<Item = &CondBatchNorm> {
        std::iter::once(&self.fc_norm).chain(&self.norms)
    }

    pub fn all_norms_mut(&mut self) -> impl Iterator<Item = &mut CondBatchNorm> {
        std::iter::once(&mut self.fc_norm).chain(self.norms.iter_mut())
    }

    /// Fills every conditional affine row from `N(1, std)`.
    pub fn randomize_affine(&mut self, std: f64, rng: &mut impl Rng) {
        let dist = Normal::new(1.0, std).expect("finite std");
        for n in self.all_norms_mut() {
            for v in n.gamma.value.iter_mut().chain(n.beta.value.iter_mut()) {
                *v = dist.sample(rng);
            }
        }
    }

    /// Maps `[B, input_dim]` codes to `[B, 1, R, R, R]` occupancy logits.
    /// `rows` selects the affine row of every normalization layer per sample.
    pub fn forward(&self, z: &FeatureMap, rows: &[usize], mode: NormMode) -> Result<(FeatureMap, DecoderCache)> {
        let s0 = self.config.start_size()?;
        let (h, fc) = self.fc.forward(z)?;
        let h = h.reshaped(self.config.fc_channels, [s0; 3])?;
        let (mut h, fc_norm) = self.fc_norm.forward(&h, rows, mode)?;
        let fc_mask = relu_forward(&mut h);
        let mut stages = Vec::with_capacity(self.stages.len());
        for (t, n) in self.stages.iter().zip(&self.norms) {
            let (y, tc) = t.forward(&h)?;
            let (mut y, nc) = n.forward(&y, rows, mode)?;
            let mask = relu_forward(&mut y);
            stages.push((tc, nc, mask));
            h = y;
        }
        let (logits, head) = self.head.forward(&h)?;
        Ok((
            logits,
            DecoderCache {
                fc,
                fc_norm,
                fc_mask,
                stages,
                head,
            },
        ))
    }

    pub fn update_running(&mut self, cache: &DecoderCache) {
        self.fc_norm.update_running(&cache.fc_norm);
        for (n, (_, nc, _)) in self.norms.iter_mut().zip(&cache.stages) {
            n.update_running(nc);
        }
    }

    /// Returns the gradient with respect to the decoder input. Affine
    /// gradients of the normalization layers are always accumulated;
    /// convolution and dense weights only when `weight_grads` is set.
    pub fn backward(&mut self, cache: &DecoderCache, dlogits: &FeatureMap, weight_grads: bool) -> Result<FeatureMap> {
        let mut g = self.head.backward(&cache.head, dlogits, weight_grads)?;
        for i in (0..self.stages.len()).rev() {
            let (tc, nc, mask) = &cache.stages[i];
            relu_backward(mask, &mut g);
            g = self.norms[i].backward(nc, &g)?;
            g = self.stages[i].backward(tc, &g, weight_grads)?;
        }
        relu_backward(&cache.fc_mask, &mut g);
        let g = self.fc_norm.backward(&cache.fc_norm, &g)?;
        self.fc.backward(&cache.fc, &g, weight_grads)
    }

    /// Dense and convolution weights, excluding normalization affines.
    pub fn weight_params(&self) -> Vec<&Param> {
        let mut v: Vec<&Param> = self.fc.params().to_vec();
        for t in &self.stages {
            v.extend(t.params());
        }
        v.extend(self.head.params());
        v
    }

    pub fn weight_params_mut(&mut self) -> Vec<&mut Param> {
        let mut v: Vec<&mut Param> = self.fc.params_mut().into_iter().collect();
        for t in self.stages.iter_mut() {
            v.extend(t.params_mut());
        }
        v.extend(self.head.params_mut());
        v
    }

    /// Weights followed by normalization affines.
    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v: Vec<&mut Param> = self.fc.params_mut().into_iter().collect();
        for t in self.stages.iter_mut() {
            v.extend(t.params_mut());
        }
        v.extend(self.head.params_mut());
        v.extend([&mut self.fc_norm.gamma, &mut self.fc_norm.beta]);
        for n in self.norms.iter_mut() {
            v.extend([&mut n.gamma, &mut n.beta]);
        }
        v
    }

    pub fn affine_params(&self) -> Vec<&Param> {
        self.all_norms().flat_map(|n| [&n.gamma, &n.beta]).collect()
    }

    pub fn affine_params_mut(&mut self) -> Vec<&mut Param> {
        self.all_norms_mut().flat_map(|n| [&mut n.gamma, &mut n.beta]).collect()
    }
}

/// Small 3D encoder `E_S` for voxel-space shape priors: stride-2 3³
/// convolutions with ReLU, then a dense layer.
#[derive(Clone, Debug)]
pub struct PriorEncoder {
    pub resolution: usize,
    pub convs: Vec<Conv>,
    pub fc: Linear,
}

#[derive(Clone, Debug)]
pub struct PriorEncoderCache {
    layers: Vec<(ConvCache, Vec<bool>)>,
    fc: LinearCache,
}

impl PriorEncoder {
    pub fn new(resolution: usize, channels: &[usize], embed_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        let mut convs = Vec::new();
        let (mut size, mut in_ch) = (resolution, 1);
        for (i, &ch) in channels.iter().enumerate() {
            let geom = ConvGeom::new([size; 3], [3; 3], [2; 3], [1; 3])?;
            convs.push(Conv::new(&format!("prior.conv{i}"), in_ch, ch, geom, rng));
            size = geom.out_dims[0];
            in_ch = ch;
        }
        let fc = Linear::new("prior.fc", in_ch * size.pow(3), embed_dim, rng);
        Ok(PriorEncoder { resolution, convs, fc })
    }

    /// Maps `[B, 1, R, R, R]` occupancy grids to `[B, D]`.
    pub fn forward(&self, x: &FeatureMap) -> Result<(FeatureMap, PriorEncoderCache)> {
        if x.channels != 1 || x.dims != [self.resolution; 3] {
            return Err(Error::Dimension(format!(
                "prior encoder expects 1×{r}³ grids, got {}×{:?}",
                x.channels,
                x.dims,
                r = self.resolution
            )));
        }
        let mut h = x.clone();
        let mut layers = Vec::new();
        for conv in &self.convs {
            let (mut y, cc) = conv.forward(&h)?;
            let mask = relu_forward(&mut y);
            layers.push((cc, mask));
            h = y;
        }
        let (e, fc) = self.fc.forward(&h)?;
        Ok((e, PriorEncoderCache { layers, fc }))
    }

    pub fn backward(&mut self, cache: &PriorEncoderCache, de: &FeatureMap) -> Result<()> {
        let mut g = self.fc.backward(&cache.fc, de, true)?;
        for i in (0..self.convs.len()).rev() {
            let (cc, mask) = &cache.layers[i];
            g = g.reshaped(self.convs[i].out_channels, self.convs[i].geom.out_dims)?;
            relu_backward(mask, &mut g);
            g = self.convs[i].backward(cc, &g, true)?;
        }
        Ok(())
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v = Vec::new();
        for c in &self.convs {
            v.extend(c.params());
        }
        v.extend(self.fc.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = Vec::new();
        for c in self.convs.iter_mut() {
            v.extend(c.params_mut());
        }
        v.extend(self.fc.params_mut());
        v
    }
}

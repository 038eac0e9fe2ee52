//! The conditioned encoder–decoder `S̄ = D(E_I(I), e_S)`.
//!
//! The decoder input is the concatenation `[e_I | e_S]` of the image
//! embedding and the class embedding, both of width `D`. What `e_S` is
//! depends on the [`ConditioningMode`]; in MCCE mode it is zero and the
//! class enters through the decoder's normalization affines instead.

mod checkpoint;
mod config;
mod net;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use config::{ConditioningConfig, ConditioningMode, DecoderConfig, EncoderConfig, ModelConfig};
pub use net::{Decoder, DecoderCache, Encoder, EncoderCache, PriorEncoder, PriorEncoderCache};

use crate::error::{Error, Result};
use crate::nn::{bce_with_logits, sigmoid, sparsemax, sparsemax_vjp, FeatureMap, NormMode, Param, PROB_EPS};
use crate::voxel::ProbGrid;

/// Class-conditioning state.
#[derive(Clone, Debug)]
pub enum Conditioning {
    Zero,
    Gce {
        /// `[classes, D]`.
        table: Param,
    },
    Cgce {
        /// `[M·m, D]`; row `k·m + j` is code `j` of codebook `k`.
        codebooks: Param,
        /// `[classes, M·m]` attention logits `w_c^k`.
        logits: Param,
    },
    Mcce,
    AvgPrior {
        encoder: PriorEncoder,
        /// Voxel-mean prior grid per class, once known.
        priors: Vec<Option<Vec<f64>>>,
    },
}

/// Per-batch conditioning intermediates.
#[derive(Clone, Debug)]
pub struct CondCache {
    classes: Vec<usize>,
    /// Position of each sample's class in `classes`.
    slot: Vec<usize>,
    attention: Vec<Vec<f64>>,
    prior: Option<PriorEncoderCache>,
}

/// Intermediates of a training forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    enc: EncoderCache,
    cond: CondCache,
    dec: DecoderCache,
}

#[derive(Clone, Debug)]
pub struct ReconstructionModel {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub conditioning: Conditioning,
}

/// Weighted sum of code rows: `Σ_i a_i · codes[i]`.
pub fn compose_embedding(codes: &[f64], dim: usize, attention: &[f64]) -> Result<Vec<f64>> {
    if codes.len() != attention.len() * dim {
        return Err(Error::Dimension(format!(
            "{} attention weights for {} codes of width {dim}",
            attention.len(),
            codes.len() / dim.max(1)
        )));
    }
    let mut e = vec![0.0; dim];
    for (a, code) in attention.iter().zip(codes.chunks(dim)) {
        if *a != 0.0 {
            for (o, c) in e.iter_mut().zip(code) {
                *o += a * c;
            }
        }
    }
    Ok(e)
}

/// Stacks single-channel `size × size` images into an encoder batch.
pub fn image_batch(images: &[&[f32]], size: usize) -> Result<FeatureMap> {
    let mut data = Vec::with_capacity(images.len() * size * size);
    for img in images {
        if img.len() != size * size {
            return Err(Error::Dimension(format!(
                "image has {} pixels, expected {size}×{size}",
                img.len()
            )));
        }
        data.extend(img.iter().map(|&v| v as f64));
    }
    FeatureMap::new(images.len(), 1, [1, size, size], data)
}

impl ReconstructionModel {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.embed_dim();
        let c = config.num_classes;
        let encoder = Encoder::new(&config.encoder, &mut rng)?;
        let rows = if config.mode == ConditioningMode::Mcce { c } else { 1 };
        let mut decoder = Decoder::new(&config.decoder, 2 * d, rows, &mut rng)?;
        let cc = &config.conditioning;
        let conditioning = match config.mode {
            ConditioningMode::Zero => Conditioning::Zero,
            ConditioningMode::Gce => {
                let n = Normal::new(0.0, 1.0).expect("unit normal");
                let v = (0..c * d).map(|_| n.sample(&mut rng)).collect();
                Conditioning::Gce {
                    table: Param::new("cond.gce", vec![c, d], v),
                }
            }
            ConditioningMode::Cgce => {
                let codes = cc.codebooks * cc.codes;
                let mut u = |n: usize| -> Vec<f64> {
                    (0..n).map(|_| uniform(&mut rng, cc.uniform_init)).collect()
                };
                let book = u(codes * d);
                let logits = u(c * codes);
                Conditioning::Cgce {
                    codebooks: Param::new("cond.codebooks", vec![codes, d], book),
                    logits: Param::new("cond.logits", vec![c, codes], logits),
                }
            }
            ConditioningMode::Mcce => {
                decoder.randomize_affine(cc.affine_init_std, &mut rng);
                Conditioning::Mcce
            }
            ConditioningMode::AvgPrior => Conditioning::AvgPrior {
                encoder: PriorEncoder::new(config.decoder.resolution, &cc.prior_channels, d, &mut rng)?,
                priors: vec![None; c],
            },
        };
        Ok(ReconstructionModel {
            config: config.clone(),
            encoder,
            decoder,
            conditioning,
        })
    }

    pub fn mode(&self) -> ConditioningMode {
        self.config.mode
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim()
    }

    pub fn resolution(&self) -> usize {
        self.config.decoder.resolution
    }

    pub fn image_size(&self) -> usize {
        self.config.encoder.image_size
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    pub fn check_class(&self, class: usize) -> Result<()> {
        if class >= self.config.num_classes {
            return Err(Error::Index(format!(
                "class {class} outside {} registered classes",
                self.config.num_classes
            )));
        }
        Ok(())
    }

    fn norm_rows(&self, classes: &[usize]) -> Vec<usize> {
        if self.mode() == ConditioningMode::Mcce {
            classes.to_vec()
        } else {
            vec![0; classes.len()]
        }
    }

    /// Sparsemax attention of one class, `M·m` weights, one simplex per codebook.
    pub fn attention(&self, class: usize) -> Result<Vec<f64>> {
        self.check_class(class)?;
        match &self.conditioning {
            Conditioning::Cgce { logits, .. } => {
                let m = self.config.conditioning.codes;
                let mut a = Vec::with_capacity(logits.row_width());
                for w in logits.row(class).chunks(m) {
                    a.extend(sparsemax(w)?);
                }
                Ok(a)
            }
            _ => Err(Error::Argument(format!("attention requires cgce mode, model is {}", self.mode()))),
        }
    }

    /// Looks up a row of the global class embedding table.
    pub fn gce_embedding(&self, class: usize) -> Result<Vec<f64>> {
        self.check_class(class)?;
        match &self.conditioning {
            Conditioning::Gce { table } => Ok(table.row(class).to_vec()),
            _ => Err(Error::Argument(format!("gce lookup on a {} model", self.mode()))),
        }
    }

    /// `e_S = Σ_k Σ_j a_k,j · c_k,j` with `a_k = sparsemax(w_k)`.
    pub fn cgce_embedding(&self, class: usize) -> Result<Vec<f64>> {
        let a = self.attention(class)?;
        self.cgce_embedding_from(&a)
    }

    /// Composes an embedding from explicit attention weights.
    pub fn cgce_embedding_from(&self, attention: &[f64]) -> Result<Vec<f64>> {
        match &self.conditioning {
            Conditioning::Cgce { codebooks, .. } => compose_embedding(&codebooks.value, self.embed_dim(), attention),
            _ => Err(Error::Argument(format!("cgce embedding on a {} model", self.mode()))),
        }
    }

    /// Sets the voxel-mean prior of a class (avg_prior mode).
    pub fn set_prior(&mut self, class: usize, prior: &ProbGrid) -> Result<()> {
        self.check_class(class)?;
        let r = self.resolution();
        if prior.resolution() != r {
            return Err(Error::Dimension(format!(
                "prior at {}³ for a {r}³ model",
                prior.resolution()
            )));
        }
        match &mut self.conditioning {
            Conditioning::AvgPrior { priors, .. } => {
                priors[class] = Some(prior.probs().to_vec());
                Ok(())
            }
            _ => Err(Error::Argument(format!("priors require avg_prior mode, model is {}", self.config.mode))),
        }
    }

    pub fn prior(&self, class: usize) -> Option<&[f64]> {
        match &self.conditioning {
            Conditioning::AvgPrior { priors, .. } => priors.get(class)?.as_deref(),
            _ => None,
        }
    }

    /// Encodes an arbitrary prior grid with the shape encoder (avg_prior mode).
    pub fn prior_embedding(&self, prior: &ProbGrid) -> Result<Vec<f64>> {
        let r = self.resolution();
        if prior.resolution() != r {
            return Err(Error::Dimension(format!("prior at {}³ for a {r}³ model", prior.resolution())));
        }
        match &self.conditioning {
            Conditioning::AvgPrior { encoder, .. } => {
                let x = FeatureMap::new(1, 1, [r; 3], prior.probs().to_vec())?;
                Ok(encoder.forward(&x)?.0.data)
            }
            _ => Err(Error::Argument(format!("prior embedding on a {} model", self.mode()))),
        }
    }

    /// The mode-dependent `e_S` of one class.
    pub fn class_embedding(&self, class: usize) -> Result<Vec<f64>> {
        let (e, _) = self.embeddings_for(&[class])?;
        Ok(e)
    }

    /// Embeddings for a batch of class ids, `[B·D]`, and the cache for backward.
    pub fn embeddings_for(&self, classes: &[usize]) -> Result<(Vec<f64>, CondCache)> {
        for &c in classes {
            self.check_class(c)?;
        }
        let d = self.embed_dim();
        let mut uniq: Vec<usize> = Vec::new();
        let slot: Vec<usize> = classes
            .iter()
            .map(|c| match uniq.iter().position(|u| u == c) {
                Some(i) => i,
                None => {
                    uniq.push(*c);
                    uniq.len() - 1
                }
            })
            .collect();
        let mut attention = Vec::new();
        let mut prior = None;
        let per_class: Vec<Vec<f64>> = match &self.conditioning {
            Conditioning::Zero | Conditioning::Mcce => vec![vec![0.0; d]; uniq.len()],
            Conditioning::Gce { table } => uniq.iter().map(|&c| table.row(c).to_vec()).collect(),
            Conditioning::Cgce { .. } => {
                attention = uniq.iter().map(|&c| self.attention(c)).collect::<Result<_>>()?;
                attention.iter().map(|a| self.cgce_embedding_from(a)).collect::<Result<_>>()?
            }
            Conditioning::AvgPrior { encoder, priors } => {
                let r = self.resolution();
                let mut data = Vec::with_capacity(uniq.len() * r.pow(3));
                for &c in &uniq {
                    let p = priors[c].as_ref().ok_or_else(|| {
                        Error::Data(format!("class {c} has no shape prior; set one before use"))
                    })?;
                    data.extend_from_slice(p);
                }
                let x = FeatureMap::new(uniq.len(), 1, [r; 3], data)?;
                let (e, cache) = encoder.forward(&x)?;
                prior = Some(cache);
                (0..uniq.len()).map(|i| e.sample(i).to_vec()).collect()
            }
        };
        let mut out = Vec::with_capacity(classes.len() * d);
        for &s in &slot {
            out.extend_from_slice(&per_class[s]);
        }
        Ok((
            out,
            CondCache {
                classes: uniq,
                slot,
                attention,
                prior,
            },
        ))
    }

    /// Encodes a batch of images in evaluation mode, `[B, D]`.
    pub fn encode_images(&self, images: &FeatureMap) -> Result<FeatureMap> {
        Ok(self.encoder.forward(images, NormMode::Eval)?.0)
    }

    pub fn encode_image(&self, image: &[f32]) -> Result<Vec<f64>> {
        let x = image_batch(&[image], self.image_size())?;
        Ok(self.encode_images(&x)?.data)
    }

    fn concat(&self, e_i: &FeatureMap, e_s: &[f64]) -> Result<FeatureMap> {
        let d = self.embed_dim();
        if e_i.sample_len() != d || e_s.len() != e_i.batch * d {
            return Err(Error::Dimension(format!(
                "embeddings of width {} and {} for batch {}, expected width {d}",
                e_i.sample_len(),
                e_s.len() / e_i.batch.max(1),
                e_i.batch
            )));
        }
        let mut z = Vec::with_capacity(e_i.batch * 2 * d);
        for b in 0..e_i.batch {
            z.extend_from_slice(e_i.sample(b));
            z.extend_from_slice(&e_s[b * d..(b + 1) * d]);
        }
        FeatureMap::vectors(e_i.batch, 2 * d, z)
    }

    /// Decoder logits for `[e_I | e_S]`, with `classes` selecting the
    /// normalization affine rows in MCCE mode.
    pub fn decode_logits(
        &self,
        e_i: &FeatureMap,
        e_s: &[f64],
        classes: &[usize],
        mode: NormMode,
    ) -> Result<(FeatureMap, DecoderCache)> {
        if classes.len() != e_i.batch {
            return Err(Error::Dimension(format!(
                "{} class ids for a batch of {}",
                classes.len(),
                e_i.batch
            )));
        }
        for &c in classes {
            self.check_class(c)?;
        }
        let z = self.concat(e_i, e_s)?;
        self.decoder.forward(&z, &self.norm_rows(classes), mode)
    }

    fn to_probs(&self, logits: &FeatureMap) -> Result<Vec<ProbGrid>> {
        (0..logits.batch)
            .map(|b| {
                let p = logits
                    .sample(b)
                    .iter()
                    .map(|&z| sigmoid(z).clamp(PROB_EPS, 1.0 - PROB_EPS))
                    .collect();
                ProbGrid::new(self.resolution(), p)
            })
            .collect()
    }

    /// Occupancy probabilities in `[ε, 1 − ε]` for a batch of embeddings.
    pub fn decode_batch(&self, e_i: &FeatureMap, e_s: &[f64], classes: &[usize]) -> Result<Vec<ProbGrid>> {
        let (logits, _) = self.decode_logits(e_i, e_s, classes, NormMode::Eval)?;
        self.to_probs(&logits)
    }

    pub fn decode_shape(&self, e_i: &[f64], e_s: &[f64], class: usize) -> Result<ProbGrid> {
        let x = FeatureMap::vectors(1, e_i.len(), e_i.to_vec())?;
        Ok(self.decode_batch(&x, e_s, &[class])?.remove(0))
    }

    /// Evaluation-mode reconstruction of a batch of images.
    pub fn forward_batch(&self, images: &FeatureMap, classes: &[usize]) -> Result<Vec<ProbGrid>> {
        let e_i = self.encode_images(images)?;
        let (e_s, _) = self.embeddings_for(classes)?;
        self.decode_batch(&e_i, &e_s, classes)
    }

    pub fn forward(&self, image: &[f32], class: usize) -> Result<ProbGrid> {
        let x = image_batch(&[image], self.image_size())?;
        Ok(self.forward_batch(&x, &[class])?.remove(0))
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Mean voxel BCE of a batch of logits and its logit gradient.
    pub fn batch_loss(&self, logits: &FeatureMap, targets: &[f64]) -> Result<(f64, FeatureMap)> {
        let n = logits.sample_len();
        if targets.len() != logits.batch * n {
            return Err(Error::Dimension(format!(
                "{} targets for {} samples of {n} voxels",
                targets.len(),
                logits.batch
            )));
        }
        let scale = 1.0 / logits.batch as f64;
        let mut loss = 0.0;
        let mut grad = Vec::with_capacity(logits.data.len());
        for b in 0..logits.batch {
            let (l, g) = bce_with_logits(logits.sample(b), &targets[b * n..(b + 1) * n])?;
            loss += l * scale;
            grad.extend(g.into_iter().map(|v| v * scale));
        }
        Ok((loss, FeatureMap::new(logits.batch, logits.channels, logits.dims, grad)?))
    }

    /// Training-mode forward pass returning the batch loss.
    pub fn forward_train(&self, images: &FeatureMap, targets: &[f64], classes: &[usize]) -> Result<(f64, FeatureMap, ForwardCache)> {
        let (e_i, enc) = self.encoder.forward(images, NormMode::Train)?;
        let (e_s, cond) = self.embeddings_for(classes)?;
        let (logits, dec) = self.decode_logits(&e_i, &e_s, classes, NormMode::Train)?;
        let (loss, dlogits) = self.batch_loss(&logits, targets)?;
        Ok((loss, dlogits, ForwardCache { enc, cond, dec }))
    }

    /// Accumulates gradients of every parameter for a training batch.
    pub fn backward(&mut self, cache: &ForwardCache, dlogits: &FeatureMap) -> Result<()> {
        let d = self.embed_dim();
        let dz = self.decoder.backward(&cache.dec, dlogits, true)?;
        let b = dz.batch;
        let mut de_i = Vec::with_capacity(b * d);
        let mut de_s = Vec::with_capacity(b * d);
        for i in 0..b {
            let row = dz.sample(i);
            de_i.extend_from_slice(&row[..d]);
            de_s.extend_from_slice(&row[d..]);
        }
        self.encoder.backward(&cache.enc, &FeatureMap::vectors(b, d, de_i)?)?;
        self.conditioning_backward(&cache.cond, &de_s)
    }

    /// Folds the batch statistics of a training pass into the running statistics.
    pub fn update_running(&mut self, cache: &ForwardCache) {
        self.encoder.update_running(&cache.enc);
        self.decoder.update_running(&cache.dec);
    }

    /// One full training step's gradient: zero, forward, backward, running stats.
    pub fn train_batch(&mut self, images: &FeatureMap, targets: &[f64], classes: &[usize]) -> Result<f64> {
        self.zero_grad();
        let (loss, dlogits, cache) = self.forward_train(images, targets, classes)?;
        self.backward(&cache, &dlogits)?;
        self.update_running(&cache);
        Ok(loss)
    }

    /// Sums per-sample `∂L/∂e_S` by class.
    fn class_sums(&self, cache: &CondCache, de_s: &[f64]) -> Vec<Vec<f64>> {
        let d = self.embed_dim();
        let mut sums = vec![vec![0.0; d]; cache.classes.len()];
        for (i, &s) in cache.slot.iter().enumerate() {
            for (o, g) in sums[s].iter_mut().zip(&de_s[i * d..(i + 1) * d]) {
                *o += g;
            }
        }
        sums
    }

    /// Gradient of a loss with respect to one class's attention logits,
    /// given `∂L/∂e_S` for that class.
    pub fn cgce_logit_grad(&self, attention: &[f64], de_s: &[f64]) -> Result<Vec<f64>> {
        let Conditioning::Cgce { codebooks, .. } = &self.conditioning else {
            return Err(Error::Argument("logit gradient requires cgce mode".into()));
        };
        let d = self.embed_dim();
        let m = self.config.conditioning.codes;
        let da: Vec<f64> = codebooks
            .value
            .chunks(d)
            .map(|code| code.iter().zip(de_s).map(|(c, g)| c * g).sum())
            .collect();
        let mut dw = Vec::with_capacity(da.len());
        for (a, g) in attention.chunks(m).zip(da.chunks(m)) {
            dw.extend(sparsemax_vjp(a, g)?);
        }
        Ok(dw)
    }

    fn conditioning_backward(&mut self, cache: &CondCache, de_s: &[f64]) -> Result<()> {
        let sums = self.class_sums(cache, de_s);
        let d = self.embed_dim();
        match self.config.mode {
            ConditioningMode::Zero | ConditioningMode::Mcce => {}
            ConditioningMode::Gce => {
                let Conditioning::Gce { table } = &mut self.conditioning else { unreachable!() };
                for (&c, g) in cache.classes.iter().zip(&sums) {
                    for (o, v) in table.grad[c * d..(c + 1) * d].iter_mut().zip(g) {
                        *o += v;
                    }
                }
            }
            ConditioningMode::Cgce => {
                let dws: Vec<Vec<f64>> = cache
                    .attention
                    .iter()
                    .zip(&sums)
                    .map(|(a, g)| self.cgce_logit_grad(a, g))
                    .collect::<Result<_>>()?;
                let Conditioning::Cgce { codebooks, logits } = &mut self.conditioning else { unreachable!() };
                let w = logits.row_width();
                for ((&c, a), (g, dw)) in cache.classes.iter().zip(&cache.attention).zip(sums.iter().zip(&dws)) {
                    for (j, &aj) in a.iter().enumerate() {
                        if aj != 0.0 {
                            for (o, v) in codebooks.grad[j * d..(j + 1) * d].iter_mut().zip(g) {
                                *o += aj * v;
                            }
                        }
                    }
                    for (o, v) in logits.grad[c * w..(c + 1) * w].iter_mut().zip(dw) {
                        *o += v;
                    }
                }
            }
            ConditioningMode::AvgPrior => {
                let Conditioning::AvgPrior { encoder, .. } = &mut self.conditioning else { unreachable!() };
                let pc = cache.prior.as_ref().expect("prior cache in avg_prior mode");
                let flat: Vec<f64> = sums.concat();
                encoder.backward(pc, &FeatureMap::vectors(sums.len(), d, flat)?)?;
            }
        }
        Ok(())
    }

    /// Conditioning parameters of the current mode.
    pub fn conditioning_params(&self) -> Vec<&Param> {
        match &self.conditioning {
            Conditioning::Zero => vec![],
            Conditioning::Gce { table } => vec![table],
            Conditioning::Cgce { codebooks, logits } => vec![codebooks, logits],
            Conditioning::Mcce => self.decoder.affine_params(),
            Conditioning::AvgPrior { encoder, .. } => encoder.params(),
        }
    }

    /// Every parameter, each listed once, in a fixed order.
    pub fn params(&self) -> Vec<&Param> {
        let mut v = self.encoder.params();
        v.extend(self.decoder.weight_params());
        v.extend(self.decoder.affine_params());
        match &self.conditioning {
            Conditioning::Gce { table } => v.push(table),
            Conditioning::Cgce { codebooks, logits } => v.extend([codebooks, logits]),
            Conditioning::AvgPrior { encoder, .. } => v.extend(encoder.params()),
            Conditioning::Zero | Conditioning::Mcce => {}
        }
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.encoder.params_mut();
        v.extend(self.decoder.params_mut());
        match &mut self.conditioning {
            Conditioning::Gce { table } => v.push(table),
            Conditioning::Cgce { codebooks, logits } => v.extend([codebooks, logits]),
            Conditioning::AvgPrior { encoder, .. } => v.extend(encoder.params_mut()),
            Conditioning::Zero | Conditioning::Mcce => {}
        }
        v
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params().into_iter().find(|p| p.name == name)
    }

    /// Running statistics of every normalization layer, by name.
    pub fn buffers(&self) -> Vec<(String, &[f64])> {
        let mut v = Vec::new();
        for n in self.encoder.norms.iter().chain(self.decoder.all_norms()) {
            let base = n.gamma.name.trim_end_matches(".gamma");
            v.push((format!("{base}.running_mean"), n.running_mean.as_slice()));
            v.push((format!("{base}.running_var"), n.running_var.as_slice()));
        }
        v
    }

    /// Names of the per-class tables whose row `c` holds class `c`'s
    /// adaptable parameters in the current mode.
    pub fn class_row_params(&self) -> Vec<String> {
        match &self.conditioning {
            Conditioning::Gce { table } => vec![table.name.clone()],
            Conditioning::Cgce { logits, .. } => vec![logits.name.clone()],
            Conditioning::Mcce => self.decoder.affine_params().iter().map(|p| p.name.clone()).collect(),
            Conditioning::Zero | Conditioning::AvgPrior { .. } => vec![],
        }
    }

    /// SHA-256 over every parameter value and running statistic, skipping
    /// row `class` of the tables in `class_row_params` when `class` is given.
    pub fn frozen_hash(&self, class: Option<usize>) -> String {
        let skip = self.class_row_params();
        let mut h = Sha256::new();
        for p in self.params() {
            h.update(p.name.as_bytes());
            let excluded = class.filter(|_| skip.contains(&p.name));
            let w = p.row_width();
            for (i, v) in p.value.iter().enumerate() {
                if excluded.is_some_and(|c| i / w == c) {
                    continue;
                }
                h.update(v.to_le_bytes());
            }
        }
        for (name, b) in self.buffers() {
            h.update(name.as_bytes());
            for v in b {
                h.update(v.to_le_bytes());
            }
        }
        if let Conditioning::AvgPrior { priors, .. } = &self.conditioning {
            for (c, p) in priors.iter().enumerate() {
                if class == Some(c) {
                    continue;
                }
                if let Some(p) = p {
                    h.update((c as u64).to_le_bytes());
                    for v in p {
                        h.update(v.to_le_bytes());
                    }
                }
            }
        }
        hex(&h.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn uniform(rng: &mut impl Rng, half: f64) -> f64 {
    if half == 0.0 {
        0.0
    } else {
        rng.random_range(-half..half)
    }
}

#[cfg(test)]
mod tests;

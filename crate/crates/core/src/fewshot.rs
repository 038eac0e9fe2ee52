//! Base-class training and few-shot adaptation of novel classes.
//!
//! Adaptation keeps the encoder, decoder and every other class frozen and
//! optimizes only the new class's own parameters: its embedding row (GCE),
//! its attention logits (CGCE) or its affine rows in every decoder
//! normalization layer (MCCE). Image embeddings of the support views are
//! computed once, since the encoder does not change.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{image_batch, Conditioning, ConditioningMode, ModelConfig, ReconstructionModel};
use crate::nn::{optimizer_step, FeatureMap, NormMode, Optimizer, OptimizerConfig, SlotState};
use crate::seeds;
use crate::shapegen::{Dataset, ShapeInstance, Split};
use crate::voxel::{ProbGrid, VoxelGrid};

/// Which model to train and on which classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Zero,
    Gce,
    Cgce,
    Mcce,
    AvgPrior,
    /// GCE conditioning trained on base and novel training data together.
    AllShot,
}

impl TrainMode {
    pub fn conditioning(self) -> ConditioningMode {
        match self {
            TrainMode::Zero => ConditioningMode::Zero,
            TrainMode::Gce | TrainMode::AllShot => ConditioningMode::Gce,
            TrainMode::Cgce => ConditioningMode::Cgce,
            TrainMode::Mcce => ConditioningMode::Mcce,
            TrainMode::AvgPrior => ConditioningMode::AvgPrior,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TrainMode::AllShot => "all_shot",
            m => m.conditioning().name(),
        }
    }
}

impl std::fmt::Display for TrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            TrainMode::Zero,
            TrainMode::Gce,
            TrainMode::Cgce,
            TrainMode::Mcce,
            TrainMode::AvgPrior,
            TrainMode::AllShot,
        ]
        .into_iter()
        .find(|m| m.name() == s)
        .ok_or_else(|| Error::Config(format!("unknown training mode `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub epochs: usize,
    pub batch_size: usize,
    /// Views drawn per training shape per epoch.
    pub views_per_shape: usize,
    /// Optional cap on optimizer steps over the whole run.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::Gce,
            epochs: 25,
            batch_size: 16,
            views_per_shape: 1,
            max_steps: None,
            optimizer: OptimizerConfig::adam(1e-4),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub mean_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("epoch\tsteps\tmean_loss\n");
        for e in &self.epochs {
            s.push_str(&format!("{}\t{}\t{:.6}\n", e.epoch, e.steps, e.mean_loss));
        }
        s
    }
}

/// Voxel-mean of a set of shapes.
pub fn mean_shape(grids: &[&VoxelGrid]) -> Result<ProbGrid> {
    if grids.is_empty() {
        return Err(Error::Data("mean shape of an empty set".into()));
    }
    ProbGrid::mean_of(grids)
}

/// Builds an encoder batch and target occupancies for `(instance, view)` pairs.
pub fn make_batch(dataset: &Dataset, pairs: &[(usize, usize)]) -> Result<(FeatureMap, Vec<f64>, Vec<usize>)> {
    let imgs: Vec<&[f32]> = pairs
        .iter()
        .map(|&(i, v)| dataset.instances[i].views[v].image.as_slice())
        .collect();
    let x = image_batch(&imgs, dataset.image_size())?;
    let mut y = Vec::with_capacity(pairs.len() * dataset.resolution().pow(3));
    for &(i, _) in pairs {
        y.extend(dataset.instances[i].grid.to_f64());
    }
    let classes = pairs.iter().map(|&(i, _)| dataset.instances[i].class_index).collect();
    Ok((x, y, classes))
}

/// Model configuration aligned with a dataset's classes and resolutions.
pub fn model_config_for(dataset: &Dataset, base: &ModelConfig, mode: TrainMode) -> ModelConfig {
    let mut cfg = base.clone();
    cfg.mode = mode.conditioning();
    cfg.num_base = dataset.manifest.num_base();
    cfg.num_classes = dataset.manifest.num_classes();
    cfg.encoder.image_size = dataset.image_size();
    cfg.decoder.resolution = dataset.resolution();
    cfg
}

/// Trains a model from scratch on the base classes (all classes for
/// `all_shot`).
pub fn train_base(dataset: &Dataset, model_config: &ModelConfig, cfg: &TrainConfig) -> Result<(ReconstructionModel, TrainLog)> {
    if cfg.epochs == 0 || cfg.batch_size == 0 || cfg.views_per_shape == 0 {
        return Err(Error::Config("epochs, batch size and views per shape must be positive".into()));
    }
    let mconf = model_config_for(dataset, model_config, cfg.mode);
    let mut model = ReconstructionModel::new(&mconf)?;
    let classes: Vec<usize> = if cfg.mode == TrainMode::AllShot {
        (0..mconf.num_classes).collect()
    } else {
        (0..mconf.num_base).collect()
    };
    let train: Vec<usize> = classes.iter().flat_map(|&c| dataset.select(c, Split::Train)).collect();
    if train.is_empty() {
        return Err(Error::Data("no training instances for the selected classes".into()));
    }
    if cfg.mode == TrainMode::AvgPrior {
        for &c in &classes {
            let grids: Vec<&VoxelGrid> = dataset.select(c, Split::Train).iter().map(|&i| &dataset.instances[i].grid).collect();
            if !grids.is_empty() {
                model.set_prior(c, &mean_shape(&grids)?)?;
            }
        }
    }
    let n_views = dataset.manifest.config.n_views;
    let per_shape = cfg.views_per_shape.min(n_views);
    let mut opt = Optimizer::new(cfg.optimizer.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(cfg.seed, &[seeds::tag("train")]));
    let mut log = TrainLog::default();
    let mut total_steps = 0;
    'epochs: for epoch in 0..cfg.epochs {
        let mut pairs = Vec::with_capacity(train.len() * per_shape);
        let mut views: Vec<usize> = (0..n_views).collect();
        for &i in &train {
            views.shuffle(&mut rng);
            pairs.extend(views[..per_shape].iter().map(|&v| (i, v)));
        }
        pairs.shuffle(&mut rng);
        let (mut sum, mut steps) = (0.0, 0);
        for chunk in pairs.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| total_steps >= m) {
                if steps > 0 {
                    log.epochs.push(EpochRecord { epoch, steps, mean_loss: sum / steps as f64 });
                }
                break 'epochs;
            }
            // a single sample gives degenerate batch statistics
            if chunk.len() < 2 && steps > 0 {
                continue;
            }
            let (x, y, c) = make_batch(dataset, chunk)?;
            let loss = model.train_batch(&x, &y, &c)?;
            opt.step(model.params_mut())?;
            sum += loss;
            steps += 1;
            total_steps += 1;
        }
        log::info!("epoch {epoch}: mean loss {:.5} over {steps} steps", sum / steps as f64);
        log.epochs.push(EpochRecord { epoch, steps, mean_loss: sum / steps as f64 });
    }
    Ok((model, log))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptConfig {
    pub iterations: usize,
    /// Defaults to 0.01 for GCE and CGCE and 0.001 for MCCE when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    /// MCCE rate, taking precedence over `learning_rate` in that mode.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mcce_learning_rate: Option<f64>,
    pub momentum: f64,
    /// Views used per support shape; all views when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub views_per_shape: Option<usize>,
    /// Caps the number of support pairs: each shape contributes
    /// `budget / K` views (at least one). Overrides `views_per_shape`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pair_budget: Option<usize>,
    /// Support pairs per step; the whole support set when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    /// Stop once the loss changes by less than `plateau_tolerance`
    /// (relative) over `plateau_window` iterations.
    pub early_stop: bool,
    pub plateau_window: usize,
    pub plateau_tolerance: f64,
    /// Keep normalization running statistics fixed during adaptation.
    pub freeze_norm_stats: bool,
    pub seed: u64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            iterations: 100,
            learning_rate: None,
            mcce_learning_rate: None,
            momentum: 0.9,
            views_per_shape: None,
            pair_budget: None,
            batch_size: None,
            early_stop: true,
            plateau_window: 10,
            plateau_tolerance: 1e-5,
            freeze_norm_stats: true,
            seed: 0,
        }
    }
}

impl AdaptConfig {
    pub fn learning_rate_for(&self, mode: ConditioningMode) -> f64 {
        match mode {
            ConditioningMode::Mcce => self.mcce_learning_rate.or(self.learning_rate).unwrap_or(1e-3),
            _ => self.learning_rate.unwrap_or(1e-2),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptLog {
    pub class_index: usize,
    pub mode: ConditioningMode,
    pub support_size: usize,
    pub pairs: usize,
    /// Support loss at the initialization, before any step.
    pub initial_loss: f64,
    /// Support loss after the last step.
    pub final_loss: f64,
    /// Loss of the batch used at each iteration.
    pub losses: Vec<f64>,
    pub stopped_early: bool,
}

impl AdaptLog {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("iteration\tloss\n");
        for (i, l) in self.losses.iter().enumerate() {
            s.push_str(&format!("{i}\t{l:.6}\n"));
        }
        s
    }
}

/// Support pairs with precomputed image embeddings.
struct Support {
    e_i: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
}

fn set_class_rows(model: &mut ReconstructionModel, class: usize, theta: &[f64]) {
    match &mut model.conditioning {
        Conditioning::Gce { table } => table.row_mut(class).copy_from_slice(theta),
        Conditioning::Cgce { logits, .. } => logits.row_mut(class).copy_from_slice(theta),
        Conditioning::Mcce => {
            let mut off = 0;
            for p in model.decoder.affine_params_mut() {
                let w = p.row_width();
                p.row_mut(class).copy_from_slice(&theta[off..off + w]);
                off += w;
            }
        }
        _ => {}
    }
}

/// Documented starting point of a novel class's parameters.
fn initial_rows(model: &ReconstructionModel, class: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, &[class as u64, seeds::tag(model.mode().name())]));
    match &model.conditioning {
        Conditioning::Gce { table } => {
            let d = table.row_width();
            let nb = model.config.num_base;
            let mut mean = vec![0.0; d];
            for c in 0..nb {
                for (m, v) in mean.iter_mut().zip(table.row(c)) {
                    *m += v / nb as f64;
                }
            }
            mean
        }
        Conditioning::Cgce { logits, .. } => {
            let h = model.config.conditioning.uniform_init;
            (0..logits.row_width())
                .map(|_| if h == 0.0 { 0.0 } else { rng.random_range(-h..h) })
                .collect()
        }
        Conditioning::Mcce => {
            let dist = Normal::new(1.0, model.config.conditioning.affine_init_std).expect("finite std");
            let n: usize = model.decoder.affine_params().iter().map(|p| p.row_width()).sum();
            (0..n).map(|_| dist.sample(&mut rng)).collect()
        }
        _ => vec![],
    }
}

/// Mean per-pair support loss over `idx`, and the gradient of the summed
/// support objective with respect to the class parameters.
fn loss_and_grad(
    model: &mut ReconstructionModel,
    class: usize,
    support: &Support,
    idx: &[usize],
    norm_mode: NormMode,
    update_stats: bool,
) -> Result<(f64, Vec<f64>)> {
    const CHUNK: usize = 64;
    let d = model.embed_dim();
    let mode = model.mode();
    let e_s_row = model.class_embedding(class)?;
    let attention = if mode == ConditioningMode::Cgce { Some(model.attention(class)?) } else { None };
    for p in model.decoder.affine_params_mut() {
        p.zero_grad();
    }
    let total = idx.len() as f64;
    let mut loss = 0.0;
    let mut de_s = vec![0.0; d];
    // full-batch statistics when running in training mode
    let chunk = if norm_mode == NormMode::Train { idx.len() } else { CHUNK };
    for part in idx.chunks(chunk) {
        let b = part.len();
        let mut e_i = Vec::with_capacity(b * d);
        let mut y = Vec::with_capacity(b * support.targets[0].len());
        for &i in part {
            e_i.extend_from_slice(&support.e_i[i]);
            y.extend_from_slice(&support.targets[i]);
        }
        let e_i = FeatureMap::vectors(b, d, e_i)?;
        let e_s: Vec<f64> = e_s_row.iter().copied().cycle().take(b * d).collect();
        let classes = vec![class; b];
        let (logits, cache) = model.decode_logits(&e_i, &e_s, &classes, norm_mode)?;
        let (l, mut g) = model.batch_loss(&logits, &y)?;
        // batch_loss averages over this chunk; rescale to the whole set
        let w = b as f64 / total;
        loss += l * w;
        g.data.iter_mut().for_each(|v| *v *= w);
        let dz = model.decoder.backward(&cache, &g, false)?;
        if update_stats {
            model.decoder.update_running(&cache);
        }
        for s in 0..b {
            for (o, v) in de_s.iter_mut().zip(&dz.sample(s)[d..]) {
                *o += v;
            }
        }
    }
    // the objective sums the per-pair loss over the whole support set
    let scale = support.e_i.len() as f64;
    de_s.iter_mut().for_each(|v| *v *= scale);
    let grad: Vec<f64> = match mode {
        ConditioningMode::Gce => de_s,
        ConditioningMode::Cgce => model.cgce_logit_grad(attention.as_deref().unwrap_or_default(), &de_s)?,
        ConditioningMode::Mcce => model
            .decoder
            .affine_params()
            .iter()
            .flat_map(|p| p.grad_row(class).iter().map(|g| g * scale).collect::<Vec<_>>())
            .collect(),
        _ => vec![],
    };
    Ok((loss, grad))
}

/// Learns a novel class from its support shapes with everything else frozen.
pub fn adapt_novel(
    model: &mut ReconstructionModel,
    support: &[&ShapeInstance],
    class: usize,
    cfg: &AdaptConfig,
) -> Result<AdaptLog> {
    model.check_class(class)?;
    if class < model.config.num_base {
        return Err(Error::Argument(format!("class {class} is a base class; only novel classes adapt")));
    }
    if support.is_empty() {
        return Err(Error::Data("empty support set".into()));
    }
    if let Some(bad) = support.iter().find(|s| s.class_index != class) {
        return Err(Error::Argument(format!(
            "support instance {} belongs to class {}, not {class}",
            bad.instance_id, bad.class_index
        )));
    }
    let mode = model.mode();
    let mut log = AdaptLog {
        class_index: class,
        mode,
        support_size: support.len(),
        pairs: 0,
        initial_loss: 0.0,
        final_loss: 0.0,
        losses: vec![],
        stopped_early: false,
    };
    match mode {
        ConditioningMode::Zero => {
            return Err(Error::Argument("a zero-conditioned model has no class parameters to adapt".into()))
        }
        ConditioningMode::AvgPrior => {
            let grids: Vec<&VoxelGrid> = support.iter().map(|s| &s.grid).collect();
            model.set_prior(class, &mean_shape(&grids)?)?;
            return Ok(log);
        }
        _ => {}
    }
    let lr = cfg.learning_rate_for(mode);
    let opt = OptimizerConfig::sgd_momentum(lr, cfg.momentum);
    opt.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(cfg.seed, &[class as u64, seeds::tag("adapt")]));
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    let per_shape = match cfg.pair_budget {
        Some(b) => Some((b / support.len()).max(1)),
        None => cfg.views_per_shape,
    };
    for (s, inst) in support.iter().enumerate() {
        let mut views: Vec<usize> = (0..inst.views.len()).collect();
        if let Some(v) = per_shape {
            views.shuffle(&mut rng);
            views.truncate(v.max(1));
            views.sort_unstable();
        }
        pairs.extend(views.into_iter().map(|v| (s, v)));
    }
    let mut sup = Support { e_i: vec![], targets: vec![] };
    for part in pairs.chunks(64) {
        let imgs: Vec<&[f32]> = part.iter().map(|&(s, v)| support[s].views[v].image.as_slice()).collect();
        let e = model.encode_images(&image_batch(&imgs, model.image_size())?)?;
        for (b, &(s, _)) in part.iter().enumerate() {
            sup.e_i.push(e.sample(b).to_vec());
            sup.targets.push(support[s].grid.to_f64());
        }
    }
    log.pairs = pairs.len();
    let all: Vec<usize> = (0..pairs.len()).collect();

    let mut theta = initial_rows(model, class, cfg.seed);
    set_class_rows(model, class, &theta);
    let (norm_mode, update) = if cfg.freeze_norm_stats {
        (NormMode::Eval, false)
    } else {
        (NormMode::Train, true)
    };
    log.initial_loss = loss_and_grad(model, class, &sup, &all, NormMode::Eval, false)?.0;
    let mut slot = SlotState::default();
    for it in 0..cfg.iterations {
        let idx: Vec<usize> = match cfg.batch_size {
            Some(b) if b < all.len() => all.choose_multiple(&mut rng, b.max(1)).copied().collect(),
            _ => all.clone(),
        };
        let (loss, grad) = loss_and_grad(model, class, &sup, &idx, norm_mode, update)?;
        log.losses.push(loss);
        optimizer_step(&mut theta, &grad, &mut slot, &opt)?;
        set_class_rows(model, class, &theta);
        if cfg.early_stop && it >= cfg.plateau_window {
            let past = log.losses[it - cfg.plateau_window];
            if ((loss - past) / past.abs().max(f64::MIN_POSITIVE)).abs() < cfg.plateau_tolerance {
                log.stopped_early = true;
                break;
            }
        }
    }
    for p in model.decoder.affine_params_mut() {
        p.zero_grad();
    }
    log.final_loss = if log.losses.is_empty() {
        log.initial_loss
    } else {
        loss_and_grad(model, class, &sup, &all, NormMode::Eval, false)?.0
    };
    log::info!(
        "adapted class {class} ({mode}) on {} pairs: loss {:.5} -> {:.5} in {} steps",
        log.pairs,
        log.initial_loss,
        log.final_loss,
        log.losses.len()
    );
    Ok(log)
}

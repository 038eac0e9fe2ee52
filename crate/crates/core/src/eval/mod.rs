//! Evaluation protocol, relative gains and the ablation studies.

mod report;

pub use report::{emit_report, format_iou_table, parse_iou_table, AblationRecord, ReportBundle, REPORT_FILES};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{compose_embedding, image_batch, Conditioning, ConditioningMode, ReconstructionModel};
use crate::seeds;
use crate::shapegen::{Dataset, ShapeInstance, Split};
use crate::voxel::{binarize, iou, ProbGrid, DEFAULT_THRESHOLD};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewMode {
    /// One view per test shape, picked by seed.
    Seeded,
    /// Every rendered view; IoU is averaged over all of them.
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub threshold: f64,
    pub views: ViewMode,
    pub seed: u64,
    pub batch_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { threshold: DEFAULT_THRESHOLD, views: ViewMode::Seeded, seed: 0, batch_size: 32 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub class_id: String,
    pub novel: bool,
    /// Number of (shape, view) queries averaged.
    pub queries: usize,
    pub iou: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shots: Option<usize>,
    pub seed: u64,
    pub config_hash: String,
    pub classes: Vec<ClassScore>,
}

impl EvalReport {
    /// Column label, e.g. `cgce@5`.
    pub fn label(&self) -> String {
        match self.shots {
            Some(k) => format!("{}@{k}", self.method),
            None => self.method.clone(),
        }
    }

    pub fn iou(&self, class_id: &str) -> Option<f64> {
        self.classes.iter().find(|c| c.class_id == class_id).map(|c| c.iou)
    }

    fn mean_where(&self, f: impl Fn(&ClassScore) -> bool) -> Option<f64> {
        let v: Vec<f64> = self.classes.iter().filter(|c| f(c)).map(|c| c.iou).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn mean_iou(&self) -> Option<f64> {
        self.mean_where(|_| true)
    }

    pub fn mean_novel_iou(&self) -> Option<f64> {
        self.mean_where(|c| c.novel)
    }

    pub fn mean_base_iou(&self) -> Option<f64> {
        self.mean_where(|c| !c.novel)
    }
}

/// The view of `inst` used in seeded mode.
pub fn seeded_view(inst: &ShapeInstance, seed: u64) -> usize {
    let s = seeds::derive(seed, &[seeds::tag(&inst.instance_id), seeds::tag("eval")]);
    ChaCha8Rng::seed_from_u64(s).random_range(0..inst.views.len().max(1))
}

/// Test-split queries of a class as `(instance, view)` pairs.
fn queries(dataset: &Dataset, class: usize, cfg: &EvalConfig) -> Vec<(usize, usize)> {
    let mut q = Vec::new();
    for i in dataset.select(class, Split::Test) {
        let inst = &dataset.instances[i];
        match cfg.views {
            ViewMode::Seeded => q.push((i, seeded_view(inst, cfg.seed))),
            ViewMode::All => q.extend((0..inst.views.len()).map(|v| (i, v))),
        }
    }
    q
}

/// IoU of each query, conditioning query `n` on class `assign(n, class)`.
fn score_queries(
    model: &ReconstructionModel,
    dataset: &Dataset,
    q: &[(usize, usize)],
    class: usize,
    cfg: &EvalConfig,
    assign: &mut dyn FnMut(usize, usize) -> usize,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(q.len());
    let cond: Vec<usize> = (0..q.len()).map(|n| assign(n, class)).collect();
    for (chunk, classes) in q.chunks(cfg.batch_size.max(1)).zip(cond.chunks(cfg.batch_size.max(1))) {
        let imgs: Vec<&[f32]> = chunk.iter().map(|&(i, v)| dataset.instances[i].views[v].image.as_slice()).collect();
        let preds = model.forward_batch(&image_batch(&imgs, dataset.image_size())?, classes)?;
        for (p, &(i, _)) in preds.iter().zip(chunk) {
            out.push(iou(&binarize(p, cfg.threshold)?, &dataset.instances[i].grid)?);
        }
    }
    Ok(out)
}

fn run(
    model: &ReconstructionModel,
    dataset: &Dataset,
    classes: &[usize],
    cfg: &EvalConfig,
    method: &str,
    assign: &mut dyn FnMut(usize, usize) -> usize,
) -> Result<EvalReport> {
    if dataset.resolution() != model.resolution() || dataset.image_size() != model.image_size() {
        return Err(Error::Dimension(format!(
            "model expects {}² views and {}³ grids, dataset has {}² and {}³",
            model.image_size(),
            model.resolution(),
            dataset.image_size(),
            dataset.resolution()
        )));
    }
    let ids = dataset.manifest.class_ids();
    let mut scores = Vec::new();
    for &c in classes {
        let class_id = ids.get(c).ok_or_else(|| Error::Index(format!("class index {c}")))?;
        let q = queries(dataset, c, cfg);
        if q.is_empty() {
            log::warn!("class `{class_id}` has no test queries; excluded");
            continue;
        }
        let v = score_queries(model, dataset, &q, c, cfg, assign)?;
        scores.push(ClassScore {
            class_id: class_id.to_string(),
            novel: dataset.manifest.is_novel(c),
            queries: v.len(),
            iou: v.iter().sum::<f64>() / v.len() as f64,
        });
    }
    Ok(EvalReport { method: method.to_string(), shots: None, seed: cfg.seed, config_hash: String::new(), classes: scores })
}

/// Per-class mean IoU on the test split: forward, binarize, compare.
pub fn evaluate(model: &ReconstructionModel, dataset: &Dataset, classes: &[usize], cfg: &EvalConfig) -> Result<EvalReport> {
    run(model, dataset, classes, cfg, model.mode().name(), &mut |_, c| c)
}

/// Classes the model can condition on.
pub fn registered_classes(model: &ReconstructionModel) -> Vec<usize> {
    (0..model.num_classes())
        .filter(|&c| model.mode() != ConditioningMode::AvgPrior || model.prior(c).is_some())
        .collect()
}

/// [`evaluate`] with every query conditioned on a uniformly random
/// registered class instead of its own.
pub fn ablate_random_class(
    model: &ReconstructionModel,
    dataset: &Dataset,
    classes: &[usize],
    cfg: &EvalConfig,
    seed: u64,
) -> Result<EvalReport> {
    if model.mode() == ConditioningMode::Zero {
        return Err(Error::Argument("a zero-conditioned model has no class to randomize".into()));
    }
    let pool = registered_classes(model);
    if pool.is_empty() {
        return Err(Error::Data("no registered classes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, &[seeds::tag("random_class")]));
    let mut pick = |_: usize, _: usize| pool[rng.random_range(0..pool.len())];
    let mut r = run(model, dataset, classes, cfg, &format!("{}_rand", model.mode().name()), &mut pick)?;
    r.seed = seed;
    Ok(r)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainReport {
    pub method: String,
    pub shots: Option<usize>,
    pub per_class: Vec<(String, f64)>,
    /// Mean over novel classes, or over all classes when none is novel.
    pub mean: f64,
}

/// `(IoU_method − IoU_zs) / IoU_zs` per class.
pub fn relative_gain(method: &EvalReport, zs: &EvalReport) -> Result<GainReport> {
    let same = method.classes.len() == zs.classes.len()
        && method.classes.iter().zip(&zs.classes).all(|(a, b)| a.class_id == b.class_id);
    if !same {
        return Err(Error::Argument(format!(
            "`{}` and `{}` cover different classes",
            method.label(),
            zs.label()
        )));
    }
    let mut per_class = Vec::with_capacity(zs.classes.len());
    for (m, z) in method.classes.iter().zip(&zs.classes) {
        if z.iou == 0.0 {
            return Err(Error::UndefinedGain(z.class_id.clone()));
        }
        per_class.push((m.class_id.clone(), (m.iou - z.iou) / z.iou));
    }
    let any_novel = zs.classes.iter().any(|c| c.novel);
    let pick: Vec<f64> = per_class
        .iter()
        .zip(&zs.classes)
        .filter(|(_, c)| c.novel || !any_novel)
        .map(|((_, g), _)| *g)
        .collect();
    let mean = if pick.is_empty() { 0.0 } else { pick.iter().sum::<f64>() / pick.len() as f64 };
    Ok(GainReport { method: method.method.clone(), shots: method.shots, per_class, mean })
}

/// Which attention mass to drop in [`remove_codebook`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CodeTarget {
    /// Every code of one codebook.
    Codebook(usize),
    /// A single code.
    Entry { codebook: usize, code: usize },
}

/// Reconstruction with part of the class's codebook contribution zeroed
/// out of `e_S`.
pub fn remove_codebook(model: &ReconstructionModel, image: &[f32], class: usize, target: CodeTarget) -> Result<ProbGrid> {
    let Conditioning::Cgce { codebooks, .. } = &model.conditioning else {
        return Err(Error::Argument(format!("codebook removal on a {} model", model.mode())));
    };
    let (m_books, m_codes) = (model.config.conditioning.codebooks, model.config.conditioning.codes);
    let mut a = model.attention(class)?;
    let range = match target {
        CodeTarget::Codebook(k) if k < m_books => k * m_codes..(k + 1) * m_codes,
        CodeTarget::Entry { codebook, code } if codebook < m_books && code < m_codes => {
            let i = codebook * m_codes + code;
            i..i + 1
        }
        t => return Err(Error::Index(format!("{t:?} outside {m_books} codebooks of {m_codes} codes"))),
    };
    a[range].fill(0.0);
    let e_s = compose_embedding(&codebooks.value, model.embed_dim(), &a)?;
    model.decode_shape(&model.encode_image(image)?, &e_s, class)
}

/// Sparsemax attention of every class, `[C, M, m]` row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionExport {
    pub classes: Vec<String>,
    pub codebooks: usize,
    pub codes: usize,
    pub weights: Vec<f64>,
}

impl AttentionExport {
    pub fn row(&self, class: usize, codebook: usize) -> &[f64] {
        let i = (class * self.codebooks + codebook) * self.codes;
        &self.weights[i..i + self.codes]
    }

    /// Heat-map table: one line per (class, codebook).
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("class\tcodebook");
        for j in 0..self.codes {
            s.push_str(&format!("\tcode_{j}"));
        }
        s.push('\n');
        for (c, name) in self.classes.iter().enumerate() {
            for k in 0..self.codebooks {
                s.push_str(&format!("{name}\t{k}"));
                for v in self.row(c, k) {
                    s.push_str(&format!("\t{v}"));
                }
                s.push('\n');
            }
        }
        s
    }
}

/// `class_names` defaults to the class indices when empty.
pub fn export_attention(model: &ReconstructionModel, class_names: &[String]) -> Result<AttentionExport> {
    if model.mode() != ConditioningMode::Cgce {
        return Err(Error::Argument(format!("attention export on a {} model", model.mode())));
    }
    let n = model.num_classes();
    if !class_names.is_empty() && class_names.len() != n {
        return Err(Error::Argument(format!("{} class names for {n} classes", class_names.len())));
    }
    let classes = if class_names.is_empty() { (0..n).map(|c| c.to_string()).collect() } else { class_names.to_vec() };
    let mut weights = Vec::new();
    for c in 0..n {
        weights.extend(model.attention(c)?);
    }
    Ok(AttentionExport {
        classes,
        codebooks: model.config.conditioning.codebooks,
        codes: model.config.conditioning.codes,
        weights,
    })
}

//! Multi-class datasets: generation, train/test split, persistence and
//! few-shot episodes.
//!
//! On disk a dataset is a directory holding
//!
//! ```text
//! manifest.toml            configuration and one row per instance
//! voxels/<instance>.binvox
//! views/<instance>.views
//! ```
//!
//! A `.views` file is little-endian: the 8-byte magic `FS3DVIEW`, then
//! `u32` version (1), view count, height, width and dtype code (1 = f32),
//! then one `(f64 azimuth, f64 elevation)` pair per view, then the images
//! as row-major `f32` arrays.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::families::ShapeFamily;
use super::render::{render_views_in, RenderedView, DEFAULT_ELEVATION};
use crate::binvox::{self, BinvoxMeta};
use crate::error::{Error, Result};
use crate::seeds;
use crate::voxel::VoxelGrid;

pub const MANIFEST_FILE: &str = "manifest.toml";
const VIEWS_MAGIC: &[u8; 8] = b"FS3DVIEW";
const VIEWS_VERSION: u32 = 1;
const DTYPE_F32: u32 = 1;

/// One shape category: either a procedural family or a directory of binvox files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeClassSpec {
    pub class_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<ShapeFamily>,
    /// Overrides of the family's default parameter ranges, in voxels.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub ranges: BTreeMap<String, [f64; 2]>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub binvox_dir: Option<PathBuf>,
}

impl ShapeClassSpec {
    pub fn procedural(family: ShapeFamily) -> Self {
        ShapeClassSpec {
            class_id: family.name().to_string(),
            family: Some(family),
            ranges: BTreeMap::new(),
            seed: 0,
            binvox_dir: None,
        }
    }

    pub fn from_binvox_dir(class_id: impl Into<String>, dir: impl Into<PathBuf>) -> Self {
        ShapeClassSpec {
            class_id: class_id.into(),
            family: None,
            ranges: BTreeMap::new(),
            seed: 0,
            binvox_dir: Some(dir.into()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub resolution: usize,
    pub image_size: usize,
    pub n_views: usize,
    pub n_per_class: usize,
    /// Elevation range for sampled cameras, in degrees.
    pub elevation: [f64; 2],
    pub seed: u64,
    pub base: Vec<ShapeClassSpec>,
    pub novel: Vec<ShapeClassSpec>,
}

impl Default for DatasetConfig {
    /// Four base and three novel procedural classes at 16³ with 32×32 views.
    fn default() -> Self {
        use ShapeFamily::*;
        DatasetConfig {
            resolution: 16,
            image_size: 32,
            n_views: 24,
            n_per_class: 40,
            elevation: DEFAULT_ELEVATION,
            seed: 7,
            base: [BoxTable, WingedSlab, CylinderStack, SphereBlob]
                .map(ShapeClassSpec::procedural)
                .to_vec(),
            novel: [Bench, LBracket, Ring].map(ShapeClassSpec::procedural).to_vec(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub instance_id: String,
    pub class_id: String,
    pub split: Split,
    pub view_seed: u64,
    /// Source file name for instances ingested from binvox.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub config: DatasetConfig,
    pub instances: Vec<InstanceRecord>,
}

impl DatasetManifest {
    pub fn base_classes(&self) -> Vec<&str> {
        self.config.base.iter().map(|c| c.class_id.as_str()).collect()
    }

    pub fn novel_classes(&self) -> Vec<&str> {
        self.config.novel.iter().map(|c| c.class_id.as_str()).collect()
    }

    /// Base classes first, then novel classes; positions are class indices.
    pub fn class_ids(&self) -> Vec<&str> {
        let mut v = self.base_classes();
        v.extend(self.novel_classes());
        v
    }

    pub fn num_base(&self) -> usize {
        self.config.base.len()
    }

    pub fn num_classes(&self) -> usize {
        self.config.base.len() + self.config.novel.len()
    }

    pub fn class_index(&self, class_id: &str) -> Option<usize> {
        self.class_ids().iter().position(|c| *c == class_id)
    }

    /// Resolves a class id or a `novel_<i>` alias to a class index.
    pub fn resolve_class(&self, name: &str) -> Result<usize> {
        if let Some(i) = self.class_index(name) {
            return Ok(i);
        }
        if let Some(k) = name.strip_prefix("novel_").and_then(|s| s.parse::<usize>().ok()) {
            if k < self.config.novel.len() {
                return Ok(self.num_base() + k);
            }
        }
        Err(Error::Argument(format!(
            "unknown class `{name}` (known: {})",
            self.class_ids().join(", ")
        )))
    }

    pub fn is_novel(&self, class_index: usize) -> bool {
        class_index >= self.num_base() && class_index < self.num_classes()
    }

    /// Indices of a class's instances in the given split, in manifest order.
    pub fn split_indices(&self, class_id: &str, split: Split) -> Vec<usize> {
        self.instances
            .iter()
            .enumerate()
            .filter(|(_, r)| r.class_id == class_id && r.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("serializing manifest: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("parsing manifest: {e}")))
    }
}

#[derive(Clone, Debug)]
pub struct ShapeInstance {
    pub instance_id: String,
    pub class_id: String,
    pub class_index: usize,
    pub split: Split,
    pub grid: VoxelGrid,
    pub views: Vec<RenderedView>,
}

/// A manifest together with its instances, aligned by position.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub instances: Vec<ShapeInstance>,
}

impl Dataset {
    pub fn resolution(&self) -> usize {
        self.manifest.config.resolution
    }

    pub fn image_size(&self) -> usize {
        self.manifest.config.image_size
    }

    /// Instances of one class index in one split.
    pub fn select(&self, class_index: usize, split: Split) -> Vec<usize> {
        self.instances
            .iter()
            .enumerate()
            .filter(|(_, s)| s.class_index == class_index && s.split == split)
            .map(|(i, _)| i)
            .collect()
    }
}

fn validate(cfg: &DatasetConfig) -> Result<()> {
    if cfg.base.is_empty() {
        return Err(Error::Config("at least one base class is required".into()));
    }
    if cfg.n_per_class < 2 {
        return Err(Error::Argument(format!(
            "n_per_class = {} cannot be split into train and test",
            cfg.n_per_class
        )));
    }
    if cfg.resolution < 2 || cfg.image_size == 0 || cfg.n_views == 0 {
        return Err(Error::Config(
            "resolution must be ≥ 2 and image size and view count positive".into(),
        ));
    }
    let mut seen = BTreeSet::new();
    for spec in cfg.base.iter().chain(&cfg.novel) {
        if !seen.insert(spec.class_id.as_str()) {
            return Err(Error::Config(format!("duplicate class id `{}`", spec.class_id)));
        }
        if spec.class_id.starts_with("novel_") {
            return Err(Error::Config(format!(
                "class id `{}` collides with the novel_<i> alias",
                spec.class_id
            )));
        }
        if spec.family.is_some() == spec.binvox_dir.is_some() {
            return Err(Error::Config(format!(
                "class `{}` needs exactly one of `family` and `binvox_dir`",
                spec.class_id
            )));
        }
    }
    Ok(())
}

fn load_binvox_dir(dir: &Path, resolution: usize, limit: usize) -> Result<Vec<(VoxelGrid, String)>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut files = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir.display().to_string(), e))?;
        let path = entry.path();
        if path.extension().is_some_and(|x| x == "binvox") {
            files.push(path);
        }
    }
    files.sort();
    files.truncate(limit);
    let mut out = Vec::with_capacity(files.len());
    for path in files {
        let (grid, _) = binvox::read_file(&path)?;
        if grid.resolution() != resolution {
            return Err(Error::Dimension(format!(
                "{} has resolution {}, dataset uses {resolution}",
                path.display(),
                grid.resolution()
            )));
        }
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        out.push((grid, name));
    }
    if out.len() < 2 {
        return Err(Error::Data(format!(
            "{} holds {} binvox files; at least 2 are needed",
            dir.display(),
            out.len()
        )));
    }
    Ok(out)
}

/// Number of training instances for a class of `n` instances (80:20).
pub fn train_count(n: usize) -> usize {
    ((0.8 * n as f64).round() as usize).clamp(1, n.saturating_sub(1).max(1))
}

/// Generates (or ingests), renders and splits every class.
pub fn build_dataset(cfg: &DatasetConfig) -> Result<Dataset> {
    validate(cfg)?;
    let mut records = Vec::new();
    let mut instances = Vec::new();
    for (ci, spec) in cfg.base.iter().chain(&cfg.novel).enumerate() {
        let ctag = seeds::tag(&spec.class_id);
        let shapes: Vec<(VoxelGrid, Option<String>)> = match (&spec.binvox_dir, spec.family) {
            (Some(dir), _) => load_binvox_dir(dir, cfg.resolution, cfg.n_per_class)?
                .into_iter()
                .map(|(g, n)| (g, Some(n)))
                .collect(),
            (None, Some(family)) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(cfg.seed, &[ctag, spec.seed, 0]));
                (0..cfg.n_per_class)
                    .map(|_| family.sample(cfg.resolution, &spec.ranges, &mut rng).map(|g| (g, None)))
                    .collect::<Result<_>>()?
            }
            (None, None) => unreachable!("validated"),
        };
        let n = shapes.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seeds::derive(cfg.seed, &[ctag, 1])));
        let mut split = vec![Split::Test; n];
        for &i in &order[..train_count(n)] {
            split[i] = Split::Train;
        }
        for (i, (grid, source)) in shapes.into_iter().enumerate() {
            let view_seed = seeds::derive(cfg.seed, &[ctag, 2, i as u64]);
            let views = render_views_in(&grid, cfg.n_views, cfg.image_size, cfg.elevation, view_seed)?;
            let instance_id = format!("{}_{i:04}", spec.class_id);
            records.push(InstanceRecord {
                instance_id: instance_id.clone(),
                class_id: spec.class_id.clone(),
                split: split[i],
                view_seed,
                source,
            });
            instances.push(ShapeInstance {
                instance_id,
                class_id: spec.class_id.clone(),
                class_index: ci,
                split: split[i],
                grid,
                views,
            });
        }
    }
    log::info!(
        "built {} instances over {} classes",
        instances.len(),
        cfg.base.len() + cfg.novel.len()
    );
    Ok(Dataset {
        manifest: DatasetManifest {
            config: cfg.clone(),
            instances: records,
        },
        instances,
    })
}

pub fn encode_views(views: &[RenderedView]) -> Result<Vec<u8>> {
    let size = views.first().map_or(0, |v| v.size);
    if views.iter().any(|v| v.size != size || v.image.len() != size * size) {
        return Err(Error::Dimension("views differ in size".into()));
    }
    let mut out = Vec::with_capacity(28 + views.len() * (16 + 4 * size * size));
    out.extend_from_slice(VIEWS_MAGIC);
    for v in [VIEWS_VERSION, views.len() as u32, size as u32, size as u32, DTYPE_F32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in views {
        out.extend_from_slice(&v.azimuth.to_le_bytes());
        out.extend_from_slice(&v.elevation.to_le_bytes());
    }
    for v in views {
        for p in &v.image {
            out.extend_from_slice(&p.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_views(bytes: &[u8]) -> Result<Vec<RenderedView>> {
    if bytes.len() < 28 || &bytes[..8] != VIEWS_MAGIC {
        return Err(Error::format(0, "missing FS3DVIEW header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize;
    let (version, n, h, w, dtype) = (word(0), word(1), word(2), word(3), word(4));
    if version != VIEWS_VERSION as usize {
        return Err(Error::format(8, format!("unsupported views version {version}")));
    }
    if dtype != DTYPE_F32 as usize {
        return Err(Error::format(24, format!("unsupported dtype code {dtype}")));
    }
    if h != w {
        return Err(Error::format(16, format!("non-square views {h}×{w}")));
    }
    let expected = 28 + n * 16 + n * h * w * 4;
    if bytes.len() != expected {
        return Err(Error::format(
            bytes.len().min(expected),
            format!("expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let data = 28 + n * 16;
    Ok((0..n)
        .map(|k| {
            let start = data + k * h * w * 4;
            RenderedView {
                size: h,
                image: bytes[start..start + h * w * 4]
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
                azimuth: f64_at(28 + 16 * k),
                elevation: f64_at(36 + 16 * k),
            }
        })
        .collect())
}

fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(path.display().to_string(), e)
}

pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    let (vox, views) = (dir.join("voxels"), dir.join("views"));
    fs::create_dir_all(&vox).map_err(io_at(&vox))?;
    fs::create_dir_all(&views).map_err(io_at(&views))?;
    let meta = BinvoxMeta::for_resolution(dataset.resolution());
    for inst in &dataset.instances {
        binvox::write_file(&vox.join(format!("{}.binvox", inst.instance_id)), &inst.grid, &meta)?;
        let p = views.join(format!("{}.views", inst.instance_id));
        fs::write(&p, encode_views(&inst.views)?).map_err(io_at(&p))?;
    }
    let p = dir.join(MANIFEST_FILE);
    fs::write(&p, dataset.manifest.to_toml()?).map_err(io_at(&p))
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let p = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&p).map_err(io_at(&p))?;
    let manifest = DatasetManifest::from_toml(&text)?;
    let mut instances = Vec::with_capacity(manifest.instances.len());
    for r in &manifest.instances {
        let class_index = manifest
            .class_index(&r.class_id)
            .ok_or_else(|| Error::Data(format!("instance {} has unknown class", r.instance_id)))?;
        let (grid, _) = binvox::read_file(&dir.join("voxels").join(format!("{}.binvox", r.instance_id)))?;
        if grid.resolution() != manifest.config.resolution {
            return Err(Error::Data(format!("{}: resolution mismatch", r.instance_id)));
        }
        let vp = dir.join("views").join(format!("{}.views", r.instance_id));
        let views = decode_views(&fs::read(&vp).map_err(io_at(&vp))?)?;
        if views.len() != manifest.config.n_views
            || views.iter().any(|v| v.size != manifest.config.image_size)
        {
            return Err(Error::Data(format!("{}: view count or size mismatch", r.instance_id)));
        }
        instances.push(ShapeInstance {
            instance_id: r.instance_id.clone(),
            class_id: r.class_id.clone(),
            class_index,
            split: r.split,
            grid,
            views,
        });
    }
    Ok(Dataset { manifest, instances })
}

/// Few-shot episode request.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub shots: usize,
    pub novel_classes: Vec<String>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeClass {
    pub class_id: String,
    pub class_index: usize,
    /// Instance indices drawn from the training split.
    pub support: Vec<usize>,
    /// The full test split of the class.
    pub queries: Vec<usize>,
}

/// Training instances of a class in the seeded order supports are drawn in.
/// A `K`-shot support is the first `K` entries, so supports nest across `K`.
pub fn support_order(manifest: &DatasetManifest, class_id: &str, seed: u64) -> Vec<usize> {
    let mut train = manifest.split_indices(class_id, Split::Train);
    train.shuffle(&mut ChaCha8Rng::seed_from_u64(seeds::derive(
        seed,
        &[seeds::tag(class_id), 3],
    )));
    train
}

pub fn sample_support(manifest: &DatasetManifest, episode: &EpisodeSpec) -> Result<Vec<EpisodeClass>> {
    if episode.shots == 0 {
        return Err(Error::Argument("shots must be at least 1".into()));
    }
    episode
        .novel_classes
        .iter()
        .map(|name| {
            let class_index = manifest.resolve_class(name)?;
            if !manifest.is_novel(class_index) {
                return Err(Error::Argument(format!("`{name}` is not a novel class")));
            }
            let class_id = manifest.class_ids()[class_index].to_string();
            let order = support_order(manifest, &class_id, episode.seed);
            if episode.shots > order.len() {
                return Err(Error::Argument(format!(
                    "{} shots requested but `{class_id}` has {} training instances",
                    episode.shots,
                    order.len()
                )));
            }
            Ok(EpisodeClass {
                support: order[..episode.shots].to_vec(),
                queries: manifest.split_indices(&class_id, Split::Test),
                class_id,
                class_index,
            })
        })
        .collect()
}

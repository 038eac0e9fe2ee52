//! Retrieval and reference baselines: the oracle nearest neighbour over a
//! shape database, class proximity scores, and the average-shape prior.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binvox;
use crate::error::{Error, Result};
use crate::model::ReconstructionModel;
use crate::shapegen::{support_order, Dataset, Split};
use crate::voxel::{iou, ProbGrid, VoxelGrid};

#[derive(Clone, Debug, PartialEq)]
pub struct DbEntry {
    pub instance_id: String,
    pub class_id: String,
    pub grid: VoxelGrid,
}

/// Per-class cap on database entries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ShotLimit {
    PerClass(usize),
    Full,
}

impl fmt::Display for ShotLimit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ShotLimit::PerClass(k) => write!(f, "{k}"),
            ShotLimit::Full => f.write_str("full"),
        }
    }
}

impl FromStr for ShotLimit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "full" {
            return Ok(ShotLimit::Full);
        }
        match s.parse::<usize>() {
            Ok(k) if k > 0 => Ok(ShotLimit::PerClass(k)),
            _ => Err(Error::Argument(format!("shot limit must be a positive integer or `full`, got `{s}`"))),
        }
    }
}

/// A labelled shape collection. Entries of a class keep their insertion
/// order, and a shot limit of `k` takes the first `k` of them, so limited
/// views are nested in `k`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ShapeDatabase {
    entries: Vec<DbEntry>,
}

impl ShapeDatabase {
    pub fn new(entries: Vec<DbEntry>) -> Result<Self> {
        if let Some(e) = entries.windows(2).find(|w| w[0].grid.resolution() != w[1].grid.resolution()) {
            return Err(Error::Dimension(format!("database mixes resolutions at `{}`", e[1].instance_id)));
        }
        Ok(ShapeDatabase { entries })
    }

    /// Training shapes of the given classes, each class in its seeded
    /// support order so shot limits share prefixes with adaptation supports.
    pub fn from_dataset(dataset: &Dataset, classes: &[usize], seed: u64) -> Result<Self> {
        let ids = dataset.manifest.class_ids();
        let mut entries = Vec::new();
        for &c in classes {
            let class_id = ids.get(c).ok_or_else(|| Error::Index(format!("class index {c}")))?;
            for i in support_order(&dataset.manifest, class_id, seed) {
                let inst = &dataset.instances[i];
                entries.push(DbEntry {
                    instance_id: inst.instance_id.clone(),
                    class_id: inst.class_id.clone(),
                    grid: inst.grid.clone(),
                });
            }
        }
        ShapeDatabase::new(entries)
    }

    /// Reads `<dir>/<class>/*.binvox`, classes and files in name order.
    /// Loose files directly under `dir` belong to a class named after `dir`.
    pub fn from_binvox_dir(dir: &Path) -> Result<Self> {
        let listing = |d: &Path| -> Result<Vec<std::path::PathBuf>> {
            let mut v: Vec<_> = std::fs::read_dir(d)
                .map_err(|e| Error::io(d.display().to_string(), e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .collect();
            v.sort();
            Ok(v)
        };
        let stem = |p: &Path| p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let is_binvox = |p: &Path| p.extension().is_some_and(|e| e == "binvox");
        let mut entries = Vec::new();
        let mut load = |class_id: String, files: Vec<std::path::PathBuf>| -> Result<()> {
            for f in files.into_iter().filter(|f| is_binvox(f)) {
                let (grid, _) = binvox::read_file(&f)?;
                entries.push(DbEntry { instance_id: stem(&f), class_id: class_id.clone(), grid });
            }
            Ok(())
        };
        let top = listing(dir)?;
        load(stem(dir), top.iter().filter(|p| p.is_file()).cloned().collect())?;
        for sub in top.iter().filter(|p| p.is_dir()) {
            load(stem(sub), listing(sub)?)?;
        }
        ShapeDatabase::new(entries)
    }

    pub fn entries(&self) -> &[DbEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn limited(&self, limit: ShotLimit) -> Vec<&DbEntry> {
        let cap = match limit {
            ShotLimit::Full => return self.entries.iter().collect(),
            ShotLimit::PerClass(k) => k,
        };
        let mut seen: Vec<(&str, usize)> = Vec::new();
        self.entries
            .iter()
            .filter(|e| match seen.iter_mut().find(|(c, _)| *c == e.class_id) {
                Some((_, n)) => {
                    *n += 1;
                    *n <= cap
                }
                None => {
                    seen.push((&e.class_id, 1));
                    true
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NnMatch {
    pub instance_id: String,
    pub class_id: String,
    pub iou: f64,
}

/// Exhaustive best-IoU search using the ground-truth query shape. Ties go
/// to the lowest instance id.
pub fn oracle_nn(query: &VoxelGrid, db: &ShapeDatabase, limit: ShotLimit) -> Result<NnMatch> {
    let mut best: Option<(&DbEntry, f64)> = None;
    for e in db.limited(limit) {
        let s = iou(query, &e.grid)?;
        let better = match best {
            None => true,
            Some((b, bs)) => s > bs || (s == bs && e.instance_id < b.instance_id),
        };
        if better {
            best = Some((e, s));
        }
    }
    let (e, s) = best.ok_or_else(|| Error::Data("oracle nearest neighbour over an empty database".into()))?;
    Ok(NnMatch { instance_id: e.instance_id.clone(), class_id: e.class_id.clone(), iou: s })
}

/// Mean oracle IoU per query class (rows) and shot limit (columns).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OnnTable {
    pub limits: Vec<String>,
    pub rows: Vec<(String, Vec<f64>)>,
}

impl OnnTable {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("class");
        for l in &self.limits {
            s.push_str(&format!("\tonn_{l}"));
        }
        s.push('\n');
        for (c, v) in &self.rows {
            s.push_str(c);
            for x in v {
                s.push_str(&format!("\t{x:.2}"));
            }
            s.push('\n');
        }
        s
    }
}

pub fn onn_table(queries: &[(String, Vec<&VoxelGrid>)], db: &ShapeDatabase, limits: &[ShotLimit]) -> Result<OnnTable> {
    let mut rows = Vec::with_capacity(queries.len());
    for (class, grids) in queries {
        if grids.is_empty() {
            return Err(Error::Data(format!("class `{class}` has no query shapes")));
        }
        let mut v = Vec::with_capacity(limits.len());
        for &l in limits {
            let mut sum = 0.0;
            for g in grids {
                sum += oracle_nn(g, db, l)?.iou;
            }
            v.push(sum / grids.len() as f64);
        }
        rows.push((class.clone(), v));
    }
    Ok(OnnTable { limits: limits.iter().map(|l| l.to_string()).collect(), rows })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProximityTable {
    /// Mean best IoU of each class's shapes against every base shape.
    pub scores: Vec<(String, f64)>,
    pub base_classes: Vec<String>,
    /// `matrix[i][j]`: the same score restricted to base class `j`.
    pub matrix: Vec<Vec<f64>>,
}

impl ProximityTable {
    pub fn score(&self, class: &str) -> Option<f64> {
        self.scores.iter().find(|(c, _)| c == class).map(|(_, s)| *s)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("class\tproximity");
        for b in &self.base_classes {
            s.push_str(&format!("\t{b}"));
        }
        s.push('\n');
        for ((c, p), row) in self.scores.iter().zip(&self.matrix) {
            s.push_str(&format!("{c}\t{p:.4}"));
            for v in row {
                s.push_str(&format!("\t{v:.4}"));
            }
            s.push('\n');
        }
        s
    }
}

pub type ClassShapes<'a> = (String, Vec<&'a VoxelGrid>);

pub fn class_proximity(classes: &[ClassShapes], base: &[ClassShapes]) -> Result<ProximityTable> {
    if classes.is_empty() || base.is_empty() {
        return Err(Error::Data("proximity needs query and base shapes".into()));
    }
    if let Some((c, _)) = classes.iter().chain(base).find(|(_, g)| g.is_empty()) {
        return Err(Error::Data(format!("class `{c}` has no shapes")));
    }
    let mut scores = Vec::with_capacity(classes.len());
    let mut matrix = Vec::with_capacity(classes.len());
    for (c, grids) in classes {
        let mut row = vec![0.0; base.len()];
        let mut overall = 0.0;
        for g in grids {
            let mut best_all = 0.0f64;
            for (j, (_, bg)) in base.iter().enumerate() {
                let mut best = 0.0f64;
                for b in bg {
                    best = best.max(iou(g, b)?);
                }
                row[j] += best;
                best_all = best_all.max(best);
            }
            overall += best_all;
        }
        let n = grids.len() as f64;
        row.iter_mut().for_each(|v| *v /= n);
        scores.push((c.clone(), overall / n));
        matrix.push(row);
    }
    Ok(ProximityTable { scores, base_classes: base.iter().map(|(c, _)| c.clone()).collect(), matrix })
}

/// Shapes of `classes` in a split, grouped per class id.
pub fn class_shapes<'a>(dataset: &'a Dataset, classes: &[usize], split: Split) -> Vec<ClassShapes<'a>> {
    let ids = dataset.manifest.class_ids();
    classes
        .iter()
        .map(|&c| {
            let grids = dataset.select(c, split).into_iter().map(|i| &dataset.instances[i].grid).collect();
            (ids[c].to_string(), grids)
        })
        .collect()
}

/// How the average-prior baseline builds its prior from a class's shapes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorSource {
    #[default]
    Mean,
    /// One shape picked uniformly at random with the given seed.
    RandomShape(u64),
}

pub fn prior_grid(shapes: &[&VoxelGrid], source: PriorSource) -> Result<ProbGrid> {
    if shapes.is_empty() {
        return Err(Error::Data("shape prior of an empty set".into()));
    }
    match source {
        PriorSource::Mean => ProbGrid::mean_of(shapes),
        PriorSource::RandomShape(seed) => {
            let i = ChaCha8Rng::seed_from_u64(seed).random_range(0..shapes.len());
            ProbGrid::mean_of(&shapes[i..=i])
        }
    }
}

/// `e_S` of the average-shape baseline: the shape encoder applied to the
/// class prior.
pub fn avg_prior_embedding(model: &ReconstructionModel, shapes: &[&VoxelGrid], source: PriorSource) -> Result<Vec<f64>> {
    model.prior_embedding(&prior_grid(shapes, source)?)
}

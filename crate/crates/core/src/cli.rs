//! Command-line pipeline: `gen-data`, `train-base`, `adapt`, `eval`,
//! `oracle`, `proximity`, `ablate` and `report`.
//!
//! Exit status is 0 on success, 1 on a runtime or data error and 2 on a
//! usage error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::baselines::{class_proximity, class_shapes, onn_table, OnnTable, ProximityTable, ShapeDatabase, ShotLimit};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::eval::{
    ablate_random_class, emit_report, evaluate, export_attention, format_iou_table, parse_iou_table, registered_classes,
    remove_codebook, seeded_view, AblationRecord, AttentionExport, CodeTarget, EvalReport, ReportBundle,
};
use crate::fewshot::{adapt_novel, train_base, TrainMode};
use crate::model::{load_checkpoint, save_checkpoint, ConditioningMode, ReconstructionModel};
use crate::shapegen::{build_dataset, load_dataset, save_dataset, support_order, Dataset, ShapeInstance, Split};
use crate::voxel::{binarize, iou};

#[derive(Parser, Debug)]
#[command(name = "shapeprior", version, about = "Few-shot single-view voxel reconstruction with class priors")]
struct Cli {
    /// Experiment config file (TOML); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_parser = parse_mode)]
    mode: Option<TrainMode>,
    /// Comma-separated shot counts, e.g. `1,5,25`.
    #[arg(long, global = true, value_delimiter = ',')]
    shots: Option<Vec<usize>>,
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    #[arg(long, global = true)]
    checkpoints: Option<PathBuf>,
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Overwrite existing checkpoints.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate and save the synthetic dataset.
    GenData,
    /// Train a base model in the selected mode.
    TrainBase,
    /// Adapt novel classes for every shot count.
    Adapt {
        /// Classes to adapt by id or `novel_<i>`; all novel classes when omitted.
        #[arg(long = "class", value_delimiter = ',')]
        classes: Vec<String>,
    },
    /// Per-class IoU on the test split.
    Eval {
        /// Evaluate this checkpoint instead of the ones implied by mode and shots.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum)]
        classes: Option<ClassSet>,
    },
    /// Oracle nearest-neighbor IoU over nested shot limits.
    Oracle {
        /// Shot limits such as `1,5,full`; the shot list plus `full` by default.
        #[arg(long, value_delimiter = ',')]
        limits: Vec<ShotLimit>,
    },
    /// Class proximity of every class to the base classes.
    Proximity,
    /// Random-class ablation, plus codebook removal and attention export for CGCE.
    Ablate,
    /// Collect everything under the experiment directory into tables and plots.
    Report,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ClassSet {
    Base,
    Novel,
    All,
}

fn parse_mode(s: &str) -> std::result::Result<TrainMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Runs the CLI on `args` (program name first) and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

struct Ctx {
    cfg: ExperimentConfig,
    hash: String,
    exp: PathBuf,
    ck: PathBuf,
    force: bool,
}

impl Ctx {
    fn dataset(&self) -> Result<Dataset> {
        let dir = &self.cfg.paths.data;
        if !dir.join(crate::shapegen::MANIFEST_FILE).exists() {
            return Err(Error::Data(format!("no dataset at {}; run gen-data first", dir.display())));
        }
        load_dataset(dir)
    }

    fn base_path(&self, mode: TrainMode) -> PathBuf {
        self.ck.join(format!("{}.ckpt", mode.name()))
    }

    fn adapted_path(&self, mode: TrainMode, k: usize) -> PathBuf {
        self.ck.join(format!("{}_k{k}.ckpt", mode.name()))
    }

    fn save_model(&self, model: &ReconstructionModel, path: &Path) -> Result<()> {
        if path.exists() && !self.force {
            return Err(Error::Argument(format!("{} exists; pass --force to overwrite", path.display())));
        }
        mkdir(&self.ck)?;
        save_checkpoint(model, path)?;
        println!("wrote {}", path.display());
        Ok(())
    }

    fn echo(&self, command: &str) -> Result<()> {
        let dir = self.exp.join("resolved");
        mkdir(&dir)?;
        let text = format!("# config_hash = \"{}\"\n{}", self.hash, self.cfg.to_toml()?);
        write(&dir.join(format!("{command}.toml")), &text)
    }
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(p) = path.parent() {
        mkdir(p)?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}

fn save_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write(path, &toml::to_string(value).map_err(|e| Error::Config(e.to_string()))?)
}

fn load_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    toml::from_str(&read(path)?).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<ReconstructionModel> {
    if !path.exists() {
        return Err(Error::Data(format!("checkpoint not found: {}", path.display())));
    }
    load_checkpoint(path)
}

#[derive(Serialize, Deserialize)]
struct Ablations {
    records: Vec<AblationRecord>,
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(m) = cli.mode {
        cfg.mode = m;
    }
    if let Some(s) = cli.shots {
        cfg.shots = s;
    }
    if let Some(p) = cli.data {
        cfg.paths.data = p;
    }
    if let Some(p) = cli.checkpoints {
        cfg.paths.checkpoints = p;
    }
    if let Some(p) = cli.output {
        cfg.paths.output = p;
    }
    cfg.validate()?;
    let ctx = Ctx { hash: cfg.hash()?, exp: cfg.experiment_dir()?, ck: cfg.checkpoint_dir()?, force: cli.force, cfg };
    let name = match &cli.command {
        Command::GenData => "gen-data",
        Command::TrainBase => "train-base",
        Command::Adapt { .. } => "adapt",
        Command::Eval { .. } => "eval",
        Command::Oracle { .. } => "oracle",
        Command::Proximity => "proximity",
        Command::Ablate => "ablate",
        Command::Report => "report",
    };
    ctx.echo(name)?;
    match cli.command {
        Command::GenData => gen_data(&ctx),
        Command::TrainBase => train(&ctx),
        Command::Adapt { classes } => adapt(&ctx, &classes),
        Command::Eval { checkpoint, classes } => eval(&ctx, checkpoint.as_deref(), classes),
        Command::Oracle { limits } => oracle(&ctx, limits),
        Command::Proximity => proximity(&ctx),
        Command::Ablate => ablate(&ctx),
        Command::Report => report(&ctx),
    }
}

fn gen_data(ctx: &Ctx) -> Result<()> {
    let ds = build_dataset(&ctx.cfg.dataset_config())?;
    save_dataset(&ds, &ctx.cfg.paths.data)?;
    println!("wrote {} shapes in {} classes to {}", ds.instances.len(), ds.manifest.num_classes(), ctx.cfg.paths.data.display());
    Ok(())
}

fn train(ctx: &Ctx) -> Result<()> {
    let ds = ctx.dataset()?;
    let mode = ctx.cfg.mode;
    let path = ctx.base_path(mode);
    if path.exists() && !ctx.force {
        return Err(Error::Argument(format!("{} exists; pass --force to overwrite", path.display())));
    }
    let (model, log) = train_base(&ds, &ctx.cfg.model_config(), &ctx.cfg.train_config(mode))?;
    write(&ctx.exp.join("logs").join(format!("train_{}.tsv", mode.name())), &log.to_tsv())?;
    if let Some(last) = log.epochs.last() {
        println!("{mode}: {} epochs, final loss {:.4}", log.epochs.len(), last.mean_loss);
    }
    ctx.save_model(&model, &path)
}

fn support(ds: &Dataset, class: usize, k: usize, seed: u64) -> Result<Vec<&ShapeInstance>> {
    let id = ds.manifest.class_ids()[class];
    let order = support_order(&ds.manifest, id, seed);
    if order.len() < k {
        return Err(Error::Data(format!("class `{id}` has {} training shapes, {k} requested", order.len())));
    }
    Ok(order[..k].iter().map(|&i| &ds.instances[i]).collect())
}

fn adapt(ctx: &Ctx, names: &[String]) -> Result<()> {
    let ds = ctx.dataset()?;
    let mode = ctx.cfg.mode;
    let base = load_model(&ctx.base_path(mode))?;
    let classes: Vec<usize> = if names.is_empty() {
        (ds.manifest.num_base()..ds.manifest.num_classes()).collect()
    } else {
        names.iter().map(|n| ds.manifest.resolve_class(n)).collect::<Result<_>>()?
    };
    let acfg = ctx.cfg.adapt_config();
    for &k in &ctx.cfg.shots {
        let out = ctx.adapted_path(mode, k);
        if out.exists() && !ctx.force {
            return Err(Error::Argument(format!("{} exists; pass --force to overwrite", out.display())));
        }
        let mut model = base.clone();
        for &c in &classes {
            let sup = support(&ds, c, k, ctx.cfg.seed)?;
            let before = model.frozen_hash(Some(c));
            let log = adapt_novel(&mut model, &sup, c, &acfg)?;
            if model.frozen_hash(Some(c)) != before {
                return Err(Error::Numeric(format!("adapting class {c} touched frozen parameters")));
            }
            let id = ds.manifest.class_ids()[c];
            write(&ctx.exp.join("logs").join(format!("adapt_{}_k{k}_{id}.tsv", mode.name())), &log.to_tsv())?;
            println!("{mode}@{k} {id}: loss {:.4} -> {:.4} over {} iterations; frozen-hash audit passed", log.initial_loss, log.final_loss, log.losses.len());
        }
        ctx.save_model(&model, &out)?;
    }
    Ok(())
}

fn class_set(ds: &Dataset, set: ClassSet) -> Vec<usize> {
    let nb = ds.manifest.num_base();
    match set {
        ClassSet::Base => (0..nb).collect(),
        ClassSet::Novel => (nb..ds.manifest.num_classes()).collect(),
        ClassSet::All => (0..ds.manifest.num_classes()).collect(),
    }
}

/// Classes a checkpoint can be fairly scored on when none are requested.
fn default_classes(ds: &Dataset, model: &ReconstructionModel, adapted: bool) -> Vec<usize> {
    match model.mode() {
        ConditioningMode::Zero => class_set(ds, ClassSet::All),
        ConditioningMode::AvgPrior => registered_classes(model),
        _ if adapted => class_set(ds, ClassSet::All),
        _ => class_set(ds, ClassSet::Base),
    }
}

fn eval_file(label: &str) -> String {
    format!("{}.tsv", label.replace('@', "_k"))
}

fn eval(ctx: &Ctx, checkpoint: Option<&Path>, classes: Option<ClassSet>) -> Result<()> {
    let mode = ctx.cfg.mode;
    let mut jobs: Vec<(PathBuf, String, Option<usize>)> = Vec::new();
    if let Some(p) = checkpoint {
        let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "checkpoint".into());
        jobs.push((p.to_path_buf(), stem, None));
    } else if matches!(mode, TrainMode::Zero | TrainMode::AllShot) || ctx.cfg.shots.is_empty() {
        jobs.push((ctx.base_path(mode), mode.name().to_string(), None));
    } else {
        for &k in &ctx.cfg.shots {
            jobs.push((ctx.adapted_path(mode, k), mode.name().to_string(), Some(k)));
        }
    }
    let models: Vec<ReconstructionModel> = jobs.iter().map(|(p, ..)| load_model(p)).collect::<Result<_>>()?;
    let ds = ctx.dataset()?;
    let ecfg = ctx.cfg.eval_config();
    for ((_, method, shots), model) in jobs.iter().zip(&models) {
        let cls = match classes {
            Some(s) => class_set(&ds, s),
            None => default_classes(&ds, model, shots.is_some()),
        };
        let mut r = evaluate(model, &ds, &cls, &ecfg)?;
        r.method = method.clone();
        r.shots = *shots;
        r.config_hash = ctx.hash.clone();
        let path = ctx.exp.join("eval").join(eval_file(&r.label()));
        write(&path, &format_iou_table(std::slice::from_ref(&r)))?;
        print_report(&r);
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn print_report(r: &EvalReport) {
    println!("{}", r.label());
    for c in &r.classes {
        println!("  {:<16} {}  {:.3}", c.class_id, if c.novel { "novel" } else { "base " }, c.iou);
    }
    if let Some(m) = r.mean_novel_iou() {
        println!("  mean novel IoU {m:.3}");
    }
    if let Some(m) = r.mean_base_iou() {
        println!("  mean base IoU  {m:.3}");
    }
}

fn oracle(ctx: &Ctx, limits: Vec<ShotLimit>) -> Result<()> {
    let ds = ctx.dataset()?;
    let limits = if limits.is_empty() {
        let mut l: Vec<ShotLimit> = ctx.cfg.shots.iter().map(|&k| ShotLimit::PerClass(k)).collect();
        l.push(ShotLimit::Full);
        l
    } else {
        limits
    };
    let novel = class_set(&ds, ClassSet::Novel);
    let db = ShapeDatabase::from_dataset(&ds, &novel, ctx.cfg.seed)?;
    let queries = class_shapes(&ds, &novel, Split::Test);
    let table = onn_table(&queries, &db, &limits)?;
    write(&ctx.exp.join("onn.tsv"), &table.to_tsv())?;
    save_toml(&ctx.exp.join("onn.toml"), &table)?;
    print!("{}", table.to_tsv());
    Ok(())
}

fn proximity(ctx: &Ctx) -> Result<()> {
    let ds = ctx.dataset()?;
    let all = class_shapes(&ds, &class_set(&ds, ClassSet::All), Split::Train);
    let base = class_shapes(&ds, &class_set(&ds, ClassSet::Base), Split::Train);
    let table = class_proximity(&all, &base)?;
    write(&ctx.exp.join("proximity.tsv"), &table.to_tsv())?;
    save_toml(&ctx.exp.join("proximity.toml"), &table)?;
    print!("{}", table.to_tsv());
    Ok(())
}

fn ablate(ctx: &Ctx) -> Result<()> {
    let mode = ctx.cfg.mode;
    let model = load_model(&ctx.base_path(mode))?;
    let ds = ctx.dataset()?;
    let ecfg = ctx.cfg.eval_config();
    let classes = default_classes(&ds, &model, false);
    let mut plain = evaluate(&model, &ds, &classes, &ecfg)?;
    plain.method = mode.name().to_string();
    let mut rand = ablate_random_class(&model, &ds, &classes, &ecfg, ctx.cfg.seed)?;
    rand.method = format!("{}_rand", mode.name());
    rand.config_hash = ctx.hash.clone();
    write(&ctx.exp.join("eval").join(eval_file(&rand.label())), &format_iou_table(std::slice::from_ref(&rand)))?;
    print_report(&rand);
    let mut records: Vec<AblationRecord> = plain
        .classes
        .iter()
        .zip(&rand.classes)
        .map(|(p, r)| AblationRecord { name: rand.method.clone(), class_id: p.class_id.clone(), baseline: p.iou, ablated: r.iou })
        .collect();
    if model.mode() == ConditioningMode::Cgce {
        let names: Vec<String> = ds.manifest.class_ids().iter().map(|s| s.to_string()).collect();
        let att = export_attention(&model, &names)?;
        write(&ctx.exp.join("attention.tsv"), &att.to_tsv())?;
        save_toml(&ctx.exp.join("attention.toml"), &att)?;
        records.extend(codebook_removal(&model, &ds, &classes, &plain, ctx.cfg.eval.threshold, ctx.cfg.seed)?);
    }
    save_toml(&ctx.exp.join(format!("ablations_{}.toml", mode.name())), &Ablations { records })?;
    Ok(())
}

/// Mean test IoU with each codebook removed in turn.
fn codebook_removal(
    model: &ReconstructionModel,
    ds: &Dataset,
    classes: &[usize],
    plain: &EvalReport,
    threshold: f64,
    seed: u64,
) -> Result<Vec<AblationRecord>> {
    let mut out = Vec::new();
    for k in 0..model.config.conditioning.codebooks {
        for (&c, score) in classes.iter().zip(&plain.classes) {
            let test = ds.select(c, Split::Test);
            let mut sum = 0.0;
            for &i in &test {
                let inst = &ds.instances[i];
                let p = remove_codebook(model, &inst.views[seeded_view(inst, seed)].image, c, CodeTarget::Codebook(k))?;
                sum += iou(&binarize(&p, threshold)?, &inst.grid)?;
            }
            out.push(AblationRecord {
                name: format!("remove_codebook_{k}"),
                class_id: score.class_id.clone(),
                baseline: score.iou,
                ablated: sum / test.len().max(1) as f64,
            });
        }
    }
    Ok(out)
}

const METHOD_ORDER: [&str; 6] = ["zero", "gce", "cgce", "mcce", "avg_prior", "all_shot"];

fn method_rank(method: &str) -> (usize, usize) {
    let (stem, rand) = match method.strip_suffix("_rand") {
        Some(s) => (s, 1),
        None => (method, 0),
    };
    (rand, METHOD_ORDER.iter().position(|m| *m == stem).unwrap_or(METHOD_ORDER.len()))
}

fn sorted_files(dir: &Path, pred: impl Fn(&str) -> bool) -> Result<Vec<PathBuf>> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir.display().to_string(), e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(&pred))
        .collect();
    v.sort();
    Ok(v)
}

fn report(ctx: &Ctx) -> Result<()> {
    let mut reports = Vec::new();
    for p in sorted_files(&ctx.exp.join("eval"), |n| n.ends_with(".tsv"))? {
        reports.extend(parse_iou_table(&read(&p)?)?);
    }
    if reports.is_empty() {
        return Err(Error::Data(format!("no evaluation results under {}; run eval first", ctx.exp.display())));
    }
    reports.sort_by(|a, b| (method_rank(&a.method), &a.method, a.shots).cmp(&(method_rank(&b.method), &b.method, b.shots)));
    let opt = |name: &str| {
        let p = ctx.exp.join(name);
        p.exists().then_some(p)
    };
    let onn: Option<OnnTable> = opt("onn.toml").map(|p| load_toml(&p)).transpose()?;
    let proximity: Option<ProximityTable> = opt("proximity.toml").map(|p| load_toml(&p)).transpose()?;
    let attention: Option<AttentionExport> = opt("attention.toml").map(|p| load_toml(&p)).transpose()?;
    let mut ablations = Vec::new();
    for p in sorted_files(&ctx.exp, |n| n.starts_with("ablations_") && n.ends_with(".toml"))? {
        ablations.extend(load_toml::<Ablations>(&p)?.records);
    }
    let reference = reports.iter().any(|r| r.label() == "zero").then(|| "zero".to_string());
    let bundle = ReportBundle { config_hash: ctx.hash.clone(), reports, reference, onn, proximity, ablations, attention };
    let dir = ctx.exp.join("report");
    for p in emit_report(&bundle, &dir)? {
        println!("wrote {}", p.display());
    }
    print!("{}", read(&dir.join("iou.tsv"))?);
    Ok(())
}

//! Evaluate two methods and write the report bundle: tables, summary and
//! SVG plots.
//!
//! cargo run --release --example report [output dir]

use std::path::PathBuf;

use shapeprior::config::ExperimentConfig;
use shapeprior::eval::{emit_report, evaluate, ReportBundle};
use shapeprior::fewshot::{adapt_novel, train_base, TrainMode};
use shapeprior::shapegen::{build_dataset, support_order, ShapeInstance};

fn main() -> shapeprior::Result<()> {
    let out: PathBuf = std::env::args().nth(1).map(Into::into).unwrap_or_else(|| std::env::temp_dir().join("shapeprior_report"));
    let mut cfg = ExperimentConfig::default();
    cfg.dataset.n_per_class = 12;
    cfg.dataset.n_views = 6;
    cfg.train.epochs = 6;
    let ds = build_dataset(&cfg.dataset_config())?;
    let all: Vec<usize> = (0..ds.manifest.num_classes()).collect();
    let hash = cfg.hash()?;

    let mut reports = Vec::new();
    let (zero, _) = train_base(&ds, &cfg.model_config(), &cfg.train_config(TrainMode::Zero))?;
    reports.push(evaluate(&zero, &ds, &all, &cfg.eval_config())?);
    let (base, _) = train_base(&ds, &cfg.model_config(), &cfg.train_config(TrainMode::Gce))?;
    for k in [1, 5] {
        let mut m = base.clone();
        for c in ds.manifest.num_base()..ds.manifest.num_classes() {
            let id = ds.manifest.class_ids()[c];
            let s: Vec<&ShapeInstance> = support_order(&ds.manifest, id, cfg.seed)[..k].iter().map(|&i| &ds.instances[i]).collect();
            adapt_novel(&mut m, &s, c, &cfg.adapt_config())?;
        }
        let mut r = evaluate(&m, &ds, &all, &cfg.eval_config())?;
        r.shots = Some(k);
        reports.push(r);
    }
    for r in &mut reports {
        r.config_hash = hash.clone();
    }
    let bundle = ReportBundle { config_hash: hash, reports, reference: Some("zero".into()), ..ReportBundle::default() };
    for p in emit_report(&bundle, &out)? {
        println!("wrote {}", p.display());
    }
    print!("{}", std::fs::read_to_string(out.join("iou.tsv")).unwrap_or_default());
    Ok(())
}

//! Inspect a CGCE model: sparsemax attention per class, codebook removal,
//! and evaluation with a randomized class.
//!
//! cargo run --release --example codebook_ablations

use shapeprior::config::ExperimentConfig;
use shapeprior::eval::{ablate_random_class, evaluate, export_attention, remove_codebook, CodeTarget};
use shapeprior::fewshot::{train_base, TrainMode};
use shapeprior::shapegen::{build_dataset, Split};

fn main() -> shapeprior::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.dataset.n_per_class = 16;
    cfg.dataset.n_views = 8;
    cfg.train.epochs = 10;
    let ds = build_dataset(&cfg.dataset_config())?;
    let (model, _) = train_base(&ds, &cfg.model_config(), &cfg.train_config(TrainMode::Cgce))?;

    let names: Vec<String> = ds.manifest.class_ids().iter().map(|s| s.to_string()).collect();
    let att = export_attention(&model, &names)?;
    for (c, name) in names.iter().enumerate().take(ds.manifest.num_base()) {
        let zeros = (0..att.codebooks).map(|k| att.row(c, k).iter().filter(|&&w| w == 0.0).count()).sum::<usize>();
        println!("{name:<16} codebook 0 {:.2?}  ({zeros} of {} weights exactly zero)", att.row(c, 0), att.codebooks * att.codes);
    }

    let inst = &ds.instances[ds.select(0, Split::Test)[0]];
    let full = model.forward(&inst.views[0].image, 0)?;
    for k in 0..att.codebooks {
        let cut = remove_codebook(&model, &inst.views[0].image, 0, CodeTarget::Codebook(k))?;
        println!("remove codebook {k}: mean |Δp| {:.4}", full.l1_distance(&cut)? / full.probs().len() as f64);
    }

    let base: Vec<usize> = (0..ds.manifest.num_base()).collect();
    let plain = evaluate(&model, &ds, &base, &cfg.eval_config())?;
    let rand = ablate_random_class(&model, &ds, &base, &cfg.eval_config(), 0)?;
    println!("base IoU {:.3}, with random class {:.3}", plain.mean_iou().unwrap(), rand.mean_iou().unwrap());
    Ok(())
}

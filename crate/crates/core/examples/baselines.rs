//! Oracle nearest neighbor over nested shot limits, class proximity, and
//! the average-shape prior.
//!
//! cargo run --release --example baselines

use shapeprior::baselines::{class_proximity, class_shapes, onn_table, prior_grid, PriorSource, ShapeDatabase, ShotLimit};
use shapeprior::shapegen::{build_dataset, DatasetConfig, Split};
use shapeprior::voxel::{binarize, iou};

fn main() -> shapeprior::Result<()> {
    let ds = build_dataset(&DatasetConfig { n_views: 1, n_per_class: 30, ..DatasetConfig::default() })?;
    let nb = ds.manifest.num_base();
    let novel: Vec<usize> = (nb..ds.manifest.num_classes()).collect();
    let base: Vec<usize> = (0..nb).collect();
    let all: Vec<usize> = (0..ds.manifest.num_classes()).collect();

    let db = ShapeDatabase::from_dataset(&ds, &novel, 0)?;
    let limits = [1, 2, 5, 10].map(ShotLimit::PerClass).into_iter().chain([ShotLimit::Full]).collect::<Vec<_>>();
    print!("{}", onn_table(&class_shapes(&ds, &novel, Split::Test), &db, &limits)?.to_tsv());

    let prox = class_proximity(&class_shapes(&ds, &all, Split::Train), &class_shapes(&ds, &base, Split::Train))?;
    print!("\n{}", prox.to_tsv());

    println!("\naverage-shape prior IoU against test shapes:");
    for (id, train) in class_shapes(&ds, &novel, Split::Train) {
        let prior = binarize(&prior_grid(&train, PriorSource::Mean)?, 0.5)?;
        let test = class_shapes(&ds, &[ds.manifest.class_index(&id).unwrap()], Split::Test).remove(0).1;
        let m = test.iter().map(|g| iou(&prior, g)).collect::<shapeprior::Result<Vec<_>>>()?;
        println!("  {id:<10} {:.3}", m.iter().sum::<f64>() / m.len() as f64);
    }
    Ok(())
}

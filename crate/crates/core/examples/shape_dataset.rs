//! Generate the synthetic desk dataset and look at one rendered view.
//!
//! cargo run --example shape_dataset

use shapeprior::shapegen::{build_dataset, DatasetConfig, Split};

fn main() -> shapeprior::Result<()> {
    let cfg = DatasetConfig { n_views: 4, n_per_class: 10, ..DatasetConfig::default() };
    let ds = build_dataset(&cfg)?;
    println!("{} classes at {}³, views {}²", ds.manifest.num_classes(), ds.resolution(), ds.image_size());
    for (c, id) in ds.manifest.class_ids().iter().enumerate() {
        let train = ds.select(c, Split::Train);
        let fill: f64 = train.iter().map(|&i| ds.instances[i].grid.count() as f64).sum::<f64>()
            / (train.len() * ds.resolution().pow(3)) as f64;
        let kind = if ds.manifest.is_novel(c) { "novel" } else { "base" };
        println!("  {id:<16} {kind:<5} train {:>2} test {:>2} mean fill {fill:.3}", train.len(), ds.select(c, Split::Test).len());
    }

    // depth image as ASCII, nearer surfaces darker
    let view = &ds.instances[0].views[0];
    println!("{} from azimuth {:.0}°, elevation {:.0}°", ds.instances[0].instance_id, view.azimuth, view.elevation);
    let ramp = b"@%#*+=-:. ";
    for row in view.image.chunks(view.size) {
        let line: String = row.iter().map(|&v| ramp[((v.clamp(0.0, 1.0)) * 9.0).round() as usize] as char).collect();
        println!("  {line}");
    }
    Ok(())
}

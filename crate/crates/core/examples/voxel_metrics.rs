//! IoU, thresholding and a binvox round trip on a hand-made grid.
//!
//! cargo run --example voxel_metrics

use shapeprior::binvox::{self, BinvoxMeta};
use shapeprior::voxel::{binarize, iou, ProbGrid, VoxelGrid};

fn main() -> shapeprior::Result<()> {
    let r = 16;
    let ball = VoxelGrid::from_fn(r, |x, y, z| {
        let d = |v: usize| v as f64 + 0.5 - r as f64 / 2.0;
        d(x).powi(2) + d(y).powi(2) + d(z).powi(2) < 36.0
    });
    let slab = VoxelGrid::from_fn(r, |_, _, z| z < 8);
    println!("ball {} voxels, slab {} voxels, IoU {:.3}", ball.count(), slab.count(), iou(&ball, &slab)?);

    // a soft prediction: the ball blurred into probabilities
    let probs = (0..r * r * r)
        .map(|i| if ball.get_index(i) { 0.8 } else if slab.get_index(i) { 0.3 } else { 0.05 })
        .collect();
    let p = ProbGrid::new(r, probs)?;
    for t in [0.2, 0.5] {
        println!("threshold {t}: IoU with the ball {:.3}", iou(&binarize(&p, t)?, &ball)?);
    }

    let bytes = binvox::encode(&ball, &BinvoxMeta::for_resolution(r))?;
    let (back, meta) = binvox::decode(&bytes)?;
    println!("binvox: {} bytes, dims {:?}, round trip exact: {}", bytes.len(), meta.dims, back == ball);
    Ok(())
}

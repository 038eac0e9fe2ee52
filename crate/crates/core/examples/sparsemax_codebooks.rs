//! Sparsemax attention and the compositional class embedding it builds.
//!
//! cargo run --example sparsemax_codebooks

use shapeprior::model::compose_embedding;
use shapeprior::nn::{sparsemax, sparsemax_vjp};

fn main() -> shapeprior::Result<()> {
    for z in [vec![2.0, 0.0, -1.0], vec![0.5, 0.4, 0.1], vec![1.0, 1.0, 1.0]] {
        let p = sparsemax(&z)?;
        println!("sparsemax({z:?}) = {p:.3?}");
    }
    let p = sparsemax(&[0.5, 0.4, 0.1])?;
    println!("VJP of upstream (1, 0, 0): {:.3?}", sparsemax_vjp(&p, &[1.0, 0.0, 0.0])?);

    // two codebooks of three 2-d codes; attention picks code 1 of the first
    // and splits the second between codes 0 and 2
    let codes = [
        1.0, 0.0, 0.0, 1.0, -1.0, 0.0, //
        0.5, 0.5, 0.0, 0.0, -0.5, 0.5,
    ];
    let mut attention = sparsemax(&[0.0, 3.0, 0.0])?;
    attention.extend(sparsemax(&[1.0, -4.0, 1.0])?);
    println!("attention {attention:?}");
    println!("e_S = {:?}", compose_embedding(&codes, 2, &attention)?);
    Ok(())
}

use crate::error::{Error, Result};

/// Euclidean projection of `z` onto the probability simplex.
///
/// Sorting `z` descending, the support size is the largest `k` with
/// `1 + k·z_(k) > Σ_{j≤k} z_(j)`; the threshold is
/// `τ = (Σ_{j≤k} z_(j) − 1) / k` and the output is `max(z − τ, 0)`.
pub fn sparsemax(z: &[f64]) -> Result<Vec<f64>> {
    if z.is_empty() {
        return Err(Error::Argument("sparsemax of an empty vector".into()));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite sparsemax input {z:?}")));
    }
    // Working relative to the maximum makes the result depend only on
    // differences, so exactly representable shifts give identical output.
    let top = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = z.iter().map(|v| v - top).collect();
    let mut sorted = shifted.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));

    let mut cumsum = 0.0;
    let mut support = 0;
    let mut support_sum = 0.0;
    for (i, &v) in sorted.iter().enumerate() {
        cumsum += v;
        let k = (i + 1) as f64;
        if 1.0 + k * v > cumsum {
            support = i + 1;
            support_sum = cumsum;
        }
    }
    let tau = (support_sum - 1.0) / support as f64;
    Ok(shifted.iter().map(|&v| (v - tau).max(0.0)).collect())
}

/// Vector-Jacobian product of sparsemax, given its forward `output`.
///
/// On the support `S = {j : output_j > 0}` the Jacobian is
/// `I − 11ᵀ/|S|`, zero elsewhere. At support-boundary points this is the
/// one-sided Jacobian of the computed support.
pub fn sparsemax_vjp(output: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
    if output.len() != upstream.len() {
        return Err(Error::Dimension(format!(
            "sparsemax output has {} entries, upstream {}",
            output.len(),
            upstream.len()
        )));
    }
    let (count, sum) = output
        .iter()
        .zip(upstream)
        .filter(|(p, _)| **p > 0.0)
        .fold((0usize, 0.0), |(c, s), (_, u)| (c + 1, s + u));
    if count == 0 {
        return Err(Error::Argument("sparsemax output has empty support".into()));
    }
    let mean = sum / count as f64;
    Ok(output
        .iter()
        .zip(upstream)
        .map(|(&p, &u)| if p > 0.0 { u - mean } else { 0.0 })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Exact projection by enumerating every candidate support.
    pub(crate) fn simplex_projection_oracle(z: &[f64]) -> Vec<f64> {
        let m = z.len();
        let mut best: Option<(f64, Vec<f64>)> = None;
        for mask in 1u32..(1 << m) {
            let idx: Vec<usize> = (0..m).filter(|j| mask >> j & 1 == 1).collect();
            let tau = (idx.iter().map(|&j| z[j]).sum::<f64>() - 1.0) / idx.len() as f64;
            let mut p = vec![0.0; m];
            let mut feasible = true;
            for &j in &idx {
                p[j] = z[j] - tau;
                if p[j] < -1e-15 {
                    feasible = false;
                }
            }
            if !feasible {
                continue;
            }
            let d: f64 = p.iter().zip(z).map(|(a, b)| (a - b).powi(2)).sum();
            if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                best = Some((d, p));
            }
        }
        best.unwrap().1
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn dominant_and_uniform() {
        assert_eq!(sparsemax(&[5.0, 0.0, 0.0]).unwrap(), vec![1.0, 0.0, 0.0]);
        for c in [-3.0, 0.0, 0.25, 1e3] {
            let p = sparsemax(&[c, c, c]).unwrap();
            assert!(close(&p, &[1.0 / 3.0; 3], 1e-12), "{p:?}");
        }
    }

    #[test]
    fn partial_support_example() {
        let expected = simplex_projection_oracle(&[1.1, 1.0, 0.5]);
        assert!(close(&expected, &[0.55, 0.45, 0.0], 1e-12));
        let p = sparsemax(&[1.1, 1.0, 0.5]).unwrap();
        assert!(close(&p, &expected, 1e-12), "{p:?}");
    }

    #[test]
    fn rejects_non_finite() {
        assert!(matches!(sparsemax(&[1.0, f64::NAN]), Err(Error::Numeric(_))));
        assert!(matches!(sparsemax(&[f64::INFINITY]), Err(Error::Numeric(_))));
        assert!(sparsemax(&[]).is_err());
    }

    #[test]
    fn vjp_examples() {
        let p = sparsemax(&[0.3, 0.1]).unwrap();
        assert_eq!(sparsemax_vjp(&p, &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        let g = sparsemax_vjp(&p, &[1.0, 0.0]).unwrap();
        assert!(close(&g, &[0.5, -0.5], 1e-15));
        let p = sparsemax(&[1.1, 1.0, 0.5]).unwrap();
        let g = sparsemax_vjp(&p, &[0.3, -1.0, 7.0]).unwrap();
        assert_eq!(g[2], 0.0);
        assert!((g[0] + g[1]).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn matches_oracle(z in prop::collection::vec(-3.0f64..3.0, 3..=6)) {
            let p = sparsemax(&z).unwrap();
            let q = simplex_projection_oracle(&z);
            prop_assert!(close(&p, &q, 1e-9));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(p.iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn shift_invariant(q in prop::collection::vec(-2048i32..2048, 2..=8), c in -64i32..64) {
            // dyadic values and shifts keep the additions exact
            let z: Vec<f64> = q.iter().map(|&v| v as f64 / 1024.0).collect();
            let shifted: Vec<f64> = z.iter().map(|v| v + c as f64 / 8.0).collect();
            let a = sparsemax(&z).unwrap();
            let b = sparsemax(&shifted).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}

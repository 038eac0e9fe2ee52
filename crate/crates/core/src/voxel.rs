//! Occupancy grids and the IoU metric.
//!
//! All grids are cubic. Voxel `(x, y, z)` lives at linear index
//! `x + R * (y + R * z)`: x varies fastest, z slowest, and z points up.
//! The binvox codec converts to and from this order at the file boundary.

use crate::error::{Error, Result};

/// Default binarization threshold for predicted occupancy.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Binary occupancy cube stored as a packed bitset.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct VoxelGrid {
    resolution: usize,
    bits: Vec<u64>,
}

impl std::fmt::Debug for VoxelGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VoxelGrid")
            .field("resolution", &self.resolution)
            .field("occupied", &self.count())
            .finish()
    }
}

impl VoxelGrid {
    pub fn empty(resolution: usize) -> Self {
        assert!(resolution > 0, "resolution must be positive");
        let n = resolution.pow(3);
        VoxelGrid {
            resolution,
            bits: vec![0; n.div_ceil(64)],
        }
    }

    pub fn full(resolution: usize) -> Self {
        let mut g = Self::empty(resolution);
        for i in 0..g.len() {
            g.set_index(i, true);
        }
        g
    }

    /// Builds a grid from `R³` booleans in internal (x fastest) order.
    pub fn from_bools(resolution: usize, occupancy: &[bool]) -> Result<Self> {
        if resolution == 0 || occupancy.len() != resolution.pow(3) {
            return Err(Error::Dimension(format!(
                "expected {} voxels for resolution {resolution}, got {}",
                resolution.pow(3),
                occupancy.len()
            )));
        }
        let mut g = Self::empty(resolution);
        for (i, &v) in occupancy.iter().enumerate() {
            if v {
                g.set_index(i, true);
            }
        }
        Ok(g)
    }

    /// Builds a grid by evaluating `f(x, y, z)` at every voxel.
    pub fn from_fn(resolution: usize, mut f: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let mut g = Self::empty(resolution);
        for z in 0..resolution {
            for y in 0..resolution {
                for x in 0..resolution {
                    if f(x, y, z) {
                        g.set(x, y, z, true);
                    }
                }
            }
        }
        g
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    /// Number of voxels, `R³`.
    pub fn len(&self) -> usize {
        self.resolution.pow(3)
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.resolution * (y + self.resolution * z)
    }

    #[inline]
    pub fn get_index(&self, i: usize) -> bool {
        (self.bits[i / 64] >> (i % 64)) & 1 == 1
    }

    #[inline]
    pub fn set_index(&mut self, i: usize, value: bool) {
        let mask = 1u64 << (i % 64);
        if value {
            self.bits[i / 64] |= mask;
        } else {
            self.bits[i / 64] &= !mask;
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.get_index(self.index(x, y, z))
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, value: bool) {
        let i = self.index(x, y, z);
        self.set_index(i, value);
    }

    /// Number of occupied voxels.
    pub fn count(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Occupancy as `0.0` / `1.0` values in internal order.
    pub fn to_f64(&self) -> Vec<f64> {
        (0..self.len())
            .map(|i| if self.get_index(i) { 1.0 } else { 0.0 })
            .collect()
    }

    pub fn iter_occupied(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let r = self.resolution;
        (0..self.len())
            .filter(|&i| self.get_index(i))
            .map(move |i| (i % r, (i / r) % r, i / (r * r)))
    }

    pub(crate) fn words(&self) -> &[u64] {
        &self.bits
    }
}

/// Occupancy confidences in internal voxel order.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbGrid {
    resolution: usize,
    probs: Vec<f64>,
}

impl ProbGrid {
    pub fn new(resolution: usize, probs: Vec<f64>) -> Result<Self> {
        if resolution == 0 || probs.len() != resolution.pow(3) {
            return Err(Error::Dimension(format!(
                "expected {} probabilities for resolution {resolution}, got {}",
                resolution.pow(3),
                probs.len()
            )));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Argument(format!("probability {p} outside [0, 1]")));
        }
        Ok(ProbGrid { resolution, probs })
    }

    /// Voxelwise mean of binary grids.
    pub fn mean_of(grids: &[&VoxelGrid]) -> Result<Self> {
        let first = grids
            .first()
            .ok_or_else(|| Error::Data("mean of an empty shape set".into()))?;
        let r = first.resolution();
        let mut acc = vec![0.0; r.pow(3)];
        for g in grids {
            if g.resolution() != r {
                return Err(Error::Dimension(format!(
                    "resolution {} vs {r}",
                    g.resolution()
                )));
            }
            for (i, a) in acc.iter_mut().enumerate() {
                if g.get_index(i) {
                    *a += 1.0;
                }
            }
        }
        let n = grids.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        Ok(ProbGrid { resolution: r, probs: acc })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }

    /// L1 distance between two probability grids of equal resolution.
    pub fn l1_distance(&self, other: &ProbGrid) -> Result<f64> {
        if self.resolution != other.resolution {
            return Err(Error::Dimension(format!(
                "resolution {} vs {}",
                self.resolution, other.resolution
            )));
        }
        Ok(self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .sum())
    }
}

/// Thresholds confidences: a voxel is occupied iff `p >= threshold`.
pub fn binarize(p: &ProbGrid, threshold: f64) -> Result<VoxelGrid> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Argument(format!(
            "threshold {threshold} must lie strictly inside (0, 1)"
        )));
    }
    let mut g = VoxelGrid::empty(p.resolution);
    for (i, &v) in p.probs.iter().enumerate() {
        if v >= threshold {
            g.set_index(i, true);
        }
    }
    Ok(g)
}

/// Intersection over union. Two empty grids are equal sets and score 1.
pub fn iou(a: &VoxelGrid, b: &VoxelGrid) -> Result<f64> {
    if a.resolution != b.resolution {
        return Err(Error::Dimension(format!(
            "IoU between resolutions {} and {}",
            a.resolution, b.resolution
        )));
    }
    let (mut inter, mut union) = (0u64, 0u64);
    for (x, y) in a.words().iter().zip(b.words()) {
        inter += (x & y).count_ones() as u64;
        union += (x | y).count_ones() as u64;
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_grid(rng: &mut ChaCha8Rng, r: usize, density: f64) -> VoxelGrid {
        VoxelGrid::from_fn(r, |_, _, _| rng.random_bool(density))
    }

    fn brute_iou(a: &VoxelGrid, b: &VoxelGrid) -> f64 {
        let r = a.resolution();
        let (mut inter, mut union) = (0, 0);
        for x in 0..r {
            for y in 0..r {
                for z in 0..r {
                    let (p, q) = (a.get(x, y, z), b.get(x, y, z));
                    inter += (p && q) as usize;
                    union += (p || q) as usize;
                }
            }
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    #[test]
    fn iou_identity_and_disjoint() {
        let a = VoxelGrid::from_fn(4, |x, _, _| x < 2);
        let b = VoxelGrid::from_fn(4, |x, _, _| x >= 2);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn iou_hand_counted() {
        let mut a = VoxelGrid::empty(2);
        a.set(0, 0, 0, true);
        a.set(1, 0, 0, true);
        let mut b = VoxelGrid::empty(2);
        b.set(1, 0, 0, true);
        assert_eq!(iou(&a, &b).unwrap(), 0.5);
    }

    #[test]
    fn iou_both_empty_is_one() {
        let e = VoxelGrid::empty(3);
        assert_eq!(iou(&e, &e).unwrap(), 1.0);
    }

    #[test]
    fn iou_rejects_resolution_mismatch() {
        let e = iou(&VoxelGrid::empty(2), &VoxelGrid::empty(3));
        assert!(matches!(e, Err(Error::Dimension(_))));
    }

    #[test]
    fn iou_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let d1 = rng.random_range(0.0..1.0);
            let d2 = rng.random_range(0.0..1.0);
            let a = random_grid(&mut rng, 4, d1);
            let b = random_grid(&mut rng, 4, d2);
            let v = iou(&a, &b).unwrap();
            assert_eq!(v, brute_iou(&a, &b));
            assert_eq!(v, iou(&b, &a).unwrap());
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn binarize_rules() {
        let full = ProbGrid::new(2, vec![0.9; 8]).unwrap();
        assert_eq!(binarize(&full, 0.5).unwrap().count(), 8);
        let none = ProbGrid::new(2, vec![0.1; 8]).unwrap();
        assert_eq!(binarize(&none, 0.5).unwrap().count(), 0);

        let mut probs = vec![0.0; 8];
        probs[0] = 0.5;
        probs[1] = 0.49;
        let g = binarize(&ProbGrid::new(2, probs).unwrap(), 0.5).unwrap();
        assert!(g.get_index(0));
        assert!(!g.get_index(1));
    }

    #[test]
    fn binarize_threshold_bounds() {
        let p = ProbGrid::new(1, vec![0.3]).unwrap();
        for t in [0.0, 1.0, -0.2, 1.5, f64::NAN] {
            assert!(matches!(binarize(&p, t), Err(Error::Argument(_))));
        }
    }

    #[test]
    fn binarize_monotone_in_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let probs: Vec<f64> = (0..512).map(|_| rng.random_range(0.0..1.0)).collect();
        let p = ProbGrid::new(8, probs).unwrap();
        let mut prev = binarize(&p, 0.01).unwrap();
        for k in 2..100 {
            let g = binarize(&p, k as f64 / 100.0).unwrap();
            for i in 0..g.len() {
                assert!(!g.get_index(i) || prev.get_index(i));
            }
            prev = g;
        }
    }

    #[test]
    fn mean_of_full_and_empty_is_half() {
        let m = ProbGrid::mean_of(&[&VoxelGrid::full(2), &VoxelGrid::empty(2)]).unwrap();
        assert!(m.probs().iter().all(|&p| p == 0.5));
        assert!(ProbGrid::mean_of(&[]).is_err());
    }
}

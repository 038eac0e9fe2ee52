//! Procedural shape families.
//!
//! Every family is a handful of solid primitives placed upright and centred
//! in the grid. Parameters are drawn uniformly from per-family ranges given
//! in voxels; the defaults scale with the grid resolution.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::voxel::VoxelGrid;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeFamily {
    /// Slab top on four corner legs.
    BoxTable,
    /// Long fuselage with a wide thin wing and a tail fin.
    WingedSlab,
    /// Two or three coaxial cylinders stacked along the vertical axis.
    CylinderStack,
    /// Axis-aligned ellipsoid.
    SphereBlob,
    /// Long, low, narrow table: a close relative of `BoxTable`.
    Bench,
    /// Floor slab joined to a vertical wall.
    LBracket,
    /// Thin upright torus.
    Ring,
}

impl ShapeFamily {
    pub const ALL: [ShapeFamily; 7] = [
        ShapeFamily::BoxTable,
        ShapeFamily::WingedSlab,
        ShapeFamily::CylinderStack,
        ShapeFamily::SphereBlob,
        ShapeFamily::Bench,
        ShapeFamily::LBracket,
        ShapeFamily::Ring,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeFamily::BoxTable => "box_table",
            ShapeFamily::WingedSlab => "winged_slab",
            ShapeFamily::CylinderStack => "cylinder_stack",
            ShapeFamily::SphereBlob => "sphere_blob",
            ShapeFamily::Bench => "bench",
            ShapeFamily::LBracket => "l_bracket",
            ShapeFamily::Ring => "ring",
        }
    }

    /// Parameter names and default ranges for a 16³ grid, in voxels.
    fn base_ranges(self) -> &'static [(&'static str, f64, f64)] {
        match self {
            ShapeFamily::BoxTable => &[
                ("half_width", 4.0, 6.5),
                ("half_depth", 3.0, 5.5),
                ("top", 1.0, 2.0),
                ("height", 6.0, 10.0),
                ("leg", 1.0, 2.0),
            ],
            ShapeFamily::Bench => &[
                ("half_width", 5.5, 7.5),
                ("half_depth", 2.5, 4.0),
                ("top", 2.0, 3.0),
                ("height", 3.0, 6.0),
                ("leg", 1.5, 2.5),
            ],
            ShapeFamily::WingedSlab => &[
                ("half_length", 5.5, 7.5),
                ("body", 1.0, 1.8),
                ("half_span", 4.5, 7.0),
                ("chord", 1.5, 3.0),
                ("fin", 2.0, 3.5),
            ],
            ShapeFamily::CylinderStack => &[
                ("r0", 4.5, 6.5),
                ("r1", 1.5, 3.0),
                ("r2", 3.0, 5.5),
                ("h0", 2.0, 4.0),
                ("h1", 3.0, 6.0),
                ("h2", 1.0, 4.0),
            ],
            ShapeFamily::SphereBlob => &[("ax", 3.5, 6.5), ("ay", 3.5, 6.5), ("az", 3.0, 6.5)],
            ShapeFamily::LBracket => &[
                ("half_width", 4.0, 6.5),
                ("depth", 7.0, 11.0),
                ("height", 7.0, 12.0),
                ("thickness", 1.5, 3.0),
            ],
            ShapeFamily::Ring => &[("major", 4.0, 5.5), ("minor", 1.6, 2.4), ("tilt", 0.0, 1.0)],
        }
    }

    /// Default parameter ranges scaled to `resolution`.
    pub fn default_ranges(self, resolution: usize) -> BTreeMap<String, [f64; 2]> {
        let s = resolution as f64 / 16.0;
        self.base_ranges()
            .iter()
            .map(|&(k, lo, hi)| {
                let range = match k {
                    "tilt" => [lo, hi],
                    // thin parts must still cover a voxel centre at low resolution
                    "top" | "leg" | "body" | "chord" | "thickness" | "minor" => {
                        [(lo * s).max(1.0), (hi * s).max(1.0)]
                    }
                    _ => [lo * s, hi * s],
                };
                (k.to_string(), range)
            })
            .collect()
    }

    /// Samples one shape. `overrides` replace default ranges by name.
    pub fn sample(
        self,
        resolution: usize,
        overrides: &BTreeMap<String, [f64; 2]>,
        rng: &mut impl Rng,
    ) -> Result<VoxelGrid> {
        let mut ranges = self.default_ranges(resolution);
        for (k, v) in overrides {
            if !ranges.contains_key(k) {
                return Err(Error::Generation(format!(
                    "{} has no parameter `{k}`",
                    self.name()
                )));
            }
            ranges.insert(k.clone(), *v);
        }
        let mut p = BTreeMap::new();
        for (k, [lo, hi]) in &ranges {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Generation(format!(
                    "{}: empty range for `{k}`: [{lo}, {hi}]",
                    self.name()
                )));
            }
            let v = if lo == hi { *lo } else { rng.random_range(*lo..*hi) };
            p.insert(k.as_str(), v);
        }
        let grid = rasterize(self, resolution, &p)?;
        if grid.is_empty() {
            return Err(Error::Generation(format!(
                "{} parameters produced an empty shape",
                self.name()
            )));
        }
        Ok(grid)
    }
}

impl fmt::Display for ShapeFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShapeFamily::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown shape family `{s}`")))
    }
}

/// Axis-aligned box in continuous voxel coordinates, `lo ≤ p < hi`.
struct Aabb {
    lo: [f64; 3],
    hi: [f64; 3],
}

impl Aabb {
    fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.lo[a] && p[a] < self.hi[a])
    }
}

fn rasterize(family: ShapeFamily, r: usize, p: &BTreeMap<&str, f64>) -> Result<VoxelGrid> {
    let rf = r as f64;
    let c = rf / 2.0;
    let fits = |extent: f64, what: &str| -> Result<()> {
        if extent > rf + 1e-9 {
            Err(Error::Generation(format!(
                "{family}: {what} {extent:.2} exceeds grid size {r}"
            )))
        } else {
            Ok(())
        }
    };
    let g = match family {
        ShapeFamily::BoxTable | ShapeFamily::Bench => {
            let (hw, hd, top, h, leg) = (p["half_width"], p["half_depth"], p["top"], p["height"], p["leg"]);
            fits(2.0 * hw, "width")?;
            fits(2.0 * hd, "depth")?;
            fits(h + top, "height")?;
            let z0 = c - (h + top) / 2.0;
            let slab = Aabb {
                lo: [c - hw, c - hd, z0 + h],
                hi: [c + hw, c + hd, z0 + h + top],
            };
            let legs: Vec<Aabb> = [(-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0), (1.0, 1.0)]
                .iter()
                .map(|&(sx, sy)| {
                    let x0 = if sx < 0.0 { c - hw } else { c + hw - leg };
                    let y0 = if sy < 0.0 { c - hd } else { c + hd - leg };
                    Aabb {
                        lo: [x0, y0, z0],
                        hi: [x0 + leg, y0 + leg, z0 + h],
                    }
                })
                .collect();
            VoxelGrid::from_fn(r, |x, y, z| {
                let q = center(x, y, z);
                slab.contains(q) || legs.iter().any(|l| l.contains(q))
            })
        }
        ShapeFamily::WingedSlab => {
            let (hl, body, span, chord, fin) =
                (p["half_length"], p["body"], p["half_span"], p["chord"], p["fin"]);
            fits(2.0 * hl, "length")?;
            fits(2.0 * span, "span")?;
            let fuselage = Aabb {
                lo: [c - hl, c - body, c - body],
                hi: [c + hl, c + body, c + body],
            };
            let wing = Aabb {
                lo: [c - chord / 2.0, c - span, c - 0.5],
                hi: [c + chord / 2.0 + 1.0, c + span, c + 0.5],
            };
            let tail = Aabb {
                lo: [c - hl, c - 0.5, c],
                hi: [c - hl + 1.5, c + 0.5, (c + body + fin).min(rf)],
            };
            VoxelGrid::from_fn(r, |x, y, z| {
                let q = center(x, y, z);
                fuselage.contains(q) || wing.contains(q) || tail.contains(q)
            })
        }
        ShapeFamily::CylinderStack => {
            let radii = [p["r0"], p["r1"], p["r2"]];
            let heights = [p["h0"], p["h1"], p["h2"]];
            let total: f64 = heights.iter().sum();
            fits(total, "stack height")?;
            for rad in radii {
                fits(2.0 * rad, "diameter")?;
            }
            let mut bands = Vec::new();
            let mut z = c - total / 2.0;
            for (rad, h) in radii.iter().zip(heights) {
                if h > 0.0 {
                    bands.push((z, z + h, *rad));
                    z += h;
                }
            }
            VoxelGrid::from_fn(r, |x, y, zz| {
                let q = center(x, y, zz);
                let d2 = (q[0] - c).powi(2) + (q[1] - c).powi(2);
                bands
                    .iter()
                    .any(|&(lo, hi, rad)| q[2] >= lo && q[2] < hi && d2 <= rad * rad)
            })
        }
        ShapeFamily::SphereBlob => {
            let a = [p["ax"], p["ay"], p["az"]];
            for v in a {
                fits(2.0 * v, "diameter")?;
            }
            VoxelGrid::from_fn(r, |x, y, z| {
                let q = center(x, y, z);
                (0..3).map(|i| ((q[i] - c) / a[i]).powi(2)).sum::<f64>() <= 1.0
            })
        }
        ShapeFamily::LBracket => {
            let (hw, depth, height, t) = (p["half_width"], p["depth"], p["height"], p["thickness"]);
            fits(2.0 * hw, "width")?;
            fits(depth, "depth")?;
            fits(height, "height")?;
            let y0 = c - depth / 2.0;
            let z0 = c - height / 2.0;
            let floor = Aabb {
                lo: [c - hw, y0, z0],
                hi: [c + hw, y0 + depth, z0 + t],
            };
            let wall = Aabb {
                lo: [c - hw, y0, z0],
                hi: [c + hw, y0 + t, z0 + height],
            };
            VoxelGrid::from_fn(r, |x, y, z| {
                let q = center(x, y, z);
                floor.contains(q) || wall.contains(q)
            })
        }
        ShapeFamily::Ring => {
            let (major, minor, tilt) = (p["major"], p["minor"], p["tilt"]);
            fits(2.0 * (major + minor), "ring diameter")?;
            // ring plane contains the vertical axis, rotated about it by `tilt`
            let angle = tilt * std::f64::consts::FRAC_PI_2;
            let (s, co) = angle.sin_cos();
            VoxelGrid::from_fn(r, |x, y, z| {
                let q = center(x, y, z);
                let (dx, dy, dz) = (q[0] - c, q[1] - c, q[2] - c);
                // coordinates in the ring frame: u, w span the ring plane
                let u = co * dx + s * dy;
                let n = -s * dx + co * dy;
                let radial = (u * u + dz * dz).sqrt() - major;
                radial * radial + n * n <= minor * minor
            })
        }
    };
    Ok(g)
}

#[inline]
fn center(x: usize, y: usize, z: usize) -> [f64; 3] {
    [x as f64 + 0.5, y as f64 + 0.5, z as f64 + 0.5]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxel::iou;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn every_family_samples_nonempty_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for r in [16, 32] {
            for f in ShapeFamily::ALL {
                for _ in 0..5 {
                    let g = f.sample(r, &BTreeMap::new(), &mut rng).unwrap();
                    assert!(!g.is_empty(), "{f} at {r}");
                    assert!(g.count() < g.len(), "{f} fills the grid");
                }
            }
        }
    }

    #[test]
    fn names_round_trip() {
        for f in ShapeFamily::ALL {
            assert_eq!(f.name().parse::<ShapeFamily>().unwrap(), f);
        }
        assert!("teapot".parse::<ShapeFamily>().is_err());
    }

    #[test]
    fn oversized_parameters_fail() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut o = BTreeMap::new();
        o.insert("half_width".to_string(), [20.0, 21.0]);
        assert!(matches!(
            ShapeFamily::BoxTable.sample(16, &o, &mut rng),
            Err(Error::Generation(_))
        ));
        let mut o = BTreeMap::new();
        o.insert("teeth".to_string(), [1.0, 2.0]);
        assert!(ShapeFamily::Ring.sample(16, &o, &mut rng).is_err());
        let mut o = BTreeMap::new();
        o.insert("major".to_string(), [5.0, 4.0]);
        assert!(ShapeFamily::Ring.sample(16, &o, &mut rng).is_err());
    }

    fn mean_pairwise(a: &[VoxelGrid], b: &[VoxelGrid], same: bool) -> (f64, f64) {
        let mut v = Vec::new();
        for (i, x) in a.iter().enumerate() {
            for (j, y) in b.iter().enumerate() {
                if same && i >= j {
                    continue;
                }
                v.push(iou(x, y).unwrap());
            }
        }
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64;
        (m, var)
    }

    #[test]
    fn intra_family_closer_than_inter_family() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let samples: Vec<Vec<VoxelGrid>> = ShapeFamily::ALL
            .iter()
            .map(|f| {
                (0..12)
                    .map(|_| f.sample(16, &BTreeMap::new(), &mut rng).unwrap())
                    .collect()
            })
            .collect();
        for (i, fa) in ShapeFamily::ALL.iter().enumerate() {
            let (intra, var) = mean_pairwise(&samples[i], &samples[i], true);
            assert!(var > 0.0, "{fa} has no intra-class variability");
            for (j, fb) in ShapeFamily::ALL.iter().enumerate() {
                if i == j {
                    continue;
                }
                let (inter, _) = mean_pairwise(&samples[i], &samples[j], false);
                assert!(inter < intra, "{fa} vs {fb}: inter {inter:.3} >= intra {intra:.3}");
            }
        }
    }
}

//! Orthographic depth rendering by voxel ray traversal.
//!
//! The camera looks at the grid centre along a direction set by azimuth
//! (about the vertical z axis) and elevation. The image plane spans the
//! grid's circumscribed sphere, so every view fits the whole grid. A pixel
//! records the distance `t` to the first occupied voxel as
//! `1 − 0.9·t/(2E)` with `E` the sphere radius; misses stay 0.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::voxel::VoxelGrid;

pub const DEFAULT_ELEVATION: [f64; 2] = [-30.0, 60.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderedView {
    pub size: usize,
    /// Row-major `size × size`, row 0 at the top.
    pub image: Vec<f32>,
    pub azimuth: f64,
    pub elevation: f64,
}

/// Orthonormal camera frame for a view direction.
#[derive(Clone, Copy, Debug)]
pub struct Camera {
    /// Unit viewing direction, from the eye into the scene.
    pub forward: [f64; 3],
    pub right: [f64; 3],
    pub up: [f64; 3],
}

impl Camera {
    pub fn new(azimuth_deg: f64, elevation_deg: f64) -> Self {
        let (az, el) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
        let forward = [-el.cos() * az.cos(), -el.cos() * az.sin(), -el.sin()];
        let right = normalize(cross(forward, [0.0, 0.0, 1.0]));
        let up = cross(right, forward);
        Camera { forward, right, up }
    }

    /// Ray origin on the near plane for pixel `(row, col)`.
    pub fn pixel_ray(&self, resolution: usize, size: usize, row: usize, col: usize) -> [f64; 3] {
        let c = resolution as f64 / 2.0;
        let e = half_extent(resolution);
        let u = ((col as f64 + 0.5) / size as f64 * 2.0 - 1.0) * e;
        let v = (1.0 - (row as f64 + 0.5) / size as f64 * 2.0) * e;
        let mut o = [0.0; 3];
        for a in 0..3 {
            o[a] = c + u * self.right[a] + v * self.up[a] - e * self.forward[a];
        }
        o
    }
}

/// Radius of the sphere circumscribing a grid of side `resolution`.
pub fn half_extent(resolution: usize) -> f64 {
    resolution as f64 * 3f64.sqrt() / 2.0
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(a: [f64; 3]) -> [f64; 3] {
    let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

/// Distance along the ray to the first occupied voxel, if any.
fn first_hit(grid: &VoxelGrid, o: [f64; 3], d: [f64; 3]) -> Option<f64> {
    let r = grid.resolution();
    let rf = r as f64;
    let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
    for a in 0..3 {
        if d[a] == 0.0 {
            if o[a] < 0.0 || o[a] >= rf {
                return None;
            }
        } else {
            let (mut lo, mut hi) = ((0.0 - o[a]) / d[a], (rf - o[a]) / d[a]);
            if lo > hi {
                std::mem::swap(&mut lo, &mut hi);
            }
            t0 = t0.max(lo);
            t1 = t1.min(hi);
        }
    }
    if t0 >= t1 {
        return None;
    }
    let mut cell = [0usize; 3];
    let mut step = [0isize; 3];
    let mut t_next = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    for a in 0..3 {
        let p = o[a] + t0 * d[a];
        cell[a] = (p.floor().max(0.0) as usize).min(r - 1);
        if d[a] > 0.0 {
            step[a] = 1;
            t_delta[a] = 1.0 / d[a];
            t_next[a] = t0 + ((cell[a] + 1) as f64 - p) / d[a];
        } else if d[a] < 0.0 {
            step[a] = -1;
            t_delta[a] = -1.0 / d[a];
            t_next[a] = t0 + (cell[a] as f64 - p) / d[a];
        }
    }
    let mut t = t0;
    loop {
        if grid.get(cell[0], cell[1], cell[2]) {
            return Some(t);
        }
        let a = if t_next[0] <= t_next[1] && t_next[0] <= t_next[2] {
            0
        } else if t_next[1] <= t_next[2] {
            1
        } else {
            2
        };
        if t_next[a] >= t1 {
            return None;
        }
        t = t_next[a];
        t_next[a] += t_delta[a];
        let next = cell[a] as isize + step[a];
        if next < 0 || next >= r as isize {
            return None;
        }
        cell[a] = next as usize;
    }
}

/// Renders one view of `grid` at the given angles.
pub fn render_depth(grid: &VoxelGrid, azimuth: f64, elevation: f64, size: usize) -> Result<RenderedView> {
    if size == 0 {
        return Err(Error::Argument("image size must be positive".into()));
    }
    let r = grid.resolution();
    let cam = Camera::new(azimuth, elevation);
    let span = 2.0 * half_extent(r);
    let mut image = vec![0f32; size * size];
    if !grid.is_empty() {
        for row in 0..size {
            for col in 0..size {
                let o = cam.pixel_ray(r, size, row, col);
                if let Some(t) = first_hit(grid, o, cam.forward) {
                    image[row * size + col] = (1.0 - 0.9 * t / span) as f32;
                }
            }
        }
    }
    Ok(RenderedView {
        size,
        image,
        azimuth,
        elevation,
    })
}

/// Renders `n_views` views with azimuth uniform in `[0, 360)` and elevation
/// uniform in the default range.
pub fn render_views(grid: &VoxelGrid, n_views: usize, size: usize, seed: u64) -> Result<Vec<RenderedView>> {
    render_views_in(grid, n_views, size, DEFAULT_ELEVATION, seed)
}

pub fn render_views_in(
    grid: &VoxelGrid,
    n_views: usize,
    size: usize,
    elevation: [f64; 2],
    seed: u64,
) -> Result<Vec<RenderedView>> {
    if n_views == 0 {
        return Err(Error::Argument("n_views must be at least 1".into()));
    }
    if !(elevation[0] <= elevation[1]) || elevation[0] < -90.0 || elevation[1] > 90.0 {
        return Err(Error::Argument(format!("bad elevation range {elevation:?}")));
    }
    // straight up or down has no defined azimuth frame
    if elevation[0] <= -90.0 + 1e-6 || elevation[1] >= 90.0 - 1e-6 {
        return Err(Error::Argument("elevation must stay inside (-90, 90)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_views)
        .map(|_| {
            let az = rng.random_range(0.0..360.0);
            let el = if elevation[0] == elevation[1] {
                elevation[0]
            } else {
                rng.random_range(elevation[0]..=elevation[1])
            };
            render_depth(grid, az, el, size)
        })
        .collect()
}

//! Spherical IoU: the fast interval approximation and the integral oracle.
//!
//! The fast path treats every box as a latitude/longitude rectangle and
//! intersects the intervals, measuring areas with `2 fov_x sin(fov_y / 2)`.
//! Two corrections handle the seam and the poles:
//!
//! * the whole computation is repeated with both longitudes shifted by 180
//!   degrees and the larger ratio is kept;
//! * a box reaching past a pole is cut into two sub-regions, the overflow
//!   part continuing on the opposite meridian. Sub-region intersection areas
//!   are summed before dividing by the union.
//!
//! [`exact_iou`] integrates membership over the sphere and is what the
//! evaluator uses for matching.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{angular_distance, normalize_lon, BoxRegion, SphericalBox};

/// Area in steradians of a box, independent of its center.
pub fn box_area(bx: &SphericalBox) -> f64 {
    area_from_fov(bx.fov_x, bx.fov_y)
}

#[inline]
fn area_from_fov(fov_x: f64, fov_y: f64) -> f64 {
    2.0 * fov_x.to_radians() * (fov_y.to_radians() / 2.0).sin()
}

/// A latitude/longitude rectangle, all in degrees. Longitude bounds are not
/// wrapped.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Rect {
    lat_lo: f64,
    lat_hi: f64,
    lon_lo: f64,
    lon_hi: f64,
}

impl Rect {
    fn new(lat_lo: f64, lat_hi: f64, lon_center: f64, fov_x: f64) -> Self {
        let c = normalize_lon(lon_center);
        Self {
            lat_lo,
            lat_hi,
            lon_lo: c - fov_x / 2.0,
            lon_hi: c + fov_x / 2.0,
        }
    }

    #[inline]
    fn intersection_area(&self, other: &Rect) -> f64 {
        let dlat = self.lat_hi.min(other.lat_hi) - self.lat_lo.max(other.lat_lo);
        if dlat <= 0.0 {
            return 0.0;
        }
        let dlon = self.lon_hi.min(other.lon_hi) - self.lon_lo.max(other.lon_lo);
        if dlon <= 0.0 {
            return 0.0;
        }
        area_from_fov(dlon, dlat)
    }
}

/// Sub-regions of one box for one longitude shift; at most two.
#[derive(Debug, Clone, Copy)]
struct Split {
    rects: [Rect; 2],
    len: usize,
}

impl Split {
    fn of(bx: &SphericalBox, shift: f64) -> Self {
        let phi = bx.center.phi + shift;
        let theta = bx.center.theta;
        let half = bx.fov_y / 2.0;
        let lo = theta - half;
        let hi = theta + half;
        let main = if bx.fov_y >= 180.0 {
            Rect::new(-90.0, 90.0, phi, bx.fov_x)
        } else {
            Rect::new(lo.max(-90.0), hi.min(90.0), phi, bx.fov_x)
        };
        let mut split = Split {
            rects: [main, main],
            len: 1,
        };
        if bx.fov_y < 180.0 {
            if hi > 90.0 {
                let overflow = hi - 90.0;
                split.rects[1] = Rect::new(90.0 - overflow, 90.0, phi + 180.0, bx.fov_x);
                split.len = 2;
            } else if lo < -90.0 {
                let overflow = -90.0 - lo;
                split.rects[1] = Rect::new(-90.0, -90.0 + overflow, phi + 180.0, bx.fov_x);
                split.len = 2;
            }
        }
        split
    }

    #[inline]
    fn rects(&self) -> &[Rect] {
        &self.rects[..self.len]
    }
}

/// A box prepared for repeated fast IoU evaluation.
#[derive(Debug, Clone, Copy)]
pub struct PreparedBox {
    bx: SphericalBox,
    area: f64,
    splits: [Split; 2],
}

impl PreparedBox {
    pub fn new(bx: &SphericalBox) -> Self {
        Self {
            bx: *bx,
            area: box_area(bx),
            splits: [Split::of(bx, 0.0), Split::of(bx, 180.0)],
        }
    }

    pub fn inner(&self) -> &SphericalBox {
        &self.bx
    }

    /// Fast spherical IoU against another prepared box.
    pub fn iou(&self, other: &PreparedBox) -> f64 {
        if self.bx == other.bx {
            return 1.0;
        }
        if self.splits[0].len == 1 && other.splits[0].len == 1 {
            // latitude overlap does not depend on the shift
            let (a, b) = (&self.splits[0].rects[0], &other.splits[0].rects[0]);
            let dlat = a.lat_hi.min(b.lat_hi) - a.lat_lo.max(b.lat_lo);
            if dlat <= 0.0 {
                return 0.0;
            }
            let dlon = (0..2)
                .map(|k| {
                    let (a, b) = (&self.splits[k].rects[0], &other.splits[k].rects[0]);
                    a.lon_hi.min(b.lon_hi) - a.lon_lo.max(b.lon_lo)
                })
                .fold(f64::NEG_INFINITY, f64::max);
            if dlon <= 0.0 {
                return 0.0;
            }
            let inter = area_from_fov(dlon, dlat);
            let union = self.area + other.area - inter;
            let ratio = if union > 0.0 { inter / union } else { 1.0 };
            return ratio.clamp(0.0, 1.0);
        }
        let mut best = 0.0f64;
        for k in 0..2 {
            let mut inter = 0.0;
            for a in self.splits[k].rects() {
                for b in other.splits[k].rects() {
                    inter += a.intersection_area(b);
                }
            }
            if inter <= 0.0 {
                continue;
            }
            let union = self.area + other.area - inter;
            let ratio = if union > 0.0 { inter / union } else { 1.0 };
            best = best.max(ratio);
        }
        best.clamp(0.0, 1.0)
    }

    /// Latitude extent covered by any sub-region.
    pub(crate) fn lat_extent(&self) -> (f64, f64) {
        let rects = self.splits[0].rects();
        let lo = rects.iter().map(|r| r.lat_lo).fold(f64::INFINITY, f64::min);
        let hi = rects
            .iter()
            .map(|r| r.lat_hi)
            .fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    /// True when the box has a pole-overflow sub-region or spans every
    /// latitude, so its longitude coverage is not a single arc.
    pub(crate) fn is_split(&self) -> bool {
        self.splits[0].len > 1 || self.bx.fov_y >= 180.0
    }
}

/// Fast approximate spherical IoU.
pub fn sph_iou(a: &SphericalBox, b: &SphericalBox) -> f64 {
    PreparedBox::new(a).iou(&PreparedBox::new(b))
}

/// Dense row-major matrix of IoU values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IouMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl IouMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_nested(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }
}

/// Pairwise [`sph_iou`] between two lists, computed row-parallel.
pub fn iou_matrix(a: &[SphericalBox], b: &[SphericalBox]) -> IouMatrix {
    let pa: Vec<PreparedBox> = a.iter().map(PreparedBox::new).collect();
    let pb: Vec<PreparedBox> = b.iter().map(PreparedBox::new).collect();
    let cols = pb.len();
    let mut data = vec![0.0; pa.len() * cols];
    if cols > 0 {
        data.par_chunks_mut(cols)
            .zip(pa.par_iter())
            .for_each(|(row, x)| {
                for (out, y) in row.iter_mut().zip(&pb) {
                    *out = x.iou(y);
                }
            });
    }
    IouMatrix {
        rows: pa.len(),
        cols,
        data,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OracleMode {
    #[default]
    Grid,
    MonteCarlo,
}

/// Resolution of the integral IoU oracle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IoUConfig {
    pub oracle_grid_height: usize,
    pub oracle_mc_samples: usize,
    pub rng_seed: u64,
    pub mode: OracleMode,
}

impl Default for IoUConfig {
    fn default() -> Self {
        Self {
            oracle_grid_height: 512,
            oracle_mc_samples: 1_000_000,
            rng_seed: 0,
            mode: OracleMode::Grid,
        }
    }
}

impl IoUConfig {
    pub fn grid(height: usize) -> Self {
        Self {
            oracle_grid_height: height,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.oracle_grid_height < 16 {
            return Err(Error::InvalidConfig(format!(
                "oracle grid height {} < 16",
                self.oracle_grid_height
            )));
        }
        if self.oracle_mc_samples < 1000 {
            return Err(Error::InvalidConfig(format!(
                "oracle sample count {} < 1000",
                self.oracle_mc_samples
            )));
        }
        Ok(())
    }
}

/// Equirectangular integration grid with cached trigonometry.
struct Grid {
    height: usize,
    cell: f64,
    col_cos: Vec<f64>,
    col_sin: Vec<f64>,
}

impl Grid {
    fn new(height: usize) -> Self {
        let width = 2 * height;
        let cell = std::f64::consts::PI / height as f64;
        let (col_sin, col_cos) = (0..width)
            .map(|j| (-std::f64::consts::PI + (j as f64 + 0.5) * cell).sin_cos())
            .unzip();
        Self {
            height,
            cell,
            col_cos,
            col_sin,
        }
    }

    fn row_lat(&self, i: usize) -> f64 {
        std::f64::consts::FRAC_PI_2 - (i as f64 + 0.5) * self.cell
    }

    /// Rows whose latitude lies in `[lo, hi]` degrees, widened by one row.
    fn rows_in(&self, lo: f64, hi: f64) -> std::ops::Range<usize> {
        let to_row = |lat: f64| (90.0 - lat) / 180.0 * self.height as f64;
        let first = to_row(hi.min(90.0)).floor() as isize - 1;
        let last = to_row(lo.max(-90.0)).ceil() as isize + 1;
        let first = first.clamp(0, self.height as isize) as usize;
        let last = last.clamp(0, self.height as isize) as usize;
        first..last
    }

    fn band(&self, bx: &SphericalBox) -> std::ops::Range<usize> {
        let r = bx.angular_radius();
        self.rows_in(bx.center.theta - r, bx.center.theta + r)
    }

    /// Sums `f(in_a, in_b) * cos(lat)` per row; rows outside `rows` add 0.
    fn integrate<F>(&self, rows: std::ops::Range<usize>, f: F) -> Vec<[f64; 2]>
    where
        F: Fn([f64; 3]) -> [bool; 2] + Sync,
    {
        rows.into_par_iter()
            .map(|i| {
                let (s, c) = self.row_lat(i).sin_cos();
                let mut acc = [0.0f64; 2];
                for (cp, sp) in self.col_cos.iter().zip(&self.col_sin) {
                    let flags = f([c * cp, c * sp, s]);
                    if flags[0] {
                        acc[0] += 1.0;
                    }
                    if flags[1] {
                        acc[1] += 1.0;
                    }
                }
                [acc[0] * c, acc[1] * c]
            })
            .collect()
    }
}

fn union_range(a: std::ops::Range<usize>, b: std::ops::Range<usize>) -> std::ops::Range<usize> {
    if a.is_empty() {
        return b;
    }
    if b.is_empty() {
        return a;
    }
    a.start.min(b.start)..a.end.max(b.end)
}

/// Integral IoU under the rotated-frame membership of each box.
pub fn exact_iou(a: &SphericalBox, b: &SphericalBox, cfg: &IoUConfig) -> f64 {
    if angular_distance(a.center, b.center) > a.angular_radius() + b.angular_radius() + 1e-9 {
        return 0.0;
    }
    let ra = BoxRegion::new(a);
    let rb = BoxRegion::new(b);
    let (inter, union) = match cfg.mode {
        OracleMode::Grid => {
            let grid = Grid::new(cfg.oracle_grid_height);
            let rows = union_range(grid.band(a), grid.band(b));
            let sums = grid.integrate(rows, |v| {
                let ia = ra.contains(v);
                let ib = rb.contains(v);
                [ia && ib, ia || ib]
            });
            sums.iter()
                .fold((0.0, 0.0), |(i, u), s| (i + s[0], u + s[1]))
        }
        OracleMode::MonteCarlo => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
            let (mut inter, mut union) = (0u64, 0u64);
            for _ in 0..cfg.oracle_mc_samples {
                let v = uniform_sphere(&mut rng);
                let ia = ra.contains(v);
                let ib = rb.contains(v);
                inter += (ia && ib) as u64;
                union += (ia || ib) as u64;
            }
            (inter as f64, union as f64)
        }
    };
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Grid-integrated area (steradians) of a box's membership region.
pub fn exact_area(bx: &SphericalBox, grid_height: usize) -> f64 {
    let grid = Grid::new(grid_height);
    let region = BoxRegion::new(bx);
    let sums = grid.integrate(grid.band(bx), |v| [region.contains(v), false]);
    let total: f64 = sums.iter().map(|s| s[0]).sum();
    total * grid.cell * grid.cell
}

fn uniform_sphere(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let z: f64 = rng.gen_range(-1.0..=1.0);
    let phi: f64 = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
    let r = (1.0 - z * z).max(0.0).sqrt();
    [r * phi.cos(), r * phi.sin(), z]
}

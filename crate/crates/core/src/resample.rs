//! Reprojection between equirectangular panoramas and tangent-plane patches.
//!
//! [`extract_patch`] expands a box by `r`, lays a regular grid over the
//! tangent plane at the box center and samples the ERP bilinearly with
//! horizontal wrap-around. [`composite_patch`] runs the same mapping the
//! other way to paste an alpha patch onto a panorama.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{
    forward_gnomonic, inverse_gnomonic, ErpGeometry, LatLon, SphericalBox, TangentCoord,
};
use crate::raster::{blend4, Raster};

#[derive(Debug, Clone, PartialEq)]
pub struct ErpImage {
    pub geometry: ErpGeometry,
    pub raster: Raster,
}

impl ErpImage {
    pub fn new(raster: Raster) -> Result<Self> {
        if !matches!(raster.channels, 1 | 3 | 4) {
            return Err(Error::ChannelMismatch(format!(
                "ERP images have 1, 3 or 4 channels, got {}",
                raster.channels
            )));
        }
        Ok(Self {
            geometry: ErpGeometry::new(raster.height, raster.width)?,
            raster,
        })
    }

    pub fn filled(geometry: ErpGeometry, value: &[f32]) -> Result<Self> {
        Self::new(Raster::filled(geometry.height, geometry.width, value))
    }

    pub fn channels(&self) -> usize {
        self.raster.channels
    }

    /// Same image shifted east by `cols` columns.
    pub fn roll(&self, cols: isize) -> Self {
        let w = self.geometry.width as isize;
        let r = &self.raster;
        let rolled = Raster::from_fn(r.height, r.width, r.channels, |row, col, px| {
            let src = (col as isize - cols).rem_euclid(w) as usize;
            px.copy_from_slice(r.pixel(row, src));
        });
        Self {
            geometry: self.geometry,
            raster: rolled,
        }
    }

    /// Resamples to another ERP size by bilinear lookup at each target pixel
    /// center.
    pub fn resized(&self, geometry: ErpGeometry) -> Self {
        if geometry == self.geometry {
            return self.clone();
        }
        let raster = Raster::from_fn(
            geometry.height,
            geometry.width,
            self.channels(),
            |row, col, px| sample_erp_into(self, geometry.pixel_center(row, col), px),
        );
        Self { geometry, raster }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchImage {
    pub raster: Raster,
    /// The (expanded) box the patch was sampled from, if any.
    pub source_box: Option<SphericalBox>,
}

impl PatchImage {
    pub fn new(raster: Raster) -> Self {
        Self {
            raster,
            source_box: None,
        }
    }

    pub fn height(&self) -> usize {
        self.raster.height
    }

    pub fn width(&self) -> usize {
        self.raster.width
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    #[default]
    Bilinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiConfig {
    pub expansion: f64,
    pub patch_height: usize,
    pub patch_width: usize,
    pub interpolation: Interpolation,
}

impl Default for RoiConfig {
    fn default() -> Self {
        Self {
            expansion: 1.2,
            patch_height: 224,
            patch_width: 224,
            interpolation: Interpolation::Bilinear,
        }
    }
}

impl RoiConfig {
    /// Unexpanded sampling at the given patch size.
    pub fn exact(patch_height: usize, patch_width: usize) -> Self {
        Self {
            expansion: 1.0,
            patch_height,
            patch_width,
            interpolation: Interpolation::Bilinear,
        }
    }

    pub fn validate(&self) -> Result<()> {
        // r = 1 is allowed so annotated boxes can be read back unexpanded.
        if !(self.expansion.is_finite() && self.expansion >= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "expansion {} must be >= 1",
                self.expansion
            )));
        }
        if self.patch_height < 2 || self.patch_width < 2 {
            return Err(Error::InvalidConfig(format!(
                "patch size {}x{} must be at least 2x2",
                self.patch_height, self.patch_width
            )));
        }
        Ok(())
    }
}

/// Bilinear ERP lookup; wraps across the seam and clamps at the pole rows.
pub fn sample_erp(img: &ErpImage, p: LatLon) -> Vec<f32> {
    let mut out = vec![0.0; img.channels()];
    sample_erp_into(img, p, &mut out);
    out
}

pub fn sample_erp_into(img: &ErpImage, p: LatLon, out: &mut [f32]) {
    let g = img.geometry;
    let (row, col) = g.pixel_position(p);
    let row = row.clamp(0.0, (g.height - 1) as f64);
    let r0 = row.floor() as usize;
    let r1 = (r0 + 1).min(g.height - 1);
    let c0f = col.floor();
    let w = g.width as i64;
    let c0 = (c0f as i64).rem_euclid(w) as usize;
    let c1 = (c0f as i64 + 1).rem_euclid(w) as usize;
    let fr = (row - r0 as f64) as f32;
    let fc = (col - c0f) as f32;
    blend4(
        &img.raster,
        [(r0, c0), (r0, c1), (r1, c0), (r1, c1)],
        fr,
        fc,
        out,
    );
}

fn check_fov(fov_x: f64, fov_y: f64) -> Result<()> {
    for fov in [fov_x, fov_y] {
        if fov >= 180.0 {
            return Err(Error::FovTooLarge { fov });
        }
    }
    Ok(())
}

/// Half extents of a box on its unit-focal tangent plane.
fn tangent_extent(fov_x: f64, fov_y: f64) -> (f64, f64) {
    (
        (fov_x / 2.0).to_radians().tan(),
        (fov_y / 2.0).to_radians().tan(),
    )
}

/// Samples the expanded box onto a fixed-size upright patch.
pub fn extract_patch(img: &ErpImage, bx: &SphericalBox, cfg: &RoiConfig) -> Result<PatchImage> {
    cfg.validate()?;
    let fov_x = bx.fov_x * cfg.expansion;
    let fov_y = bx.fov_y * cfg.expansion;
    check_fov(fov_x, fov_y)?;
    let (tx, ty) = tangent_extent(fov_x, fov_y);
    let (hp, wp) = (cfg.patch_height, cfg.patch_width);
    let channels = img.channels();
    let mut raster = Raster::new(hp, wp, channels);
    raster
        .data
        .par_chunks_mut(wp * channels)
        .enumerate()
        .for_each(|(u, row)| {
            let y = ty * (1.0 - 2.0 * (u as f64 + 0.5) / hp as f64);
            for (v, px) in row.chunks_mut(channels).enumerate() {
                let x = tx * (2.0 * (v as f64 + 0.5) / wp as f64 - 1.0);
                let p = inverse_gnomonic(bx.center, TangentCoord::new(x, y));
                sample_erp_into(img, p, px);
            }
        });
    Ok(PatchImage {
        raster,
        source_box: Some(SphericalBox {
            center: bx.center,
            fov_x,
            fov_y,
        }),
    })
}

/// Rows of `geometry` that can intersect the gnomonic footprint of `bx`.
fn footprint_rows(
    geometry: &ErpGeometry,
    bx: &SphericalBox,
    tx: f64,
    ty: f64,
) -> std::ops::Range<usize> {
    let radius = tx.hypot(ty).atan().to_degrees();
    let hi = (bx.theta() + radius).min(90.0);
    let lo = (bx.theta() - radius).max(-90.0);
    let first = ((90.0 - hi) / geometry.dtheta()).floor() as isize - 1;
    let last = ((90.0 - lo) / geometry.dtheta()).ceil() as isize + 1;
    let h = geometry.height as isize;
    first.clamp(0, h) as usize..last.clamp(0, h) as usize
}

/// Visits every ERP pixel whose center falls inside the tangent-plane
/// rectangle of `bx`, passing the bilinearly sampled patch value.
fn for_each_footprint<F>(
    geometry: &ErpGeometry,
    patch: &Raster,
    bx: &SphericalBox,
    out: &mut Raster,
    visit: F,
) where
    F: Fn(&[f32], &mut [f32]) + Sync,
{
    let (tx, ty) = tangent_extent(bx.fov_x, bx.fov_y);
    let rows = footprint_rows(geometry, bx, tx, ty);
    let stride = out.width * out.channels;
    let out_channels = out.channels;
    let (hp, wp) = (patch.height as f64, patch.width as f64);
    let start = rows.start * stride;
    let end = rows.end * stride;
    out.data[start..end]
        .par_chunks_mut(stride)
        .enumerate()
        .for_each(|(k, row_px)| {
            let row = rows.start + k;
            let mut sample = vec![0.0f32; patch.channels];
            for col in 0..geometry.width {
                let p = geometry.pixel_center(row, col);
                let Ok(t) = forward_gnomonic(bx.center, p) else {
                    continue;
                };
                if t.x.abs() > tx || t.y.abs() > ty {
                    continue;
                }
                let v = (t.x / tx + 1.0) / 2.0 * wp - 0.5;
                let u = (1.0 - t.y / ty) / 2.0 * hp - 0.5;
                patch.sample_clamped(u, v, &mut sample);
                visit(
                    &sample,
                    &mut row_px[col * out_channels..(col + 1) * out_channels],
                );
            }
        });
}

fn color_channels(channels: usize) -> usize {
    match channels {
        2 => 1,
        4 => 3,
        n => n,
    }
}

/// Alpha-blends `patch` over `img` inside the gnomonic footprint of `bx`.
pub fn composite_patch(img: &ErpImage, patch: &PatchImage, bx: &SphericalBox) -> Result<ErpImage> {
    let p = &patch.raster;
    if !p.has_alpha() {
        return Err(Error::MissingAlpha);
    }
    check_fov(bx.fov_x, bx.fov_y)?;
    let pc = color_channels(p.channels);
    let ec = color_channels(img.channels());
    if pc != ec && pc != 1 {
        return Err(Error::ChannelMismatch(format!(
            "cannot composite a {pc}-color patch onto a {ec}-color image"
        )));
    }
    let out_alpha = img.channels() == 4;
    let mut out = img.raster.clone();
    for_each_footprint(&img.geometry, p, bx, &mut out, |s, px| {
        let a = s[p.channels - 1];
        if a <= 0.0 {
            return;
        }
        for (ch, v) in px.iter_mut().enumerate().take(ec) {
            let c = if pc == 1 { s[0] } else { s[ch] };
            *v = (a * c + (1.0 - a) * *v).clamp(0.0, 1.0);
        }
        if out_alpha {
            px[3] = (a + (1.0 - a) * px[3]).clamp(0.0, 1.0);
        }
    });
    Ok(ErpImage {
        geometry: img.geometry,
        raster: out,
    })
}

/// Per-pixel alpha that compositing `patch` at `bx` deposits on an ERP of the
/// given size.
pub fn footprint_alpha(
    geometry: &ErpGeometry,
    patch: &PatchImage,
    bx: &SphericalBox,
) -> Result<Vec<f32>> {
    let p = &patch.raster;
    if !p.has_alpha() {
        return Err(Error::MissingAlpha);
    }
    check_fov(bx.fov_x, bx.fov_y)?;
    let mut out = Raster::new(geometry.height, geometry.width, 1);
    for_each_footprint(geometry, p, bx, &mut out, |s, px| px[0] = s[p.channels - 1]);
    Ok(out.data)
}

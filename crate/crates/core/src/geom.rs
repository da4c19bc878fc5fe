//! Angular types, rotation into a box-local frame, and gnomonic projection.
//!
//! All angles crossing the public surface are in degrees. Latitude `theta` is
//! positive toward the north pole, longitude `phi` is normalized to
//! `(-180, 180]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inputs with `rho` below this are treated as the tangency point itself.
const RHO_EPS: f64 = 1e-12;

/// Smallest field of view a box may carry after clamping.
pub const MIN_FOV: f64 = 1e-6;

/// Normalizes a longitude into `(-180, 180]`.
pub fn normalize_lon(phi: f64) -> f64 {
    let r = phi.rem_euclid(360.0);
    if r > 180.0 {
        r - 360.0
    } else {
        r
    }
}

/// Signed shorter arc from `from` to `to`, in `(-180, 180]`.
pub fn lon_diff(to: f64, from: f64) -> f64 {
    normalize_lon(to - from)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatLon {
    pub theta: f64,
    pub phi: f64,
}

impl LatLon {
    /// Clamps latitude into `[-90, 90]` and wraps longitude into `(-180, 180]`.
    pub fn new(theta: f64, phi: f64) -> Self {
        Self {
            theta: theta.clamp(-90.0, 90.0),
            phi: normalize_lon(phi),
        }
    }

    pub(crate) fn from_unit(v: [f64; 3]) -> Self {
        let theta = v[2].atan2(v[0].hypot(v[1])).to_degrees();
        let phi = v[1].atan2(v[0]).to_degrees();
        Self::new(theta, phi)
    }

    pub fn to_unit(self) -> [f64; 3] {
        let (st, ct) = self.theta.to_radians().sin_cos();
        let (sp, cp) = self.phi.to_radians().sin_cos();
        [ct * cp, ct * sp, st]
    }
}

/// Great-circle distance between two points, in degrees.
pub fn angular_distance(a: LatLon, b: LatLon) -> f64 {
    let u = a.to_unit();
    let v = b.to_unit();
    let cross = [
        u[1] * v[2] - u[2] * v[1],
        u[2] * v[0] - u[0] * v[2],
        u[0] * v[1] - u[1] * v[0],
    ];
    let sin = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
    sin.atan2(dot(u, v)).to_degrees()
}

/// A point on the unit-focal tangent plane; `x` points east, `y` north.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentCoord {
    pub x: f64,
    pub y: f64,
}

impl TangentCoord {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// A viewpoint-centered spherical box.
///
/// The covered region is `{|theta'| <= fov_y / 2, |phi'| <= fov_x / 2}` where
/// `(theta', phi')` are coordinates in the frame that rotates `center` to
/// `(0, 0)` (see [`rotate_to_box_frame`]). Serialized as
/// `[theta, phi, fov_x, fov_y]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 4]", try_from = "[f64; 4]")]
pub struct SphericalBox {
    pub center: LatLon,
    pub fov_x: f64,
    pub fov_y: f64,
}

impl SphericalBox {
    /// Validates and builds a box. Longitude is wrapped; latitude and FoVs
    /// must already lie in range.
    pub fn new(theta: f64, phi: f64, fov_x: f64, fov_y: f64) -> Result<Self> {
        if !(theta.is_finite() && phi.is_finite() && fov_x.is_finite() && fov_y.is_finite()) {
            return Err(Error::InvalidBox("non-finite component".into()));
        }
        if !(-90.0..=90.0).contains(&theta) {
            return Err(Error::InvalidBox(format!(
                "latitude {theta} outside [-90, 90]"
            )));
        }
        if !(fov_x > 0.0 && fov_x <= 360.0) {
            return Err(Error::InvalidBox(format!("fov_x {fov_x} outside (0, 360]")));
        }
        if !(fov_y > 0.0 && fov_y <= 180.0) {
            return Err(Error::InvalidBox(format!("fov_y {fov_y} outside (0, 180]")));
        }
        Ok(Self {
            center: LatLon::new(theta, phi),
            fov_x,
            fov_y,
        })
    }

    /// Builds a box, clamping every component into its valid range.
    pub fn clamped(theta: f64, phi: f64, fov_x: f64, fov_y: f64) -> Self {
        Self {
            center: LatLon::new(theta, phi),
            fov_x: fov_x.clamp(MIN_FOV, 360.0),
            fov_y: fov_y.clamp(MIN_FOV, 180.0),
        }
    }

    pub fn theta(&self) -> f64 {
        self.center.theta
    }

    pub fn phi(&self) -> f64 {
        self.center.phi
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.center.theta, self.center.phi, self.fov_x, self.fov_y]
    }

    /// Same box with both FoVs multiplied by `factor`, clamped to range.
    pub fn expanded(&self, factor: f64) -> Self {
        Self::clamped(
            self.center.theta,
            self.center.phi,
            self.fov_x * factor,
            self.fov_y * factor,
        )
    }

    /// Largest angular distance from the center to any point of the box.
    pub fn angular_radius(&self) -> f64 {
        let half_x = (self.fov_x / 2.0).to_radians();
        let half_y = (self.fov_y / 2.0).to_radians();
        let c = half_x.cos().min(half_y.cos() * half_x.cos());
        c.clamp(-1.0, 1.0).acos().to_degrees()
    }
}

impl From<SphericalBox> for [f64; 4] {
    fn from(b: SphericalBox) -> Self {
        b.to_array()
    }
}

impl TryFrom<[f64; 4]> for SphericalBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        SphericalBox::new(v[0], v[1], v[2], v[3])
    }
}

/// Equirectangular raster dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErpGeometry {
    pub height: usize,
    pub width: usize,
}

impl ErpGeometry {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidConfig(format!(
                "ERP geometry {height}x{width} must be at least 1x1"
            )));
        }
        Ok(Self { height, width })
    }

    /// Degrees of latitude per pixel row.
    pub fn dtheta(&self) -> f64 {
        180.0 / self.height as f64
    }

    /// Degrees of longitude per pixel column.
    pub fn dphi(&self) -> f64 {
        360.0 / self.width as f64
    }

    pub fn row_latitude(&self, row: usize) -> f64 {
        90.0 - (row as f64 + 0.5) * self.dtheta()
    }

    pub fn col_longitude(&self, col: usize) -> f64 {
        -180.0 + (col as f64 + 0.5) * self.dphi()
    }

    pub fn pixel_center(&self, row: usize, col: usize) -> LatLon {
        LatLon::new(self.row_latitude(row), self.col_longitude(col))
    }

    /// Fractional `(row, col)` position of `p`, with pixel centers at integer
    /// coordinates. Columns are not wrapped.
    pub fn pixel_position(&self, p: LatLon) -> (f64, f64) {
        let row = (90.0 - p.theta) / self.dtheta() - 0.5;
        let col = (p.phi + 180.0) / self.dphi() - 0.5;
        (row, col)
    }
}

pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Orthonormal basis of the box-local frame: `forward` is the center,
/// `east` and `north` span its tangent plane.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LocalFrame {
    pub forward: [f64; 3],
    pub east: [f64; 3],
    pub north: [f64; 3],
}

impl LocalFrame {
    pub fn at(center: LatLon) -> Self {
        let (st, ct) = center.theta.to_radians().sin_cos();
        let (sp, cp) = center.phi.to_radians().sin_cos();
        Self {
            forward: [ct * cp, ct * sp, st],
            east: [-sp, cp, 0.0],
            north: [-st * cp, -st * sp, ct],
        }
    }

    /// Local `(x', y', z')` components of a global unit vector.
    #[inline]
    pub fn to_local(self, v: [f64; 3]) -> [f64; 3] {
        [dot(v, self.forward), dot(v, self.east), dot(v, self.north)]
    }

    #[inline]
    pub fn to_global(self, l: [f64; 3]) -> [f64; 3] {
        [
            l[0] * self.forward[0] + l[1] * self.east[0] + l[2] * self.north[0],
            l[0] * self.forward[1] + l[1] * self.east[1] + l[2] * self.north[1],
            l[0] * self.forward[2] + l[1] * self.east[2] + l[2] * self.north[2],
        ]
    }
}

/// Coordinates of `point` in the frame that carries `center` to `(0, 0)`.
///
/// The rotation first turns about the polar axis by `-center.phi`, then about
/// the horizontal axis orthogonal to the new prime meridian by `-center.theta`.
pub fn rotate_to_box_frame(center: LatLon, point: LatLon) -> LatLon {
    let local = LocalFrame::at(center).to_local(point.to_unit());
    LatLon::from_unit(local)
}

/// Inverse of [`rotate_to_box_frame`].
pub fn rotate_from_box_frame(center: LatLon, local: LatLon) -> LatLon {
    let global = LocalFrame::at(center).to_global(local.to_unit());
    LatLon::from_unit(global)
}

/// Projects `point` onto the tangent plane touching the sphere at `center`.
pub fn forward_gnomonic(center: LatLon, point: LatLon) -> Result<TangentCoord> {
    let (sc, cc) = center.theta.to_radians().sin_cos();
    let (s, c) = point.theta.to_radians().sin_cos();
    let (sd, cd) = (point.phi - center.phi).to_radians().sin_cos();
    let denom = sc * s + cc * c * cd;
    // cos(90 deg) does not round to zero
    if denom <= 1e-12 {
        return Err(Error::BehindPlane);
    }
    Ok(TangentCoord {
        x: c * sd / denom,
        y: (cc * s - sc * c * cd) / denom,
    })
}

/// Maps a tangent-plane point back onto the sphere.
///
/// Longitude uses the two-argument arctangent of
/// `(x sin nu, rho cos theta cos nu - y sin theta sin nu)`. Latitude uses the
/// equivalent `atan2` form of `asin(cos nu sin theta + y sin nu cos theta / rho)`,
/// which keeps full precision next to the poles.
pub fn inverse_gnomonic(center: LatLon, t: TangentCoord) -> LatLon {
    let (lat, dlon) = inverse_gnomonic_raw(center.theta, t);
    LatLon::new(lat, center.phi + dlon)
}

/// Latitude and unwrapped longitude offset from the center meridian.
pub(crate) fn inverse_gnomonic_raw(center_theta: f64, t: TangentCoord) -> (f64, f64) {
    let rho = t.x.hypot(t.y);
    if rho < RHO_EPS {
        return (center_theta, 0.0);
    }
    let (sc, cc) = center_theta.to_radians().sin_cos();
    let nu = rho.atan();
    let (sn, cn) = nu.sin_cos();
    let dlon = (t.x * sn).atan2(rho * cc * cn - t.y * sc * sn);
    // sin and cos of the latitude, both scaled by rho / sin(nu)
    let sin_lat = rho * cn * sc + t.y * sn * cc;
    let east = t.x * sn;
    let south = rho * cc * cn - t.y * sc * sn;
    let lat = sin_lat.atan2(east.hypot(south));
    (lat.to_degrees(), dlon.to_degrees())
}

/// The four edges of a box's rotated-frame region (top, right, bottom,
/// left), each sampled at most `step` degrees apart with both ends included.
pub fn box_outline(bx: &SphericalBox, step: f64) -> [Vec<LatLon>; 4] {
    let (hx, hy) = (bx.fov_x / 2.0, bx.fov_y / 2.0);
    let edge = |from: (f64, f64), to: (f64, f64)| -> Vec<LatLon> {
        let span = (to.0 - from.0).abs().max((to.1 - from.1).abs());
        let n = ((span / step).ceil() as usize).max(1);
        (0..=n)
            .map(|k| {
                let t = k as f64 / n as f64;
                let local = LatLon {
                    theta: from.0 + (to.0 - from.0) * t,
                    phi: from.1 + (to.1 - from.1) * t,
                };
                rotate_from_box_frame(bx.center, local)
            })
            .collect()
    };
    [
        edge((hy, -hx), (hy, hx)),
        edge((hy, hx), (-hy, hx)),
        edge((-hy, hx), (-hy, -hx)),
        edge((-hy, -hx), (hy, -hx)),
    ]
}

/// Whether `point` lies in the rotated-frame region of `bx`.
pub fn point_in_box(bx: &SphericalBox, point: LatLon) -> bool {
    let local = rotate_to_box_frame(bx.center, point);
    local.theta.abs() <= bx.fov_y / 2.0 && local.phi.abs() <= bx.fov_x / 2.0
}

/// Precomputed membership test equivalent to [`point_in_box`], working on
/// unit vectors without trigonometry.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BoxRegion {
    frame: LocalFrame,
    sin_half_y: f64,
    cos_half_x: f64,
    full_x: bool,
}

impl BoxRegion {
    pub fn new(bx: &SphericalBox) -> Self {
        Self {
            frame: LocalFrame::at(bx.center),
            sin_half_y: (bx.fov_y / 2.0).to_radians().sin(),
            cos_half_x: (bx.fov_x / 2.0).to_radians().cos(),
            full_x: bx.fov_x >= 360.0,
        }
    }

    #[inline]
    pub fn contains(&self, v: [f64; 3]) -> bool {
        let x = dot(v, self.frame.forward);
        let y = dot(v, self.frame.east);
        let z = dot(v, self.frame.north);
        if z.abs() > self.sin_half_y {
            return false;
        }
        if self.full_x {
            return true;
        }
        let r = x.hypot(y);
        // cos(phi') >= cos(fov_x / 2); phi' is 0 on the local polar axis.
        r == 0.0 || x >= self.cos_half_x * r
    }
}

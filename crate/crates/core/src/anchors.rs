//! Spherical anchors, FoV-parameterized box regression, anchor matching and
//! the two-term detection loss.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{lon_diff, ErpGeometry, SphericalBox};
use crate::iou::PreparedBox;

/// Horizontal-to-vertical FoV ratio `x:y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AspectRatio {
    pub x: f64,
    pub y: f64,
}

impl AspectRatio {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

impl fmt::Display for AspectRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.x, self.y)
    }
}

impl FromStr for AspectRatio {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (x, y) = s
            .split_once(':')
            .ok_or_else(|| Error::Parse(format!("aspect ratio '{s}' is not of the form x:y")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("aspect ratio '{s}': {e}")))
        };
        Ok(Self::new(parse(x)?, parse(y)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorConfig {
    /// Square-root FoV area of each anchor scale, in degrees.
    pub scales: Vec<f64>,
    pub aspect_ratios: Vec<AspectRatio>,
    pub feature_height: usize,
    pub feature_width: usize,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        Self {
            scales: vec![30.0, 60.0, 90.0],
            aspect_ratios: vec![
                AspectRatio::new(1.0, 1.0),
                AspectRatio::new(1.0, 2.0),
                AspectRatio::new(2.0, 1.0),
            ],
            // conv5_3 stride on a 512x1024 ERP
            feature_height: 32,
            feature_width: 64,
        }
    }
}

impl AnchorConfig {
    /// Anchors per feature location.
    pub fn per_location(&self) -> usize {
        self.scales.len() * self.aspect_ratios.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() || self.aspect_ratios.is_empty() {
            return Err(Error::InvalidConfig(
                "anchor scales and ratios must be non-empty".into(),
            ));
        }
        if self.scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidConfig(
                "anchor scales must be positive".into(),
            ));
        }
        if self
            .aspect_ratios
            .iter()
            .any(|r| !(r.x.is_finite() && r.y.is_finite() && r.x > 0.0 && r.y > 0.0))
        {
            return Err(Error::InvalidConfig(
                "aspect ratios must be positive".into(),
            ));
        }
        ErpGeometry::new(self.feature_height, self.feature_width)?;
        Ok(())
    }

    /// FoVs `(fov_x, fov_y)` of one scale/ratio pair, area preserving.
    pub fn anchor_fov(scale: f64, ratio: AspectRatio) -> (f64, f64) {
        let k = (ratio.x / ratio.y).sqrt();
        (scale * k, scale / k)
    }
}

/// Anchors centered on every feature cell, row-major, then scale-major and
/// ratio-minor within a cell.
pub fn generate_anchors(cfg: &AnchorConfig) -> Result<Vec<SphericalBox>> {
    cfg.validate()?;
    let grid = ErpGeometry::new(cfg.feature_height, cfg.feature_width)?;
    let shapes: Vec<(f64, f64)> = cfg
        .scales
        .iter()
        .flat_map(|&s| {
            cfg.aspect_ratios
                .iter()
                .map(move |&r| AnchorConfig::anchor_fov(s, r))
        })
        .collect();
    let mut anchors = Vec::with_capacity(grid.height * grid.width * shapes.len());
    for row in 0..grid.height {
        for col in 0..grid.width {
            let c = grid.pixel_center(row, col);
            for &(fx, fy) in &shapes {
                anchors.push(SphericalBox::clamped(c.theta, c.phi, fx, fy));
            }
        }
    }
    Ok(anchors)
}

/// Regression offsets of a box relative to a reference box.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RegressionTarget {
    pub t_theta: f64,
    pub t_phi: f64,
    pub t_fovx: f64,
    pub t_fovy: f64,
}

impl RegressionTarget {
    pub fn new(t_theta: f64, t_phi: f64, t_fovx: f64, t_fovy: f64) -> Self {
        Self {
            t_theta,
            t_phi,
            t_fovx,
            t_fovy,
        }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.t_theta, self.t_phi, self.t_fovx, self.t_fovy]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }
}

pub fn encode(bx: &SphericalBox, anchor: &SphericalBox) -> RegressionTarget {
    RegressionTarget {
        t_theta: (bx.theta() - anchor.theta()) / anchor.fov_y,
        t_phi: lon_diff(bx.phi(), anchor.phi()) / anchor.fov_x,
        t_fovx: (bx.fov_x / anchor.fov_x).ln(),
        t_fovy: (bx.fov_y / anchor.fov_y).ln(),
    }
}

/// Inverse of [`encode`]; the result is clamped into a valid box.
pub fn decode(t: &RegressionTarget, anchor: &SphericalBox) -> SphericalBox {
    SphericalBox::clamped(
        anchor.theta() + t.t_theta * anchor.fov_y,
        anchor.phi() + t.t_phi * anchor.fov_x,
        anchor.fov_x * t.t_fovx.exp(),
        anchor.fov_y * t.t_fovy.exp(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub positive_iou: f64,
    pub negative_iou: f64,
    pub batch_size: usize,
    pub positive_fraction: f64,
    pub lambda: f64,
    pub rng_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    SphRpn,
    RepNet,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sphrpn" => Ok(Preset::SphRpn),
            "repnet" => Ok(Preset::RepNet),
            other => Err(Error::Parse(format!(
                "unknown preset '{other}' (expected sphrpn or repnet)"
            ))),
        }
    }
}

impl MatchConfig {
    /// Proposal-stage matching: 0.7 / 0.3, 128 anchors at 1:1, lambda 3.
    pub fn sphrpn() -> Self {
        Self {
            positive_iou: 0.7,
            negative_iou: 0.3,
            batch_size: 128,
            positive_fraction: 0.5,
            lambda: 3.0,
            rng_seed: 0,
        }
    }

    /// Refinement-stage matching: 0.5 / 0.3, 128 RoIs at 1:3, lambda 1.
    pub fn repnet() -> Self {
        Self {
            positive_iou: 0.5,
            negative_iou: 0.3,
            batch_size: 128,
            positive_fraction: 0.25,
            lambda: 1.0,
            rng_seed: 0,
        }
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::SphRpn => Self::sphrpn(),
            Preset::RepNet => Self::repnet(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.negative_iou
            && self.negative_iou <= self.positive_iou
            && self.positive_iou <= 1.0)
        {
            return Err(Error::InvalidConfig(format!(
                "thresholds must satisfy 0 <= negative ({}) <= positive ({}) <= 1",
                self.negative_iou, self.positive_iou
            )));
        }
        if !(self.positive_fraction > 0.0 && self.positive_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "positive fraction {} outside (0, 1)",
                self.positive_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Assignment {
    Positive { gt: usize },
    Negative,
    Ignored,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub assignments: Vec<Assignment>,
    /// Highest IoU of each anchor against any ground truth.
    pub max_iou: Vec<f64>,
    /// Sampled anchor indices, ascending.
    pub sampled: Vec<usize>,
    pub sampled_positive: usize,
    pub sampled_negative: usize,
}

/// Labels anchors by IoU against the ground truth and draws a training
/// sample.
///
/// Besides the thresholds, the best anchor of every ground-truth box is made
/// positive for that box, so no box is left without a positive. When two
/// boxes share the same best anchor the later box takes its next best free
/// anchor.
pub fn match_and_sample(
    anchors: &[SphericalBox],
    gts: &[SphericalBox],
    cfg: &MatchConfig,
) -> Result<MatchResult> {
    if anchors.is_empty() {
        return Err(Error::EmptyAnchors);
    }
    cfg.validate()?;

    let prepared_gts: Vec<PreparedBox> = gts.iter().map(PreparedBox::new).collect();
    // ious[a * n_gt + g]
    let n_gt = gts.len();
    let mut ious = vec![0.0; anchors.len() * n_gt];
    for (a, anchor) in anchors.iter().enumerate() {
        let pa = PreparedBox::new(anchor);
        for (g, pg) in prepared_gts.iter().enumerate() {
            ious[a * n_gt + g] = pa.iou(pg);
        }
    }

    let mut assignments = Vec::with_capacity(anchors.len());
    let mut max_iou = Vec::with_capacity(anchors.len());
    for a in 0..anchors.len() {
        let row = &ious[a * n_gt..(a + 1) * n_gt];
        let (best_gt, best) = row
            .iter()
            .enumerate()
            .fold((None, 0.0f64), |(bg, bv), (g, &v)| {
                if bg.is_none() || v > bv {
                    (Some(g), v)
                } else {
                    (bg, bv)
                }
            });
        max_iou.push(best);
        let assignment = match best_gt {
            Some(g) if best >= cfg.positive_iou => Assignment::Positive { gt: g },
            _ if best < cfg.negative_iou => Assignment::Negative,
            _ => Assignment::Ignored,
        };
        assignments.push(assignment);
    }

    let mut forced = vec![false; anchors.len()];
    for g in 0..n_gt {
        let best = (0..anchors.len()).filter(|&a| !forced[a]).fold(
            None,
            |acc: Option<(usize, f64)>, a| {
                let v = ious[a * n_gt + g];
                match acc {
                    Some((_, bv)) if v <= bv => acc,
                    _ => Some((a, v)),
                }
            },
        );
        if let Some((a, _)) = best {
            forced[a] = true;
            assignments[a] = Assignment::Positive { gt: g };
        }
    }

    let positives: Vec<usize> = (0..anchors.len())
        .filter(|&a| matches!(assignments[a], Assignment::Positive { .. }))
        .collect();
    let negatives: Vec<usize> = (0..anchors.len())
        .filter(|&a| assignments[a] == Assignment::Negative)
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let pos_quota = (cfg.batch_size as f64 * cfg.positive_fraction).floor() as usize;
    let n_pos = positives.len().min(pos_quota);
    let n_neg = negatives.len().min(cfg.batch_size - n_pos);
    let mut sampled: Vec<usize> = sample(&mut rng, positives.len(), n_pos)
        .into_iter()
        .map(|i| positives[i])
        .chain(
            sample(&mut rng, negatives.len(), n_neg)
                .into_iter()
                .map(|i| negatives[i]),
        )
        .collect();
    sampled.sort_unstable();

    Ok(MatchResult {
        assignments,
        max_iou,
        sampled,
        sampled_positive: n_pos,
        sampled_negative: n_neg,
    })
}

pub fn smooth_l1(x: f64) -> f64 {
    if x.abs() < 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

pub fn smooth_l1_grad(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub total: f64,
    pub cls: f64,
    pub reg: f64,
    /// d total / d logits.
    pub grad_logits: Vec<f64>,
    /// d total / d t.
    pub grad_t: [f64; 4],
}

/// Softmax cross-entropy on `logits` plus `lambda` times the smooth-L1
/// regression loss, the latter only for foreground labels (`label >= 1`).
///
/// # Panics
///
/// If `label >= logits.len()`.
pub fn detection_loss(
    logits: &[f64],
    label: usize,
    t: &RegressionTarget,
    t_star: &RegressionTarget,
    lambda: f64,
) -> LossOutput {
    assert!(
        label < logits.len(),
        "label {label} out of range for {} classes",
        logits.len()
    );
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&z| (z - max).exp()).sum();
    let log_norm = max + sum.ln();
    let cls = (log_norm - logits[label]).max(0.0);
    let mut grad_logits: Vec<f64> = logits.iter().map(|&z| (z - log_norm).exp()).collect();
    grad_logits[label] -= 1.0;

    let mut reg = 0.0;
    let mut grad_t = [0.0; 4];
    if label >= 1 {
        let diff = t
            .to_array()
            .iter()
            .zip(t_star.to_array())
            .map(|(a, b)| a - b)
            .collect::<Vec<_>>();
        for (k, d) in diff.iter().enumerate() {
            reg += smooth_l1(*d);
            grad_t[k] = lambda * smooth_l1_grad(*d);
        }
    }
    LossOutput {
        total: cls + lambda * reg,
        cls,
        reg,
        grad_logits,
        grad_t,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sb(t: f64, p: f64, fx: f64, fy: f64) -> SphericalBox {
        SphericalBox::new(t, p, fx, fy).unwrap()
    }

    #[test]
    fn anchor_counts_and_shapes() {
        let cfg = AnchorConfig {
            feature_height: 16,
            feature_width: 32,
            ..AnchorConfig::default()
        };
        let anchors = generate_anchors(&cfg).unwrap();
        assert_eq!(anchors.len(), 16 * 32 * 9);
        assert_eq!(cfg.per_location(), 9);
        // first cell: scale 30 with 1:1, 1:2, 2:1
        assert_eq!((anchors[0].fov_x, anchors[0].fov_y), (30.0, 30.0));
        let (fx, fy) = (anchors[1].fov_x, anchors[1].fov_y);
        assert!((fx - 21.2132).abs() < 1e-4 && (fy - 42.4264).abs() < 1e-4);
        assert!((fx * fy - 900.0).abs() < 1e-9);
        assert_eq!(anchors[3].fov_x, 60.0);
        // cell centers follow ERP pixel centers of the feature grid
        let g = ErpGeometry::new(16, 32).unwrap();
        assert_eq!(anchors[9].center, g.pixel_center(0, 1));
        assert_eq!(anchors[9 * 32].center, g.pixel_center(1, 0));
    }

    #[test]
    fn anchor_config_errors() {
        let mut cfg = AnchorConfig::default();
        cfg.scales.clear();
        assert!(generate_anchors(&cfg).is_err());
        let cfg = AnchorConfig {
            aspect_ratios: vec![AspectRatio::new(0.0, 1.0)],
            ..AnchorConfig::default()
        };
        assert!(generate_anchors(&cfg).is_err());
        assert_eq!(
            "1:2".parse::<AspectRatio>().unwrap(),
            AspectRatio::new(1.0, 2.0)
        );
        assert!("12".parse::<AspectRatio>().is_err());
    }

    #[test]
    fn huge_anchor_fov_is_clamped() {
        let cfg = AnchorConfig {
            scales: vec![300.0],
            aspect_ratios: vec![AspectRatio::new(4.0, 1.0)],
            feature_height: 1,
            feature_width: 1,
        };
        let a = generate_anchors(&cfg).unwrap();
        assert_eq!((a[0].fov_x, a[0].fov_y), (360.0, 150.0));
    }

    #[test]
    fn encode_examples() {
        let a = sb(0.0, 0.0, 30.0, 30.0);
        assert_eq!(encode(&a, &a), RegressionTarget::default());
        let t = encode(&sb(3.0, -3.0, 60.0, 30.0), &a);
        assert!((t.t_theta - 0.1).abs() < 1e-15);
        assert!((t.t_phi + 0.1).abs() < 1e-15);
        assert!((t.t_fovx - 2f64.ln()).abs() < 1e-15);
        assert_eq!(t.t_fovy, 0.0);

        let t = encode(&sb(0.0, -178.0, 30.0, 30.0), &sb(0.0, 179.0, 30.0, 30.0));
        assert!((t.t_phi - 0.1).abs() < 1e-12);
    }

    #[test]
    fn decode_examples() {
        let a = sb(12.0, -40.0, 30.0, 45.0);
        assert_eq!(decode(&RegressionTarget::default(), &a), a);
        let b = decode(
            &RegressionTarget::new(0.1, -0.1, 2f64.ln(), 0.0),
            &sb(0.0, 0.0, 30.0, 30.0),
        );
        assert!((b.theta() - 3.0).abs() < 1e-12);
        assert!((b.phi() + 3.0).abs() < 1e-12);
        assert!((b.fov_x - 60.0).abs() < 1e-12);
        assert!((b.fov_y - 30.0).abs() < 1e-12);
    }

    #[test]
    fn decode_clamps() {
        let b = decode(
            &RegressionTarget::new(10.0, 0.0, 5.0, 5.0),
            &sb(0.0, 0.0, 30.0, 30.0),
        );
        assert_eq!((b.theta(), b.fov_x, b.fov_y), (90.0, 360.0, 180.0));
    }

    #[test]
    fn presets() {
        let p = MatchConfig::sphrpn();
        assert_eq!(
            (p.positive_iou, p.negative_iou, p.batch_size),
            (0.7, 0.3, 128)
        );
        assert_eq!((p.positive_fraction, p.lambda), (0.5, 3.0));
        let r = MatchConfig::repnet();
        assert_eq!(
            (r.positive_iou, r.negative_iou, r.batch_size),
            (0.5, 0.3, 128)
        );
        assert_eq!((r.positive_fraction, r.lambda), (0.25, 1.0));
        assert_eq!("SphRPN".parse::<Preset>().unwrap(), Preset::SphRpn);
        assert!("rpn".parse::<Preset>().is_err());
        let bad = MatchConfig {
            negative_iou: 0.8,
            ..MatchConfig::sphrpn()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn matching_labels() {
        let gt = sb(0.0, 0.0, 60.0, 60.0);
        let anchors = vec![
            gt,                         // iou 1
            sb(0.0, 5.0, 60.0, 60.0),   // high overlap
            sb(0.0, 40.0, 60.0, 60.0),  // 0.2
            sb(0.0, 150.0, 30.0, 30.0), // 0
            sb(0.0, 26.0, 60.0, 60.0),  // between thresholds
        ];
        let ious: Vec<f64> = anchors
            .iter()
            .map(|a| crate::iou::sph_iou(a, &gt))
            .collect();
        assert!(ious[1] >= 0.7 && (ious[2] - 0.2).abs() < 1e-12);
        assert!(ious[4] >= 0.3 && ious[4] < 0.7);
        let m = match_and_sample(&anchors, &[gt], &MatchConfig::sphrpn()).unwrap();
        assert_eq!(m.assignments[0], Assignment::Positive { gt: 0 });
        assert_eq!(m.assignments[1], Assignment::Positive { gt: 0 });
        assert_eq!(m.assignments[2], Assignment::Negative);
        assert_eq!(m.assignments[3], Assignment::Negative);
        assert_eq!(m.assignments[4], Assignment::Ignored);
        assert_eq!(m.sampled, vec![0, 1, 2, 3]);
    }

    #[test]
    fn forced_positive_for_poorly_covered_gt() {
        let anchors = vec![sb(0.0, 0.0, 30.0, 30.0), sb(0.0, 90.0, 30.0, 30.0)];
        let gts = vec![sb(0.0, 20.0, 30.0, 30.0), sb(0.0, 25.0, 30.0, 30.0)];
        let m = match_and_sample(&anchors, &gts, &MatchConfig::sphrpn()).unwrap();
        assert_eq!(m.assignments[0], Assignment::Positive { gt: 0 });
        // anchor 0 is taken, so the second box falls back to anchor 1
        assert_eq!(m.assignments[1], Assignment::Positive { gt: 1 });
    }

    #[test]
    fn empty_anchor_error() {
        assert!(matches!(
            match_and_sample(&[], &[], &MatchConfig::sphrpn()),
            Err(Error::EmptyAnchors)
        ));
        let anchors = vec![sb(0.0, 0.0, 30.0, 30.0)];
        let m = match_and_sample(&anchors, &[], &MatchConfig::sphrpn()).unwrap();
        assert_eq!(m.assignments, vec![Assignment::Negative]);
    }

    #[test]
    fn smooth_l1_examples() {
        assert_eq!(smooth_l1(0.5), 0.125);
        assert_eq!(smooth_l1(2.0), 1.5);
        assert_eq!(smooth_l1(-2.0), 1.5);
        let h = 1e-6;
        let fd = (smooth_l1(0.3 + h) - smooth_l1(0.3 - h)) / (2.0 * h);
        assert!((fd - smooth_l1_grad(0.3)).abs() / 0.3 < 1e-6);
        assert_eq!(smooth_l1_grad(-4.0), -1.0);
    }

    #[test]
    fn loss_examples() {
        let logits = vec![0.0; 21];
        let t = RegressionTarget::new(0.5, 0.2, -0.3, 3.0);
        let out = detection_loss(&logits, 0, &t, &RegressionTarget::default(), 3.0);
        assert!((out.cls - 21f64.ln()).abs() < 1e-12);
        assert!((out.cls - 3.0445).abs() < 1e-4);
        assert_eq!(out.reg, 0.0);
        assert_eq!(out.total, out.cls);
        assert_eq!(out.grad_t, [0.0; 4]);

        let out = detection_loss(&logits, 4, &t, &RegressionTarget::default(), 3.0);
        let reg = 0.125 + 0.02 + 0.045 + 2.5;
        assert!((out.reg - reg).abs() < 1e-12);
        assert!((out.total - (out.cls + 3.0 * reg)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn roundtrip(
            t in -89.0..89.0f64, p in -180.0..180.0f64, fx in 1.0..300.0f64, fy in 1.0..170.0f64,
            at in -89.0..89.0f64, ap in -180.0..180.0f64, afx in 5.0..300.0f64, afy in 5.0..170.0f64,
        ) {
            let b = sb(t, p, fx, fy);
            let a = sb(at, ap, afx, afy);
            let back = decode(&encode(&b, &a), &a);
            prop_assert!((back.theta() - b.theta()).abs() < 1e-9);
            prop_assert!(lon_diff(back.phi(), b.phi()).abs() < 1e-9);
            prop_assert!((back.fov_x - b.fov_x).abs() < 1e-9);
            prop_assert!((back.fov_y - b.fov_y).abs() < 1e-9);
        }

        #[test]
        fn encode_translation_invariant(
            t in -80.0..80.0f64, p in -180.0..180.0f64, dp in -30.0..30.0f64, shift in -360.0..360.0f64,
        ) {
            let b = sb(t, p + dp, 40.0, 20.0);
            let a = sb(t / 2.0, p, 30.0, 30.0);
            let e0 = encode(&b, &a);
            let e1 = encode(&sb(t, p + dp + shift, 40.0, 20.0), &sb(t / 2.0, p + shift, 30.0, 30.0));
            prop_assert!((e0.t_phi - e1.t_phi).abs() < 1e-12);
            prop_assert_eq!(e0.t_theta, e1.t_theta);
        }

        #[test]
        fn loss_properties(
            logits in proptest::collection::vec(-5.0..5.0f64, 2..22),
            label_seed in 0usize..100,
            t in proptest::array::uniform4(-3.0..3.0f64),
        ) {
            let label = label_seed % logits.len();
            let out = detection_loss(&logits, label, &RegressionTarget::from_array(t), &RegressionTarget::default(), 1.0);
            prop_assert!(out.cls >= 0.0 && out.reg >= 0.0 && out.total >= 0.0);
            let s: f64 = out.grad_logits.iter().sum();
            prop_assert!(s.abs() < 1e-10);
        }

        #[test]
        fn matching_determinism(seed in 0u64..1000) {
            let anchors = generate_anchors(&AnchorConfig { feature_height: 6, feature_width: 12, ..AnchorConfig::default() }).unwrap();
            let gts = vec![sb(10.0, 20.0, 40.0, 35.0), sb(-50.0, -100.0, 70.0, 50.0)];
            let cfg = MatchConfig::sphrpn().with_seed(seed);
            let a = match_and_sample(&anchors, &gts, &cfg).unwrap();
            let b = match_and_sample(&anchors, &gts, &cfg).unwrap();
            prop_assert_eq!(&a.sampled, &b.sampled);
            for &i in &a.sampled {
                prop_assert!(a.assignments[i] != Assignment::Ignored);
            }
            for g in 0..gts.len() {
                let owned = a.assignments.contains(&Assignment::Positive { gt: g });
                prop_assert!(owned);
            }
        }
    }
}

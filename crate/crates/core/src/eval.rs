//! Spherical NMS, proposal/final selection, and mAP under the integral IoU.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{lon_diff, normalize_lon, SphericalBox};
use crate::iou::{box_area, exact_iou, IoUConfig, PreparedBox};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: SphericalBox,
    /// 0 is background.
    pub class_id: u32,
    pub score: f64,
}

impl Detection {
    pub fn new(bbox: SphericalBox, class_id: u32, score: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidConfig(format!(
                "score {score} outside [0, 1]"
            )));
        }
        Ok(Self {
            bbox,
            class_id,
            score,
        })
    }
}

/// One line of a detections file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: String,
    pub class_id: u32,
    pub score: f64,
    #[serde(rename = "box")]
    pub bbox: SphericalBox,
}

impl DetectionRecord {
    pub fn detection(&self) -> Detection {
        Detection {
            bbox: self.bbox,
            class_id: self.class_id,
            score: self.score,
        }
    }
}

/// One line of a ground-truth file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    pub image_id: String,
    pub class_id: u32,
    #[serde(rename = "box")]
    pub bbox: SphericalBox,
}

/// Parses newline-delimited JSON, skipping blank lines.
pub fn read_jsonl<T: DeserializeOwned>(text: &str) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse(format!("line {}: {e}", n + 1)))
        })
        .collect()
}

pub fn write_jsonl<T: Serialize>(records: &[T]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn read_detections(text: &str) -> Result<Vec<DetectionRecord>> {
    let recs: Vec<DetectionRecord> = read_jsonl(text)?;
    for (n, r) in recs.iter().enumerate() {
        if !(0.0..=1.0).contains(&r.score) {
            return Err(Error::Parse(format!(
                "detection {}: score {} outside [0, 1]",
                n + 1,
                r.score
            )));
        }
    }
    Ok(recs)
}

/// Descending score, ties by lower index.
fn score_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    order
}

/// Greedy NMS within each class. Returns kept indices in ascending order.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<usize> {
    greedy_nms(dets, iou_threshold, true)
}

/// Greedy NMS ignoring class labels.
pub fn nms_class_agnostic(dets: &[Detection], iou_threshold: f64) -> Vec<usize> {
    greedy_nms(dets, iou_threshold, false)
}

/// Per-box bounds used to skip pairs whose fast IoU cannot pass.
#[derive(Debug, Clone, Copy)]
struct Bounds {
    lat_lo: f64,
    lat_hi: f64,
    lon: f64,
    half_width: f64,
    area: f64,
    /// Longitude coverage is not a single arc around `lon`.
    wide: bool,
    /// Has a pole-overflow sub-region.
    split: bool,
    rank: u32,
}

impl Bounds {
    fn new(p: &PreparedBox, rank: usize) -> Self {
        let (lat_lo, lat_hi) = p.lat_extent();
        let bx = p.inner();
        Bounds {
            lat_lo,
            lat_hi,
            lon: bx.phi(),
            half_width: bx.fov_x / 2.0,
            area: box_area(bx),
            wide: p.is_split() || bx.fov_x >= 180.0,
            split: p.is_split(),
            rank: rank as u32,
        }
    }

    fn mid_lat(&self) -> f64 {
        (self.lat_lo + self.lat_hi) / 2.0
    }

    /// False only when the fast IoU is certainly at most `threshold`.
    #[inline]
    fn may_exceed(&self, o: &Bounds, threshold: f64) -> bool {
        if self.lat_lo >= o.lat_hi || o.lat_lo >= self.lat_hi {
            return false;
        }
        if !self.wide
            && !o.wide
            && lon_diff(self.lon, o.lon).abs() >= self.half_width + o.half_width
        {
            return false;
        }
        // for single-rectangle boxes the intersection never exceeds the
        // smaller area, so IoU <= min / max
        if !self.split && !o.split {
            let ratio = self.area.min(o.area) / self.area.max(o.area);
            if ratio * (1.0 + 1e-9) <= threshold {
                return false;
            }
        }
        true
    }
}

const CELL_DEG: f64 = 10.0;
const LAT_CELLS: usize = 18;
const LON_CELLS: usize = 36;
const WIDE_CELL: usize = LAT_CELLS * LON_CELLS;

fn lat_cell(lat: f64) -> usize {
    (((lat + 90.0) / CELL_DEG).max(0.0) as usize).min(LAT_CELLS - 1)
}

fn lon_cell(lon: f64) -> usize {
    (((lon + 180.0) / CELL_DEG).max(0.0) as usize).min(LON_CELLS - 1)
}

/// Live boxes bucketed by the cell holding their center. Wide boxes share
/// one extra list that every query visits.
struct CellIndex {
    cells: Vec<Vec<Bounds>>,
    slot: Vec<(u32, u32)>,
    max_half_lat: f64,
    max_half_lon: f64,
}

impl CellIndex {
    fn new(members: &[Bounds], n: usize) -> Self {
        let mut idx = CellIndex {
            cells: vec![Vec::new(); WIDE_CELL + 1],
            slot: vec![(u32::MAX, 0); n],
            max_half_lat: 0.0,
            max_half_lon: 0.0,
        };
        for b in members {
            let cell = if b.wide {
                WIDE_CELL
            } else {
                idx.max_half_lat = idx.max_half_lat.max((b.lat_hi - b.lat_lo) / 2.0);
                idx.max_half_lon = idx.max_half_lon.max(b.half_width);
                lat_cell(b.mid_lat()) * LON_CELLS + lon_cell(b.lon)
            };
            idx.slot[b.rank as usize] = (cell as u32, idx.cells[cell].len() as u32);
            idx.cells[cell].push(*b);
        }
        idx
    }

    fn remove(&mut self, rank: usize) {
        let (cell, k) = self.slot[rank];
        let list = &mut self.cells[cell as usize];
        list.swap_remove(k as usize);
        if let Some(moved) = list.get(k as usize) {
            self.slot[moved.rank as usize].1 = k;
        }
    }

    /// Cells that may hold a box whose IoU with `b` exceeds `threshold`.
    ///
    /// For two single-rectangle boxes, IoU > t needs a longitude overlap
    /// above `t * fov_x` and a latitude overlap `d` with
    /// `sin(d / 2) > t * sin(fov_y / 2)`, which bounds how far apart the
    /// centers can be.
    fn query(&self, b: &Bounds, threshold: f64, out: &mut Vec<usize>) {
        const SLACK: f64 = 1e-6;
        out.clear();
        out.push(WIDE_CELL);
        let half_lat = (b.lat_hi - b.lat_lo) / 2.0;
        let min_dlat = if b.wide {
            0.0
        } else {
            2.0 * (threshold * half_lat.to_radians().sin())
                .asin()
                .to_degrees()
        };
        let lat_reach = (half_lat + self.max_half_lat - min_dlat).max(0.0) + SLACK;
        let rows = lat_cell(b.mid_lat() - lat_reach)..=lat_cell(b.mid_lat() + lat_reach);
        let lon_reach =
            (b.half_width * (1.0 - 2.0 * threshold) + self.max_half_lon).max(0.0) + SLACK;
        let (first, count) = if b.wide || lon_reach >= 180.0 {
            (0, LON_CELLS)
        } else {
            (
                lon_cell(normalize_lon(b.lon - lon_reach)),
                ((2.0 * lon_reach / CELL_DEG).ceil() as usize + 1).min(LON_CELLS),
            )
        };
        for row in rows {
            for step in 0..count {
                out.push(row * LON_CELLS + (first + step) % LON_CELLS);
            }
        }
    }
}

/// Greedy suppression over one class group given in score order. Appends
/// kept ranks to `kept`.
fn greedy_group(boxes: &[PreparedBox], group: &[Bounds], threshold: f64, kept: &mut Vec<usize>) {
    let mut index = CellIndex::new(group, boxes.len());
    let mut suppressed = vec![false; boxes.len()];
    let mut cells = Vec::new();
    for b in group {
        let r = b.rank as usize;
        if suppressed[r] {
            continue;
        }
        index.remove(r);
        kept.push(r);
        index.query(b, threshold, &mut cells);
        for &cell in &cells {
            let mut k = 0;
            while k < index.cells[cell].len() {
                let o = index.cells[cell][k];
                let j = o.rank as usize;
                if b.may_exceed(&o, threshold) && boxes[r].iou(&boxes[j]) > threshold {
                    suppressed[j] = true;
                    index.remove(j);
                } else {
                    k += 1;
                }
            }
        }
    }
}

fn greedy_nms(dets: &[Detection], iou_threshold: f64, per_class: bool) -> Vec<usize> {
    let order = score_order(dets);
    let boxes: Vec<PreparedBox> = order
        .iter()
        .map(|&i| PreparedBox::new(&dets[i].bbox))
        .collect();
    let mut groups: BTreeMap<u32, Vec<Bounds>> = BTreeMap::new();
    for (rank, &i) in order.iter().enumerate() {
        groups
            .entry(if per_class { dets[i].class_id } else { 0 })
            .or_default()
            .push(Bounds::new(&boxes[rank], rank));
    }
    let mut kept_ranks = Vec::new();
    for group in groups.values() {
        greedy_group(&boxes, group, iou_threshold, &mut kept_ranks);
    }
    let mut kept: Vec<usize> = kept_ranks.into_iter().map(|r| order[r]).collect();
    kept.sort_unstable();
    kept
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub proposal_nms_iou: f64,
    pub final_nms_iou: f64,
    pub score_floor: f64,
    pub top_n: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            proposal_nms_iou: 0.7,
            final_nms_iou: 0.45,
            score_floor: 0.1,
            top_n: 50,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("proposal_nms_iou", self.proposal_nms_iou),
            ("final_nms_iou", self.final_nms_iou),
            ("score_floor", self.score_floor),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{name} {v} outside [0, 1]")));
            }
        }
        if self.top_n == 0 {
            return Err(Error::InvalidConfig("top_n must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Class-agnostic NMS, then the `top_n` best.
    Proposal,
    /// Score floor, then per-class NMS.
    Final,
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "proposal" => Ok(Stage::Proposal),
            "final" => Ok(Stage::Final),
            other => Err(Error::Parse(format!("unknown stage '{other}'"))),
        }
    }
}

/// Indices selected by one pipeline stage, best score first.
pub fn select_indices(
    dets: &[Detection],
    cfg: &PipelineConfig,
    stage: Stage,
) -> Result<Vec<usize>> {
    cfg.validate()?;
    let mut picked = match stage {
        Stage::Proposal => nms_class_agnostic(dets, cfg.proposal_nms_iou),
        Stage::Final => {
            let survivors: Vec<usize> = (0..dets.len())
                .filter(|&i| dets[i].score >= cfg.score_floor)
                .collect();
            let subset: Vec<Detection> = survivors.iter().map(|&i| dets[i]).collect();
            nms(&subset, cfg.final_nms_iou)
                .into_iter()
                .map(|k| survivors[k])
                .collect()
        }
    };
    picked.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    if stage == Stage::Proposal {
        picked.truncate(cfg.top_n);
    }
    Ok(picked)
}

pub fn filter_and_select(
    dets: &[Detection],
    cfg: &PipelineConfig,
    stage: Stage,
) -> Result<Vec<Detection>> {
    Ok(select_indices(dets, cfg, stage)?
        .into_iter()
        .map(|i| dets[i])
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ApMethod {
    /// Mean of the interpolated precision at recall 0, 0.1, ..., 1.
    #[default]
    ElevenPoint,
    /// Area under the monotone precision envelope.
    AllPoints,
}

/// Average precision from score-ordered true/false positive flags.
pub fn average_precision(tp: &[bool], num_gt: usize, method: ApMethod) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut recall = Vec::with_capacity(tp.len());
    let mut precision = Vec::with_capacity(tp.len());
    let mut hits = 0usize;
    for (k, &t) in tp.iter().enumerate() {
        hits += t as usize;
        recall.push(hits as f64 / num_gt as f64);
        precision.push(hits as f64 / (k + 1) as f64);
    }
    match method {
        ApMethod::ElevenPoint => {
            let sum: f64 = (0..=10)
                .map(|k| {
                    let t = k as f64 / 10.0;
                    recall
                        .iter()
                        .zip(&precision)
                        .filter(|(r, _)| **r >= t)
                        .map(|(_, p)| *p)
                        .fold(0.0, f64::max)
                })
                .sum();
            sum / 11.0
        }
        ApMethod::AllPoints => {
            let mut envelope = precision.clone();
            for k in (0..envelope.len().saturating_sub(1)).rev() {
                envelope[k] = envelope[k].max(envelope[k + 1]);
            }
            let mut prev = 0.0;
            let mut ap = 0.0;
            for (r, p) in recall.iter().zip(&envelope) {
                ap += (r - prev) * p;
                prev = *r;
            }
            ap
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub oracle: IoUConfig,
    pub ap_method: ApMethod,
    /// Width of the latitude bands in the breakdown, degrees.
    pub band_width: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            oracle: IoUConfig::default(),
            ap_method: ApMethod::ElevenPoint,
            band_width: 15.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub class_id: u32,
    pub num_gt: usize,
    pub num_det: usize,
    pub ap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandAp {
    /// Bounds on absolute ground-truth center latitude, degrees.
    pub lat_lo: f64,
    pub lat_hi: f64,
    pub num_gt: usize,
    pub map: Option<f64>,
    pub per_class: Vec<ClassAp>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub iou_threshold: f64,
    pub ap_method: ApMethod,
    pub per_class: Vec<ClassAp>,
    pub map: f64,
    pub bands: Vec<BandAp>,
}

impl EvalReport {
    pub fn ap(&self, class_id: u32) -> Option<f64> {
        self.per_class
            .iter()
            .find(|c| c.class_id == class_id)
            .map(|c| c.ap)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "class  num_gt  num_det      AP");
        for c in &self.per_class {
            let _ = writeln!(
                s,
                "{:>5}  {:>6}  {:>7}  {:.4}",
                c.class_id, c.num_gt, c.num_det, c.ap
            );
        }
        let _ = writeln!(s, "mAP@{:.2}: {:.4}", self.iou_threshold, self.map);
        let _ = writeln!(s);
        let _ = writeln!(s, "|lat| band   num_gt     mAP");
        for b in &self.bands {
            let map = b.map.map_or("-".to_string(), |m| format!("{m:.4}"));
            let _ = writeln!(
                s,
                "{:>4.0}-{:<4.0}  {:>7}  {:>6}",
                b.lat_lo, b.lat_hi, b.num_gt, map
            );
        }
        s
    }
}

/// Outcome of matching one detection.
#[derive(Debug, Clone, Copy)]
struct Matched {
    det: usize,
    gt: Option<usize>,
}

/// Total order for detections that does not depend on input position unless
/// two records are identical.
fn det_order(dets: &[DetectionRecord], a: usize, b: usize) -> Ordering {
    let (x, y) = (&dets[a], &dets[b]);
    y.score
        .total_cmp(&x.score)
        .then_with(|| x.image_id.cmp(&y.image_id))
        .then_with(|| {
            x.bbox
                .to_array()
                .iter()
                .zip(y.bbox.to_array())
                .map(|(p, q)| p.total_cmp(&q))
                .find(|o| *o != Ordering::Equal)
                .unwrap_or(Ordering::Equal)
        })
        .then(a.cmp(&b))
}

/// Greedy score-ordered matching of one class.
fn match_class(
    dets: &[DetectionRecord],
    det_idx: &[usize],
    gts: &[GroundTruthRecord],
    gt_by_image: &BTreeMap<&str, Vec<usize>>,
    cfg: &EvalConfig,
) -> Vec<Matched> {
    let mut order = det_idx.to_vec();
    order.sort_by(|&a, &b| det_order(dets, a, b));
    // IoU against every same-image ground truth, computed up front in parallel
    let ious: Vec<Vec<(usize, f64)>> = order
        .par_iter()
        .map(|&d| {
            gt_by_image
                .get(dets[d].image_id.as_str())
                .map(|list| {
                    list.iter()
                        .map(|&g| (g, exact_iou(&dets[d].bbox, &gts[g].bbox, &cfg.oracle)))
                        .collect()
                })
                .unwrap_or_default()
        })
        .collect();

    let mut taken = BTreeSet::new();
    order
        .iter()
        .zip(ious)
        .map(|(&d, cands)| {
            let best = cands
                .into_iter()
                .filter(|(g, iou)| *iou >= cfg.iou_threshold && !taken.contains(g))
                .fold(None, |acc: Option<(usize, f64)>, (g, iou)| match acc {
                    Some((bg, bi)) if bi > iou || (bi == iou && bg < g) => acc,
                    _ => Some((g, iou)),
                });
            let gt = best.map(|(g, _)| g);
            if let Some(g) = gt {
                taken.insert(g);
            }
            Matched { det: d, gt }
        })
        .collect()
}

fn band_of(theta: f64, width: f64, bands: usize) -> usize {
    ((theta.abs() / width).floor() as usize).min(bands - 1)
}

/// Per-class AP and mAP, matching detections to ground truth with the
/// integral IoU.
pub fn evaluate_map(
    dets: &[DetectionRecord],
    gts: &[GroundTruthRecord],
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    if gts.is_empty() {
        return Err(Error::NoGroundTruth);
    }
    cfg.oracle.validate()?;
    if !(cfg.band_width > 0.0 && cfg.band_width <= 90.0) {
        return Err(Error::InvalidConfig(format!(
            "band width {} outside (0, 90]",
            cfg.band_width
        )));
    }
    let n_bands = (90.0 / cfg.band_width).ceil() as usize;

    let classes: BTreeSet<u32> = gts.iter().map(|g| g.class_id).collect();
    let mut per_class = Vec::new();
    let mut band_tables: Vec<Vec<ClassAp>> = vec![Vec::new(); n_bands];

    for &class in &classes {
        let class_gts: Vec<usize> = (0..gts.len())
            .filter(|&g| gts[g].class_id == class)
            .collect();
        let mut gt_by_image: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for &g in &class_gts {
            gt_by_image
                .entry(gts[g].image_id.as_str())
                .or_default()
                .push(g);
        }
        let det_idx: Vec<usize> = (0..dets.len())
            .filter(|&d| dets[d].class_id == class)
            .collect();
        let matched = match_class(dets, &det_idx, gts, &gt_by_image, cfg);

        let flags: Vec<bool> = matched.iter().map(|m| m.gt.is_some()).collect();
        per_class.push(ClassAp {
            class_id: class,
            num_gt: class_gts.len(),
            num_det: det_idx.len(),
            ap: average_precision(&flags, class_gts.len(), cfg.ap_method),
        });

        for (band, table) in band_tables.iter_mut().enumerate() {
            let num_gt = class_gts
                .iter()
                .filter(|&&g| band_of(gts[g].bbox.theta(), cfg.band_width, n_bands) == band)
                .count();
            if num_gt == 0 {
                continue;
            }
            let in_band: Vec<&Matched> = matched
                .iter()
                .filter(|m| {
                    let theta = match m.gt {
                        Some(g) => gts[g].bbox.theta(),
                        None => dets[m.det].bbox.theta(),
                    };
                    band_of(theta, cfg.band_width, n_bands) == band
                })
                .collect();
            let flags: Vec<bool> = in_band.iter().map(|m| m.gt.is_some()).collect();
            table.push(ClassAp {
                class_id: class,
                num_gt,
                num_det: in_band.len(),
                ap: average_precision(&flags, num_gt, cfg.ap_method),
            });
        }
    }

    let mean = |v: &[ClassAp]| v.iter().map(|c| c.ap).sum::<f64>() / v.len() as f64;
    let bands = band_tables
        .into_iter()
        .enumerate()
        .map(|(b, table)| BandAp {
            lat_lo: b as f64 * cfg.band_width,
            lat_hi: ((b + 1) as f64 * cfg.band_width).min(90.0),
            num_gt: table.iter().map(|c| c.num_gt).sum(),
            map: (!table.is_empty()).then(|| mean(&table)),
            per_class: table,
        })
        .collect();

    Ok(EvalReport {
        iou_threshold: cfg.iou_threshold,
        ap_method: cfg.ap_method,
        map: mean(&per_class),
        per_class,
        bands,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::iou::sph_iou;

    fn sb(t: f64, p: f64, fx: f64, fy: f64) -> SphericalBox {
        SphericalBox::new(t, p, fx, fy).unwrap()
    }

    fn det(t: f64, p: f64, score: f64) -> Detection {
        Detection::new(sb(t, p, 30.0, 30.0), 1, score).unwrap()
    }

    #[test]
    fn nms_examples() {
        assert_eq!(nms(&[det(0.0, 0.0, 0.5)], 0.45), vec![0]);
        let a = det(10.0, 10.0, 0.8);
        let b = det(10.0, 10.0, 0.9);
        assert_eq!(nms(&[a, b], 0.45), vec![1]);
        assert!(nms(&[], 0.5).is_empty());
    }

    #[test]
    fn nms_respects_classes() {
        let a = det(0.0, 0.0, 0.9);
        let mut b = det(0.0, 0.0, 0.8);
        b.class_id = 2;
        assert_eq!(nms(&[a, b], 0.45), vec![0, 1]);
        assert_eq!(nms_class_agnostic(&[a, b], 0.45), vec![0]);
    }

    #[test]
    fn nms_ties_prefer_lower_index() {
        let dets = [det(0.0, 0.0, 0.5), det(0.0, 0.0, 0.5)];
        assert_eq!(nms(&dets, 0.3), vec![0]);
    }

    #[test]
    fn nms_across_seam_and_pole() {
        let dets = [
            det(0.0, 179.0, 0.9),
            det(0.0, -179.0, 0.8),
            Detection::new(sb(85.0, 0.0, 60.0, 40.0), 1, 0.7).unwrap(),
            Detection::new(sb(85.0, 180.0, 60.0, 40.0), 1, 0.6).unwrap(),
        ];
        let thr = sph_iou(&dets[2].bbox, &dets[3].bbox) / 2.0;
        assert_eq!(nms(&dets, thr.min(0.45)), vec![0, 2]);
    }

    #[test]
    fn selection_stages() {
        let dets: Vec<Detection> = (0..100)
            .map(|k| {
                Detection::new(
                    sb(0.0, -178.0 + 3.6 * k as f64, 2.0, 2.0),
                    1,
                    k as f64 / 100.0,
                )
                .unwrap()
            })
            .collect();
        let cfg = PipelineConfig::default();
        let top = filter_and_select(&dets, &cfg, Stage::Proposal).unwrap();
        assert_eq!(top.len(), 50);
        assert_eq!(top[0].score, 0.99);
        assert_eq!(top[49].score, 0.5);

        let low: Vec<Detection> = dets
            .iter()
            .map(|d| Detection { score: 0.05, ..*d })
            .collect();
        assert!(filter_and_select(&low, &cfg, Stage::Final)
            .unwrap()
            .is_empty());
        assert!(filter_and_select(&[], &cfg, Stage::Final)
            .unwrap()
            .is_empty());
        assert!(filter_and_select(&[], &cfg, Stage::Proposal)
            .unwrap()
            .is_empty());
        let bad = PipelineConfig { top_n: 0, ..cfg };
        assert!(filter_and_select(&dets, &bad, Stage::Proposal).is_err());
    }

    #[test]
    fn eleven_point_example() {
        // two ground truths; TP, FP, TP
        let ap = average_precision(&[true, false, true], 2, ApMethod::ElevenPoint);
        // precision 1 for recall thresholds 0..=0.5, 2/3 for 0.6..=1.0
        assert!((ap - (6.0 + 5.0 * 2.0 / 3.0) / 11.0).abs() < 1e-12);
        let all = average_precision(&[true, false, true], 2, ApMethod::AllPoints);
        assert!((all - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-12);
        assert_eq!(average_precision(&[], 3, ApMethod::ElevenPoint), 0.0);
        assert_eq!(
            average_precision(&[true, true], 2, ApMethod::ElevenPoint),
            1.0
        );
    }

    fn gt(img: &str, class: u32, b: SphericalBox) -> GroundTruthRecord {
        GroundTruthRecord {
            image_id: img.into(),
            class_id: class,
            bbox: b,
        }
    }

    fn dr(img: &str, class: u32, score: f64, b: SphericalBox) -> DetectionRecord {
        DetectionRecord {
            image_id: img.into(),
            class_id: class,
            score,
            bbox: b,
        }
    }

    fn fast_cfg() -> EvalConfig {
        EvalConfig {
            oracle: IoUConfig::grid(128),
            ..EvalConfig::default()
        }
    }

    #[test]
    fn perfect_and_empty_detections() {
        let gts = vec![
            gt("a", 1, sb(10.0, 20.0, 40.0, 30.0)),
            gt("a", 2, sb(-50.0, 100.0, 30.0, 30.0)),
            gt("b", 1, sb(80.0, -30.0, 60.0, 20.0)),
        ];
        let dets: Vec<DetectionRecord> = gts
            .iter()
            .enumerate()
            .map(|(k, g)| dr(&g.image_id, g.class_id, 0.3 + 0.1 * k as f64, g.bbox))
            .collect();
        let r = evaluate_map(&dets, &gts, &fast_cfg()).unwrap();
        assert_eq!(r.map, 1.0);
        assert_eq!(r.ap(1), Some(1.0));
        assert_eq!(r.bands.len(), 6);
        assert_eq!(r.bands[0].num_gt, 1);
        assert_eq!(r.bands[3].num_gt, 1);
        assert_eq!(r.bands[5].num_gt, 1);
        assert!(r.bands[1].map.is_none());

        let r = evaluate_map(&[], &gts, &fast_cfg()).unwrap();
        assert_eq!(r.map, 0.0);
        assert!(matches!(
            evaluate_map(&dets, &[], &fast_cfg()),
            Err(Error::NoGroundTruth)
        ));
    }

    #[test]
    fn duplicates_are_false_positives() {
        let b = sb(0.0, 0.0, 40.0, 40.0);
        let gts = vec![gt("a", 1, b)];
        let dets = vec![dr("a", 1, 0.9, b), dr("a", 1, 0.8, b)];
        let r = evaluate_map(&dets, &gts, &fast_cfg()).unwrap();
        // precision stays 1 at recall 1 because the FP comes later
        assert_eq!(r.map, 1.0);
        let dets = vec![dr("a", 1, 0.7, b), dr("a", 1, 0.8, b)];
        assert_eq!(evaluate_map(&dets, &gts, &fast_cfg()).unwrap().map, 1.0);
        // a detection in another image never matches
        let dets = vec![dr("b", 1, 0.9, b), dr("a", 1, 0.8, b)];
        let r = evaluate_map(&dets, &gts, &fast_cfg()).unwrap();
        assert!((r.map - (0.5 * 11.0) / 11.0).abs() < 1e-12);
    }

    #[test]
    fn matching_picks_highest_iou() {
        let gts = vec![
            gt("a", 1, sb(0.0, 0.0, 40.0, 40.0)),
            gt("a", 1, sb(0.0, 10.0, 40.0, 40.0)),
        ];
        let dets = vec![
            dr("a", 1, 0.9, sb(0.0, 9.0, 40.0, 40.0)),
            dr("a", 1, 0.8, sb(0.0, 1.0, 40.0, 40.0)),
        ];
        // first-found matching would give the first detection GT 0 and the
        // second detection GT 1 at lower IoU; both are TPs either way, but
        // with the best-IoU rule both reach IoU > 0.9
        let r = evaluate_map(&dets, &gts, &fast_cfg()).unwrap();
        assert_eq!(r.map, 1.0);
    }

    #[test]
    fn jsonl_roundtrip_and_validation() {
        let recs = vec![dr("img", 3, 0.5, sb(1.0, 2.0, 3.0, 4.0))];
        let text = write_jsonl(&recs).unwrap();
        assert_eq!(
            text,
            "{\"image_id\":\"img\",\"class_id\":3,\"score\":0.5,\"box\":[1.0,2.0,3.0,4.0]}\n"
        );
        assert_eq!(read_detections(&text).unwrap(), recs);
        assert!(read_detections(
            "{\"image_id\":\"i\",\"class_id\":1,\"score\":1.5,\"box\":[0,0,1,1]}"
        )
        .is_err());
        assert!(read_jsonl::<GroundTruthRecord>(
            "{\"image_id\":\"i\",\"class_id\":1,\"box\":[0,0,0,1]}"
        )
        .is_err());
        let g: Vec<GroundTruthRecord> =
            read_jsonl("\n{\"image_id\":\"i\",\"class_id\":1,\"box\":[0,0,1,1]}\n\n").unwrap();
        assert_eq!(g.len(), 1);
    }

    #[test]
    fn kept_sets_are_not_nested_across_thresholds() {
        let d =
            |p: f64, fx: f64, score: f64| Detection::new(sb(0.0, p, fx, 60.0), 1, score).unwrap();
        let dets = [
            d(70.0, 60.0, 0.9),
            d(0.0, 100.0, 0.8),
            d(-20.0, 40.0, 0.7),
            d(20.0, 40.0, 0.6),
        ];
        // B overlaps A slightly and covers most of C and D
        assert_eq!(nms(&dets, 0.05), vec![0, 2, 3]);
        assert_eq!(nms(&dets, 0.3), vec![0, 1]);
    }

    /// Plain greedy loop over all pairs.
    fn brute_nms(dets: &[Detection], thr: f64, per_class: bool) -> Vec<usize> {
        let mut order: Vec<usize> = (0..dets.len()).collect();
        order.sort_by(|&a, &b| {
            dets[b]
                .score
                .partial_cmp(&dets[a].score)
                .unwrap()
                .then(a.cmp(&b))
        });
        let mut kept: Vec<usize> = Vec::new();
        for &i in &order {
            let clash = kept.iter().any(|&k| {
                (!per_class || dets[k].class_id == dets[i].class_id)
                    && sph_iou(&dets[k].bbox, &dets[i].bbox) > thr
            });
            if !clash {
                kept.push(i);
            }
        }
        kept.sort_unstable();
        kept
    }

    #[test]
    fn dense_clusters_match_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for (lat, lon, spread) in [
            (0.0f64, 0.0, 20.0),
            (80.0, 30.0, 15.0),
            (-5.0, 179.0, 10.0),
            (40.0, -90.0, 60.0),
        ] {
            let dets: Vec<Detection> = (0..600)
                .map(|_| {
                    let t = (lat + rng.gen_range(-spread..spread)).clamp(-90.0, 90.0);
                    let p = lon + rng.gen_range(-spread..spread);
                    let b = sb(t, p, rng.gen_range(2.0..70.0), rng.gen_range(2.0..70.0));
                    Detection::new(b, rng.gen_range(1..3), rng.gen_range(0.0..1.0)).unwrap()
                })
                .collect();
            for thr in [0.0, 0.1, 0.3, 0.5, 0.7, 0.9] {
                assert_eq!(
                    nms(&dets, thr),
                    brute_nms(&dets, thr, true),
                    "{lat} {lon} {thr}"
                );
                assert_eq!(nms_class_agnostic(&dets, thr), brute_nms(&dets, thr, false));
            }
        }
    }

    fn arb_det() -> impl Strategy<Value = Detection> {
        (
            -90.0..90.0f64,
            -180.0..180.0f64,
            1.0..120.0f64,
            1.0..120.0f64,
            1..4u32,
            0u8..20,
        )
            .prop_map(|(t, p, fx, fy, c, s)| {
                Detection::new(sb(t, p, fx, fy), c, s as f64 / 19.0).unwrap()
            })
    }

    use proptest::prelude::*;

    proptest! {
        #[test]
        fn nms_matches_brute_force(
            dets in proptest::collection::vec(arb_det(), 0..50),
            thr in 0.0..0.9f64,
        ) {
            prop_assert_eq!(nms(&dets, thr), brute_nms(&dets, thr, true));
            prop_assert_eq!(nms_class_agnostic(&dets, thr), brute_nms(&dets, thr, false));
        }

        #[test]
        fn nms_is_idempotent(dets in proptest::collection::vec(arb_det(), 0..50), thr in 0.0..0.9f64) {
            let kept = nms(&dets, thr);
            let sub: Vec<Detection> = kept.iter().map(|&i| dets[i]).collect();
            prop_assert_eq!(nms(&sub, thr), (0..sub.len()).collect::<Vec<_>>());
        }

        #[test]
        fn isolated_boxes_survive_every_higher_threshold(
            dets in proptest::collection::vec(arb_det(), 0..50),
            t in 0.0..0.9f64,
            t2 in 0.0..0.9f64,
        ) {
            let hi = t.max(t2);
            let kept = nms_class_agnostic(&dets, hi);
            for i in 0..dets.len() {
                let isolated = (0..dets.len()).all(|j| {
                    let ahead = dets[j].score > dets[i].score || (dets[j].score == dets[i].score && j < i);
                    !ahead || sph_iou(&dets[i].bbox, &dets[j].bbox) <= t
                });
                if isolated {
                    prop_assert!(kept.contains(&i));
                }
            }
        }

        #[test]
        fn nms_survivors_do_not_overlap(dets in proptest::collection::vec(arb_det(), 0..50), thr in 0.0..0.9f64) {
            let kept = nms(&dets, thr);
            for (x, &i) in kept.iter().enumerate() {
                for &j in &kept[x + 1..] {
                    if dets[i].class_id == dets[j].class_id {
                        prop_assert!(sph_iou(&dets[i].bbox, &dets[j].bbox) <= thr);
                    }
                }
            }
        }
    }
}

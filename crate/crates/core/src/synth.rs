//! Synthetic 360-degree datasets: alpha crops pasted onto panoramas at random
//! spherical boxes, with the boxes written out as annotations.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{ErpGeometry, LatLon, SphericalBox};
use crate::iou::{exact_iou, sph_iou, IoUConfig};
use crate::raster::Raster;
use crate::resample::{composite_patch, ErpImage, PatchImage};

/// Attempts per object before giving up on an image.
pub const RETRIES_PER_OBJECT: usize = 100;
/// Slack allowed between the fast-IoU bound and the integral IoU.
pub const EXACT_IOU_MARGIN: f64 = 0.05;
const EXACT_CHECK_GRID: usize = 256;
const BACKGROUND_GRAY: f32 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthMode {
    /// One crop per panorama.
    SingleObject,
    /// Several crops with bounded mutual overlap.
    MultiPerson,
}

impl std::str::FromStr for SynthMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single_object" => Ok(SynthMode::SingleObject),
            "multi_person" => Ok(SynthMode::MultiPerson),
            other => Err(Error::Parse(format!("unknown synth mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub mode: SynthMode,
    /// Inclusive object count range.
    pub objects_per_image: [usize; 2],
    /// Degrees, applied to the larger of the two FoVs.
    pub fov_range: [f64; 2],
    /// Degrees.
    pub lat_range: [f64; 2],
    pub max_pairwise_iou: f64,
    pub erp_height: usize,
    pub erp_width: usize,
    pub rng_seed: u64,
}

impl SynthConfig {
    pub fn single_object() -> Self {
        Self {
            mode: SynthMode::SingleObject,
            objects_per_image: [1, 1],
            fov_range: [20.0, 90.0],
            lat_range: [-75.0, 75.0],
            max_pairwise_iou: 0.1,
            erp_height: 512,
            erp_width: 1024,
            rng_seed: 0,
        }
    }

    pub fn multi_person() -> Self {
        Self {
            mode: SynthMode::MultiPerson,
            objects_per_image: [3, 6],
            ..Self::single_object()
        }
    }

    pub fn for_mode(mode: SynthMode) -> Self {
        match mode {
            SynthMode::SingleObject => Self::single_object(),
            SynthMode::MultiPerson => Self::multi_person(),
        }
    }

    pub fn geometry(&self) -> Result<ErpGeometry> {
        ErpGeometry::new(self.erp_height, self.erp_width)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let [lo_n, hi_n] = self.objects_per_image;
        match self.mode {
            SynthMode::SingleObject if (lo_n, hi_n) != (1, 1) => {
                return bad(format!(
                    "single_object places exactly 1 object, got {lo_n}-{hi_n}"
                ));
            }
            SynthMode::MultiPerson if lo_n == 0 || lo_n > hi_n => {
                return bad(format!("object range {lo_n}-{hi_n} is empty"));
            }
            _ => {}
        }
        let [f0, f1] = self.fov_range;
        if !(f0 > 0.0 && f0 < f1 && f1 < 180.0) {
            return bad(format!(
                "fov range [{f0}, {f1}] must satisfy 0 < lo < hi < 180"
            ));
        }
        let [l0, l1] = self.lat_range;
        if !(-90.0..=90.0).contains(&l0) || !(-90.0..=90.0).contains(&l1) || l0 >= l1 {
            return bad(format!(
                "latitude range [{l0}, {l1}] must be increasing within [-90, 90]"
            ));
        }
        if !(0.0..1.0).contains(&self.max_pairwise_iou) {
            return bad(format!(
                "max_pairwise_iou {} outside [0, 1)",
                self.max_pairwise_iou
            ));
        }
        self.geometry().map(|_| ())
    }
}

/// A labeled alpha crop.
#[derive(Debug, Clone)]
pub struct Foreground {
    pub class_id: u32,
    pub class_name: String,
    pub patch: PatchImage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedObject {
    pub class_id: u32,
    pub class_name: String,
    #[serde(rename = "box")]
    pub bbox: SphericalBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub image_id: String,
    pub objects: Vec<AnnotatedObject>,
}

impl AnnotationRecord {
    /// Checks box validity and, when given, the pairwise fast-IoU bound.
    pub fn validate(&self, max_pairwise_iou: Option<f64>) -> Result<()> {
        for o in &self.objects {
            let b = o.bbox;
            SphericalBox::new(b.theta(), b.phi(), b.fov_x, b.fov_y)?;
        }
        if let Some(max) = max_pairwise_iou {
            for (k, a) in self.objects.iter().enumerate() {
                for b in &self.objects[k + 1..] {
                    let iou = sph_iou(&a.bbox, &b.bbox);
                    if iou >= max {
                        return Err(Error::InvalidBox(format!(
                            "{}: objects overlap with IoU {iou:.4} >= {max}",
                            self.image_id
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rec: Self = serde_json::from_str(text)?;
        rec.validate(None)?;
        Ok(rec)
    }
}

/// FoVs for a crop of the given pixel size: the larger side takes a FoV from
/// `range` and the other follows from the tangent-plane aspect ratio.
fn sample_fov(rng: &mut ChaCha8Rng, width: usize, height: usize, range: [f64; 2]) -> (f64, f64) {
    let aspect = width.min(height) as f64 / width.max(height) as f64;
    let minor = |major: f64| {
        2.0 * ((major / 2.0).to_radians().tan() * aspect)
            .atan()
            .to_degrees()
    };
    let major_for_minor =
        |m: f64| 2.0 * ((m / 2.0).to_radians().tan() / aspect).atan().to_degrees();
    // keep the minor side inside the range too when the crop allows it
    let lo = range[0].max(major_for_minor(range[0])).min(range[1]);
    let major = if lo < range[1] {
        rng.gen_range(lo..range[1])
    } else {
        range[1]
    };
    if width >= height {
        (major, minor(major))
    } else {
        (minor(major), major)
    }
}

fn sample_center(rng: &mut ChaCha8Rng, lat_range: [f64; 2]) -> LatLon {
    let (z0, z1) = (
        lat_range[0].to_radians().sin(),
        lat_range[1].to_radians().sin(),
    );
    let z: f64 = rng.gen_range(z0..z1);
    LatLon::new(z.asin().to_degrees(), rng.gen_range(-180.0..180.0))
}

fn compatible(bx: &SphericalBox, placed: &[SphericalBox], max: f64) -> bool {
    let oracle = IoUConfig::grid(EXACT_CHECK_GRID);
    placed
        .iter()
        .all(|p| sph_iou(bx, p) < max && exact_iou(bx, p, &oracle) < max + EXACT_IOU_MARGIN - 0.01)
}

/// Places every foreground at a random box and composites it onto
/// `background`. The returned record holds the boxes used.
pub fn place_objects(
    foregrounds: &[Foreground],
    background: &ErpImage,
    cfg: &SynthConfig,
    image_id: &str,
    rng: &mut ChaCha8Rng,
) -> Result<(ErpImage, AnnotationRecord)> {
    cfg.validate()?;
    let [lo_n, hi_n] = cfg.objects_per_image;
    if !(lo_n..=hi_n).contains(&foregrounds.len()) {
        return Err(Error::InvalidConfig(format!(
            "{} foregrounds given, mode expects {lo_n}-{hi_n}",
            foregrounds.len()
        )));
    }
    if foregrounds.iter().any(|f| !f.patch.raster.has_alpha()) {
        return Err(Error::MissingAlpha);
    }
    let constrained = cfg.mode == SynthMode::MultiPerson;
    let mut placed: Vec<SphericalBox> = Vec::with_capacity(foregrounds.len());
    for (k, fg) in foregrounds.iter().enumerate() {
        let mut found = None;
        for _ in 0..RETRIES_PER_OBJECT {
            let (fx, fy) = sample_fov(rng, fg.patch.width(), fg.patch.height(), cfg.fov_range);
            let center = sample_center(rng, cfg.lat_range);
            let bx = SphericalBox::new(center.theta, center.phi, fx, fy)?;
            if !constrained || compatible(&bx, &placed, cfg.max_pairwise_iou) {
                found = Some(bx);
                break;
            }
        }
        let Some(bx) = found else {
            return Err(Error::PlacementFailure {
                object: k,
                attempts: RETRIES_PER_OBJECT,
            });
        };
        placed.push(bx);
    }

    let mut img = background.clone();
    for (fg, bx) in foregrounds.iter().zip(&placed) {
        img = composite_patch(&img, &fg.patch, bx)?;
    }
    let record = AnnotationRecord {
        image_id: image_id.to_string(),
        objects: foregrounds
            .iter()
            .zip(&placed)
            .map(|(fg, bx)| AnnotatedObject {
                class_id: fg.class_id,
                class_name: fg.class_name.clone(),
                bbox: *bx,
            })
            .collect(),
    };
    Ok((img, record))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub id: u32,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub classes: Vec<ClassEntry>,
    pub config: SynthConfig,
    pub seed: u64,
    pub n_images: usize,
    pub images: Vec<String>,
    pub sources: Vec<String>,
    pub backgrounds: Vec<String>,
}

fn sorted_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    out.sort();
    Ok(out)
}

/// Reads `<dir>/<class_name>/*.png`; class ids follow sorted class names
/// starting at 1.
pub fn load_sources(dir: &Path) -> Result<SourceSet> {
    let mut class_dirs: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    class_dirs.sort();
    let mut classes = Vec::new();
    let mut crops = Vec::new();
    let mut names = Vec::new();
    for cdir in class_dirs {
        let files = sorted_pngs(&cdir)?;
        if files.is_empty() {
            continue;
        }
        let name = cdir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let id = classes.len() as u32 + 1;
        classes.push(ClassEntry {
            id,
            name: name.clone(),
        });
        for f in files {
            let raster = Raster::load_png(&f)?;
            if !raster.has_alpha() {
                return Err(Error::MissingAlpha);
            }
            names.push(format!(
                "{name}/{}",
                f.file_name()
                    .map(|n| n.to_string_lossy())
                    .unwrap_or_default()
            ));
            crops.push(Foreground {
                class_id: id,
                class_name: name.clone(),
                patch: PatchImage::new(raster),
            });
        }
    }
    if crops.is_empty() {
        return Err(Error::EmptySources);
    }
    Ok(SourceSet {
        classes,
        crops,
        names,
    })
}

/// Converts to three color channels at the configured size.
fn as_rgb_background(raster: Raster, geometry: ErpGeometry) -> Result<ErpImage> {
    let rgb = match raster.channels {
        3 => raster,
        1 | 2 | 4 => {
            let c = raster.channels;
            Raster::from_fn(raster.height, raster.width, 3, |row, col, px| {
                let s = raster.pixel(row, col);
                if c <= 2 {
                    px.fill(s[0]);
                } else {
                    px.copy_from_slice(&s[..3]);
                }
            })
        }
        n => {
            return Err(Error::ChannelMismatch(format!(
                "background has {n} channels"
            )))
        }
    };
    Ok(ErpImage::new(rgb)?.resized(geometry))
}

/// Per-image RNG: one ChaCha stream per image index.
pub fn image_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

pub fn image_id(index: usize) -> String {
    format!("{index:06}")
}

/// One panorama and its annotation, independent of every other index.
pub fn generate_image(
    index: usize,
    crops: &[Foreground],
    backgrounds: &[ErpImage],
    gray: &ErpImage,
    cfg: &SynthConfig,
) -> Result<(ErpImage, AnnotationRecord)> {
    let mut rng = image_rng(cfg.rng_seed, index);
    let [lo_n, hi_n] = cfg.objects_per_image;
    let n = rng.gen_range(lo_n..=hi_n);
    let chosen: Vec<Foreground> = (0..n)
        .map(|_| crops.choose(&mut rng).cloned().ok_or(Error::EmptySources))
        .collect::<Result<_>>()?;
    let background = if backgrounds.is_empty() {
        gray
    } else {
        &backgrounds[rng.gen_range(0..backgrounds.len())]
    };
    place_objects(&chosen, background, cfg, &image_id(index), &mut rng)
}

/// Labeled crops plus the class vocabulary they use.
#[derive(Debug, Clone)]
pub struct SourceSet {
    pub classes: Vec<ClassEntry>,
    pub crops: Vec<Foreground>,
    /// One descriptive name per crop, recorded in the manifest.
    pub names: Vec<String>,
}

/// Two built-in classes of flat-colored alpha shapes, for runs without
/// source crops.
pub fn procedural_sources() -> SourceSet {
    let ellipse = Raster::from_fn(96, 64, 4, |r, c, px| {
        let y = (r as f32 + 0.5) / 48.0 - 1.0;
        let x = (c as f32 + 0.5) / 32.0 - 1.0;
        px.copy_from_slice(&[0.9, 0.3, 0.2, if x * x + y * y <= 1.0 { 1.0 } else { 0.0 }]);
    });
    let panel = Raster::from_fn(64, 96, 4, |r, c, px| {
        let stripe = if (r / 8 + c / 8) % 2 == 0 { 0.9 } else { 0.2 };
        px.copy_from_slice(&[0.2, stripe, 0.9, 1.0]);
    });
    let classes = vec![
        ClassEntry {
            id: 1,
            name: "ellipse".into(),
        },
        ClassEntry {
            id: 2,
            name: "panel".into(),
        },
    ];
    let crops = vec![
        Foreground {
            class_id: 1,
            class_name: "ellipse".into(),
            patch: PatchImage::new(ellipse),
        },
        Foreground {
            class_id: 2,
            class_name: "panel".into(),
            patch: PatchImage::new(panel),
        },
    ];
    SourceSet {
        classes,
        crops,
        names: vec!["builtin/ellipse".into(), "builtin/panel".into()],
    }
}

/// Writes `images/`, `annotations/` and `manifest.json` under `out_dir`,
/// reading crops from `<sources>/<class_name>/*.png`.
pub fn generate_dataset(
    sources: &Path,
    backgrounds: Option<&Path>,
    n_images: usize,
    cfg: &SynthConfig,
    out_dir: &Path,
) -> Result<Manifest> {
    cfg.validate()?;
    let set = load_sources(sources)?;
    generate_dataset_from(&set, backgrounds, n_images, cfg, out_dir)
}

pub fn generate_dataset_from(
    sources: &SourceSet,
    backgrounds: Option<&Path>,
    n_images: usize,
    cfg: &SynthConfig,
    out_dir: &Path,
) -> Result<Manifest> {
    cfg.validate()?;
    if n_images == 0 {
        return Err(Error::InvalidConfig("n_images must be at least 1".into()));
    }
    if sources.crops.is_empty() {
        return Err(Error::EmptySources);
    }
    let geometry = cfg.geometry()?;
    let (bg_images, bg_names) = match backgrounds {
        Some(dir) => {
            let files = sorted_pngs(dir)?;
            let imgs = files
                .iter()
                .map(|f| as_rgb_background(Raster::load_png(f)?, geometry))
                .collect::<Result<Vec<_>>>()?;
            let names = files
                .iter()
                .filter_map(|f| f.file_name().map(|n| n.to_string_lossy().into_owned()))
                .collect();
            (imgs, names)
        }
        None => (Vec::new(), Vec::new()),
    };
    let gray = ErpImage::filled(geometry, &[BACKGROUND_GRAY; 3])?;

    let images_dir = out_dir.join("images");
    let ann_dir = out_dir.join("annotations");
    fs::create_dir_all(&images_dir)?;
    fs::create_dir_all(&ann_dir)?;

    (0..n_images)
        .into_par_iter()
        .try_for_each(|i| -> Result<()> {
            let (img, record) = generate_image(i, &sources.crops, &bg_images, &gray, cfg)?;
            img.raster
                .save_png(&images_dir.join(format!("{}.png", record.image_id)))?;
            fs::write(
                ann_dir.join(format!("{}.json", record.image_id)),
                record.to_json()?,
            )?;
            Ok(())
        })?;

    let manifest = Manifest {
        classes: sources.classes.clone(),
        config: *cfg,
        seed: cfg.rng_seed,
        n_images,
        images: (0..n_images).map(image_id).collect(),
        sources: sources.names.clone(),
        backgrounds: bg_names,
    };
    fs::write(
        out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(manifest)
}

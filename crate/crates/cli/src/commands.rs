use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use spheredet_core::anchors::{generate_anchors, AnchorConfig, AspectRatio};
use spheredet_core::eval::{
    evaluate_map, read_detections, read_jsonl, select_indices, write_jsonl, ApMethod, EvalConfig,
    GroundTruthRecord, PipelineConfig, Stage,
};
use spheredet_core::iou::{exact_iou, iou_matrix, IoUConfig, OracleMode};
use spheredet_core::offsets::{build_offset_table, ExportFormat};
use spheredet_core::raster::Raster;
use spheredet_core::resample::{composite_patch, extract_patch, ErpImage, PatchImage, RoiConfig};
use spheredet_core::synth::{
    generate_dataset_from, load_sources, procedural_sources, AnnotationRecord, SynthConfig,
    SynthMode,
};
use spheredet_core::{ErpGeometry, SphericalBox};

use crate::args::*;
use crate::output::{build_dir_atomic, emit, read_text, usage, write_atomic, Usage};
use crate::render::draw_outlines;

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Offsets(a) => offsets(a),
        Command::Iou(a) => iou(a),
        Command::Nms(a) => nms(a),
        Command::Extract(a) => extract(a),
        Command::Composite(a) => composite(a),
        Command::Synth(a) => synth(a),
        Command::Eval(a) => eval(a),
        Command::Anchors(a) => anchors(a),
        Command::Render(a) => render(a),
    }
}

fn offsets(a: OffsetsArgs) -> Result<()> {
    let geometry = usage(ErpGeometry::new(a.height, a.width))?;
    let table = usage(build_offset_table(&geometry))?;
    let format = match a.format {
        OffsetFormat::Csv => ExportFormat::Csv,
        OffsetFormat::Binary => ExportFormat::Binary,
    };
    emit(a.out.as_deref(), &table.export(format)?)
}

#[derive(Deserialize)]
struct BoxLine {
    #[serde(rename = "box")]
    bbox: SphericalBox,
}

/// Accepts a JSON array of boxes, an annotation record, or JSON lines
/// carrying a `box` field.
pub fn read_boxes(path: &Path) -> Result<Vec<SphericalBox>> {
    let text = read_text(path)?;
    if let Ok(boxes) = serde_json::from_str::<Vec<SphericalBox>>(&text) {
        return Ok(boxes);
    }
    if let Ok(rec) = serde_json::from_str::<AnnotationRecord>(&text) {
        return Ok(rec.objects.into_iter().map(|o| o.bbox).collect());
    }
    let lines: Vec<BoxLine> = read_jsonl(&text).with_context(|| {
        format!(
            "{}: expected a JSON array of [theta, phi, fov_x, fov_y], an annotation, or JSON lines with a box",
            path.display()
        )
    })?;
    Ok(lines.into_iter().map(|l| l.bbox).collect())
}

fn iou(a: IouArgs) -> Result<()> {
    let xs = read_boxes(&a.a)?;
    let ys = read_boxes(&a.b)?;
    let nested = if a.exact {
        let cfg = IoUConfig {
            oracle_grid_height: a.grid_height,
            oracle_mc_samples: a.mc_samples,
            rng_seed: a.seed,
            mode: match a.oracle {
                Oracle::Grid => OracleMode::Grid,
                Oracle::MonteCarlo => OracleMode::MonteCarlo,
            },
        };
        usage(cfg.validate())?;
        xs.iter()
            .map(|x| ys.iter().map(|y| exact_iou(x, y, &cfg)).collect())
            .collect::<Vec<Vec<f64>>>()
    } else {
        iou_matrix(&xs, &ys).to_nested()
    };
    emit(
        a.out.as_deref(),
        (serde_json::to_string(&nested)? + "\n").as_bytes(),
    )
}

fn nms(a: NmsArgs) -> Result<()> {
    let cfg = PipelineConfig {
        proposal_nms_iou: a.proposal_iou,
        final_nms_iou: a.final_iou,
        score_floor: a.score_floor,
        top_n: a.top_n,
    };
    usage(cfg.validate())?;
    let stage = match a.stage {
        StageArg::Proposal => Stage::Proposal,
        StageArg::Final => Stage::Final,
    };
    let records = read_detections(&read_text(&a.input)?)
        .with_context(|| format!("parsing {}", a.input.display()))?;
    let mut by_image: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (k, r) in records.iter().enumerate() {
        by_image.entry(r.image_id.as_str()).or_default().push(k);
    }
    let mut kept = Vec::new();
    for idx in by_image.values() {
        let dets: Vec<_> = idx.iter().map(|&k| records[k].detection()).collect();
        kept.extend(
            select_indices(&dets, &cfg, stage)?
                .into_iter()
                .map(|i| idx[i]),
        );
    }
    kept.sort_unstable();
    let out: Vec<_> = kept.into_iter().map(|k| records[k].clone()).collect();
    emit(a.out.as_deref(), write_jsonl(&out)?.as_bytes())
}

fn load_erp(path: &Path) -> Result<ErpImage> {
    let raster = Raster::load_png(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(ErpImage::new(raster)?)
}

fn extract(a: ExtractArgs) -> Result<()> {
    let cfg = RoiConfig {
        expansion: a.expansion,
        patch_height: a.patch_height,
        patch_width: a.patch_width,
        ..RoiConfig::default()
    };
    usage(cfg.validate())?;
    let img = load_erp(&a.input)?;
    let patch = extract_patch(&img, &a.bbox, &cfg)?;
    write_atomic(&a.out, &patch.raster.encode_png()?)
}

fn composite(a: CompositeArgs) -> Result<()> {
    let img = load_erp(&a.input)?;
    let patch =
        Raster::load_png(&a.patch).with_context(|| format!("reading {}", a.patch.display()))?;
    let out = composite_patch(&img, &PatchImage::new(patch), &a.bbox)?;
    write_atomic(&a.out, &out.raster.encode_png()?)
}

fn synth(a: SynthArgs) -> Result<()> {
    let mode = match a.mode {
        ModeArg::SingleObject => SynthMode::SingleObject,
        ModeArg::MultiPerson => SynthMode::MultiPerson,
    };
    let base = SynthConfig::for_mode(mode);
    let cfg = SynthConfig {
        mode,
        objects_per_image: [
            a.objects_min.unwrap_or(base.objects_per_image[0]),
            a.objects_max.unwrap_or(base.objects_per_image[1]),
        ],
        fov_range: [a.fov_min, a.fov_max],
        lat_range: [a.lat_min, a.lat_max],
        max_pairwise_iou: a.max_pairwise_iou,
        erp_height: a.erp_height,
        erp_width: a.erp_width,
        rng_seed: a.seed,
    };
    usage(cfg.validate())?;
    if a.n == 0 {
        bail!(Usage("--n must be at least 1".into()));
    }
    let sources = match &a.sources {
        Some(dir) => {
            load_sources(dir).with_context(|| format!("loading crops from {}", dir.display()))?
        }
        None => procedural_sources(),
    };
    let backgrounds = a.backgrounds.as_deref();
    build_dir_atomic(&a.out, |dir| {
        let m = generate_dataset_from(&sources, backgrounds, a.n, &cfg, dir)?;
        eprintln!("wrote {} images to {}", m.n_images, a.out.display());
        Ok(())
    })
}

fn eval(a: EvalArgs) -> Result<()> {
    let cfg = EvalConfig {
        iou_threshold: a.iou_threshold,
        oracle: IoUConfig::grid(a.grid_height),
        ap_method: match a.ap_method {
            ApMethodArg::ElevenPoint => ApMethod::ElevenPoint,
            ApMethodArg::AllPoints => ApMethod::AllPoints,
        },
        band_width: a.band_width,
    };
    usage(cfg.oracle.validate())?;
    if !(0.0..=1.0).contains(&cfg.iou_threshold) {
        bail!(Usage(format!(
            "--iou-threshold {} outside [0, 1]",
            cfg.iou_threshold
        )));
    }
    let dets = read_detections(&read_text(&a.detections)?)
        .with_context(|| format!("parsing {}", a.detections.display()))?;
    let gts: Vec<GroundTruthRecord> = read_jsonl(&read_text(&a.ground_truth)?)
        .with_context(|| format!("parsing {}", a.ground_truth.display()))?;
    let report = evaluate_map(&dets, &gts, &cfg)?;
    if let Some(path) = &a.json {
        write_atomic(
            path,
            (serde_json::to_string_pretty(&report)? + "\n").as_bytes(),
        )?;
    }
    emit(a.out.as_deref(), report.to_text().as_bytes())
}

fn anchors(a: AnchorsArgs) -> Result<()> {
    let ratios = a
        .ratios
        .iter()
        .map(|r| r.parse::<AspectRatio>())
        .collect::<Result<Vec<_>, _>>();
    let cfg = AnchorConfig {
        scales: a.scales,
        aspect_ratios: usage(ratios)?,
        feature_height: a.feature_height,
        feature_width: a.feature_width,
    };
    usage(cfg.validate())?;
    let boxes = generate_anchors(&cfg)?;
    let bytes = match a.format {
        AnchorFormat::Json => serde_json::to_string(&boxes)? + "\n",
        AnchorFormat::Csv => {
            let k = cfg.per_location();
            let mut s = String::from("index,row,col,theta,phi,fov_x,fov_y\n");
            for (i, b) in boxes.iter().enumerate() {
                let loc = i / k;
                let [t, p, fx, fy] = b.to_array();
                s.push_str(&format!(
                    "{i},{},{},{t},{p},{fx},{fy}\n",
                    loc / cfg.feature_width,
                    loc % cfg.feature_width
                ));
            }
            s
        }
    };
    emit(a.out.as_deref(), bytes.as_bytes())
}

fn render(a: RenderArgs) -> Result<()> {
    if a.color.len() != 3 {
        bail!(Usage(format!(
            "--color takes r,g,b, got {} values",
            a.color.len()
        )));
    }
    let boxes = read_boxes(&a.boxes)?;
    let mut canvas = match &a.input {
        Some(p) => load_erp(p)?.raster,
        None => {
            usage(ErpGeometry::new(a.height, a.width))?;
            Raster::filled(a.height, a.width, &[0.5, 0.5, 0.5])
        }
    };
    let color: Vec<f32> = match canvas.channels {
        1 => vec![a.color.iter().map(|&c| c as f32).sum::<f32>() / (3.0 * 255.0)],
        _ => a.color.iter().map(|&c| c as f32 / 255.0).collect(),
    };
    draw_outlines(&mut canvas, &boxes, &color);
    write_atomic(&a.out, &canvas.encode_png()?)
}

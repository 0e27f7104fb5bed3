//! Subcommand implementations. Each reads its inputs, drives the library,
//! and writes tensors/JSON/PNGs; all failures funnel into [`CliError`]
//! and its exit-code contract.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde_json::json;

use crowdmask::edpsam::{annotate, slic_superpixels, CandidateMaskSet, NoCandidates, SharedCandidates};
use crowdmask::eval::{
    counting_errors, iou_f1, match_by_id, match_instances, timing_harness, MetricsReport,
    TimingBucket,
};
use crowdmask::field::{FeatureMap, ScalarField};
use crowdmask::geometry::{nnec_radii, PointSet};
use crowdmask::grid::Dims;
use crowdmask::losses::{
    background_penalty, discriminative_loss, finite_diff_gradient, foreground_constraint,
    max_relative_error,
};
use crowdmask::segment::segment;
use crowdmask::toy::{optimize_embedding, score_segmentation, synth_scene, OptimizeConfig, SyntheticScene};
use crowdmask::Error;

use crate::config::RunConfig;
use crate::render::{render_label_map, render_scalar_field, save_png};
use crate::tensor::Tensor;
use crate::{CliError, CliResult};

fn load_points(path: &Path) -> CliResult<PointSet> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    Ok(PointSet::from_json_str(&text)?)
}

/// Segment a feature tensor with point prompts and write the label map.
pub fn cmd_segment(
    features: &Path,
    points: &Path,
    config: Option<&Path>,
    out: &Path,
    png: Option<&Path>,
) -> CliResult<()> {
    let cfg = RunConfig::load_or_default(config)?;
    let fmap = Tensor::load(features)?.to_feature_map()?;
    let points = load_points(points)?.rescaled(cfg.stride());
    let labels = segment(&fmap, &points, &cfg.energy(), &cfg.discriminative()?.kernel)?;
    Tensor::from_label_map(&labels).save(out)?;
    if let Some(png_path) = png {
        save_png(&render_label_map(&labels), png_path)?;
    }
    Ok(())
}

/// Evaluate the three losses (and optionally the finite-difference
/// gradient oracle) on a fixture; prints a JSON object.
///
/// The scalar prediction for the background/foreground constraints comes
/// from `--pred` when given, otherwise channel 0 of the feature tensor.
/// Valid instance ids are the segmented ids whose point score (1.0 when
/// absent) reaches the filter's high threshold.
pub fn cmd_losses(
    features: &Path,
    points: &Path,
    labels: &Path,
    pred: Option<&Path>,
    config: Option<&Path>,
    gradcheck: bool,
) -> CliResult<()> {
    let cfg = RunConfig::load_or_default(config)?;
    let fmap = Tensor::load(features)?.to_feature_map()?;
    let points = load_points(points)?.rescaled(cfg.stride());
    let labels = Tensor::load(labels)?.to_label_map()?;
    let disc_cfg = cfg.discriminative()?;
    let radii = nnec_radii(&points, fmap.dims())?;

    let disc = discriminative_loss(&fmap, &points, &labels, &radii, &disc_cfg)?;

    let pred_field: ScalarField = match pred {
        Some(p) => Tensor::load(p)?.to_scalar_field()?,
        None => ScalarField::new(fmap.dims(), fmap.channel(0).to_vec())?,
    };
    let bg = background_penalty(&pred_field, &labels)?;

    let present = labels.ids();
    let valid: BTreeSet<u32> = points
        .iter()
        .filter(|p| p.score.unwrap_or(1.0) >= cfg.filter().high_threshold)
        .map(|p| p.id)
        .filter(|id| present.contains(id))
        .collect();
    if valid.is_empty() {
        return Err(CliError::from(Error::NoValidPseudoMasks));
    }
    let fg_cfg = cfg.foreground();
    let fg = foreground_constraint(&pred_field, &labels, &valid, &fg_cfg)?;

    let mut report = json!({
        "discriminative": disc.value,
        "background": bg.value,
        "foreground": fg.value,
    });
    if gradcheck {
        let disc_fd = finite_diff_gradient(
            |x| {
                let f = FeatureMap::new(fmap.channels(), fmap.dims(), x.to_vec()).unwrap();
                discriminative_loss(&f, &points, &labels, &radii, &disc_cfg)
                    .unwrap()
                    .value
            },
            fmap.as_slice(),
            1e-5,
        );
        let bg_fd = finite_diff_gradient(
            |x| {
                let f = ScalarField::new(pred_field.dims(), x.to_vec()).unwrap();
                background_penalty(&f, &labels).unwrap().value
            },
            pred_field.data(),
            1e-5,
        );
        let fg_fd = finite_diff_gradient(
            |x| {
                let f = ScalarField::new(pred_field.dims(), x.to_vec()).unwrap();
                foreground_constraint(&f, &labels, &valid, &fg_cfg).unwrap().value
            },
            pred_field.data(),
            1e-5,
        );
        let err = max_relative_error(disc.gradient.as_slice(), &disc_fd, 1e-6)
            .max(max_relative_error(bg.gradient.data(), &bg_fd, 1e-6))
            .max(max_relative_error(fg.gradient.data(), &fg_fd, 1e-6));
        report["gradcheck_max_rel_error"] = json!(err);
    }
    println!("{report}");
    Ok(())
}

/// Build constrained annotation masks (or just superpixels) for an image.
///
/// Candidate masks arrive as a label-map tensor where each distinct
/// nonzero value is one candidate; without `--candidates` every point
/// falls back to its NNEC disk. Superpixel context is an in-process
/// provider feature; the file-based exchange carries candidates only.
pub fn cmd_edpsam(
    image: &Path,
    points: &Path,
    candidates: Option<&Path>,
    config: Option<&Path>,
    out: &Path,
    slic_only: bool,
    png: Option<&Path>,
) -> CliResult<()> {
    let cfg = RunConfig::load_or_default(config)?;
    let img = Tensor::load(image)?.to_image()?;
    if slic_only {
        let sp = slic_superpixels(&img, cfg.slic.n_segments, cfg.slic.compactness, cfg.slic.iters)?;
        let map = crowdmask::grid::InstanceLabelMap::new(sp.dims(), sp.labels().to_vec())?;
        Tensor::from_label_map(&map).save(out)?;
        if let Some(png_path) = png {
            save_png(&render_label_map(&map), png_path)?;
        }
        return Ok(());
    }
    let points = load_points(points)?;
    let ann = match candidates {
        Some(cand_path) => {
            let cand_map = Tensor::load(cand_path)?.to_label_map()?;
            if cand_map.dims() != img.dims() {
                return Err(CliError::input(format!(
                    "candidates grid {}x{} differs from image grid {}x{}",
                    cand_map.dims().h,
                    cand_map.dims().w,
                    img.dims().h,
                    img.dims().w
                )));
            }
            let set = CandidateMaskSet::from_label_map(&cand_map)?;
            annotate(&points, &SharedCandidates(set), None, img.dims())?
        }
        None => annotate(&points, &NoCandidates, None, img.dims())?,
    };
    Tensor::from_label_map(&ann).save(out)?;
    if let Some(png_path) = png {
        save_png(&render_label_map(&ann), png_path)?;
    }
    Ok(())
}

/// Compare a predicted label map against ground truth; prints metrics
/// JSON (counting errors use the instance counts of the two maps).
/// `by_id` pairs instances by shared id instead of greedy IoU matching.
pub fn cmd_eval(pred: &Path, gt: &Path, by_id: bool) -> CliResult<()> {
    let pred = Tensor::load(pred)?.to_label_map()?;
    let gt = Tensor::load(gt)?.to_label_map()?;
    let matches = if by_id {
        match_by_id(&pred, &gt)?
    } else {
        match_instances(&pred, &gt)?
    };
    let detection = iou_f1(&matches, 0.5)?;
    let counting = counting_errors(
        &[pred.ids().len() as f64],
        &[gt.ids().len() as f64],
    )?;
    let report = MetricsReport::new(detection, counting);
    println!("{}", report.to_json());
    Ok(())
}

pub struct DemoArgs {
    pub seed: u64,
    pub instances: usize,
    pub height: usize,
    pub width: usize,
    pub min_separation: f64,
    pub bench: bool,
    pub out: Option<PathBuf>,
    pub png_dir: Option<PathBuf>,
}

fn optimize_with_retry(
    scene: &SyntheticScene,
    cfg: &OptimizeConfig,
) -> CliResult<(FeatureMap, OptimizeConfig)> {
    let mut attempt = cfg.clone();
    for _ in 0..4 {
        match optimize_embedding(scene, &attempt) {
            Ok((field, _)) => return Ok((field, attempt)),
            Err(Error::Divergence(_)) => attempt.learning_rate *= 0.5,
            Err(e) => return Err(e.into()),
        }
    }
    Err(CliError::from(Error::Divergence(cfg.steps)))
}

/// Synthetic end-to-end demo: generate, optimize, segment, score; with
/// `--bench`, also time segmentation across density buckets on a
/// 768x1024, 16-channel field.
pub fn cmd_demo(config: Option<&Path>, args: &DemoArgs) -> CliResult<()> {
    let cfg = RunConfig::load_or_default(config)?;
    let opt_cfg = cfg.optimize_config()?;
    let dims = Dims::new(args.height, args.width);
    let scene = synth_scene(args.instances, dims, args.min_separation, args.seed)?;
    let (field, used_cfg) = optimize_with_retry(&scene, &opt_cfg)?;
    let mut report = score_segmentation(&scene, &field, &used_cfg)?;

    if let Some(dir) = &args.png_dir {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::input(format!("{}: {e}", dir.display())))?;
        let scored = scene.points.with_uniform_score(1.0);
        let seg = segment(&field, &scored, &used_cfg.energy, &used_cfg.disc.kernel)?;
        save_png(&render_label_map(&scene.labels), &dir.join("ground_truth.png"))?;
        save_png(&render_label_map(&seg), &dir.join("segmentation.png"))?;
        let response = ScalarField::new(field.dims(), field.channel(0).to_vec())?;
        save_png(&render_scalar_field(&response), &dir.join("response_c0.png"))?;
    }

    if args.bench {
        report.timing = run_bench(&cfg)?;
    }

    let line = report.to_json();
    println!("{line}");
    if let Some(out) = &args.out {
        std::fs::write(out, format!("{line}\n"))
            .map_err(|e| CliError::input(format!("{}: {e}", out.display())))?;
    }
    Ok(())
}

/// Density-bucketed timing of `segment` on a 768x1024, 16-channel field
/// with {50, 200, 500, 1000} points, two scenes per bucket plus an
/// unmeasured warm-up.
fn run_bench(cfg: &RunConfig) -> CliResult<Vec<crowdmask::eval::BucketTiming>> {
    let dims = Dims::new(768, 1024);
    let kernel = cfg.discriminative()?.kernel;
    let energy = cfg.energy();
    let field = FeatureMap::seeded_normal(16, dims, 0.3, 0xbe7c);
    let mut buckets = Vec::new();
    for &n in &[50usize, 200, 500, 1000] {
        let scenes: Vec<PointSet> = (0..2)
            .map(|i| {
                synth_scene(n, dims, 8.0, (n + i) as u64).map(|s| s.points)
            })
            .collect::<Result<_, _>>()?;
        buckets.push(TimingBucket {
            label: format!("{n}"),
            scenes,
        });
    }
    let timings = timing_harness(
        |points| {
            segment(&field, points, &energy, &kernel).expect("bench segmentation");
        },
        &buckets,
    );
    Ok(timings)
}

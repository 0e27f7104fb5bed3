//! Desk-scale end-to-end demonstration: synthetic labeled crowd scenes, a
//! free embedding field optimized by plain gradient descent on the
//! discriminative loss, then segmentation and scoring. No network, no
//! optimizer state; the point is to show the loss/energy machinery closes
//! the loop.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::eval::{counting_errors, iou_f1, match_instances, MetricsReport};
use crate::field::FeatureMap;
use crate::geometry::{nnec_radii, pairwise_distances, Point, PointSet};
use crate::grid::{Dims, InstanceLabelMap};
use crate::losses::{discriminative_loss, DiscriminativeConfig};
use crate::segment::{filter_pseudo_masks, segment, EnergyConfig, PseudoMaskFilter};

/// A generated scene: points, disjoint elliptical instance masks, and the
/// seed that reproduces it bit-for-bit.
#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub dims: Dims,
    pub points: PointSet,
    pub labels: InstanceLabelMap,
    pub seed: u64,
}

/// Optimization settings for the direct embedding-field descent.
#[derive(Clone, Debug)]
pub struct OptimizeConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub channels: usize,
    pub init_scale: f64,
    pub disc: DiscriminativeConfig,
    pub energy: EnergyConfig,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            learning_rate: 30.0,
            channels: 8,
            init_scale: 0.3,
            disc: DiscriminativeConfig::default(),
            energy: EnergyConfig::default(),
        }
    }
}

impl OptimizeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidArgument("steps must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.channels == 0 {
            return Err(Error::InvalidArgument("channels must be >= 1".into()));
        }
        self.disc.validate()?;
        self.energy.validate()
    }
}

/// Generates `n_instances` axis-aligned ellipse masks around
/// rejection-sampled centers with pairwise distance at least
/// `min_separation`. Semi-axes scale with each point's realized
/// nearest-neighbor distance (36%..46%), which keeps masks disjoint and
/// sized sensibly relative to their NNEC disks.
pub fn synth_scene(
    n_instances: usize,
    dims: Dims,
    min_separation: f64,
    seed: u64,
) -> Result<SyntheticScene> {
    if n_instances == 0 {
        return Err(Error::InvalidArgument("need at least one instance".into()));
    }
    if !(min_separation > 0.0) {
        return Err(Error::InvalidArgument(
            "min_separation must be positive".into(),
        ));
    }
    let area = (dims.h * dims.w) as f64;
    let packing = n_instances as f64 * std::f64::consts::PI * (min_separation / 2.0).powi(2);
    if packing >= area {
        return Err(Error::InvalidArgument(format!(
            "packing infeasible: {n_instances} instances at separation {min_separation} in {}x{}",
            dims.h, dims.w
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let margin = (0.25 * min_separation).max(1.5);
    if 2.0 * margin >= (dims.h.min(dims.w) - 1) as f64 {
        return Err(Error::InvalidArgument(
            "grid too small for the requested separation".into(),
        ));
    }
    let y_range = margin..(dims.h as f64 - 1.0 - margin);
    let x_range = margin..(dims.w as f64 - 1.0 - margin);

    let max_attempts = 2000 * n_instances;
    let mut centers: Vec<(f64, f64)> = Vec::with_capacity(n_instances);
    let mut attempts = 0;
    while centers.len() < n_instances {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::PackingFailure(max_attempts));
        }
        let y = rng.gen_range(y_range.clone());
        let x = rng.gen_range(x_range.clone());
        let ok = centers
            .iter()
            .all(|&(cy, cx)| (cy - y).powi(2) + (cx - x).powi(2) >= min_separation.powi(2));
        if ok {
            centers.push((y, x));
        }
    }

    let points = PointSet::new(
        centers
            .iter()
            .enumerate()
            .map(|(i, &(y, x))| Point::new(i as u32 + 1, y, x))
            .collect(),
    )?;
    // Nearest-neighbor scale per point (same rule as the NNEC radius).
    let scales: Vec<f64> = if n_instances == 1 {
        vec![0.5 * dims.h.min(dims.w) as f64]
    } else {
        let dm = pairwise_distances(&points)?;
        (0..n_instances)
            .map(|i| {
                (0..n_instances)
                    .filter(|&j| j != i)
                    .map(|j| dm.get(i, j))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    };

    let mut labels = InstanceLabelMap::zeros(dims);
    for (i, &(cy, cx)) in centers.iter().enumerate() {
        let semi_y = scales[i] * rng.gen_range(0.36..0.46);
        let semi_x = scales[i] * rng.gen_range(0.36..0.46);
        let id = i as u32 + 1;
        let y_lo = ((cy - semi_y).ceil().max(0.0)) as usize;
        let y_hi = ((cy + semi_y).floor().min((dims.h - 1) as f64)) as usize;
        let x_lo = ((cx - semi_x).ceil().max(0.0)) as usize;
        let x_hi = ((cx + semi_x).floor().min((dims.w - 1) as f64)) as usize;
        for y in y_lo..=y_hi {
            for x in x_lo..=x_hi {
                let ny = (y as f64 - cy) / semi_y;
                let nx = (x as f64 - cx) / semi_x;
                if ny * ny + nx * nx <= 1.0 {
                    debug_assert_eq!(labels.get(y, x), 0, "instance masks must stay disjoint");
                    labels.set(y, x, id);
                }
            }
        }
        debug_assert_eq!(labels.label_at(cy, cx), id);
    }

    Ok(SyntheticScene {
        dims,
        points,
        labels,
        seed,
    })
}

/// Plain gradient descent on the discriminative loss over a free field.
/// Returns the optimized field and the loss history (one entry per step
/// plus the final value). NaN in the loss aborts with the step index.
pub fn optimize_embedding(
    scene: &SyntheticScene,
    cfg: &OptimizeConfig,
) -> Result<(FeatureMap, Vec<f64>)> {
    cfg.validate()?;
    let radii = nnec_radii(&scene.points, scene.dims)?;
    let mut field = FeatureMap::seeded_normal(
        cfg.channels,
        scene.dims,
        cfg.init_scale,
        scene.seed ^ 0x9e37_79b9_7f4a_7c15,
    );
    let mut history = Vec::with_capacity(cfg.steps + 1);
    for step in 0..cfg.steps {
        let res = discriminative_loss(&field, &scene.points, &scene.labels, &radii, &cfg.disc)?;
        if !res.value.is_finite() {
            return Err(Error::Divergence(step));
        }
        history.push(res.value);
        field.axpy(-cfg.learning_rate, &res.gradient);
    }
    let fin = discriminative_loss(&field, &scene.points, &scene.labels, &radii, &cfg.disc)?;
    if !fin.value.is_finite() {
        return Err(Error::Divergence(cfg.steps));
    }
    history.push(fin.value);
    Ok((field, history))
}

/// optimize -> segment -> filter (scores synthesized as 1.0) -> score.
/// Halves the learning rate and retries on numerical divergence.
pub fn demo_pipeline(scene: &SyntheticScene, cfg: &OptimizeConfig) -> Result<MetricsReport> {
    let mut attempt_cfg = cfg.clone();
    let mut field = None;
    for _ in 0..4 {
        match optimize_embedding(scene, &attempt_cfg) {
            Ok((f, _)) => {
                field = Some(f);
                break;
            }
            Err(Error::Divergence(_)) => {
                attempt_cfg.learning_rate *= 0.5;
            }
            Err(e) => return Err(e),
        }
    }
    let field = match field {
        Some(f) => f,
        None => return Err(Error::Divergence(cfg.steps)),
    };
    score_segmentation(scene, &field, &attempt_cfg)
}

/// Segments a field against a scene's ground truth and reports metrics.
/// Exposed separately so constructed (non-optimized) fields can be scored
/// through the identical path.
pub fn score_segmentation(
    scene: &SyntheticScene,
    field: &FeatureMap,
    cfg: &OptimizeConfig,
) -> Result<MetricsReport> {
    let scored = scene.points.with_uniform_score(1.0);
    let seg = segment(field, &scored, &cfg.energy, &cfg.disc.kernel)?;
    let (_valid, filtered) = filter_pseudo_masks(&scored, &seg, &PseudoMaskFilter::default())?;
    let matches = match_instances(&filtered, &scene.labels)?;
    let detection = iou_f1(&matches, 0.5)?;
    let pred_count = filtered.ids().len() as f64;
    let gt_count = scene.labels.ids().len() as f64;
    let counting = counting_errors(&[pred_count], &[gt_count])?;
    Ok(MetricsReport::new(detection, counting))
}

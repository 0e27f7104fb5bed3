//! Instance mask generation from an embedding field: per-instance joint
//! energy (embedding distance plus radius-normalized squared geometric
//! distance) over NNEC disks, thresholded argmin label assignment,
//! optional disk fallback for instances left empty, dual-threshold
//! pseudo-mask filtering, and the point-only circle baseline.

use std::collections::BTreeSet;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{
    bilinear_sample, depthwise_gaussian_smooth, normalize_point, FeatureMap, GaussianKernel,
    ScalarField,
};
use crate::geometry::{disk_region, nnec_radii, rasterize_nearest, Point, PointSet, RegionMask};
use crate::grid::{Dims, InstanceLabelMap};

/// Parameters of the joint energy and its thresholding.
#[derive(Clone, Copy, Debug)]
pub struct EnergyConfig {
    /// Weight on the normalized squared geometric distance.
    pub lambda_geo: f64,
    /// Energy threshold; only pixels strictly below it receive a label.
    pub tau_g: f64,
    /// Radius regularizer in the geometric denominator.
    pub epsilon: f64,
    /// Assign a shrunken disk to instances that received zero pixels.
    pub nnec_fallback: bool,
    /// Fallback disk radius as a fraction of the NNEC radius.
    pub fallback_scale: f64,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        Self {
            lambda_geo: 1.0,
            tau_g: 0.8,
            epsilon: 1e-6,
            nnec_fallback: true,
            fallback_scale: 0.5,
        }
    }
}

impl EnergyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_geo < 0.0 || !self.lambda_geo.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "lambda_geo must be finite and >= 0, got {}",
                self.lambda_geo
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.fallback_scale > 0.0 && self.fallback_scale <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "fallback_scale must lie in (0, 1], got {}",
                self.fallback_scale
            )));
        }
        Ok(())
    }
}

/// Per-instance energy over its NNEC disk; conceptually +inf outside.
#[derive(Clone, Debug)]
pub struct EnergyField {
    instance_id: u32,
    disk: RegionMask,
    values: Vec<f64>,
}

impl EnergyField {
    pub fn instance_id(&self) -> u32 {
        self.instance_id
    }

    pub fn dims(&self) -> Dims {
        self.disk.dims()
    }

    pub fn disk(&self) -> &RegionMask {
        &self.disk
    }

    /// `(pixel index, energy)` pairs over the disk, row-major.
    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.disk
            .pixels()
            .iter()
            .copied()
            .zip(self.values.iter().copied())
    }

    /// Energy at a pixel; +inf outside the disk.
    pub fn energy_at(&self, y: usize, x: usize) -> f64 {
        let idx = self.dims().index(y, x);
        match self.disk.pixels().binary_search(&idx) {
            Ok(pos) => self.values[pos],
            Err(_) => f64::INFINITY,
        }
    }

    /// Dense materialization with the +inf sentinel outside the disk.
    pub fn to_scalar_field(&self) -> ScalarField {
        let mut out =
            ScalarField::new(self.dims(), vec![f64::INFINITY; self.dims().len()])
                .expect("sized buffer");
        for (idx, v) in self.iter() {
            out.data_mut()[idx] = v;
        }
        out
    }
}

/// Joint energy inside the NNEC disk:
/// `||smoothed(y,x) - c|| + lambda * ||(y,x) - p||² / (r + eps)²`
/// with the prototype `c` sampled from the smoothed field at the point.
pub fn energy_field(
    smoothed: &FeatureMap,
    point: &Point,
    radius: f64,
    cfg: &EnergyConfig,
) -> Result<EnergyField> {
    cfg.validate()?;
    let dims = smoothed.dims();
    let center = bilinear_sample(smoothed, normalize_point(point.y, point.x, dims)?)?;
    let disk = disk_region(point.y, point.x, radius, dims)?;
    let denom = (radius + cfg.epsilon) * (radius + cfg.epsilon);
    let mut values = Vec::with_capacity(disk.len());
    for (y, x) in disk.iter_coords() {
        let mut d2 = 0.0;
        for (c, &cv) in center.iter().enumerate() {
            let diff = smoothed.get(c, y, x) - cv;
            d2 += diff * diff;
        }
        let dy = y as f64 - point.y;
        let dx = x as f64 - point.x;
        values.push(d2.sqrt() + cfg.lambda_geo * (dy * dy + dx * dx) / denom);
    }
    Ok(EnergyField {
        instance_id: point.id,
        disk,
        values,
    })
}

/// Produced label map; same representation as the supervision maps.
pub type SegmentationLabelMap = InstanceLabelMap;

/// Each pixel takes the id of the lowest-energy instance strictly below
/// `tau_g`, ties to the smallest id, 0 when no instance qualifies.
pub fn assign_labels(energies: &[EnergyField], tau_g: f64) -> Result<SegmentationLabelMap> {
    let dims = match energies.first() {
        Some(e) => e.dims(),
        None => {
            return Err(Error::InvalidArgument(
                "cannot assign labels without energy fields".into(),
            ))
        }
    };
    if energies.iter().any(|e| e.dims() != dims) {
        return Err(Error::DimMismatch("energy fields disagree on grid".into()));
    }
    let mut order: Vec<usize> = (0..energies.len()).collect();
    order.sort_by_key(|&i| energies[i].instance_id());
    let mut best = vec![f64::INFINITY; dims.len()];
    let mut labels = InstanceLabelMap::zeros(dims);
    // Ascending-id sweep with strict improvement implements the
    // smallest-id tie-break.
    for &i in &order {
        let e = &energies[i];
        let id = e.instance_id();
        for (idx, v) in e.iter() {
            if v < tau_g && v < best[idx] {
                best[idx] = v;
                labels.data_mut()[idx] = id;
            }
        }
    }
    Ok(labels)
}

/// Full inference pipeline: smooth, sample prototypes, build per-instance
/// energies over NNEC disks, assign labels, and (optionally) hand empty
/// instances a shrunken fallback disk over background pixels only.
pub fn segment(
    raw: &FeatureMap,
    points: &PointSet,
    cfg: &EnergyConfig,
    kernel: &GaussianKernel,
) -> Result<SegmentationLabelMap> {
    cfg.validate()?;
    let dims = raw.dims();
    points.ensure_in_bounds(dims)?;
    let radii = nnec_radii(points, dims)?;
    let smoothed = depthwise_gaussian_smooth(raw, kernel)?;
    let energies: Vec<EnergyField> = points
        .points()
        .par_iter()
        .enumerate()
        .map(|(i, p)| energy_field(&smoothed, p, radii.get(i), cfg))
        .collect::<Result<Vec<_>>>()?;
    let mut labels = assign_labels(&energies, cfg.tau_g)?;
    if cfg.nnec_fallback {
        apply_disk_fallback(&mut labels, points, radii.radii(), cfg.fallback_scale)?;
    }
    Ok(labels)
}

/// Gives every pixel-less instance its fallback disk, claiming background
/// pixels only; overlapping fallback claims resolve by nearest point, then
/// smallest id (pixels already owned via energy are never overwritten).
fn apply_disk_fallback(
    labels: &mut SegmentationLabelMap,
    points: &PointSet,
    radii: &[f64],
    scale: f64,
) -> Result<()> {
    let dims = labels.dims();
    let present = labels.ids();
    let empty: Vec<(usize, &Point)> = points
        .iter()
        .enumerate()
        .filter(|(_, p)| !present.contains(&p.id))
        .collect();
    if empty.is_empty() {
        return Ok(());
    }
    let mut best: std::collections::HashMap<usize, (f64, u32)> = std::collections::HashMap::new();
    for (i, p) in empty {
        let disk = disk_region(p.y, p.x, scale * radii[i], dims)?;
        for &idx in disk.pixels() {
            if labels.data()[idx] != 0 {
                continue;
            }
            let (y, x) = dims.coords(idx);
            let dy = y as f64 - p.y;
            let dx = x as f64 - p.x;
            let d2 = dy * dy + dx * dx;
            let entry = best.entry(idx).or_insert((f64::INFINITY, 0));
            if d2 < entry.0 || (d2 == entry.0 && (entry.1 == 0 || p.id < entry.1)) {
                *entry = (d2, p.id);
            }
        }
    }
    for (idx, (_, id)) in best {
        labels.data_mut()[idx] = id;
    }
    Ok(())
}

/// Dual confidence thresholds for pseudo-mask filtering.
#[derive(Clone, Copy, Debug)]
pub struct PseudoMaskFilter {
    pub low_threshold: f64,
    pub high_threshold: f64,
}

impl Default for PseudoMaskFilter {
    fn default() -> Self {
        Self {
            low_threshold: 0.1,
            high_threshold: 0.95,
        }
    }
}

impl PseudoMaskFilter {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.low_threshold
            && self.low_threshold < self.high_threshold
            && self.high_threshold <= 1.0)
        {
            return Err(Error::InvalidArgument(format!(
                "need 0 <= low < high <= 1, got low={} high={}",
                self.low_threshold, self.high_threshold
            )));
        }
        Ok(())
    }
}

/// Splits segmented instances by their point scores: ids scoring at or
/// above the high threshold form the valid supervision set; ids in
/// `[low, high)` stay in the map (they still delimit reliable background)
/// but are excluded from the valid set; ids below the low threshold are
/// erased entirely.
pub fn filter_pseudo_masks(
    points: &PointSet,
    seg: &SegmentationLabelMap,
    filter: &PseudoMaskFilter,
) -> Result<(BTreeSet<u32>, SegmentationLabelMap)> {
    filter.validate()?;
    let mut score_of = std::collections::HashMap::new();
    for p in points.iter() {
        if let Some(s) = p.score {
            score_of.insert(p.id, s);
        }
    }
    let present = seg.ids();
    for &id in &present {
        if !score_of.contains_key(&id) {
            return Err(Error::InvalidArgument(format!(
                "segmented instance {id} has no scored point"
            )));
        }
    }
    let mut valid = BTreeSet::new();
    let mut erase = std::collections::HashSet::new();
    for &id in &present {
        let s = score_of[&id];
        if s >= filter.high_threshold {
            valid.insert(id);
        } else if s < filter.low_threshold {
            erase.insert(id);
        }
    }
    let mut out = seg.clone();
    if !erase.is_empty() {
        for v in out.data_mut() {
            if erase.contains(v) {
                *v = 0;
            }
        }
    }
    Ok((valid, out))
}

/// Point-only baseline: every instance is its NNEC disk, overlaps split by
/// nearest point, then smallest id.
pub fn circle_baseline(points: &PointSet, dims: Dims) -> Result<SegmentationLabelMap> {
    points.ensure_in_bounds(dims)?;
    let radii = nnec_radii(points, dims)?;
    let masks: Vec<(u32, RegionMask, (f64, f64))> = points
        .iter()
        .enumerate()
        .map(|(i, p)| -> Result<_> {
            Ok((p.id, disk_region(p.y, p.x, radii.get(i), dims)?, (p.y, p.x)))
        })
        .collect::<Result<Vec<_>>>()?;
    rasterize_nearest(&masks, dims)
}

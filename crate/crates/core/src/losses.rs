//! The three training losses with forward values and analytic gradients,
//! plus a finite-difference oracle and the EMA teacher update.
//!
//! The discriminative loss differentiates with respect to the *raw*
//! (pre-smoothing) field: the chain runs through the per-pixel distance
//! term, through the bilinearly sampled instance prototype, and back
//! through the smoothing adjoint. Subgradient conventions: 0 at every
//! hinge kink, and 0 for the Euclidean norm at distance zero (a pixel
//! sitting exactly on its prototype exerts no pull).

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{
    bilinear_sample, bilinear_scatter_into, depthwise_gaussian_smooth, gaussian_kernel_1d,
    normalize_point, smooth_adjoint, FeatureMap, GaussianKernel, NormalizedPoint, ScalarField,
};
use crate::geometry::{disk_region, partition_region, NnecRadii, PointSet, RegionPartition};
use crate::grid::InstanceLabelMap;

/// Hyperparameters of the discriminative pull/push loss. `tau` is the
/// distance threshold, `delta` the margin: positives are pulled within
/// `tau - delta` of the prototype, negatives pushed beyond `tau + delta`.
#[derive(Clone, Debug)]
pub struct DiscriminativeConfig {
    pub tau: f64,
    pub delta: f64,
    pub kernel: GaussianKernel,
}

impl DiscriminativeConfig {
    pub fn new(tau: f64, delta: f64, kernel: GaussianKernel) -> Result<Self> {
        let cfg = Self { tau, delta, kernel };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < self.tau) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < delta < tau, got delta={} tau={}",
                self.delta, self.tau
            )));
        }
        Ok(())
    }
}

impl Default for DiscriminativeConfig {
    fn default() -> Self {
        Self {
            tau: 0.6,
            delta: 0.1,
            kernel: gaussian_kernel_1d(7, 3.0).expect("builtin kernel"),
        }
    }
}

/// Loss value plus the gradient with respect to the differentiated input.
#[derive(Clone, Debug)]
pub struct LossResult<G> {
    pub value: f64,
    pub gradient: G,
}

/// Weight of the aggregated-response term in the foreground constraint.
#[derive(Clone, Copy, Debug)]
pub struct ForegroundConfig {
    pub lambda_fg: f64,
}

impl Default for ForegroundConfig {
    fn default() -> Self {
        Self { lambda_fg: 1.0 }
    }
}

/// Teacher-update momentum.
#[derive(Clone, Copy, Debug)]
pub struct EmaConfig {
    pub momentum: f64,
}

impl Default for EmaConfig {
    fn default() -> Self {
        Self { momentum: 0.999 }
    }
}

/// Dense gradient patch over a disk bounding box, channel-major.
struct GradPatch {
    y0: usize,
    x0: usize,
    ph: usize,
    pw: usize,
    data: Vec<f64>,
}

struct InstanceTerm {
    id: u32,
    loss: f64,
    patch: GradPatch,
    center_grad: Vec<f64>,
    norm_point: NormalizedPoint,
}

fn instance_term(
    smoothed: &FeatureMap,
    point_idx: usize,
    points: &PointSet,
    labels: &InstanceLabelMap,
    radii: &NnecRadii,
    cfg: &DiscriminativeConfig,
) -> Result<Option<InstanceTerm>> {
    let dims = smoothed.dims();
    let channels = smoothed.channels();
    let p = &points.points()[point_idx];
    let ell = labels.label_at(p.y, p.x);
    if ell == 0 {
        log::warn!(
            "skipping instance {}: annotation at ({:.1}, {:.1}) lies on background",
            p.id,
            p.y,
            p.x
        );
        return Ok(None);
    }
    let disk = disk_region(p.y, p.x, radii.get(point_idx), dims)?;
    let part = partition_region(&disk, labels, ell)?;
    let norm_point = normalize_point(p.y, p.x, dims)?;
    let center = bilinear_sample(smoothed, norm_point)?;

    let (y0, x0, y1, x1) = disk
        .bbox()
        .expect("disk around an in-bounds point is nonempty");
    let (ph, pw) = (y1 - y0 + 1, x1 - x0 + 1);
    let mut patch = GradPatch {
        y0,
        x0,
        ph,
        pw,
        data: vec![0.0; channels * ph * pw],
    };
    let mut center_grad = vec![0.0; channels];
    let inv_r = 1.0 / part.total() as f64;
    let mut loss = 0.0;

    let RegionPartition {
        positive, negative, ..
    } = &part;
    for (pixels, alpha) in [(positive, 1.0), (negative, -1.0)] {
        let kink = cfg.tau - alpha * cfg.delta;
        for &pix in pixels.iter() {
            let (y, x) = dims.coords(pix);
            let mut d2 = 0.0;
            for (c, &cv) in center.iter().enumerate() {
                let diff = smoothed.get(c, y, x) - cv;
                d2 += diff * diff;
            }
            let d = d2.sqrt();
            let arg = alpha * (d - kink);
            if arg > 0.0 {
                loss += arg;
                if d > 0.0 {
                    let coef = alpha * inv_r / d;
                    let local = (y - y0) * pw + (x - x0);
                    for (c, &cv) in center.iter().enumerate() {
                        let g = coef * (smoothed.get(c, y, x) - cv);
                        patch.data[c * ph * pw + local] += g;
                        center_grad[c] -= g;
                    }
                }
            }
        }
    }

    Ok(Some(InstanceTerm {
        id: p.id,
        loss: loss * inv_r,
        patch,
        center_grad,
        norm_point,
    }))
}

/// Pull/push hinge loss over NNEC disks, averaged per disk and then over
/// instances: `mean_i mean_{R_i} [alpha (d - (tau - alpha delta))]_+` with
/// `d = ||smooth(raw)(y,x) - c_i||` and `c_i` sampled from the smoothed
/// field at the annotation point. Gradient is with respect to `raw`.
///
/// Annotations whose label-map value is 0 are skipped with a warning; if
/// every instance is skipped the loss is undefined and an error is
/// returned.
pub fn discriminative_loss(
    raw: &FeatureMap,
    points: &PointSet,
    labels: &InstanceLabelMap,
    radii: &NnecRadii,
    cfg: &DiscriminativeConfig,
) -> Result<LossResult<FeatureMap>> {
    cfg.validate()?;
    let dims = raw.dims();
    if labels.dims() != dims {
        return Err(Error::DimMismatch(format!(
            "labels {}x{} vs field {}x{}",
            labels.dims().h,
            labels.dims().w,
            dims.h,
            dims.w
        )));
    }
    if points.is_empty() {
        return Err(Error::NoPoints);
    }
    if radii.len() != points.len() {
        return Err(Error::DimMismatch(
            "radii count differs from point count".into(),
        ));
    }
    points.ensure_in_bounds(dims)?;

    let smoothed = depthwise_gaussian_smooth(raw, &cfg.kernel)?;
    let mut terms: Vec<InstanceTerm> = (0..points.len())
        .into_par_iter()
        .map(|i| instance_term(&smoothed, i, points, labels, radii, cfg))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    if terms.is_empty() {
        return Err(Error::NoSupervisableInstances);
    }
    // Deterministic reduction in instance-id order, independent of how the
    // parallel map scheduled the work.
    terms.sort_by_key(|t| t.id);
    let inv_n = 1.0 / terms.len() as f64;

    let mut value = 0.0;
    let mut grad_smoothed = FeatureMap::zeros(raw.channels(), dims);
    for term in &terms {
        value += term.loss * inv_n;
        let GradPatch {
            y0,
            x0,
            ph,
            pw,
            ref data,
        } = term.patch;
        for c in 0..raw.channels() {
            for py in 0..ph {
                for px in 0..pw {
                    let g = data[c * ph * pw + py * pw + px];
                    if g != 0.0 {
                        let cur = grad_smoothed.get(c, y0 + py, x0 + px);
                        grad_smoothed.set(c, y0 + py, x0 + px, cur + g * inv_n);
                    }
                }
            }
        }
        let scaled: Vec<f64> = term.center_grad.iter().map(|g| g * inv_n).collect();
        bilinear_scatter_into(&mut grad_smoothed, term.norm_point, &scaled)?;
    }
    let gradient = smooth_adjoint(&grad_smoothed, &cfg.kernel)?;
    Ok(LossResult { value, gradient })
}

/// Smallest distance of any disk pixel's embedding distance from the
/// nondifferentiable points of the discriminative loss: the hinge kink of
/// its own sign, plus the zero-distance norm singularity for negatives
/// (where the push hinge is active near d = 0; positives at d = 0 have an
/// inactive hinge and contribute nothing). Gradient checks should only
/// trust fixtures where this margin comfortably exceeds the probe step.
pub fn discriminative_kink_margin(
    raw: &FeatureMap,
    points: &PointSet,
    labels: &InstanceLabelMap,
    radii: &NnecRadii,
    cfg: &DiscriminativeConfig,
) -> Result<f64> {
    cfg.validate()?;
    let dims = raw.dims();
    points.ensure_in_bounds(dims)?;
    let smoothed = depthwise_gaussian_smooth(raw, &cfg.kernel)?;
    let mut margin = f64::INFINITY;
    for (i, p) in points.iter().enumerate() {
        let ell = labels.label_at(p.y, p.x);
        if ell == 0 {
            continue;
        }
        let disk = disk_region(p.y, p.x, radii.get(i), dims)?;
        let part = partition_region(&disk, labels, ell)?;
        let center = bilinear_sample(&smoothed, normalize_point(p.y, p.x, dims)?)?;
        for (pixels, alpha) in [(&part.positive, 1.0), (&part.negative, -1.0)] {
            let kink = cfg.tau - alpha * cfg.delta;
            for &pix in pixels.iter() {
                let (y, x) = dims.coords(pix);
                let mut d2 = 0.0;
                for (c, &cv) in center.iter().enumerate() {
                    let diff = smoothed.get(c, y, x) - cv;
                    d2 += diff * diff;
                }
                let d = d2.sqrt();
                margin = margin.min((d - kink).abs());
                if alpha < 0.0 {
                    margin = margin.min(d);
                }
            }
        }
    }
    Ok(margin)
}

/// Mean positive response over background pixels:
/// `(1/|bg|) sum max(0, pred)`. An all-foreground label map has no
/// background to penalize, so the loss is defined as 0 there.
pub fn background_penalty(
    pred: &ScalarField,
    labels: &InstanceLabelMap,
) -> Result<LossResult<ScalarField>> {
    if pred.dims() != labels.dims() {
        return Err(Error::DimMismatch(format!(
            "prediction {}x{} vs labels {}x{}",
            pred.dims().h,
            pred.dims().w,
            labels.dims().h,
            labels.dims().w
        )));
    }
    let n_bg = labels.data().iter().filter(|&&v| v == 0).count();
    let mut gradient = ScalarField::zeros(pred.dims());
    if n_bg == 0 {
        return Ok(LossResult {
            value: 0.0,
            gradient,
        });
    }
    let inv = 1.0 / n_bg as f64;
    let mut value = 0.0;
    for (i, (&f, &l)) in pred.data().iter().zip(labels.data()).enumerate() {
        if l == 0 && f > 0.0 {
            value += f * inv;
            gradient.data_mut()[i] = inv;
        }
    }
    Ok(LossResult { value, gradient })
}

/// One-point foreground constraint over the valid pseudo-mask set:
/// `(1/|K|) sum_k (|N_k - 1| + lambda |S_k - 1|)` where `S_k` sums the
/// positive responses inside mask k and `N_k` counts them. Only the `S_k`
/// path carries gradient; the pixel count is piecewise constant.
pub fn foreground_constraint(
    pred: &ScalarField,
    labels: &InstanceLabelMap,
    valid_ids: &std::collections::BTreeSet<u32>,
    cfg: &ForegroundConfig,
) -> Result<LossResult<ScalarField>> {
    if pred.dims() != labels.dims() {
        return Err(Error::DimMismatch(format!(
            "prediction {}x{} vs labels {}x{}",
            pred.dims().h,
            pred.dims().w,
            labels.dims().h,
            labels.dims().w
        )));
    }
    if valid_ids.is_empty() {
        return Err(Error::NoValidPseudoMasks);
    }
    let index: std::collections::HashMap<u32, usize> = valid_ids
        .iter()
        .enumerate()
        .map(|(i, &id)| (id, i))
        .collect();
    let k = valid_ids.len();
    let mut area = vec![0usize; k];
    let mut n_pos = vec![0usize; k];
    let mut s = vec![0.0; k];
    for (&f, &l) in pred.data().iter().zip(labels.data()) {
        if let Some(&ki) = index.get(&l) {
            area[ki] += 1;
            if f > 0.0 {
                n_pos[ki] += 1;
                s[ki] += f;
            }
        }
    }
    for (i, id) in valid_ids.iter().enumerate() {
        if area[i] == 0 {
            return Err(Error::InvalidArgument(format!(
                "valid id {id} not present in labels"
            )));
        }
    }
    let inv_k = 1.0 / k as f64;
    let mut value = 0.0;
    for i in 0..k {
        value += ((n_pos[i] as f64 - 1.0).abs() + cfg.lambda_fg * (s[i] - 1.0).abs()) * inv_k;
    }
    // sign(S_k - 1) with the 0-at-kink convention.
    let sig: Vec<f64> = s
        .iter()
        .map(|&v| {
            if v > 1.0 {
                1.0
            } else if v < 1.0 {
                -1.0
            } else {
                0.0
            }
        })
        .collect();
    let mut gradient = ScalarField::zeros(pred.dims());
    for (i, (&f, &l)) in pred.data().iter().zip(labels.data()).enumerate() {
        if f > 0.0 {
            if let Some(&ki) = index.get(&l) {
                gradient.data_mut()[i] = cfg.lambda_fg * sig[ki] * inv_k;
            }
        }
    }
    Ok(LossResult { value, gradient })
}

/// Central finite differences `(L(x + h e_i) - L(x - h e_i)) / 2h` per
/// entry. The independent oracle for every analytic gradient in this
/// module; quadratic cost, intended for desk-scale fixtures.
pub fn finite_diff_gradient<F>(mut loss_fn: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut work = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = work[i];
        work[i] = orig + h;
        let plus = loss_fn(&work);
        work[i] = orig - h;
        let minus = loss_fn(&work);
        work[i] = orig;
        grad[i] = (plus - minus) / (2.0 * h);
    }
    grad
}

/// Largest per-entry relative error `|a - b| / max(|a|, |b|, floor)`. The
/// floor keeps entries that are zero (or numerically negligible) in both
/// gradients from dominating the comparison.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// `momentum * teacher + (1 - momentum) * student`, elementwise.
pub fn ema_update(teacher: &[f64], student: &[f64], cfg: &EmaConfig) -> Result<Vec<f64>> {
    if teacher.len() != student.len() {
        return Err(Error::DimMismatch(format!(
            "teacher has {} parameters, student {}",
            teacher.len(),
            student.len()
        )));
    }
    Ok(teacher
        .iter()
        .zip(student)
        .map(|(&t, &s)| cfg.momentum * t + (1.0 - cfg.momentum) * s)
        .collect())
}

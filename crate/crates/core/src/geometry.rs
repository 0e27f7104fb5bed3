//! Point-set geometry: pairwise distances, nearest-neighbor exclusion
//! circle (NNEC) radii, disk region masks, and positive/negative region
//! partitioning against an instance label map.
//!
//! NNEC radius of a point is its distance to the nearest other annotated
//! point; a single point degenerates to half the shorter image side. All
//! geometry is exact double precision, no spatial index (point counts stay
//! in the thousands, the quadratic scan is exact and fast enough).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Dims, InstanceLabelMap};

/// One annotated (or predicted) head location.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub id: u32,
    pub y: f64,
    pub x: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl Point {
    pub fn new(id: u32, y: f64, x: f64) -> Self {
        Self {
            id,
            y,
            x,
            score: None,
        }
    }

    pub fn with_score(id: u32, y: f64, x: f64, score: f64) -> Self {
        Self {
            id,
            y,
            x,
            score: Some(score),
        }
    }
}

/// Ordered collection of points with unique positive ids.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSet {
    points: Vec<Point>,
}

impl PointSet {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        let mut seen = std::collections::HashSet::with_capacity(points.len());
        for p in &points {
            if p.id == 0 {
                return Err(Error::ZeroId);
            }
            if !seen.insert(p.id) {
                return Err(Error::DuplicateId(p.id));
            }
            if !p.y.is_finite() || !p.x.is_finite() {
                return Err(Error::Parse(format!(
                    "point {} has non-finite coordinates",
                    p.id
                )));
            }
            if let Some(s) = p.score {
                if !(0.0..=1.0).contains(&s) || s.is_nan() {
                    return Err(Error::InvalidScore(s));
                }
            }
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Point> {
        self.points.iter()
    }

    pub fn by_id(&self, id: u32) -> Option<&Point> {
        self.points.iter().find(|p| p.id == id)
    }

    /// Checks every coordinate against `[0, h) x [0, w)`.
    pub fn ensure_in_bounds(&self, dims: Dims) -> Result<()> {
        for p in &self.points {
            if !dims.contains(p.y, p.x) {
                return Err(Error::PointOutOfBounds {
                    y: p.y,
                    x: p.x,
                    h: dims.h,
                    w: dims.w,
                });
            }
        }
        Ok(())
    }

    /// Copy with every score replaced by `score`.
    pub fn with_uniform_score(&self, score: f64) -> Self {
        Self {
            points: self
                .points
                .iter()
                .map(|p| Point::with_score(p.id, p.y, p.x, score))
                .collect(),
        }
    }

    /// Copy with coordinates divided by `stride` (image grid to feature
    /// grid).
    pub fn rescaled(&self, stride: f64) -> Self {
        Self {
            points: self
                .points
                .iter()
                .map(|p| Point {
                    id: p.id,
                    y: p.y / stride,
                    x: p.x / stride,
                    score: p.score,
                })
                .collect(),
        }
    }

    /// Parses the points file format: a JSON array of
    /// `{"id": int, "y": float, "x": float, "score": float?}` objects.
    pub fn from_json_str(s: &str) -> Result<Self> {
        let points: Vec<Point> =
            serde_json::from_str(s).map_err(|e| Error::Parse(format!("points JSON: {e}")))?;
        Self::new(points)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(&self.points).expect("point serialization cannot fail")
    }
}

/// Symmetric matrix of pairwise Euclidean distances, row-major.
#[derive(Clone, Debug)]
pub struct DistanceMatrix {
    n: usize,
    d: Vec<f64>,
}

impl DistanceMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }
}

/// NNEC radii aligned with the originating point order.
#[derive(Clone, Debug)]
pub struct NnecRadii {
    r: Vec<f64>,
}

impl NnecRadii {
    /// Wraps externally computed radii (fixtures, file input); every entry
    /// must be strictly positive.
    pub fn from_radii(r: Vec<f64>) -> Result<Self> {
        if r.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidArgument(
                "NNEC radii must be strictly positive".into(),
            ));
        }
        Ok(Self { r })
    }

    pub fn radii(&self) -> &[f64] {
        &self.r
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize) -> f64 {
        self.r[i]
    }
}

/// Euclidean distances between all point pairs.
pub fn pairwise_distances(points: &PointSet) -> Result<DistanceMatrix> {
    if points.is_empty() {
        return Err(Error::NoPoints);
    }
    let n = points.len();
    let pts = points.points();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let dy = pts[i].y - pts[j].y;
            let dx = pts[i].x - pts[j].x;
            let dist = (dy * dy + dx * dx).sqrt();
            d[i * n + j] = dist;
            d[j * n + i] = dist;
        }
    }
    Ok(DistanceMatrix { n, d })
}

/// Nearest-neighbor exclusion radii. With one point the radius degenerates
/// to the global scale estimate `0.5 * min(h, w)`; coincident points are
/// rejected because a zero radius would empty every disk built from it.
pub fn nnec_radii(points: &PointSet, dims: Dims) -> Result<NnecRadii> {
    if points.is_empty() {
        return Err(Error::NoPoints);
    }
    if dims.is_empty() {
        return Err(Error::InvalidArgument("empty grid".into()));
    }
    if points.len() == 1 {
        return Ok(NnecRadii {
            r: vec![0.5 * dims.h.min(dims.w) as f64],
        });
    }
    let dm = pairwise_distances(points)?;
    let pts = points.points();
    let mut r = Vec::with_capacity(points.len());
    for i in 0..dm.n() {
        let mut best = f64::INFINITY;
        let mut best_j = i;
        for j in 0..dm.n() {
            if j != i && dm.get(i, j) < best {
                best = dm.get(i, j);
                best_j = j;
            }
        }
        if best == 0.0 {
            return Err(Error::CoincidentPoints {
                a: pts[i].id,
                b: pts[best_j].id,
            });
        }
        r.push(best);
    }
    Ok(NnecRadii { r })
}

/// Sparse boolean pixel mask: sorted row-major indices plus the grid they
/// refer to. Produced by [`disk_region`] for NNEC disks and reused for any
/// derived pixel set (e.g. candidate-mask intersections).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegionMask {
    dims: Dims,
    pixels: Vec<usize>,
}

impl RegionMask {
    /// Builds a mask from row-major pixel indices; sorts and deduplicates.
    pub fn from_pixels(dims: Dims, mut pixels: Vec<usize>) -> Result<Self> {
        pixels.sort_unstable();
        pixels.dedup();
        if let Some(&last) = pixels.last() {
            if last >= dims.len() {
                return Err(Error::DimMismatch(format!(
                    "pixel index {last} outside {}x{} grid",
                    dims.h, dims.w
                )));
            }
        }
        Ok(Self { dims, pixels })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn pixels(&self) -> &[usize] {
        &self.pixels
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn contains_index(&self, index: usize) -> bool {
        self.pixels.binary_search(&index).is_ok()
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        self.contains_index(self.dims.index(y, x))
    }

    /// Iterates members as `(y, x)` pairs in row-major order.
    pub fn iter_coords(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.pixels.iter().map(move |&i| self.dims.coords(i))
    }

    /// Bounding box `(y0, x0, y1, x1)` inclusive, None when empty.
    pub fn bbox(&self) -> Option<(usize, usize, usize, usize)> {
        if self.pixels.is_empty() {
            return None;
        }
        let mut y0 = usize::MAX;
        let mut x0 = usize::MAX;
        let mut y1 = 0;
        let mut x1 = 0;
        for (y, x) in self.iter_coords() {
            y0 = y0.min(y);
            x0 = x0.min(x);
            y1 = y1.max(y);
            x1 = x1.max(x);
        }
        Some((y0, x0, y1, x1))
    }
}

/// In-bounds pixels within `radius` (inclusive) of `(y, x)`.
pub fn disk_region(y: f64, x: f64, radius: f64, dims: Dims) -> Result<RegionMask> {
    if !(radius > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "disk radius must be positive, got {radius}"
        )));
    }
    let r2 = radius * radius;
    let y_lo = ((y - radius).ceil().max(0.0)) as usize;
    let y_hi = ((y + radius).floor()).min((dims.h - 1) as f64).max(0.0) as usize;
    let x_lo = ((x - radius).ceil().max(0.0)) as usize;
    let x_hi = ((x + radius).floor()).min((dims.w - 1) as f64).max(0.0) as usize;
    let mut pixels = Vec::new();
    if (y + radius) >= 0.0 && (x + radius) >= 0.0 && y - radius < dims.h as f64 {
        for py in y_lo..=y_hi.min(dims.h - 1) {
            let dy = py as f64 - y;
            let rem = r2 - dy * dy;
            if rem < 0.0 {
                continue;
            }
            for px in x_lo..=x_hi.min(dims.w - 1) {
                let dx = px as f64 - x;
                if dy * dy + dx * dx <= r2 {
                    pixels.push(dims.index(py, px));
                }
            }
        }
    }
    RegionMask::from_pixels(dims, pixels)
}

/// Disk pixels split by the instance label: members carrying
/// `instance_label` are positive, every other member (background included)
/// is negative.
#[derive(Clone, Debug)]
pub struct RegionPartition {
    pub instance_label: u32,
    pub positive: Vec<usize>,
    pub negative: Vec<usize>,
}

impl RegionPartition {
    pub fn total(&self) -> usize {
        self.positive.len() + self.negative.len()
    }
}

/// Splits a region against a label map. A zero `instance_label` means the
/// annotation fell on background; such orphans carry no supervision and are
/// reported as an error so callers can skip the instance.
pub fn partition_region(
    region: &RegionMask,
    labels: &InstanceLabelMap,
    instance_label: u32,
) -> Result<RegionPartition> {
    if region.dims() != labels.dims() {
        return Err(Error::DimMismatch(format!(
            "region grid {}x{} vs label grid {}x{}",
            region.dims().h,
            region.dims().w,
            labels.dims().h,
            labels.dims().w
        )));
    }
    if instance_label == 0 {
        return Err(Error::OrphanInstance(0));
    }
    let data = labels.data();
    let mut positive = Vec::new();
    let mut negative = Vec::new();
    for &i in region.pixels() {
        if data[i] == instance_label {
            positive.push(i);
        } else {
            negative.push(i);
        }
    }
    Ok(RegionPartition {
        instance_label,
        positive,
        negative,
    })
}

/// Rasterizes per-instance masks into one label map, resolving pixels
/// claimed by several masks in favor of the nearest source point, then the
/// smallest id. Deterministic for any input order.
pub fn rasterize_nearest(
    masks: &[(u32, RegionMask, (f64, f64))],
    dims: Dims,
) -> Result<InstanceLabelMap> {
    let mut best: Vec<(f64, u32)> = vec![(f64::INFINITY, 0); dims.len()];
    for (id, mask, (py, px)) in masks {
        if mask.dims() != dims {
            return Err(Error::DimMismatch(
                "mask grid differs from output grid".into(),
            ));
        }
        if *id == 0 {
            return Err(Error::ZeroId);
        }
        for &i in mask.pixels() {
            let (y, x) = dims.coords(i);
            let dy = y as f64 - py;
            let dx = x as f64 - px;
            let d2 = dy * dy + dx * dx;
            let entry = &mut best[i];
            if d2 < entry.0 || (d2 == entry.0 && (entry.1 == 0 || *id < entry.1)) {
                *entry = (d2, *id);
            }
        }
    }
    let data = best.into_iter().map(|(_, id)| id).collect();
    InstanceLabelMap::new(dims, data)
}

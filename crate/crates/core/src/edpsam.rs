//! Constrained mask construction from point prompts: SLIC superpixels, a
//! pluggable candidate-mask provider standing in for an external
//! promptable segmenter, smallest-covering-candidate selection, NNEC disk
//! intersection, and the disk fallback for points with no usable
//! candidate.

use crate::error::{Error, Result};
use crate::geometry::{disk_region, nnec_radii, rasterize_nearest, Point, PointSet, RegionMask};
use crate::grid::{Dims, InstanceLabelMap};

/// RGB image with planar channels, values in `[0, 1]`.
#[derive(Clone, Debug)]
pub struct Image {
    dims: Dims,
    data: Vec<f64>,
}

impl Image {
    pub fn new(dims: Dims, data: Vec<f64>) -> Result<Self> {
        if data.len() != 3 * dims.len() {
            return Err(Error::DimMismatch(format!(
                "image buffer holds {} values for 3x{}x{}",
                data.len(),
                dims.h,
                dims.w
            )));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::InvalidArgument(
                "image values must be finite and in [0, 1]".into(),
            ));
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    #[inline]
    pub fn get(&self, channel: usize, y: usize, x: usize) -> f64 {
        self.data[channel * self.dims.len() + self.dims.index(y, x)]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    fn pixel(&self, idx: usize) -> [f64; 3] {
        let hw = self.dims.len();
        [self.data[idx], self.data[hw + idx], self.data[2 * hw + idx]]
    }
}

/// Dense superpixel assignment; segment ids are contiguous from 1 and
/// every segment is 4-connected.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SuperpixelMap {
    dims: Dims,
    labels: Vec<u32>,
    segment_count: u32,
}

impl SuperpixelMap {
    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn segment_count(&self) -> u32 {
        self.segment_count
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u32 {
        self.labels[self.dims.index(y, x)]
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Segment under a continuous coordinate (rounded, clamped).
    pub fn segment_at(&self, y: f64, x: f64) -> u32 {
        let yi = (y.round().max(0.0) as usize).min(self.dims.h - 1);
        let xi = (x.round().max(0.0) as usize).min(self.dims.w - 1);
        self.get(yi, xi)
    }
}

struct Cluster {
    y: f64,
    x: f64,
    color: [f64; 3],
}

/// SLIC superpixels: k-means in joint color-position space with grid
/// seeding at spacing `s = sqrt(h*w/n_segments)`, a `2s x 2s` assignment
/// window per center, distance `d_color + (compactness/s) * d_spatial`,
/// and a connectivity post-pass that merges orphan components into the
/// largest adjacent segment.
pub fn slic_superpixels(
    img: &Image,
    n_segments: usize,
    compactness: f64,
    iters: usize,
) -> Result<SuperpixelMap> {
    let dims = img.dims();
    if n_segments == 0 {
        return Err(Error::InvalidArgument("n_segments must be >= 1".into()));
    }
    if n_segments > dims.len() {
        return Err(Error::InvalidArgument(format!(
            "n_segments {} exceeds pixel count {}",
            n_segments,
            dims.len()
        )));
    }
    if iters == 0 {
        return Err(Error::InvalidArgument("iters must be >= 1".into()));
    }
    if !(compactness >= 0.0) {
        return Err(Error::InvalidArgument(
            "compactness must be non-negative".into(),
        ));
    }
    let (h, w) = (dims.h, dims.w);
    let s = ((h * w) as f64 / n_segments as f64).sqrt();
    let ny = ((h as f64 / s).round() as usize).clamp(1, h);
    let nx = ((n_segments as f64 / ny as f64).round() as usize).clamp(1, w);

    let mut clusters: Vec<Cluster> = Vec::with_capacity(nx * ny);
    for iy in 0..ny {
        for ix in 0..nx {
            let cy = (iy as f64 + 0.5) * h as f64 / ny as f64;
            let cx = (ix as f64 + 0.5) * w as f64 / nx as f64;
            let idx = dims.index(
                (cy.floor() as usize).min(h - 1),
                (cx.floor() as usize).min(w - 1),
            );
            clusters.push(Cluster {
                y: cy,
                x: cx,
                color: img.pixel(idx),
            });
        }
    }

    let spatial_weight = compactness / s;
    let mut assignment = vec![usize::MAX; h * w];
    let mut best = vec![f64::INFINITY; h * w];
    for _ in 0..iters {
        best.fill(f64::INFINITY);
        assignment.fill(usize::MAX);
        for (ci, cl) in clusters.iter().enumerate() {
            let y_lo = ((cl.y - s).floor().max(0.0)) as usize;
            let y_hi = ((cl.y + s).ceil().min((h - 1) as f64)) as usize;
            let x_lo = ((cl.x - s).floor().max(0.0)) as usize;
            let x_hi = ((cl.x + s).ceil().min((w - 1) as f64)) as usize;
            for y in y_lo..=y_hi {
                for x in x_lo..=x_hi {
                    let idx = dims.index(y, x);
                    let px = img.pixel(idx);
                    let dc = ((px[0] - cl.color[0]).powi(2)
                        + (px[1] - cl.color[1]).powi(2)
                        + (px[2] - cl.color[2]).powi(2))
                    .sqrt();
                    let ds =
                        ((y as f64 - cl.y).powi(2) + (x as f64 - cl.x).powi(2)).sqrt();
                    let d = dc + spatial_weight * ds;
                    if d < best[idx] {
                        best[idx] = d;
                        assignment[idx] = ci;
                    }
                }
            }
        }
        // Pixels outside every window fall back to the spatially nearest
        // center (rare; only when the seed grid is very uneven).
        for idx in 0..h * w {
            if assignment[idx] == usize::MAX {
                let (y, x) = dims.coords(idx);
                let mut bd = f64::INFINITY;
                for (ci, cl) in clusters.iter().enumerate() {
                    let ds = (y as f64 - cl.y).powi(2) + (x as f64 - cl.x).powi(2);
                    if ds < bd {
                        bd = ds;
                        assignment[idx] = ci;
                    }
                }
            }
        }
        // Move centers to the mean of their members.
        let mut count = vec![0usize; clusters.len()];
        let mut sum_y = vec![0.0; clusters.len()];
        let mut sum_x = vec![0.0; clusters.len()];
        let mut sum_c = vec![[0.0; 3]; clusters.len()];
        for idx in 0..h * w {
            let ci = assignment[idx];
            let (y, x) = dims.coords(idx);
            count[ci] += 1;
            sum_y[ci] += y as f64;
            sum_x[ci] += x as f64;
            let px = img.pixel(idx);
            for k in 0..3 {
                sum_c[ci][k] += px[k];
            }
        }
        for (ci, cl) in clusters.iter_mut().enumerate() {
            if count[ci] > 0 {
                let n = count[ci] as f64;
                cl.y = sum_y[ci] / n;
                cl.x = sum_x[ci] / n;
                for k in 0..3 {
                    cl.color[k] = sum_c[ci][k] / n;
                }
            }
        }
    }

    Ok(enforce_connectivity(dims, &assignment))
}

/// Connected-component cleanup: each cluster keeps its largest 4-connected
/// component; every other component merges into the largest segment it
/// touches. Ids are then relabeled contiguous from 1 in scan order.
fn enforce_connectivity(dims: Dims, assignment: &[usize]) -> SuperpixelMap {
    let (h, w) = (dims.h, dims.w);
    let n = h * w;
    let mut comp = vec![usize::MAX; n];
    let mut comp_cluster = Vec::new();
    let mut comp_pixels: Vec<Vec<usize>> = Vec::new();
    let mut stack = Vec::new();
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        let cid = comp_pixels.len();
        comp_cluster.push(assignment[start]);
        comp_pixels.push(Vec::new());
        comp[start] = cid;
        stack.push(start);
        while let Some(idx) = stack.pop() {
            comp_pixels[cid].push(idx);
            let (y, x) = dims.coords(idx);
            let mut push = |ny: usize, nx: usize| {
                let nidx = dims.index(ny, nx);
                if comp[nidx] == usize::MAX && assignment[nidx] == assignment[start] {
                    comp[nidx] = cid;
                    stack.push(nidx);
                }
            };
            if y > 0 {
                push(y - 1, x);
            }
            if y + 1 < h {
                push(y + 1, x);
            }
            if x > 0 {
                push(y, x - 1);
            }
            if x + 1 < w {
                push(y, x + 1);
            }
        }
    }

    // Largest component per cluster survives as a segment root.
    let mut largest: std::collections::HashMap<usize, usize> = std::collections::HashMap::new();
    for cid in 0..comp_pixels.len() {
        let entry = largest.entry(comp_cluster[cid]).or_insert(cid);
        if comp_pixels[cid].len() > comp_pixels[*entry].len() {
            *entry = cid;
        }
    }
    let kept: std::collections::HashSet<usize> = largest.values().copied().collect();

    // Root component id per component; orphans resolve iteratively onto
    // the largest adjacent resolved segment.
    let mut root: Vec<Option<usize>> = (0..comp_pixels.len())
        .map(|cid| kept.contains(&cid).then_some(cid))
        .collect();
    let mut size: std::collections::HashMap<usize, usize> = kept
        .iter()
        .map(|&cid| (cid, comp_pixels[cid].len()))
        .collect();
    loop {
        let mut progress = false;
        let mut pending = false;
        for cid in 0..comp_pixels.len() {
            if root[cid].is_some() {
                continue;
            }
            let mut candidate: Option<(usize, usize)> = None; // (size, root)
            for &idx in &comp_pixels[cid] {
                let (y, x) = dims.coords(idx);
                let mut consider = |nidx: usize| {
                    if comp[nidx] != cid {
                        if let Some(r) = root[comp[nidx]] {
                            let sz = size[&r];
                            let better = match candidate {
                                None => true,
                                Some((bs, br)) => sz > bs || (sz == bs && r < br),
                            };
                            if better {
                                candidate = Some((sz, r));
                            }
                        }
                    }
                };
                if y > 0 {
                    consider(dims.index(y - 1, x));
                }
                if y + 1 < h {
                    consider(dims.index(y + 1, x));
                }
                if x > 0 {
                    consider(dims.index(y, x - 1));
                }
                if x + 1 < w {
                    consider(dims.index(y, x + 1));
                }
            }
            match candidate {
                Some((_, r)) => {
                    root[cid] = Some(r);
                    *size.get_mut(&r).unwrap() += comp_pixels[cid].len();
                    progress = true;
                }
                None => pending = true,
            }
        }
        if !pending {
            break;
        }
        assert!(progress, "orphan components must eventually touch a segment");
    }

    // Relabel roots 1..m by first occurrence in scan order.
    let mut relabel: std::collections::HashMap<usize, u32> = std::collections::HashMap::new();
    let mut labels = vec![0u32; n];
    let mut next = 1u32;
    for idx in 0..n {
        let r = root[comp[idx]].expect("all components resolved");
        let lab = *relabel.entry(r).or_insert_with(|| {
            let v = next;
            next += 1;
            v
        });
        labels[idx] = lab;
    }
    SuperpixelMap {
        dims,
        labels,
        segment_count: next - 1,
    }
}

/// One externally produced binary mask with its pixel count.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CandidateMask {
    dims: Dims,
    bits: Vec<bool>,
    area: usize,
}

impl CandidateMask {
    pub fn from_bits(dims: Dims, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != dims.len() {
            return Err(Error::DimMismatch(format!(
                "mask buffer holds {} bits for {}x{}",
                bits.len(),
                dims.h,
                dims.w
            )));
        }
        let area = bits.iter().filter(|&&b| b).count();
        if area == 0 {
            return Err(Error::InvalidArgument("candidate mask is empty".into()));
        }
        Ok(Self { dims, bits, area })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn area(&self) -> usize {
        self.area
    }

    #[inline]
    pub fn contains(&self, y: usize, x: usize) -> bool {
        self.bits[self.dims.index(y, x)]
    }

    pub fn contains_index(&self, idx: usize) -> bool {
        self.bits[idx]
    }
}

/// Candidate masks offered for one prompt; may be empty.
#[derive(Clone, Debug, Default)]
pub struct CandidateMaskSet {
    pub masks: Vec<CandidateMask>,
}

impl CandidateMaskSet {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Reads one mask per distinct nonzero value of a label map, ascending
    /// by value (the candidate exchange format).
    pub fn from_label_map(map: &InstanceLabelMap) -> Result<Self> {
        let mut masks = Vec::new();
        for id in map.ids() {
            let bits = map.data().iter().map(|&v| v == id).collect();
            masks.push(CandidateMask::from_bits(map.dims(), bits)?);
        }
        Ok(Self { masks })
    }
}

/// Smallest candidate mask covering the rounded point; ties keep the
/// earliest in list order. None when no candidate covers the point.
pub fn select_candidate<'a>(
    point: &Point,
    candidates: &'a CandidateMaskSet,
) -> Option<&'a CandidateMask> {
    let mut selected: Option<&CandidateMask> = None;
    for mask in &candidates.masks {
        let dims = mask.dims();
        let y = (point.y.round().max(0.0) as usize).min(dims.h - 1);
        let x = (point.x.round().max(0.0) as usize).min(dims.w - 1);
        if mask.contains(y, x) && selected.map_or(true, |cur| mask.area < cur.area) {
            selected = Some(mask);
        }
    }
    selected
}

/// Selected candidate intersected with the NNEC disk; the disk itself when
/// no candidate covers the point or the intersection comes up empty.
pub fn edp_sam_mask(
    point: &Point,
    radius: f64,
    candidates: &CandidateMaskSet,
    dims: Dims,
) -> Result<RegionMask> {
    let disk = disk_region(point.y, point.x, radius, dims)?;
    let selected = match select_candidate(point, candidates) {
        Some(c) => c,
        None => return Ok(disk),
    };
    if selected.dims() != dims {
        return Err(Error::DimMismatch(
            "candidate mask grid differs from target grid".into(),
        ));
    }
    let clipped: Vec<usize> = disk
        .pixels()
        .iter()
        .copied()
        .filter(|&idx| selected.contains_index(idx))
        .collect();
    if clipped.is_empty() {
        return Ok(disk);
    }
    RegionMask::from_pixels(dims, clipped)
}

/// Rasterizes per-point constrained masks into one annotation map;
/// overlap conflicts resolve by nearest point, then smallest id.
pub fn build_annotation(
    points: &PointSet,
    candidates_per_point: &[CandidateMaskSet],
    dims: Dims,
) -> Result<InstanceLabelMap> {
    if candidates_per_point.len() != points.len() {
        return Err(Error::DimMismatch(format!(
            "{} candidate sets for {} points",
            candidates_per_point.len(),
            points.len()
        )));
    }
    points.ensure_in_bounds(dims)?;
    let radii = nnec_radii(points, dims)?;
    let masks: Vec<(u32, RegionMask, (f64, f64))> = points
        .iter()
        .zip(candidates_per_point)
        .enumerate()
        .map(|(i, (p, cands))| -> Result<_> {
            Ok((
                p.id,
                edp_sam_mask(p, radii.get(i), cands, dims)?,
                (p.y, p.x),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    rasterize_nearest(&masks, dims)
}

/// Prompt handed to an external candidate provider: the head point plus
/// the id of the superpixel containing it, when superpixels were built.
#[derive(Clone, Copy, Debug)]
pub struct DualPrompt<'a> {
    pub point: &'a Point,
    pub superpixel_id: Option<u32>,
}

/// Abstraction over the external promptable segmenter: given a dual
/// prompt, produce candidate masks. An empty set triggers the disk
/// fallback downstream.
pub trait CandidateProvider {
    fn candidates(&self, prompt: &DualPrompt<'_>) -> CandidateMaskSet;
}

/// Provider with no candidates; every point falls back to its disk.
pub struct NoCandidates;

impl CandidateProvider for NoCandidates {
    fn candidates(&self, _prompt: &DualPrompt<'_>) -> CandidateMaskSet {
        CandidateMaskSet::empty()
    }
}

/// One fixed candidate set offered to every prompt (the file-based
/// exchange path: a provider script writes one label map per image).
pub struct SharedCandidates(pub CandidateMaskSet);

impl CandidateProvider for SharedCandidates {
    fn candidates(&self, _prompt: &DualPrompt<'_>) -> CandidateMaskSet {
        self.0.clone()
    }
}

/// Full annotation pass through a provider, forwarding per-point
/// superpixel context when available.
pub fn annotate(
    points: &PointSet,
    provider: &dyn CandidateProvider,
    superpixels: Option<&SuperpixelMap>,
    dims: Dims,
) -> Result<InstanceLabelMap> {
    let sets: Vec<CandidateMaskSet> = points
        .iter()
        .map(|p| {
            let prompt = DualPrompt {
                point: p,
                superpixel_id: superpixels.map(|sp| sp.segment_at(p.y, p.x)),
            };
            provider.candidates(&prompt)
        })
        .collect();
    build_annotation(points, &sets, dims)
}

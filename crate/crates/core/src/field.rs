//! Dense-field numerics: separable depthwise Gaussian smoothing,
//! normalized-coordinate bilinear sampling, their adjoints, and
//! embedding-distance fields.
//!
//! Smoothing uses zero padding of `k/2` on both passes, so border pixels
//! are dimmed rather than renormalized. Sampling follows the align-corners
//! convention: normalized `(-1, -1)` is pixel `(0, 0)` and `(1, 1)` is
//! pixel `(h-1, w-1)`. Everything runs in double precision; the gradient
//! checks depend on it.

use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::Dims;

/// Dense `channels x h x w` field, row-major per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    dims: Dims,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, dims: Dims, data: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidArgument("feature map needs D >= 1".into()));
        }
        if data.len() != channels * dims.len() {
            return Err(Error::DimMismatch(format!(
                "feature buffer holds {} values for {}x{}x{}",
                data.len(),
                channels,
                dims.h,
                dims.w
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "feature map contains non-finite values".into(),
            ));
        }
        Ok(Self {
            channels,
            dims,
            data,
        })
    }

    pub fn zeros(channels: usize, dims: Dims) -> Self {
        Self {
            channels,
            dims,
            data: vec![0.0; channels * dims.len()],
        }
    }

    /// Seeded i.i.d. normal field with standard deviation `scale`.
    pub fn seeded_normal(channels: usize, dims: Dims, scale: f64, seed: u64) -> Self {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, scale.max(f64::MIN_POSITIVE)).expect("valid sigma");
        let data = (0..channels * dims.len())
            .map(|_| if scale == 0.0 { 0.0 } else { normal.sample(&mut rng) })
            .collect();
        Self {
            channels,
            dims,
            data,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[c * self.dims.len() + self.dims.index(y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        let i = c * self.dims.len() + self.dims.index(y, x);
        self.data[i] = v;
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let hw = self.dims.len();
        &self.data[c * hw..(c + 1) * hw]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let hw = self.dims.len();
        &mut self.data[c * hw..(c + 1) * hw]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `self += a * other`, shapes must agree.
    pub fn axpy(&mut self, a: f64, other: &FeatureMap) {
        assert_eq!(self.channels, other.channels);
        assert_eq!(self.dims, other.dims);
        for (s, o) in self.data.iter_mut().zip(&other.data) {
            *s += a * o;
        }
    }

    pub fn scale(&mut self, a: f64) {
        for v in &mut self.data {
            *v *= a;
        }
    }

    /// Feature vector at a grid node.
    pub fn vector_at(&self, y: usize, x: usize) -> Vec<f64> {
        (0..self.channels).map(|c| self.get(c, y, x)).collect()
    }
}

/// Scalar field over a pixel grid (distances, energies, predictions,
/// gradients).
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    dims: Dims,
    data: Vec<f64>,
}

impl ScalarField {
    pub fn new(dims: Dims, data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::DimMismatch(format!(
                "scalar buffer holds {} values for {}x{}",
                data.len(),
                dims.h,
                dims.w
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Dims) -> Self {
        Self {
            data: vec![0.0; dims.len()],
            dims,
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[self.dims.index(y, x)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        let i = self.dims.index(y, x);
        self.data[i] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Normalized, symmetric 1-D Gaussian kernel of odd size.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianKernel {
    size: usize,
    sigma: f64,
    weights: Vec<f64>,
}

impl GaussianKernel {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn half(&self) -> usize {
        self.size / 2
    }
}

/// Discrete Gaussian taps `g(u) ∝ exp(-u²/2σ²)` for
/// `u ∈ [-k/2, k/2]`, normalized to sum 1.
pub fn gaussian_kernel_1d(size: usize, sigma: f64) -> Result<GaussianKernel> {
    if size == 0 || size % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "kernel size must be odd and positive, got {size}"
        )));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "kernel sigma must be positive, got {sigma}"
        )));
    }
    let half = (size / 2) as i64;
    let mut weights: Vec<f64> = (-half..=half)
        .map(|u| (-((u * u) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= sum;
    }
    Ok(GaussianKernel {
        size,
        sigma,
        weights,
    })
}

fn check_kernel_fits(kernel: &GaussianKernel, dims: Dims) -> Result<()> {
    if kernel.size > 2 * dims.h.min(dims.w) {
        return Err(Error::InvalidArgument(format!(
            "kernel size {} too large for {}x{} field",
            kernel.size, dims.h, dims.w
        )));
    }
    Ok(())
}

fn smooth_channel(src: &[f64], dst: &mut [f64], dims: Dims, kernel: &GaussianKernel) {
    let Dims { h, w } = dims;
    let half = kernel.half() as i64;
    let g = kernel.weights();
    let mut tmp = vec![0.0; h * w];
    // Horizontal pass, zero padding.
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        let out = &mut tmp[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (t, &gt) in g.iter().enumerate() {
                let sx = x as i64 + t as i64 - half;
                if sx >= 0 && (sx as usize) < w {
                    acc += gt * row[sx as usize];
                }
            }
            out[x] = acc;
        }
    }
    // Vertical pass, zero padding; accumulate whole rows to stay contiguous.
    dst.fill(0.0);
    for y in 0..h {
        let (lo, hi) = (y * w, (y + 1) * w);
        for (t, &gt) in g.iter().enumerate() {
            let sy = y as i64 + t as i64 - half;
            if sy >= 0 && (sy as usize) < h {
                let src_row = &tmp[(sy as usize) * w..(sy as usize + 1) * w];
                let dst_row = &mut dst[lo..hi];
                for (d, s) in dst_row.iter_mut().zip(src_row) {
                    *d += gt * s;
                }
            }
        }
    }
}

/// Per-channel horizontal then vertical 1-D Gaussian pass with zero
/// padding; output dims equal input dims.
pub fn depthwise_gaussian_smooth(fmap: &FeatureMap, kernel: &GaussianKernel) -> Result<FeatureMap> {
    check_kernel_fits(kernel, fmap.dims())?;
    let dims = fmap.dims();
    let hw = dims.len();
    let mut out = FeatureMap::zeros(fmap.channels(), dims);
    let channels: Vec<(&[f64], &mut [f64])> = {
        let mut srcs: Vec<&[f64]> = Vec::with_capacity(fmap.channels());
        for c in 0..fmap.channels() {
            srcs.push(fmap.channel(c));
        }
        srcs.into_iter()
            .zip(out.as_mut_slice().chunks_mut(hw))
            .collect()
    };
    channels
        .into_par_iter()
        .for_each(|(src, dst)| smooth_channel(src, dst, dims, kernel));
    Ok(out)
}

/// Adjoint of [`depthwise_gaussian_smooth`]. The kernel is symmetric and
/// padding is zero, so the adjoint equals the forward pass.
pub fn smooth_adjoint(grad_out: &FeatureMap, kernel: &GaussianKernel) -> Result<FeatureMap> {
    depthwise_gaussian_smooth(grad_out, kernel)
}

/// Pixel coordinate mapped onto `[-1, 1]²` (align-corners affine map).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalizedPoint {
    pub y: f64,
    pub x: f64,
}

/// `(0, 0) -> (-1, -1)`, `(h-1, w-1) -> (1, 1)`, affine in between.
pub fn normalize_point(y: f64, x: f64, dims: Dims) -> Result<NormalizedPoint> {
    if dims.h < 2 || dims.w < 2 {
        return Err(Error::InvalidArgument(format!(
            "cannot normalize coordinates on a degenerate {}x{} grid",
            dims.h, dims.w
        )));
    }
    Ok(NormalizedPoint {
        y: 2.0 * y / (dims.h - 1) as f64 - 1.0,
        x: 2.0 * x / (dims.w - 1) as f64 - 1.0,
    })
}

/// The four bilinear taps for a normalized point: `(y, x, weight)`.
fn bilinear_taps(p: NormalizedPoint, dims: Dims) -> Result<[(usize, usize, f64); 4]> {
    if !(-1.0..=1.0).contains(&p.y) || !(-1.0..=1.0).contains(&p.x) || p.y.is_nan() || p.x.is_nan()
    {
        return Err(Error::InvalidArgument(format!(
            "normalized point ({}, {}) outside [-1, 1]",
            p.y, p.x
        )));
    }
    if dims.h < 2 || dims.w < 2 {
        return Err(Error::InvalidArgument(
            "sampling needs at least a 2x2 grid".into(),
        ));
    }
    let mut py = (p.y + 1.0) * 0.5 * (dims.h - 1) as f64;
    let mut px = (p.x + 1.0) * 0.5 * (dims.w - 1) as f64;
    // The normalize/denormalize round trip leaves ~1-ulp residue when the
    // grid extent is not a power of two; snap so exact nodes reproduce
    // their stored features bit-for-bit.
    if (py - py.round()).abs() < 1e-9 {
        py = py.round();
    }
    if (px - px.round()).abs() < 1e-9 {
        px = px.round();
    }
    let y0 = (py.floor() as usize).min(dims.h - 1);
    let x0 = (px.floor() as usize).min(dims.w - 1);
    let y1 = (y0 + 1).min(dims.h - 1);
    let x1 = (x0 + 1).min(dims.w - 1);
    let fy = py - y0 as f64;
    let fx = px - x0 as f64;
    Ok([
        (y0, x0, (1.0 - fy) * (1.0 - fx)),
        (y0, x1, (1.0 - fy) * fx),
        (y1, x0, fy * (1.0 - fx)),
        (y1, x1, fy * fx),
    ])
}

/// Align-corners bilinear interpolation of the feature vector at `p`.
/// Exact grid nodes return the stored features bit-for-bit.
pub fn bilinear_sample(fmap: &FeatureMap, p: NormalizedPoint) -> Result<Vec<f64>> {
    let taps = bilinear_taps(p, fmap.dims())?;
    let mut out = vec![0.0; fmap.channels()];
    for c in 0..fmap.channels() {
        let mut acc = 0.0;
        for &(y, x, w) in &taps {
            if w != 0.0 {
                acc += w * fmap.get(c, y, x);
            }
        }
        // An exact node has a single unit tap, so node samples reproduce
        // the stored value bit-for-bit.
        out[c] = acc;
    }
    Ok(out)
}

/// Adjoint of [`bilinear_sample`]: scatters an upstream cotangent to the
/// four surrounding nodes with the same weights.
pub fn bilinear_sample_adjoint(
    channels: usize,
    dims: Dims,
    p: NormalizedPoint,
    upstream: &[f64],
) -> Result<FeatureMap> {
    if upstream.len() != channels {
        return Err(Error::DimMismatch(format!(
            "upstream vector has {} entries for {} channels",
            upstream.len(),
            channels
        )));
    }
    let taps = bilinear_taps(p, dims)?;
    let mut out = FeatureMap::zeros(channels, dims);
    for (c, &u) in upstream.iter().enumerate() {
        for &(y, x, w) in &taps {
            if w != 0.0 {
                let cur = out.get(c, y, x);
                out.set(c, y, x, cur + w * u);
            }
        }
    }
    Ok(out)
}

/// Scatters `upstream * taps` into an existing buffer (hot path used by the
/// loss gradients to avoid allocating a full map per instance).
pub(crate) fn bilinear_scatter_into(
    fmap: &mut FeatureMap,
    p: NormalizedPoint,
    upstream: &[f64],
) -> Result<()> {
    let taps = bilinear_taps(p, fmap.dims())?;
    for (c, &u) in upstream.iter().enumerate() {
        for &(y, x, w) in &taps {
            if w != 0.0 {
                let cur = fmap.get(c, y, x);
                fmap.set(c, y, x, cur + w * u);
            }
        }
    }
    Ok(())
}

/// Per-pixel Euclidean distance between the feature vectors and `center`.
pub fn distance_field(fmap: &FeatureMap, center: &[f64]) -> Result<ScalarField> {
    if center.len() != fmap.channels() {
        return Err(Error::DimMismatch(format!(
            "center vector has {} entries for {} channels",
            center.len(),
            fmap.channels()
        )));
    }
    let dims = fmap.dims();
    let hw = dims.len();
    let mut out = vec![0.0; hw];
    for (c, &cv) in center.iter().enumerate() {
        let ch = fmap.channel(c);
        for (o, &v) in out.iter_mut().zip(ch) {
            let d = v - cv;
            *o += d * d;
        }
    }
    for o in &mut out {
        *o = o.sqrt();
    }
    ScalarField::new(dims, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_fmap(channels: usize, dims: Dims, seed: u64) -> FeatureMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..channels * dims.len())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        FeatureMap::new(channels, dims, data).unwrap()
    }

    /// Dense 2-D convolution with G(u,v) = g(u) g(v), zero padded. Test
    /// oracle for the separable cascade.
    fn dense_conv2d(fmap: &FeatureMap, kernel: &GaussianKernel) -> FeatureMap {
        let dims = fmap.dims();
        let half = kernel.half() as i64;
        let g = kernel.weights();
        let mut out = FeatureMap::zeros(fmap.channels(), dims);
        for c in 0..fmap.channels() {
            for y in 0..dims.h {
                for x in 0..dims.w {
                    let mut acc = 0.0;
                    for (tu, &gu) in g.iter().enumerate() {
                        for (tv, &gv) in g.iter().enumerate() {
                            let sy = y as i64 + tu as i64 - half;
                            let sx = x as i64 + tv as i64 - half;
                            if sy >= 0
                                && (sy as usize) < dims.h
                                && sx >= 0
                                && (sx as usize) < dims.w
                            {
                                acc += gu * gv * fmap.get(c, sy as usize, sx as usize);
                            }
                        }
                    }
                    out.set(c, y, x, acc);
                }
            }
        }
        out
    }

    #[test]
    fn kernel_single_tap() {
        let k = gaussian_kernel_1d(1, 0.7).unwrap();
        assert_eq!(k.weights(), &[1.0]);
    }

    #[test]
    fn kernel_flat_limit() {
        let k = gaussian_kernel_1d(3, 1e6).unwrap();
        for &w in k.weights() {
            assert!((w - 1.0 / 3.0).abs() < 1e-9);
        }
    }

    #[test]
    fn kernel_k3_sigma1_values() {
        let k = gaussian_kernel_1d(3, 1.0).unwrap();
        let e = (-0.5f64).exp();
        let sum = 1.0 + 2.0 * e;
        assert!((k.weights()[0] - e / sum).abs() < 1e-12);
        assert!((k.weights()[1] - 1.0 / sum).abs() < 1e-12);
        assert!((k.weights()[0] - 0.27406).abs() < 1e-5);
        assert!((k.weights()[1] - 0.45186).abs() < 1e-5);
    }

    #[test]
    fn kernel_rejects_bad_arguments() {
        assert!(gaussian_kernel_1d(4, 1.0).is_err());
        assert!(gaussian_kernel_1d(0, 1.0).is_err());
        assert!(gaussian_kernel_1d(3, 0.0).is_err());
        assert!(gaussian_kernel_1d(3, -1.0).is_err());
    }

    #[test]
    fn kernel_normalized_and_symmetric() {
        for &k in &[1usize, 3, 5, 7, 9] {
            for &s in &[0.3, 1.0, 3.0, 10.0] {
                let ker = gaussian_kernel_1d(k, s).unwrap();
                let sum: f64 = ker.weights().iter().sum();
                assert!((sum - 1.0).abs() < 1e-12, "k={k} sigma={s}");
                for i in 0..k {
                    assert_eq!(ker.weights()[i], ker.weights()[k - 1 - i]);
                }
            }
        }
    }

    #[test]
    fn smooth_constant_interior_unchanged() {
        let dims = Dims::new(16, 16);
        let fmap = FeatureMap::new(1, dims, vec![2.5; dims.len()]).unwrap();
        let k = gaussian_kernel_1d(7, 3.0).unwrap();
        let out = depthwise_gaussian_smooth(&fmap, &k).unwrap();
        for y in 4..12 {
            for x in 4..12 {
                assert!((out.get(0, y, x) - 2.5).abs() < 1e-12);
            }
        }
        // Borders are dimmed by the zero padding.
        assert!(out.get(0, 0, 0) < 2.5);
    }

    #[test]
    fn smooth_impulse_is_outer_product() {
        let dims = Dims::new(15, 15);
        let mut fmap = FeatureMap::zeros(1, dims);
        fmap.set(0, 7, 7, 1.0);
        let k = gaussian_kernel_1d(3, 1.0).unwrap();
        let out = depthwise_gaussian_smooth(&fmap, &k).unwrap();
        let g = k.weights();
        for y in 0..15 {
            for x in 0..15 {
                let dy = y as i64 - 7;
                let dx = x as i64 - 7;
                let expect = if dy.abs() <= 1 && dx.abs() <= 1 {
                    g[(dy + 1) as usize] * g[(dx + 1) as usize]
                } else {
                    0.0
                };
                assert!((out.get(0, y, x) - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn smooth_matches_dense_2d_oracle() {
        let dims = Dims::new(8, 8);
        let fmap = random_fmap(2, dims, 5);
        let k = gaussian_kernel_1d(5, 1.5).unwrap();
        let fast = depthwise_gaussian_smooth(&fmap, &k).unwrap();
        let dense = dense_conv2d(&fmap, &k);
        for (a, b) in fast.as_slice().iter().zip(dense.as_slice()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn smooth_rejects_oversized_kernel() {
        let fmap = FeatureMap::zeros(1, Dims::new(3, 3));
        let k = gaussian_kernel_1d(7, 1.0).unwrap();
        assert!(depthwise_gaussian_smooth(&fmap, &k).is_err());
    }

    #[test]
    fn smooth_adjoint_identity() {
        let dims = Dims::new(9, 11);
        let k = gaussian_kernel_1d(5, 2.0).unwrap();
        for seed in 0..10 {
            let x = random_fmap(2, dims, seed);
            let y = random_fmap(2, dims, seed + 100);
            let ax = depthwise_gaussian_smooth(&x, &k).unwrap();
            let aty = smooth_adjoint(&y, &k).unwrap();
            let lhs: f64 = ax.as_slice().iter().zip(y.as_slice()).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.as_slice().iter().zip(aty.as_slice()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10);
        }
    }

    #[test]
    fn smooth_adjoint_k1_is_identity() {
        let dims = Dims::new(6, 6);
        let x = random_fmap(1, dims, 2);
        let k = gaussian_kernel_1d(1, 1.0).unwrap();
        let y = smooth_adjoint(&x, &k).unwrap();
        assert_eq!(x.as_slice(), y.as_slice());
    }

    #[test]
    fn normalize_point_corners_and_midpoint() {
        let dims = Dims::new(5, 5);
        let p = normalize_point(0.0, 0.0, dims).unwrap();
        assert_eq!((p.y, p.x), (-1.0, -1.0));
        let p = normalize_point(4.0, 4.0, dims).unwrap();
        assert_eq!((p.y, p.x), (1.0, 1.0));
        let p = normalize_point(2.0, 2.0, dims).unwrap();
        assert_eq!((p.y, p.x), (0.0, 0.0));
        let p = normalize_point(1.0, 3.0, dims).unwrap();
        assert_eq!((p.y, p.x), (-0.5, 0.5));
    }

    #[test]
    fn normalize_point_rejects_degenerate_axis() {
        assert!(normalize_point(0.0, 0.0, Dims::new(1, 5)).is_err());
        assert!(normalize_point(0.0, 0.0, Dims::new(5, 1)).is_err());
    }

    #[test]
    fn sample_exact_node_bit_equal() {
        // 11 and 14 exercise grids whose extents are not powers of two,
        // where the normalization round trip is inexact without snapping.
        for dims in [Dims::new(4, 4), Dims::new(11, 14)] {
            let fmap = random_fmap(3, dims, 9);
            for y in 0..dims.h {
                for x in 0..dims.w {
                    let p = normalize_point(y as f64, x as f64, dims).unwrap();
                    let v = bilinear_sample(&fmap, p).unwrap();
                    for c in 0..3 {
                        assert_eq!(v[c], fmap.get(c, y, x));
                    }
                }
            }
        }
    }

    #[test]
    fn sample_midpoint_averages_neighbors() {
        let dims = Dims::new(2, 2);
        let fmap = FeatureMap::new(1, dims, vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        let p = normalize_point(0.0, 0.5, dims).unwrap();
        let v = bilinear_sample(&fmap, p).unwrap();
        assert!((v[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn sample_matches_four_corner_expansion() {
        let dims = Dims::new(4, 4);
        let fmap = random_fmap(3, dims, 21);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..20 {
            let y = rng.gen_range(0.0..3.0);
            let x = rng.gen_range(0.0..3.0);
            let p = normalize_point(y, x, dims).unwrap();
            let v = bilinear_sample(&fmap, p).unwrap();
            let (y0, x0) = (y.floor() as usize, x.floor() as usize);
            let (fy, fx) = (y - y0 as f64, x - x0 as f64);
            for c in 0..3 {
                let expect = (1.0 - fy) * (1.0 - fx) * fmap.get(c, y0, x0)
                    + (1.0 - fy) * fx * fmap.get(c, y0, x0 + 1)
                    + fy * (1.0 - fx) * fmap.get(c, y0 + 1, x0)
                    + fy * fx * fmap.get(c, y0 + 1, x0 + 1);
                assert!((v[c] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sample_rejects_out_of_range() {
        let fmap = FeatureMap::zeros(1, Dims::new(3, 3));
        let p = NormalizedPoint { y: 1.5, x: 0.0 };
        assert!(bilinear_sample(&fmap, p).is_err());
    }

    #[test]
    fn sample_adjoint_node_concentration_and_partition_of_unity() {
        let dims = Dims::new(5, 5);
        let p = normalize_point(2.0, 3.0, dims).unwrap();
        let g = bilinear_sample_adjoint(1, dims, p, &[1.0]).unwrap();
        assert_eq!(g.get(0, 2, 3), 1.0);
        let total: f64 = g.as_slice().iter().sum();
        assert!((total - 1.0).abs() < 1e-15);
        // Any sub-pixel location still scatters unit total weight.
        let p = normalize_point(1.3, 2.8, dims).unwrap();
        let g = bilinear_sample_adjoint(1, dims, p, &[1.0]).unwrap();
        let total: f64 = g.as_slice().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sample_adjoint_identity() {
        let dims = Dims::new(4, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for seed in 0..20 {
            let x = random_fmap(3, dims, seed + 500);
            let u: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let p = normalize_point(rng.gen_range(0.0..3.0), rng.gen_range(0.0..5.0), dims)
                .unwrap();
            let ax = bilinear_sample(&x, p).unwrap();
            let atu = bilinear_sample_adjoint(3, dims, p, &u).unwrap();
            let lhs: f64 = ax.iter().zip(&u).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.as_slice().iter().zip(atu.as_slice()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn distance_field_examples() {
        let dims = Dims::new(3, 3);
        let fmap = FeatureMap::new(1, dims, vec![4.0; 9]).unwrap();
        let d = distance_field(&fmap, &[4.0]).unwrap();
        assert!(d.data().iter().all(|&v| v == 0.0));

        let fmap =
            FeatureMap::new(1, Dims::new(1, 3), vec![0.0, 3.0, -4.0]).unwrap();
        let d = distance_field(&fmap, &[0.0]).unwrap();
        assert_eq!(d.data(), &[0.0, 3.0, 4.0]);
    }

    #[test]
    fn distance_field_matches_loop_oracle() {
        let dims = Dims::new(6, 6);
        let fmap = random_fmap(4, dims, 13);
        let center = vec![0.2, -0.4, 0.8, 0.1];
        let d = distance_field(&fmap, &center).unwrap();
        for y in 0..6 {
            for x in 0..6 {
                let mut acc = 0.0;
                for c in 0..4 {
                    let diff = fmap.get(c, y, x) - center[c];
                    acc += diff * diff;
                }
                assert!((d.get(y, x) - acc.sqrt()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn smoothing_is_linear() {
        let dims = Dims::new(8, 8);
        let k = gaussian_kernel_1d(5, 1.5).unwrap();
        let a = random_fmap(2, dims, 1);
        let b = random_fmap(2, dims, 2);
        let (alpha, beta) = (0.7, -1.3);
        let mut combo = FeatureMap::zeros(2, dims);
        combo.axpy(alpha, &a);
        combo.axpy(beta, &b);
        let lhs = depthwise_gaussian_smooth(&combo, &k).unwrap();
        let sa = depthwise_gaussian_smooth(&a, &k).unwrap();
        let sb = depthwise_gaussian_smooth(&b, &k).unwrap();
        for i in 0..lhs.as_slice().len() {
            let rhs = alpha * sa.as_slice()[i] + beta * sb.as_slice()[i];
            assert!((lhs.as_slice()[i] - rhs).abs() < 1e-10);
        }
    }
}

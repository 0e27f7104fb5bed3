//! Pixel-grid primitives shared across the crate.
//!
//! Coordinate convention: pixel `(y, x)` sits at continuous coordinate
//! `(y, x)` (grid centers, not half-integer centers). All row-major
//! buffers index as `y * w + x`.

use std::collections::BTreeSet;

use crate::error::{Error, Result};

/// Grid dimensions, rows first.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub fn new(h: usize, w: usize) -> Self {
        Self { h, w }
    }

    pub fn len(&self) -> usize {
        self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize) -> usize {
        debug_assert!(y < self.h && x < self.w);
        y * self.w + x
    }

    #[inline]
    pub fn coords(&self, index: usize) -> (usize, usize) {
        (index / self.w, index % self.w)
    }

    /// True when the continuous coordinate lies in `[0, h) x [0, w)`.
    pub fn contains(&self, y: f64, x: f64) -> bool {
        y >= 0.0 && x >= 0.0 && y < self.h as f64 && x < self.w as f64
    }

    pub fn diagonal(&self) -> f64 {
        ((self.h as f64).powi(2) + (self.w as f64).powi(2)).sqrt()
    }
}

/// Non-negative integer field over a pixel grid; 0 is background, any
/// positive value identifies one instance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InstanceLabelMap {
    dims: Dims,
    data: Vec<u32>,
}

impl InstanceLabelMap {
    pub fn new(dims: Dims, data: Vec<u32>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::DimMismatch(format!(
                "label buffer holds {} entries for a {}x{} grid",
                data.len(),
                dims.h,
                dims.w
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Dims) -> Self {
        Self {
            data: vec![0; dims.len()],
            dims,
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u32 {
        self.data[self.dims.index(y, x)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, value: u32) {
        let i = self.dims.index(y, x);
        self.data[i] = value;
    }

    pub fn data(&self) -> &[u32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u32] {
        &mut self.data
    }

    /// Label under a continuous coordinate, rounded to the nearest pixel
    /// and clamped to the grid.
    pub fn label_at(&self, y: f64, x: f64) -> u32 {
        let yi = (y.round().max(0.0) as usize).min(self.dims.h - 1);
        let xi = (x.round().max(0.0) as usize).min(self.dims.w - 1);
        self.get(yi, xi)
    }

    /// Distinct nonzero labels present in the map.
    pub fn ids(&self) -> BTreeSet<u32> {
        self.data.iter().copied().filter(|&v| v != 0).collect()
    }

    /// Pixel count per nonzero label.
    pub fn areas(&self) -> std::collections::BTreeMap<u32, usize> {
        let mut areas = std::collections::BTreeMap::new();
        for &v in &self.data {
            if v != 0 {
                *areas.entry(v).or_insert(0) += 1;
            }
        }
        areas
    }
}

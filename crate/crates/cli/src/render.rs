//! PNG renders of label maps and scalar responses. The instance palette
//! is a pure function of the id (golden-angle hue walk), so renders are
//! deterministic across runs and machines.

use std::path::Path;

use image::{Rgb, RgbImage};

use crowdmask::field::ScalarField;
use crowdmask::grid::InstanceLabelMap;

use crate::CliResult;

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let h = (h.fract() + 1.0).fract() * 6.0;
    let i = h.floor() as i32 % 6;
    let f = h - h.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - f * s);
    let t = v * (1.0 - (1.0 - f) * s);
    let (r, g, b) = match i {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [
        (r * 255.0).round() as u8,
        (g * 255.0).round() as u8,
        (b * 255.0).round() as u8,
    ]
}

/// Deterministic color for an instance id; background is black.
pub fn instance_color(id: u32) -> [u8; 3] {
    if id == 0 {
        return [0, 0, 0];
    }
    let hue = (id as f64) * 0.618_033_988_749_895;
    hsv_to_rgb(hue, 0.65, 0.95)
}

pub fn render_label_map(labels: &InstanceLabelMap) -> RgbImage {
    let dims = labels.dims();
    let mut img = RgbImage::new(dims.w as u32, dims.h as u32);
    for y in 0..dims.h {
        for x in 0..dims.w {
            img.put_pixel(x as u32, y as u32, Rgb(instance_color(labels.get(y, x))));
        }
    }
    img
}

/// Grayscale render normalized to the field's min/max; a constant field
/// renders mid-gray.
pub fn render_scalar_field(field: &ScalarField) -> RgbImage {
    let dims = field.dims();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in field.data() {
        if v.is_finite() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    let span = hi - lo;
    let mut img = RgbImage::new(dims.w as u32, dims.h as u32);
    for y in 0..dims.h {
        for x in 0..dims.w {
            let v = field.get(y, x);
            let g = if !v.is_finite() {
                255
            } else if span > 0.0 {
                ((v - lo) / span * 255.0).round() as u8
            } else {
                128
            };
            img.put_pixel(x as u32, y as u32, Rgb([g, g, g]));
        }
    }
    img
}

pub fn save_png(img: &RgbImage, path: &Path) -> CliResult<()> {
    img.save(path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crowdmask::grid::Dims;

    #[test]
    fn palette_is_pure_and_distinct_for_small_ids() {
        assert_eq!(instance_color(0), [0, 0, 0]);
        for id in 1..50 {
            assert_eq!(instance_color(id), instance_color(id));
            assert_ne!(instance_color(id), [0, 0, 0]);
        }
        let distinct: std::collections::HashSet<[u8; 3]> =
            (1..20).map(instance_color).collect();
        assert_eq!(distinct.len(), 19);
    }

    #[test]
    fn renders_have_the_right_geometry() {
        let labels = InstanceLabelMap::new(Dims::new(2, 3), vec![0, 1, 2, 0, 1, 2]).unwrap();
        let img = render_label_map(&labels);
        assert_eq!((img.width(), img.height()), (3, 2));
        assert_eq!(img.get_pixel(0, 0).0, [0, 0, 0]);
        assert_eq!(img.get_pixel(1, 0).0, instance_color(1));

        let field = ScalarField::new(Dims::new(1, 3), vec![0.0, 0.5, 1.0]).unwrap();
        let img = render_scalar_field(&field);
        assert_eq!(img.get_pixel(0, 0).0, [0, 0, 0]);
        assert_eq!(img.get_pixel(2, 0).0, [255, 255, 255]);
    }
}

//! Procedural 28×28 glyphs: ten stroke/fill shapes rasterised from signed
//! distance fields with a one-pixel antialiasing ramp.

use rand::Rng as _;

use super::{DataSource, ImageDataset};
use crate::error::{Error, Result};
use crate::rng::rng_for_item;

pub const GLYPH_CLASSES: [&str; 10] = [
    "bar", "L", "T", "cross", "triangle", "disk", "ring", "chevron", "S-curve", "dot-pair",
];

const STROKE_HALF_WIDTH: f64 = 1.6;

type Pt = (f64, f64);

fn segment_distance(p: Pt, a: Pt, b: Pt) -> f64 {
    let (abx, aby) = (b.0 - a.0, b.1 - a.1);
    let (apx, apy) = (p.0 - a.0, p.1 - a.1);
    let t = ((apx * abx + apy * aby) / (abx * abx + aby * aby)).clamp(0.0, 1.0);
    let (dx, dy) = (apx - t * abx, apy - t * aby);
    (dx * dx + dy * dy).sqrt()
}

fn polyline_distance(p: Pt, pts: &[Pt]) -> f64 {
    pts.windows(2)
        .map(|w| segment_distance(p, w[0], w[1]))
        .fold(f64::INFINITY, f64::min)
}

fn stroke(d: f64) -> f64 {
    d - STROKE_HALF_WIDTH
}

/// Signed distance (negative inside) from `p`, in glyph coordinates centred
/// on the origin with `y` pointing down, to the outline of `class`.
///
/// No shape maps onto itself under a nontrivial rotation about the origin,
/// so the pose of every glyph is recoverable from its pixels.
fn signed_distance(class: usize, p: Pt) -> f64 {
    let norm = |x: f64, y: f64| (x * x + y * y).sqrt();
    match class {
        // Tapered: wide at the top, narrow at the bottom.
        0 => {
            let t = ((p.1 + 8.0) / 16.0).clamp(0.0, 1.0);
            segment_distance(p, (0.0, -8.0), (0.0, 8.0)) - (2.6 - 1.6 * t)
        }
        1 => stroke(polyline_distance(p, &[(-4.0, -8.0), (-4.0, 7.0), (6.0, 7.0)])),
        2 => stroke(
            segment_distance(p, (-7.0, -7.0), (7.0, -7.0))
                .min(segment_distance(p, (0.0, -7.0), (0.0, 8.0))),
        ),
        3 => stroke(
            segment_distance(p, (-6.0, -3.0), (6.0, -3.0))
                .min(segment_distance(p, (0.0, -8.0), (0.0, 9.0))),
        ),
        4 => stroke(polyline_distance(
            p,
            &[(-7.0, -7.0), (7.0, 7.0), (-7.0, 7.0), (-7.0, -7.0)],
        )),
        5 => norm(p.0 - 3.0, p.1) - 5.5,
        6 => stroke((norm(p.0, p.1 - 2.5) - 6.5).abs()),
        7 => stroke(polyline_distance(p, &[(-7.0, -4.0), (0.0, 4.0), (7.0, -4.0)])),
        8 => {
            let pts: Vec<Pt> = (0..=16)
                .map(|i| {
                    let y = -8.0 + i as f64;
                    let amp = 3.0 + 3.0 * (y + 8.0) / 16.0;
                    (-amp * (std::f64::consts::PI * y / 8.0).sin(), y)
                })
                .collect();
            stroke(polyline_distance(p, &pts))
        }
        9 => (norm(p.0 + 5.0, p.1) - 3.4).min(norm(p.0 - 5.5, p.1) - 2.0),
        _ => unreachable!("glyph class {class}"),
    }
}

/// Draws `class` turned by `angle` (counter-clockwise on screen) and shifted
/// by `offset` pixels.
fn rasterize(class: usize, size: usize, angle: f64, offset: Pt, out: &mut [f32]) {
    let c = (size as f64 - 1.0) / 2.0;
    let (sin, cos) = angle.sin_cos();
    for y in 0..size {
        for x in 0..size {
            let (dx, dy) = (x as f64 - c - offset.0, y as f64 - c - offset.1);
            let p = (cos * dx - sin * dy, sin * dx + cos * dy);
            let cover = (0.5 - signed_distance(class, p)).clamp(0.0, 1.0);
            out[y * size + x] = cover as f32;
        }
    }
}

/// `n` glyphs, class `i mod classes` for image `i`, each drawn at a uniform
/// random orientation and shifted by a random sub-pixel offset, the
/// synthetic counterpart of a rotated digit set. Image `i` depends only on
/// `(seed, i)`.
pub fn gen_glyph_dataset(n: usize, classes: usize, size: usize, seed: u64) -> Result<ImageDataset> {
    if classes == 0 || classes > GLYPH_CLASSES.len() {
        return Err(Error::InvalidParameter(format!(
            "glyph classes must be in 1..={}, got {classes}",
            GLYPH_CLASSES.len()
        )));
    }
    if n < classes {
        return Err(Error::InvalidParameter(format!(
            "need at least {classes} images for {classes} classes, got {n}"
        )));
    }
    if size < 20 {
        return Err(Error::InvalidParameter(format!(
            "glyphs need at least 20×20 pixels, got {size}"
        )));
    }
    let per = size * size;
    let mut pixels = vec![0.0f32; n * per];
    let mut labels = Vec::with_capacity(n);
    for (i, img) in pixels.chunks_exact_mut(per).enumerate() {
        let class = i % classes;
        let mut rng = rng_for_item(seed, "glyph", i as u64);
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let offset = (rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
        rasterize(class, size, angle, offset, img);
        labels.push(class as u8);
    }
    ImageDataset::new(
        size,
        size,
        classes,
        DataSource::SyntheticGlyph,
        Some(seed),
        pixels,
        labels,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_in_seed() {
        let a = gen_glyph_dataset(100, 10, 28, 7).unwrap();
        let b = gen_glyph_dataset(100, 10, 28, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.pixels(), gen_glyph_dataset(100, 10, 28, 8).unwrap().pixels());
    }

    #[test]
    fn values_in_unit_range_and_classes_balanced() {
        let ds = gen_glyph_dataset(103, 10, 28, 1).unwrap();
        assert!(ds.pixels().iter().all(|p| (0.0..=1.0).contains(p)));
        let counts = ds.class_counts();
        assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
    }

    #[test]
    fn every_class_has_ink_and_stays_inside_the_inscribed_circle() {
        let ds = gen_glyph_dataset(10, 10, 28, 0).unwrap();
        for i in 0..10 {
            let img = ds.image(i);
            assert!(img.iter().sum::<f32>() > 10.0, "class {i} is nearly empty");
            for y in 0..28 {
                for x in 0..28 {
                    let r = ((x as f64 - 13.5).powi(2) + (y as f64 - 13.5).powi(2)).sqrt();
                    if r > 13.5 {
                        assert_eq!(img[y * 28 + x], 0.0, "class {i} leaks at ({x},{y})");
                    }
                }
            }
        }
    }

    #[test]
    fn no_class_is_rotationally_symmetric() {
        let mut a = vec![0.0f32; 784];
        let mut b = vec![0.0f32; 784];
        for class in 0..10 {
            rasterize(class, 28, 0.0, (0.0, 0.0), &mut a);
            for k in 2..=6 {
                rasterize(class, 28, std::f64::consts::TAU / k as f64, (0.0, 0.0), &mut b);
                let diff: f32 = a.iter().zip(&b).map(|(p, q)| (p - q).abs()).sum();
                let ink: f32 = a.iter().sum();
                assert!(diff > 0.25 * ink, "class {class} looks {k}-fold symmetric");
            }
        }
    }

    #[test]
    fn too_few_images_is_an_error() {
        assert!(gen_glyph_dataset(9, 10, 28, 0).is_err());
    }
}

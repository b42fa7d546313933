//! Image-space group action `T_g` and the occlusion block.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::group::GroupElement;
use crate::rng::Rng;

/// Rotates `img` by `g` about the pixel-grid centre with bilinear sampling.
/// Samples falling outside the source read as zero.
pub fn rotate_image(img: &[f32], height: usize, width: usize, g: GroupElement) -> Vec<f32> {
    debug_assert_eq!(img.len(), height * width);
    if g.angle() == 0.0 {
        return img.to_vec();
    }
    let (s, c) = g.angle().sin_cos();
    let cx = (width as f64 - 1.0) / 2.0;
    let cy = (height as f64 - 1.0) / 2.0;
    let at = |x: i64, y: i64| -> f64 {
        if x < 0 || y < 0 || x >= width as i64 || y >= height as i64 {
            0.0
        } else {
            img[y as usize * width + x as usize] as f64
        }
    };
    let mut out = vec![0.0f32; img.len()];
    for y in 0..height {
        let dy = y as f64 - cy;
        for x in 0..width {
            let dx = x as f64 - cx;
            // Inverse map: output pixel pulls from the source rotated by −θ.
            let sx = c * dx + s * dy + cx;
            let sy = -s * dx + c * dy + cy;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as i64, y0 as i64);
            let v = (1.0 - fy) * ((1.0 - fx) * at(x0, y0) + fx * at(x0 + 1, y0))
                + fy * ((1.0 - fx) * at(x0, y0 + 1) + fx * at(x0 + 1, y0 + 1));
            out[y * width + x] = v.clamp(0.0, 1.0) as f32;
        }
    }
    out
}

/// With probability `prob`, paints a `size×size` white square at a uniformly
/// random position. Returns the top-left corner when a block was drawn.
pub fn apply_block(
    img: &mut [f32],
    height: usize,
    width: usize,
    size: usize,
    prob: f64,
    rng: &mut Rng,
) -> Result<Option<(usize, usize)>> {
    if size == 0 || size > height.min(width) {
        return Err(Error::InvalidParameter(format!(
            "block size {size} does not fit a {height}×{width} image"
        )));
    }
    if !(0.0..=1.0).contains(&prob) {
        return Err(Error::InvalidParameter(format!(
            "block probability {prob} outside [0, 1]"
        )));
    }
    if rng.random::<f64>() >= prob {
        return Ok(None);
    }
    let top = rng.random_range(0..=height - size);
    let left = rng.random_range(0..=width - size);
    for y in top..top + size {
        img[y * width + left..y * width + left + size].fill(1.0);
    }
    Ok(Some((top, left)))
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::data::gen_glyph_dataset;
    use crate::rng::rng_for;

    #[test]
    fn zero_angle_is_exact_identity() {
        let ds = gen_glyph_dataset(10, 10, 28, 0).unwrap();
        assert_eq!(rotate_image(ds.image(3), 28, 28, GroupElement::identity()), ds.image(3));
    }

    #[test]
    fn blank_stays_blank() {
        let z = vec![0.0f32; 28 * 28];
        assert!(rotate_image(&z, 28, 28, GroupElement::new(1.234)).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn half_turn_twice_recovers_the_glyph() {
        let ds = gen_glyph_dataset(50, 10, 28, 5).unwrap();
        let g = GroupElement::new(PI);
        let (mut max, mut total) = (0.0f32, 0.0f64);
        for i in 0..ds.len() {
            let back = rotate_image(&rotate_image(ds.image(i), 28, 28, g), 28, 28, g);
            for (a, b) in back.iter().zip(ds.image(i)) {
                max = max.max((a - b).abs());
                total += (a - b).abs() as f64;
            }
        }
        let mean = total / (ds.len() * 784) as f64;
        assert!(max < 0.25, "max deviation {max}");
        assert!(mean < 0.02, "mean deviation {mean}");
    }

    #[test]
    fn rotation_then_inverse_has_small_resampling_loss() {
        let ds = gen_glyph_dataset(50, 10, 28, 9).unwrap();
        let mut rng = rng_for(0, "angles");
        let mut total = 0.0f64;
        for i in 0..ds.len() {
            let g = GroupElement::new(rng.random_range(0.0..std::f64::consts::TAU));
            let back = rotate_image(&rotate_image(ds.image(i), 28, 28, g), 28, 28, g.invert());
            total += back.iter().zip(ds.image(i)).map(|(a, b)| (a - b).abs() as f64).sum::<f64>();
        }
        let mae = total / (ds.len() * 784) as f64;
        assert!(mae < 0.02, "mae {mae}");
    }

    #[test]
    fn block_probability_extremes() {
        let mut rng = rng_for(1, "block");
        let mut img = vec![0.0f32; 28 * 28];
        assert_eq!(apply_block(&mut img, 28, 28, 7, 0.0, &mut rng).unwrap(), None);
        assert!(img.iter().all(|&v| v == 0.0));
        let (top, left) = apply_block(&mut img, 28, 28, 7, 1.0, &mut rng).unwrap().unwrap();
        assert_eq!(img.iter().filter(|&&v| v == 1.0).count(), 49);
        assert_eq!(img[top * 28 + left], 1.0);
        assert!(apply_block(&mut img, 28, 28, 29, 1.0, &mut rng).is_err());
    }

    #[test]
    fn block_is_deterministic_in_rng() {
        let run = || {
            let mut rng = rng_for(4, "block");
            let mut img = vec![0.0f32; 28 * 28];
            (0..5)
                .map(|_| apply_block(&mut img, 28, 28, 7, 0.5, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}

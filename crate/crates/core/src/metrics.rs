//! Image reconstruction metrics for intensities in `[0, 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// PSNR reported for (near-)identical images.
pub const PSNR_CAP_DB: f64 = 99.0;
pub const SSIM_WINDOW: usize = 7;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn same_len(a: &[f32], b: &[f32]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            op: "image metric",
            lhs: vec![a.len()],
            rhs: vec![b.len()],
        });
    }
    Ok(())
}

pub fn mse(a: &[f32], b: &[f32]) -> Result<f64> {
    same_len(a, b)?;
    let s: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum();
    Ok(s / a.len() as f64)
}

pub fn rmse(a: &[f32], b: &[f32]) -> Result<f64> {
    Ok(mse(a, b)?.sqrt())
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse < 1e-10 {
        PSNR_CAP_DB
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
    }
}

/// `10·log10(1/mse)` with peak 1, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &[f32], b: &[f32]) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

/// Mean SSIM over every 7×7 window position (stride 1, uniform weights,
/// population statistics, dynamic range 1).
pub fn ssim(a: &[f32], b: &[f32], height: usize, width: usize) -> Result<f64> {
    same_len(a, b)?;
    if a.len() != height * width {
        return Err(Error::Shape(format!(
            "ssim: {} pixels for a {height}×{width} image",
            a.len()
        )));
    }
    if height < SSIM_WINDOW || width < SSIM_WINDOW {
        return Err(Error::InvalidParameter(format!(
            "ssim: {height}×{width} image is smaller than the {SSIM_WINDOW}×{SSIM_WINDOW} window"
        )));
    }
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for top in 0..=height - SSIM_WINDOW {
        for left in 0..=width - SSIM_WINDOW {
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for y in top..top + SSIM_WINDOW {
                for x in left..left + SSIM_WINDOW {
                    let (p, q) = (a[y * width + x] as f64, b[y * width + x] as f64);
                    sa += p;
                    sb += q;
                    saa += p * p;
                    sbb += q * q;
                    sab += p * q;
                }
            }
            let (ma, mb) = (sa / n, sb / n);
            let va = saa / n - ma * ma;
            let vb = sbb / n - mb * mb;
            let cov = sab / n - ma * mb;
            let num = (2.0 * (ma * mb) + C1) * (2.0 * cov + C2);
            let den = (ma * ma + mb * mb + C1) * (va + vb + C2);
            total += num / den;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub psnr_mean: f64,
    pub ssim_mean: f64,
    pub rmse_mean: f64,
    pub count: usize,
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
    pub rmse: Vec<f64>,
}

impl MetricsReport {
    /// Per-sample metrics for `(prediction, target)` pairs, aggregated in order.
    pub fn from_pairs<'a>(
        pairs: impl IntoIterator<Item = (&'a [f32], &'a [f32])>,
        height: usize,
        width: usize,
    ) -> Result<Self> {
        let (mut p, mut s, mut r) = (Vec::new(), Vec::new(), Vec::new());
        for (pred, target) in pairs {
            let e = mse(pred, target)?;
            p.push(psnr_from_mse(e));
            r.push(e.sqrt());
            s.push(ssim(pred, target, height, width)?);
        }
        let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
        Ok(MetricsReport {
            psnr_mean: mean(&p),
            ssim_mean: mean(&s),
            rmse_mean: mean(&r),
            count: p.len(),
            psnr: p,
            ssim: s,
            rmse: r,
        })
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn checker(n: usize) -> Vec<f32> {
        (0..n * n).map(|i| ((i / n + i % n) % 2) as f32).collect()
    }

    #[test]
    fn identical_images_hit_the_cap() {
        let a = checker(8);
        assert_eq!(rmse(&a, &a).unwrap(), 0.0);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
    }

    #[test]
    fn mse_of_one_hundredth_is_twenty_db() {
        assert!((psnr_from_mse(0.01) - 20.0).abs() < 1e-12);
        let a = vec![0.0f32; 100];
        let b = vec![0.1f32; 100];
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-5);
    }

    #[test]
    fn black_versus_white() {
        let a = vec![0.0f32; 64];
        let b = vec![1.0f32; 64];
        assert_eq!(rmse(&a, &b).unwrap(), 1.0);
        assert_eq!(psnr(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn ssim_self_is_one_and_inverse_is_negative() {
        let a = checker(10);
        assert_eq!(ssim(&a, &a, 10, 10).unwrap(), 1.0);
        let inv: Vec<f32> = a.iter().map(|v| 1.0 - v).collect();
        assert!(ssim(&a, &inv, 10, 10).unwrap() < 0.0);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = vec![0.0f32; 36];
        assert!(ssim(&a, &a, 6, 6).is_err());
        assert!(mse(&a, &a[..35]).is_err());
    }

    proptest! {
        #[test]
        fn ssim_is_symmetric_and_bounded(
            a in proptest::collection::vec(0.0f32..=1.0, 81),
            b in proptest::collection::vec(0.0f32..=1.0, 81),
        ) {
            let ab = ssim(&a, &b, 9, 9).unwrap();
            prop_assert_eq!(ab, ssim(&b, &a, 9, 9).unwrap());
            prop_assert!((-1.0..=1.0 + 1e-12).contains(&ab));
            prop_assert_eq!(ssim(&a, &a, 9, 9).unwrap(), 1.0);
        }

        #[test]
        fn psnr_matches_rmse(
            a in proptest::collection::vec(0.0f32..=1.0, 49),
            b in proptest::collection::vec(0.0f32..=1.0, 49),
        ) {
            let r = rmse(&a, &b).unwrap();
            prop_assume!(r > 1e-5);
            prop_assert!((psnr(&a, &b).unwrap() - 20.0 * (1.0 / r).log10()).abs() < 1e-9);
        }
    }
}

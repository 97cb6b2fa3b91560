//! Geometric augmentation: bilinear resize, horizontal flip, random erasing.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{DenseTensor, Roi};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentPolicy {
    /// Target `[H, W]`; `None` keeps the input size.
    pub size: Option<[usize; 2]>,
    pub flip_p: f64,
    pub erase_p: f64,
    /// Erased area as a fraction of the image, `[min, max]`.
    pub erase_area: [f64; 2],
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self { size: None, flip_p: 0.5, erase_p: 0.25, erase_area: [0.02, 0.2] }
    }
}

impl AugmentPolicy {
    /// Resize only (the test-time path).
    pub fn resize_only(size: [usize; 2]) -> Self {
        Self { size: Some(size), flip_p: 0.0, erase_p: 0.0, erase_area: [0.02, 0.2] }
    }
}

/// Bilinear resize with half-pixel centers and edge clamping.
pub fn resize_bilinear(img: &DenseTensor<f64>, h: usize, w: usize) -> DenseTensor<f64> {
    let (ih, iw) = (img.dims()[0], img.dims()[1]);
    if (ih, iw) == (h, w) {
        return img.clone();
    }
    let coord = |dst: usize, src_len: usize, dst_len: usize| {
        let s = ((dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5).max(0.0);
        let i0 = (s.floor() as usize).min(src_len - 1);
        let i1 = (i0 + 1).min(src_len - 1);
        (i0, i1, s - i0 as f64)
    };
    let cols: Vec<_> = (0..w).map(|j| coord(j, iw, w)).collect();
    let mut out = Vec::with_capacity(h * w);
    for i in 0..h {
        let (r0, r1, fr) = coord(i, ih, h);
        for &(c0, c1, fc) in &cols {
            let top = img.at(r0, c0) * (1.0 - fc) + img.at(r0, c1) * fc;
            let bot = img.at(r1, c0) * (1.0 - fc) + img.at(r1, c1) * fc;
            out.push(top * (1.0 - fr) + bot * fr);
        }
    }
    DenseTensor::matrix(h, w, out).expect("resize dims")
}

/// Mirrors the image along its second (width) axis.
pub fn flip_horizontal(img: &DenseTensor<f64>) -> DenseTensor<f64> {
    let (h, w) = (img.dims()[0], img.dims()[1]);
    DenseTensor::from_fn(vec![h, w], |p| img.at(p / w, w - 1 - p % w)).expect("flip dims")
}

/// Zeroes the rectangle (`x`/`width` along rows, `y`/`height` along columns),
/// clipped to the image.
pub fn erase(img: &DenseTensor<f64>, rect: &Roi) -> DenseTensor<f64> {
    let (h, w) = (img.dims()[0], img.dims()[1]);
    let mut data = img.data().to_vec();
    for i in rect.x..(rect.x + rect.width).min(h) {
        for j in rect.y..(rect.y + rect.height).min(w) {
            data[i * w + j] = 0.0;
        }
    }
    DenseTensor::matrix(h, w, data).expect("erase dims")
}

/// Resize, then flip with `flip_p`, then erase one rectangle with `erase_p`.
/// Draws a fixed number of variates per call so streams stay aligned.
pub fn augment<R: Rng + ?Sized>(img: &DenseTensor<f64>, rng: &mut R, policy: &AugmentPolicy) -> DenseTensor<f64> {
    let mut out = match policy.size {
        Some([h, w]) => resize_bilinear(img, h, w),
        None => img.clone(),
    };
    let (h, w) = (out.dims()[0], out.dims()[1]);
    let (u_flip, u_erase): (f64, f64) = (rng.gen(), rng.gen());
    let (u_area, u_aspect, u_x, u_y): (f64, f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen(), rng.gen());
    if u_flip < policy.flip_p {
        out = flip_horizontal(&out);
    }
    if u_erase < policy.erase_p {
        let [a0, a1] = policy.erase_area;
        let area = (a0 + (a1 - a0) * u_area) * (h * w) as f64;
        // log-uniform aspect ratio in [1/3, 3]
        let aspect = (3f64.ln() * (2.0 * u_aspect - 1.0)).exp();
        let eh = ((area * aspect).sqrt().round() as usize).clamp(1, h);
        let ew = ((area / aspect).sqrt().round() as usize).clamp(1, w);
        let x = ((h - eh + 1) as f64 * u_x) as usize;
        let y = ((w - ew + 1) as f64 * u_y) as usize;
        out = erase(&out, &Roi { x: x.min(h - eh), y: y.min(w - ew), width: eh, height: ew });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;

    #[test]
    fn flip_is_involution() {
        let img = DenseTensor::from_fn(vec![5, 7], |i| i as f64).unwrap();
        assert_eq!(flip_horizontal(&flip_horizontal(&img)), img);
        assert_eq!(flip_horizontal(&img).at(0, 0), img.at(0, 6));
    }

    #[test]
    fn resize_constant_stays_constant() {
        let img = DenseTensor::filled(vec![100, 100], 0.37).unwrap();
        let out = resize_bilinear(&img, 224, 224);
        assert_eq!(out.dims(), &[224, 224]);
        assert!(out.data().iter().all(|&v| (v - 0.37).abs() < 1e-15));
    }

    #[test]
    fn resize_linear_ramp_is_exact_inside() {
        // bilinear reproduces affine functions away from the clamped border
        let img = DenseTensor::from_fn(vec![8, 8], |i| (i / 8) as f64 * 2.0 + (i % 8) as f64).unwrap();
        let out = resize_bilinear(&img, 16, 16);
        // output pixel (5, 6) maps to source (2.25, 2.75)
        assert!((out.at(5, 6) - (2.25 * 2.0 + 2.75)).abs() < 1e-12);
    }

    #[test]
    fn forced_erase_zeroes_16_pixels() {
        let img = DenseTensor::filled(vec![8, 8], 1.0).unwrap();
        let out = erase(&img, &Roi { x: 0, y: 0, width: 4, height: 4 });
        assert_eq!(out.data().iter().filter(|&&v| v == 0.0).count(), 16);
    }

    #[test]
    fn policy_extremes() {
        let img = DenseTensor::from_fn(vec![6, 6], |i| i as f64 / 36.0).unwrap();
        let never = AugmentPolicy { flip_p: 0.0, erase_p: 0.0, ..Default::default() };
        assert_eq!(augment(&img, &mut stream(1, "a", "aug"), &never), img);
        let always = AugmentPolicy { flip_p: 1.0, erase_p: 0.0, ..Default::default() };
        assert_eq!(augment(&img, &mut stream(1, "a", "aug"), &always), flip_horizontal(&img));
    }

    proptest! {
        #[test]
        fn erased_fraction_in_range(seed in 0u64..500) {
            let img = DenseTensor::filled(vec![32, 32], 1.0).unwrap();
            let p = AugmentPolicy { flip_p: 0.0, erase_p: 1.0, ..Default::default() };
            let out = augment(&img, &mut stream(seed, "x", "aug"), &p);
            let zeros = out.data().iter().filter(|&&v| v == 0.0).count() as f64 / 1024.0;
            // rounding the rectangle sides to whole pixels widens the nominal
            // [0.02, 0.2] band slightly
            prop_assert!((0.015..=0.23).contains(&zeros), "{}", zeros);
            prop_assert!(out.data().iter().all(|&v| v == 0.0 || v == 1.0));
        }

        #[test]
        fn augment_keeps_unit_range(seed in 0u64..200) {
            let img = DenseTensor::from_fn(vec![10, 12], |i| (i % 7) as f64 / 6.0).unwrap();
            let p = AugmentPolicy { size: Some([16, 16]), ..Default::default() };
            let out = augment(&img, &mut stream(seed, "y", "aug"), &p);
            prop_assert_eq!(out.dims(), &[16, 16]);
            prop_assert!(out.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}

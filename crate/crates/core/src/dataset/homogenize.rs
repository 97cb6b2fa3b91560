//! Data homogenization: crop frames to the heart region of interest, either
//! given explicitly or detected as the bounding box of the largest bright
//! 4-connected region after Otsu binarization.

use std::collections::VecDeque;

use super::DatasetError;
use crate::tensor::{DenseTensor, Roi, ShapeError, VideoSequence};

const BINS: usize = 256;

/// Otsu threshold over a 256-bin histogram spanning `[min, max]`. Pixels
/// strictly above the returned value form the foreground.
pub fn otsu_threshold(data: &[f64]) -> f64 {
    let (lo, hi) = data.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(hi > lo) {
        return lo;
    }
    let width = (hi - lo) / BINS as f64;
    let bin = |v: f64| (((v - lo) / width) as usize).min(BINS - 1);
    let mut hist = [0usize; BINS];
    for &v in data {
        hist[bin(v)] += 1;
    }
    let total = data.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best, mut best_var) = (0, -1.0);
    for (i, &c) in hist.iter().enumerate().take(BINS - 1) {
        w0 += c as f64;
        sum0 += i as f64 * c as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let (m0, m1) = (sum0 / w0, (sum_all - sum0) / w1);
        let var = w0 * w1 * (m0 - m1) * (m0 - m1);
        if var > best_var {
            best_var = var;
            best = i;
        }
    }
    // upper edge of the last background bin
    lo + (best + 1) as f64 * width
}

/// Bounding box of the largest bright 4-connected component of `frame`.
pub fn detect_roi(frame: &DenseTensor<f64>) -> Result<Roi, DatasetError> {
    check_image(frame)?;
    let (nx, ny) = (frame.dims()[0], frame.dims()[1]);
    let data = frame.data();
    let (lo, hi) = frame.min_max();
    let fg: Vec<bool> = if hi > lo {
        let t = otsu_threshold(data);
        data.iter().map(|&v| v > t).collect()
    } else if hi > 0.0 {
        vec![true; data.len()]
    } else {
        return Err(DatasetError::EmptyRoi);
    };
    let mut seen = vec![false; data.len()];
    let mut best: Option<(usize, Roi)> = None;
    let mut queue = VecDeque::new();
    for start in 0..data.len() {
        if !fg[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let (mut size, mut x0, mut x1, mut y0, mut y1) = (0, nx, 0, ny, 0);
        while let Some(p) = queue.pop_front() {
            size += 1;
            let (x, y) = (p / ny, p % ny);
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
            let mut visit = |q: usize| {
                if fg[q] && !seen[q] {
                    seen[q] = true;
                    queue.push_back(q);
                }
            };
            if x > 0 {
                visit(p - ny);
            }
            if x + 1 < nx {
                visit(p + ny);
            }
            if y > 0 {
                visit(p - 1);
            }
            if y + 1 < ny {
                visit(p + 1);
            }
        }
        if best.as_ref().is_none_or(|(s, _)| size > *s) {
            let roi = Roi { x: x0, y: y0, width: x1 - x0 + 1, height: y1 - y0 + 1 };
            best = Some((size, roi));
        }
    }
    best.map(|(_, r)| r).ok_or(DatasetError::EmptyRoi)
}

fn check_image(frame: &DenseTensor<f64>) -> Result<(), ShapeError> {
    if frame.ndim() != 2 {
        return Err(ShapeError::Rank { expected: 2, got: frame.dims().to_vec() });
    }
    Ok(())
}

/// Exact crop of an `[N_x, N_y]` image.
pub fn crop(frame: &DenseTensor<f64>, roi: &Roi) -> Result<DenseTensor<f64>, DatasetError> {
    check_image(frame)?;
    let ny = frame.dims()[1];
    if !roi.fits(frame.dims()[0], ny) {
        return Err(ShapeError::Invalid(format!("roi {roi:?} outside {:?}", frame.dims())).into());
    }
    let data = (roi.x..roi.x + roi.width)
        .flat_map(|x| frame.data()[x * ny + roi.y..x * ny + roi.y + roi.height].iter().copied())
        .collect();
    Ok(DenseTensor::new(vec![roi.width, roi.height], data)?)
}

/// Crops to `roi`, or to the detected region when none is given.
pub fn homogenize(frame: &DenseTensor<f64>, roi: Option<&Roi>) -> Result<DenseTensor<f64>, DatasetError> {
    match roi {
        Some(r) => crop(frame, r),
        None => crop(frame, &detect_roi(frame)?),
    }
}

/// Crops every frame of a sequence to its annotated ROI, or to the region
/// detected on the temporal mean frame. The returned sequence carries no ROI.
pub fn homogenize_sequence(seq: &VideoSequence) -> Result<VideoSequence, DatasetError> {
    let (nx, ny, k) = (seq.nx(), seq.ny(), seq.num_frames());
    let roi = match &seq.annotation.roi {
        Some(r) => *r,
        None => {
            let mean = DenseTensor::from_fn(vec![nx, ny], |p| {
                seq.frames().data()[p * k..(p + 1) * k].iter().sum::<f64>() / k as f64
            })?;
            detect_roi(&mean)?
        }
    };
    if !roi.fits(nx, ny) {
        return Err(ShapeError::Invalid(format!("roi {roi:?} outside {nx}x{ny}")).into());
    }
    let data = (roi.x..roi.x + roi.width)
        .flat_map(|x| (roi.y..roi.y + roi.height).map(move |y| (x, y)))
        .flat_map(|(x, y)| {
            let p = x * ny + y;
            seq.frames().data()[p * k..(p + 1) * k].iter().copied()
        })
        .collect();
    let mut annotation = seq.annotation.clone();
    annotation.roi = None;
    Ok(VideoSequence::new(DenseTensor::new(vec![roi.width, roi.height, k], data)?, seq.dt_seconds(), annotation)?)
}

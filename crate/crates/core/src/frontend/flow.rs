//! Pyramidal iterative Lucas-Kanade sparse optical flow.

use nalgebra::Point2;
use serde::{Deserialize, Serialize};

use super::features::FeatureSet;
use super::FrontendError;
use crate::image::{build_pyramid, sobel, GrayImage};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowConfig {
    /// Odd window side, in pixels.
    pub window: usize,
    /// Coarser pyramid levels above the full-resolution image.
    pub pyramid_levels: usize,
    pub max_iterations: usize,
    /// Convergence threshold on the per-iteration update, in pixels.
    pub epsilon: f64,
    /// Largest accepted mean absolute intensity difference over the window.
    pub max_residual: f64,
    /// Minimum eigenvalue of the window gradient matrix, per window pixel.
    pub min_eigenvalue: f64,
    /// Largest distance between a feature and its back-tracked position;
    /// non-positive disables the check.
    pub max_fb_error: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            window: 21,
            pyramid_levels: 3,
            max_iterations: 30,
            epsilon: 0.01,
            max_residual: 0.1,
            min_eigenvalue: 1e-6,
            max_fb_error: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrackStatus {
    Tracked,
    /// Gradient matrix too ill-conditioned at full resolution.
    LowTexture,
    OutOfBounds,
    /// Iterations exhausted while still moving, or a non-finite update.
    Diverged,
    /// Converged but the window residual exceeds the acceptance threshold.
    HighResidual,
    /// Tracking the result back into the first image misses the feature.
    Inconsistent,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correspondence {
    pub a: Point2<f64>,
    pub b: Point2<f64>,
}

/// Point pairs across two frames. Only successfully tracked pairs are exposed
/// through [`Correspondences::pairs`]; the per-feature status list is kept
/// for diagnostics.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Correspondences {
    pairs: Vec<Correspondence>,
    status: Vec<TrackStatus>,
}

impl Correspondences {
    /// Builds a set where every pair is valid.
    pub fn from_pairs(pairs: Vec<Correspondence>) -> Self {
        let status = vec![TrackStatus::Tracked; pairs.len()];
        Correspondences { pairs, status }
    }

    pub fn pairs(&self) -> &[Correspondence] {
        &self.pairs
    }

    pub fn status(&self) -> &[TrackStatus] {
        &self.status
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn points_a(&self) -> Vec<Point2<f64>> {
        self.pairs.iter().map(|p| p.a).collect()
    }

    pub fn points_b(&self) -> Vec<Point2<f64>> {
        self.pairs.iter().map(|p| p.b).collect()
    }

    /// Subset selected by a mask over [`Correspondences::pairs`].
    pub fn select(&self, mask: &[bool]) -> Correspondences {
        Correspondences::from_pairs(
            self.pairs
                .iter()
                .zip(mask)
                .filter(|(_, &m)| m)
                .map(|(p, _)| *p)
                .collect(),
        )
    }
}

struct Level {
    image: GrayImage,
    gx: GrayImage,
    gy: GrayImage,
}

pub fn track_features(
    prev: &GrayImage,
    curr: &GrayImage,
    features: &FeatureSet,
    cfg: &FlowConfig,
) -> Result<Correspondences, FrontendError> {
    if prev.width() != curr.width() || prev.height() != curr.height() {
        return Err(FrontendError::DimensionMismatch {
            a: (prev.width(), prev.height()),
            b: (curr.width(), curr.height()),
        });
    }
    let half = (cfg.window.max(3) / 2) as isize;
    let levels = |img: &GrayImage, count: usize, min_dim: usize| -> Vec<Level> {
        build_pyramid(img, count, min_dim)
            .into_iter()
            .map(|image| {
                let (gx, gy) = sobel(&image);
                Level { image, gx, gy }
            })
            .collect()
    };
    let prev_pyr = levels(prev, cfg.pyramid_levels, cfg.window);
    let curr_pyr = levels(curr, prev_pyr.len() - 1, 1);
    let check_fb = cfg.max_fb_error > 0.0;

    let mut out = Correspondences::default();
    for f in features.iter() {
        let (mut status, end) = track_one(&prev_pyr, &curr_pyr, f.x, f.y, half, cfg);
        if status == TrackStatus::Tracked && check_fb {
            let (back, start) = track_one(&curr_pyr, &prev_pyr, end.0, end.1, half, cfg);
            if back != TrackStatus::Tracked || (start.0 - f.x).hypot(start.1 - f.y) > cfg.max_fb_error {
                status = TrackStatus::Inconsistent;
            }
        }
        out.status.push(status);
        if status == TrackStatus::Tracked {
            out.pairs.push(Correspondence {
                a: Point2::new(f.x, f.y),
                b: Point2::new(end.0, end.1),
            });
        }
    }
    Ok(out)
}

fn track_one(
    prev: &[Level],
    curr: &[Level],
    x: f64,
    y: f64,
    half: isize,
    cfg: &FlowConfig,
) -> (TrackStatus, (f64, f64)) {
    let n = ((2 * half + 1) * (2 * half + 1)) as f64;
    let mut guess = (0.0f64, 0.0f64);
    let mut patch = Vec::with_capacity(n as usize);
    for (level, (lp, lc)) in prev.iter().zip(curr.iter().map(|l| &l.image)).enumerate().rev() {
        let scale = (1u32 << level) as f64;
        let (px, py) = (x / scale, y / scale);

        patch.clear();
        let (mut gxx, mut gxy, mut gyy) = (0.0, 0.0, 0.0);
        for dy in -half..=half {
            for dx in -half..=half {
                let (sx, sy) = (px + dx as f64, py + dy as f64);
                let ix = lp.gx.sample(sx, sy);
                let iy = lp.gy.sample(sx, sy);
                gxx += ix * ix;
                gxy += ix * iy;
                gyy += iy * iy;
                patch.push((lp.image.sample(sx, sy), ix, iy));
            }
        }
        let det = gxx * gyy - gxy * gxy;
        let min_eig = 0.5 * (gxx + gyy) - (0.25 * (gxx - gyy).powi(2) + gxy * gxy).sqrt();
        if min_eig / n < cfg.min_eigenvalue || det <= f64::EPSILON {
            if level == 0 {
                return (TrackStatus::LowTexture, (x, y));
            }
            guess = (guess.0 * 2.0, guess.1 * 2.0);
            continue;
        }

        let mut flow = (0.0f64, 0.0f64);
        let mut converged = false;
        let mut last_step = 0.0;
        for _ in 0..cfg.max_iterations {
            let (qx, qy) = (px + guess.0 + flow.0, py + guess.1 + flow.1);
            if !in_bounds(qx, qy, lc) {
                return (TrackStatus::OutOfBounds, (x, y));
            }
            let (mut bx, mut by) = (0.0, 0.0);
            let mut i = 0;
            for dy in -half..=half {
                for dx in -half..=half {
                    let (value, ix, iy) = patch[i];
                    let diff = value - lc.sample(qx + dx as f64, qy + dy as f64);
                    bx += diff * ix;
                    by += diff * iy;
                    i += 1;
                }
            }
            let ux = (gyy * bx - gxy * by) / det;
            let uy = (gxx * by - gxy * bx) / det;
            if !ux.is_finite() || !uy.is_finite() {
                return (TrackStatus::Diverged, (x, y));
            }
            flow.0 += ux;
            flow.1 += uy;
            last_step = ux.hypot(uy);
            if last_step < cfg.epsilon {
                converged = true;
                break;
            }
        }
        if level == 0 {
            let end = (x + guess.0 + flow.0, y + guess.1 + flow.1);
            if !in_bounds(end.0, end.1, lc) {
                return (TrackStatus::OutOfBounds, end);
            }
            if !converged && last_step > 0.5 {
                return (TrackStatus::Diverged, end);
            }
            let mut residual = 0.0;
            let mut i = 0;
            for dy in -half..=half {
                for dx in -half..=half {
                    residual += (patch[i].0 - lc.sample(end.0 + dx as f64, end.1 + dy as f64)).abs();
                    i += 1;
                }
            }
            if residual / n > cfg.max_residual {
                return (TrackStatus::HighResidual, end);
            }
            return (TrackStatus::Tracked, end);
        }
        guess = (2.0 * (guess.0 + flow.0), 2.0 * (guess.1 + flow.1));
    }
    unreachable!("the full-resolution level always returns")
}

fn in_bounds(x: f64, y: f64, img: &GrayImage) -> bool {
    x >= 0.0 && y >= 0.0 && x <= (img.width() - 1) as f64 && y <= (img.height() - 1) as f64
}

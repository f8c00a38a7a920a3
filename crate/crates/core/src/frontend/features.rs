//! Harris corner detection and Shi-Tomasi patch-quality filtering.

use serde::{Deserialize, Serialize};

use crate::image::{box_sum, sobel, GrayImage};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    /// Side of the structure-tensor window used by the Harris response.
    pub block_size: usize,
    pub harris_k: f64,
    pub max_features: usize,
    /// Candidates below `quality_level · max response` are discarded.
    pub quality_level: f64,
    pub min_distance: f64,
    /// Pixels closer than this to the image edge never become features.
    pub border: usize,
    /// Half-width of the Shi-Tomasi patch (7×7 for the default of 3).
    pub patch_radius: usize,
    /// Features with min-eigenvalue below this fraction of the set maximum are dropped.
    pub shi_tomasi_quality: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            block_size: 3,
            harris_k: 0.04,
            max_features: 500,
            quality_level: 0.01,
            min_distance: 8.0,
            border: 4,
            patch_radius: 3,
            shi_tomasi_quality: 0.01,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Feature {
    pub x: f64,
    pub y: f64,
    pub score: f64,
}

/// Features ordered by nonincreasing score.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureSet {
    pub features: Vec<Feature>,
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Feature> {
        self.features.iter()
    }
}

/// Dense Harris response det(M) − k·trace(M)² with M summed over the block.
pub fn harris_response(img: &GrayImage, block_size: usize, k: f64) -> Vec<f64> {
    let (gx, gy) = sobel(img);
    let (w, h) = (img.width(), img.height());
    let xx = GrayImage::from_fn(w, h, |x, y| gx.get(x, y) * gx.get(x, y));
    let xy = GrayImage::from_fn(w, h, |x, y| gx.get(x, y) * gy.get(x, y));
    let yy = GrayImage::from_fn(w, h, |x, y| gy.get(x, y) * gy.get(x, y));
    let r = block_size / 2;
    let (sxx, sxy, syy) = (box_sum(&xx, r), box_sum(&xy, r), box_sum(&yy, r));
    (0..w * h)
        .map(|i| {
            let (a, b, c) = (
                sxx.data()[i] as f64,
                sxy.data()[i] as f64,
                syy.data()[i] as f64,
            );
            a * c - b * b - k * (a + c) * (a + c)
        })
        .collect()
}

pub fn harris_corners(img: &GrayImage, cfg: &FeatureConfig) -> FeatureSet {
    let (w, h) = (img.width(), img.height());
    let border = cfg.border.max(1);
    if w <= 2 * border || h <= 2 * border {
        return FeatureSet::default();
    }
    let response = harris_response(img, cfg.block_size, cfg.harris_k);
    let max = response.iter().cloned().fold(0.0f64, f64::max);
    if max <= 0.0 {
        return FeatureSet::default();
    }
    let threshold = cfg.quality_level * max;
    let at = |x: usize, y: usize| response[y * w + x];

    let mut candidates = Vec::new();
    for y in border..h - border {
        for x in border..w - border {
            let v = at(x, y);
            if v <= threshold {
                continue;
            }
            // Raster-order tie break keeps exactly one pixel of a flat plateau.
            let mut is_max = true;
            'nbhd: for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let n = at((x as isize + dx) as usize, (y as isize + dy) as usize);
                    let earlier = dy < 0 || (dy == 0 && dx < 0);
                    if n > v || (earlier && n == v) {
                        is_max = false;
                        break 'nbhd;
                    }
                }
            }
            if is_max {
                let (ox, oy) = (
                    parabolic_offset(at(x - 1, y), v, at(x + 1, y)),
                    parabolic_offset(at(x, y - 1), v, at(x, y + 1)),
                );
                candidates.push(Feature {
                    x: x as f64 + ox,
                    y: y as f64 + oy,
                    score: v,
                });
            }
        }
    }
    // Stable sort keeps raster order among equal scores.
    candidates.sort_by(|a, b| b.score.total_cmp(&a.score));
    FeatureSet {
        features: suppress_by_distance(candidates, cfg.min_distance, cfg.max_features),
    }
}

/// Vertex offset of the parabola through three samples, clamped to ±0.5.
fn parabolic_offset(left: f64, center: f64, right: f64) -> f64 {
    let denom = left - 2.0 * center + right;
    if denom >= 0.0 {
        return 0.0;
    }
    (0.5 * (left - right) / denom).clamp(-0.5, 0.5)
}

/// Greedy non-maximum suppression over score-sorted candidates.
fn suppress_by_distance(sorted: Vec<Feature>, min_distance: f64, max: usize) -> Vec<Feature> {
    let cell = min_distance.max(1.0);
    let mut grid: std::collections::HashMap<(i64, i64), Vec<(f64, f64)>> = Default::default();
    let mut kept = Vec::new();
    let d2 = min_distance * min_distance;
    for f in sorted {
        if kept.len() >= max {
            break;
        }
        let (cx, cy) = ((f.x / cell).floor() as i64, (f.y / cell).floor() as i64);
        let crowded = (-1..=1).any(|dy| {
            (-1..=1).any(|dx| {
                grid.get(&(cx + dx, cy + dy)).is_some_and(|pts| {
                    pts.iter()
                        .any(|&(px, py)| (px - f.x).powi(2) + (py - f.y).powi(2) < d2)
                })
            })
        });
        if !crowded {
            grid.entry((cx, cy)).or_default().push((f.x, f.y));
            kept.push(f);
        }
    }
    kept
}

/// Smaller eigenvalue of the gradient structure tensor over a square patch.
pub fn min_eigenvalue_at(gx: &GrayImage, gy: &GrayImage, x: f64, y: f64, radius: usize) -> f64 {
    let (cx, cy) = (x.round() as isize, y.round() as isize);
    let r = radius as isize;
    let (mut a, mut b, mut c) = (0.0f64, 0.0f64, 0.0f64);
    for dy in -r..=r {
        for dx in -r..=r {
            let ix = gx.get_clamped(cx + dx, cy + dy) as f64;
            let iy = gy.get_clamped(cx + dx, cy + dy) as f64;
            a += ix * ix;
            b += ix * iy;
            c += iy * iy;
        }
    }
    let half_trace = 0.5 * (a + c);
    let disc = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    (half_trace - disc).max(0.0)
}

/// Rescores each feature by its patch min-eigenvalue, drops weak patches and
/// reorders by the new score.
pub fn shi_tomasi_rescore(img: &GrayImage, features: &FeatureSet, cfg: &FeatureConfig) -> FeatureSet {
    if features.is_empty() {
        return FeatureSet::default();
    }
    let (gx, gy) = sobel(img);
    let mut rescored: Vec<Feature> = features
        .iter()
        .map(|f| Feature {
            score: min_eigenvalue_at(&gx, &gy, f.x, f.y, cfg.patch_radius),
            ..*f
        })
        .collect();
    let max = rescored.iter().map(|f| f.score).fold(0.0f64, f64::max);
    let threshold = cfg.shi_tomasi_quality * max;
    rescored.retain(|f| f.score > 0.0 && f.score >= threshold);
    rescored.sort_by(|a, b| b.score.total_cmp(&a.score));
    FeatureSet { features: rescored }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(size: usize, x0: usize, len: usize) -> GrayImage {
        GrayImage::from_fn(size, size, |x, y| {
            if (x0..x0 + len).contains(&x) && (x0..x0 + len).contains(&y) {
                1.0
            } else {
                0.0
            }
        })
    }

    fn checkerboard(size: usize, cell: usize) -> GrayImage {
        GrayImage::from_fn(size, size, |x, y| ((x / cell + y / cell) % 2) as f32)
    }

    /// Independent dense oracle: naive per-pixel Sobel and 3×3 tensor sums.
    fn oracle_response(img: &GrayImage, k: f64) -> Vec<f64> {
        let (w, h) = (img.width() as isize, img.height() as isize);
        let px = |x: isize, y: isize| img.get(x.clamp(0, w - 1) as usize, y.clamp(0, h - 1) as usize) as f64;
        let grad = |x: isize, y: isize| {
            let gx = (px(x + 1, y - 1) + 2.0 * px(x + 1, y) + px(x + 1, y + 1)
                - px(x - 1, y - 1)
                - 2.0 * px(x - 1, y)
                - px(x - 1, y + 1))
                / 8.0;
            let gy = (px(x - 1, y + 1) + 2.0 * px(x, y + 1) + px(x + 1, y + 1)
                - px(x - 1, y - 1)
                - 2.0 * px(x, y - 1)
                - px(x + 1, y - 1))
                / 8.0;
            (gx, gy)
        };
        let mut out = vec![0.0; (w * h) as usize];
        for y in 0..h {
            for x in 0..w {
                let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (gx, gy) = grad(
                            (x + dx).clamp(0, w - 1),
                            (y + dy).clamp(0, h - 1),
                        );
                        a += gx * gx;
                        b += gx * gy;
                        c += gy * gy;
                    }
                }
                out[(y * w + x) as usize] = a * c - b * b - k * (a + c) * (a + c);
            }
        }
        out
    }

    #[test]
    fn response_matches_dense_oracle() {
        let img = checkerboard(40, 8);
        let fast = harris_response(&img, 3, 0.04);
        let slow = oracle_response(&img, 0.04);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn flat_image_has_no_corners() {
        let f = harris_corners(&GrayImage::filled(64, 64, 0.3), &FeatureConfig::default());
        assert!(f.is_empty());
    }

    #[test]
    fn white_square_gives_its_four_corners() {
        let img = square(64, 28, 8);
        // Peaks sit ~0.75 px inside the square, so adjacent corners are 6.5 px apart.
        let cfg = FeatureConfig {
            min_distance: 6.0,
            ..FeatureConfig::default()
        };
        let f = harris_corners(&img, &cfg);
        assert_eq!(f.len(), 4, "{f:?}");
        // Geometric corners in pixel-center coordinates.
        let corners = [(27.5, 27.5), (35.5, 27.5), (27.5, 35.5), (35.5, 35.5)];
        for c in corners {
            let d = f
                .iter()
                .map(|p| (p.x - c.0).hypot(p.y - c.1))
                .fold(f64::INFINITY, f64::min);
            assert!(d < 1.5, "corner {c:?} missed by {d}");
        }
        // Each feature sits on a local maximum of the oracle response.
        let oracle = oracle_response(&img, 0.04);
        let best = oracle.iter().cloned().fold(f64::MIN, f64::max);
        for p in f.iter() {
            let (x, y) = (p.x.round() as usize, p.y.round() as usize);
            assert!(oracle[y * 64 + x] > 0.5 * best);
        }
    }

    #[test]
    fn checkerboard_corners_are_found() {
        let img = checkerboard(96, 8);
        let f = harris_corners(&img, &FeatureConfig::default());
        assert!(f.len() >= 40, "only {} features", f.len());
        for p in f.iter() {
            // Cell corners lie at 8k − 0.5 in pixel-center coordinates.
            let off = |v: f64| ((v + 0.5) / 8.0 - ((v + 0.5) / 8.0).round()).abs() * 8.0;
            assert!(off(p.x).hypot(off(p.y)) < 1.5, "{p:?}");
        }
        for w in f.features.windows(2) {
            assert!(w[0].score >= w[1].score);
        }
    }

    #[test]
    fn respects_border_and_limits() {
        let img = checkerboard(96, 8);
        let cfg = FeatureConfig {
            max_features: 5,
            ..FeatureConfig::default()
        };
        let f = harris_corners(&img, &cfg);
        assert_eq!(f.len(), 5);
        let cfg = FeatureConfig::default();
        for p in harris_corners(&img, &cfg).iter() {
            assert!(p.x >= cfg.border as f64 - 0.5 && p.x <= (96 - cfg.border) as f64 + 0.5);
        }
    }

    #[test]
    fn detection_is_stable_under_contrast_scaling() {
        let img = checkerboard(96, 8);
        let cfg = FeatureConfig::default();
        let a = harris_corners(&img, &cfg);
        let b = harris_corners(&img.scaled(0.5), &cfg);
        assert_eq!(a.len(), b.len());
        for p in a.iter() {
            let d = b
                .iter()
                .map(|q| (p.x - q.x).hypot(p.y - q.y))
                .fold(f64::INFINITY, f64::min);
            assert!(d < 0.5);
        }
    }

    #[test]
    fn shi_tomasi_empty_in_empty_out() {
        let img = checkerboard(64, 8);
        assert!(shi_tomasi_rescore(&img, &FeatureSet::default(), &FeatureConfig::default()).is_empty());
    }

    #[test]
    fn shi_tomasi_keeps_checkerboard_corners() {
        let img = checkerboard(96, 8);
        let cfg = FeatureConfig::default();
        let f = harris_corners(&img, &cfg);
        let r = shi_tomasi_rescore(&img, &f, &cfg);
        assert_eq!(r.len(), f.len());
        // Oracle: recompute each patch tensor and its eigenvalues via the characteristic polynomial.
        let (gx, gy) = sobel(&img);
        for p in r.iter() {
            let (cx, cy) = (p.x.round() as isize, p.y.round() as isize);
            let (mut a, mut b, mut c) = (0.0f64, 0.0f64, 0.0f64);
            for y in cy - 3..=cy + 3 {
                for x in cx - 3..=cx + 3 {
                    let (u, v) = (gx.get_clamped(x, y) as f64, gy.get_clamped(x, y) as f64);
                    a += u * u;
                    b += u * v;
                    c += v * v;
                }
            }
            let m = nalgebra::Matrix2::new(a, b, b, c);
            let eig = m.symmetric_eigenvalues();
            let min = eig[0].min(eig[1]);
            assert!((p.score - min).abs() < 1e-6 * a.max(1.0));
        }
    }

    #[test]
    fn shi_tomasi_drops_edge_points() {
        let cell = 12;
        let img = checkerboard(120, cell);
        let cfg = FeatureConfig::default();
        let mut f = harris_corners(&img, &cfg);
        let corners = f.len();
        assert!(corners > 20);
        // Edge midpoints: on a vertical cell boundary, halfway between corners.
        for i in 0..10 {
            let x = (cell * (2 + (i % 5))) as f64 - 0.5;
            let y = (cell * (2 + i / 5)) as f64 + cell as f64 / 2.0;
            f.features.push(Feature { x, y, score: 0.0 });
        }
        let r = shi_tomasi_rescore(&img, &f, &cfg);
        assert_eq!(r.len(), corners);
        let (gx, gy) = sobel(&img);
        for i in 0..10 {
            let x = (cell * (2 + (i % 5))) as f64 - 0.5;
            let y = (cell * (2 + i / 5)) as f64 + cell as f64 / 2.0;
            assert!(min_eigenvalue_at(&gx, &gy, x, y, 3) < 1e-9);
        }
    }
}

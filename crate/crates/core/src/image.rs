//! Grayscale image container and the low-level filters the frontend shares.

use thiserror::Error;

/// Smallest width or height accepted by the loaders.
pub const MIN_IMAGE_DIM: usize = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImageError {
    #[error("intensity buffer has {got} entries, expected {width}x{height}")]
    SizeMismatch {
        width: usize,
        height: usize,
        got: usize,
    },
    #[error("image is {width}x{height}, below the {min}px minimum")]
    TooSmall {
        width: usize,
        height: usize,
        min: usize,
    },
}

/// Row-major intensities in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self, ImageError> {
        if data.len() != width * height {
            return Err(ImageError::SizeMismatch {
                width,
                height,
                got: data.len(),
            });
        }
        Ok(GrayImage {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        GrayImage {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        GrayImage {
            width,
            height,
            data,
        }
    }

    /// Rejects images smaller than [`MIN_IMAGE_DIM`] on either side.
    pub fn check_min_size(&self, min: usize) -> Result<(), ImageError> {
        if self.width < min || self.height < min {
            return Err(ImageError::TooSmall {
                width: self.width,
                height: self.height,
                min,
            });
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    /// Pixel access with coordinates clamped to the border.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f32 {
        let xc = x.clamp(0, self.width as isize - 1) as usize;
        let yc = y.clamp(0, self.height as isize - 1) as usize;
        self.data[yc * self.width + xc]
    }

    /// Bilinear sample at a sub-pixel location, border-clamped.
    #[inline]
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let ax = x - x0;
        let ay = y - y0;
        let (xi, yi) = (x0 as isize, y0 as isize);
        let p00 = self.get_clamped(xi, yi) as f64;
        let p10 = self.get_clamped(xi + 1, yi) as f64;
        let p01 = self.get_clamped(xi, yi + 1) as f64;
        let p11 = self.get_clamped(xi + 1, yi + 1) as f64;
        (1.0 - ay) * ((1.0 - ax) * p00 + ax * p10) + ay * ((1.0 - ax) * p01 + ax * p11)
    }

    pub fn scaled(&self, factor: f32) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn is_flat(&self) -> bool {
        let first = self.data.first().copied().unwrap_or(0.0);
        self.data.iter().all(|&v| v == first)
    }
}

/// Sobel derivatives normalized by 1/8, border-replicated.
pub fn sobel(img: &GrayImage) -> (GrayImage, GrayImage) {
    let (w, h) = (img.width(), img.height());
    let mut gx = GrayImage::filled(w, h, 0.0);
    let mut gy = GrayImage::filled(w, h, 0.0);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let p = |dx: isize, dy: isize| img.get_clamped(x + dx, y + dy);
            let dx = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            let dy = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
            gx.set(x as usize, y as usize, dx * 0.125);
            gy.set(x as usize, y as usize, dy * 0.125);
        }
    }
    (gx, gy)
}

/// Sum over a (2r+1)×(2r+1) window, border-replicated.
pub fn box_sum(img: &GrayImage, radius: usize) -> GrayImage {
    let (w, h) = (img.width(), img.height());
    let r = radius as isize;
    let mut rows = GrayImage::filled(w, h, 0.0);
    for y in 0..h {
        for x in 0..w as isize {
            let mut s = 0.0;
            for dx in -r..=r {
                s += img.get_clamped(x + dx, y as isize);
            }
            rows.set(x as usize, y, s);
        }
    }
    let mut out = GrayImage::filled(w, h, 0.0);
    for y in 0..h as isize {
        for x in 0..w {
            let mut s = 0.0;
            for dy in -r..=r {
                s += rows.get_clamped(x as isize, y + dy);
            }
            out.set(x, y as usize, s);
        }
    }
    out
}

/// Gaussian 5-tap [1 4 6 4 1]/16 blur followed by 2× decimation.
pub fn pyr_down(img: &GrayImage) -> GrayImage {
    const K: [f32; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
    let (w, h) = (img.width(), img.height());
    let mut rows = GrayImage::filled(w, h, 0.0);
    for y in 0..h {
        for x in 0..w as isize {
            let mut s = 0.0;
            for (i, k) in K.iter().enumerate() {
                s += k * img.get_clamped(x + i as isize - 2, y as isize);
            }
            rows.set(x as usize, y, s);
        }
    }
    let (nw, nh) = (w.div_ceil(2), h.div_ceil(2));
    let mut out = GrayImage::filled(nw, nh, 0.0);
    for y in 0..nh {
        for x in 0..nw {
            let mut s = 0.0;
            for (i, k) in K.iter().enumerate() {
                s += k * rows.get_clamped(2 * x as isize, 2 * y as isize + i as isize - 2);
            }
            out.set(x, y, s);
        }
    }
    out
}

/// Pyramid with `levels` coarser images above the base; stops early when a
/// level would fall below `min_dim` pixels on a side.
pub fn build_pyramid(img: &GrayImage, levels: usize, min_dim: usize) -> Vec<GrayImage> {
    let mut pyr = vec![img.clone()];
    for _ in 0..levels {
        let last = pyr.last().expect("pyramid is nonempty");
        if last.width() / 2 < min_dim || last.height() / 2 < min_dim {
            break;
        }
        pyr.push(pyr_down(last));
    }
    pyr
}

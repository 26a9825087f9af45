//! PSNR and SSIM on images with values in [0, 1].

use super::EvalError;
use crate::raster::RenderOutput;
use crate::real::Real;

pub const PSNR_CAP: f64 = 99.0;
const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

/// Interleaved image, `channels` values per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self, EvalError> {
        if data.len() != width * height * channels {
            return Err(EvalError::Size(format!(
                "{} values for a {width}x{height}x{channels} image",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_render<T: Real>(out: &RenderOutput<T>) -> Self {
        Self {
            width: out.width,
            height: out.height,
            channels: 3,
            data: out.rgb.iter().map(|v| v.as_f64().clamp(0.0, 1.0)).collect(),
        }
    }

    /// 8-bit samples scaled to [0, 1].
    pub fn from_u8(width: usize, height: usize, channels: usize, bytes: &[u8]) -> Result<Self, EvalError> {
        Self::new(width, height, channels, bytes.iter().map(|&b| b as f64 / 255.0).collect())
    }

    fn check_pair(&self, other: &Self) -> Result<(), EvalError> {
        if (self.width, self.height, self.channels) != (other.width, other.height, other.channels) {
            return Err(EvalError::Size(format!(
                "{}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            )));
        }
        Ok(())
    }
}

/// `10 log10(1 / MSE)`, capped at 99 dB once MSE drops below 1e-10.
pub fn psnr(a: &Image, b: &Image) -> Result<f64, EvalError> {
    a.check_pair(b)?;
    if a.data.is_empty() {
        return Err(EvalError::Size("empty image".into()));
    }
    let mse = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        / a.data.len() as f64;
    if mse < 1e-10 {
        Ok(PSNR_CAP)
    } else {
        Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
    }
}

pub(crate) fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let x = i as f64 - half;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= sum);
    w
}

/// Separable "valid" filtering of a width x height plane.
fn filter_valid(plane: &[f64], width: usize, height: usize, w: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = width - SSIM_WINDOW + 1;
    let oh = height - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; ow * height];
    for y in 0..height {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, wi) in w.iter().enumerate() {
                acc += wi * plane[y * width + x + i];
            }
            rows[y * ow + x] = acc;
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, wi) in w.iter().enumerate() {
                acc += wi * rows[(y + i) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

/// Mean SSIM over channels and all fully-contained 11x11 Gaussian windows
/// (sigma 1.5).
pub fn ssim(a: &Image, b: &Image) -> Result<f64, EvalError> {
    a.check_pair(b)?;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW || a.channels == 0 {
        return Err(EvalError::Size(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels"
        )));
    }
    let w = gaussian_window();
    let (width, height, ch) = (a.width, a.height, a.channels);
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..ch {
        let x: Vec<f64> = a.data.iter().skip(c).step_by(ch).copied().collect();
        let y: Vec<f64> = b.data.iter().skip(c).step_by(ch).copied().collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let mx = filter_valid(&x, width, height, &w);
        let my = filter_valid(&y, width, height, &w);
        let sxx = filter_valid(&xx, width, height, &w);
        let syy = filter_valid(&yy, width, height, &w);
        let sxy = filter_valid(&xy, width, height, &w);
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cxy = sxy[i] - ux * uy;
            let s = ((2.0 * ux * uy + C1) * (2.0 * cxy + C2))
                / ((ux * ux + uy * uy + C1) * (vx + vy + C2));
            total += s;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize, c: usize) -> Image {
        Image::new(w, h, c, (0..w * h * c).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    /// Direct per-window evaluation with the full 2D kernel.
    fn ssim_oracle(a: &Image, b: &Image) -> f64 {
        let g = gaussian_window();
        let mut total = 0.0;
        let mut count = 0;
        for c in 0..a.channels {
            for y0 in 0..=a.height - 11 {
                for x0 in 0..=a.width - 11 {
                    let (mut ux, mut uy) = (0.0, 0.0);
                    for j in 0..11 {
                        for i in 0..11 {
                            let k = ((y0 + j) * a.width + x0 + i) * a.channels + c;
                            ux += g[i] * g[j] * a.data[k];
                            uy += g[i] * g[j] * b.data[k];
                        }
                    }
                    let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
                    for j in 0..11 {
                        for i in 0..11 {
                            let k = ((y0 + j) * a.width + x0 + i) * a.channels + c;
                            let wgt = g[i] * g[j];
                            vx += wgt * (a.data[k] - ux).powi(2);
                            vy += wgt * (b.data[k] - uy).powi(2);
                            cxy += wgt * (a.data[k] - ux) * (b.data[k] - uy);
                        }
                    }
                    total += ((2.0 * ux * uy + C1) * (2.0 * cxy + C2))
                        / ((ux * ux + uy * uy + C1) * (vx + vy + C2));
                    count += 1;
                }
            }
        }
        total / count as f64
    }

    #[test]
    fn identical_images() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_image(&mut rng, 20, 16, 3);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_offset_is_twenty_db() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = Image::new(8, 8, 3, (0..192).map(|_| rng.random_range(0.1..0.8)).collect()).unwrap();
        let b = Image {
            data: a.data.iter().map(|v| v + 0.1).collect(),
            ..a.clone()
        };
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_decreases_with_error() {
        let a = Image::new(4, 4, 1, vec![0.5; 16]).unwrap();
        let mut last = f64::INFINITY;
        for e in [0.001, 0.01, 0.05, 0.2] {
            let b = Image::new(4, 4, 1, vec![0.5 + e; 16]).unwrap();
            let p = psnr(&a, &b).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn ssim_matches_window_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let a = random_image(&mut rng, 17, 14, 3);
            let b = random_image(&mut rng, 17, 14, 3);
            assert!((ssim(&a, &b).unwrap() - ssim_oracle(&a, &b)).abs() < 1e-6);
        }
    }

    #[test]
    fn size_errors() {
        let a = Image::new(12, 12, 1, vec![0.0; 144]).unwrap();
        let b = Image::new(12, 11, 1, vec![0.0; 132]).unwrap();
        assert!(psnr(&a, &b).is_err());
        assert!(ssim(&b, &b).is_ok());
        let tiny = Image::new(5, 5, 1, vec![0.0; 25]).unwrap();
        assert!(ssim(&tiny, &tiny).is_err());
    }
}

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng;

/// Synthetic image families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    /// Linear ramp from 0 at one corner to 1 at the opposite corner.
    Gradient,
    /// Two-colour checkerboard with a random cell size and phase.
    Checker,
    /// A few coloured Gaussian blobs over a flat background.
    GaussianBlobs,
    /// Independent uniform pixels.
    Noise,
}

impl std::str::FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gradient" => Ok(SynthKind::Gradient),
            "checker" => Ok(SynthKind::Checker),
            "gaussian_blobs" => Ok(SynthKind::GaussianBlobs),
            "noise" => Ok(SynthKind::Noise),
            other => Err(Error::Param(format!("unknown image generator {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthImageSpec {
    pub kind: SynthKind,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub seed: u64,
}

/// One `channels×height×width` image with values in `[0, 1]`.
pub fn synth_image(kind: SynthKind, height: usize, width: usize, channels: usize, seed: u64) -> Tensor {
    let mut r = rng::rng(seed);
    let (h, w) = (height, width);
    let coord = |i: usize| ((i / w) % h, i % w);
    match kind {
        SynthKind::Gradient => {
            let (flip_y, flip_x) = (r.random_bool(0.5), r.random_bool(0.5));
            let span = ((h - 1) + (w - 1)).max(1) as f64;
            Tensor::from_fn([channels, h, w], |i| {
                let (y, x) = coord(i);
                let y = if flip_y { h - 1 - y } else { y };
                let x = if flip_x { w - 1 - x } else { x };
                (y + x) as f64 / span
            })
        }
        SynthKind::Checker => {
            let cell = [1usize, 2, 4, 8][r.random_range(0..4)];
            let (oy, ox) = (r.random_range(0..cell), r.random_range(0..cell));
            let a: Vec<f64> = (0..channels).map(|_| r.random()).collect();
            let b: Vec<f64> = (0..channels).map(|_| r.random()).collect();
            Tensor::from_fn([channels, h, w], |i| {
                let (y, x) = coord(i);
                let ch = i / (h * w);
                if ((y + oy) / cell + (x + ox) / cell).is_multiple_of(2) {
                    a[ch]
                } else {
                    b[ch]
                }
            })
        }
        SynthKind::GaussianBlobs => {
            let background: Vec<f64> = (0..channels).map(|_| r.random_range(0.0..0.5)).collect();
            let blobs: Vec<(f64, f64, f64, Vec<f64>)> = (0..r.random_range(1..=4))
                .map(|_| {
                    let cy = r.random_range(0.0..h as f64);
                    let cx = r.random_range(0.0..w as f64);
                    let sigma = r.random_range(0.08..0.3) * h.min(w) as f64;
                    let colour = (0..channels).map(|_| r.random_range(-0.5..1.0)).collect();
                    (cy, cx, sigma, colour)
                })
                .collect();
            Tensor::from_fn([channels, h, w], |i| {
                let (y, x) = coord(i);
                let ch = i / (h * w);
                let v = blobs.iter().fold(background[ch], |acc, (cy, cx, s, col)| {
                    let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                    acc + col[ch] * (-d2 / (2.0 * s * s)).exp()
                });
                v.clamp(0.0, 1.0)
            })
        }
        SynthKind::Noise => Tensor::from_fn([channels, h, w], |_| r.random()),
    }
}

/// `batch_size` images; image `i` uses seed `derive(spec.seed, [i])`.
pub fn synth_batch(spec: &SynthImageSpec, batch_size: usize) -> Vec<Tensor> {
    (0..batch_size)
        .map(|i| synth_image(spec.kind, spec.height, spec.width, spec.channels, rng::derive(spec.seed, &[i as u64])))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: SynthKind, size: usize, seed: u64) -> SynthImageSpec {
        SynthImageSpec {
            kind,
            height: size,
            width: size,
            channels: 3,
            seed,
        }
    }

    #[test]
    fn gradient_corners() {
        for seed in 0..8 {
            let img = synth_image(SynthKind::Gradient, 16, 16, 1, seed);
            let corners = [img.at(&[0, 0, 0]), img.at(&[0, 15, 15]), img.at(&[0, 0, 15]), img.at(&[0, 15, 0])];
            let (lo, hi) = (corners.iter().cloned().fold(1.0, f64::min), corners.iter().cloned().fold(0.0, f64::max));
            assert_eq!((lo, hi), (0.0, 1.0));
            // the 0 and 1 sit at opposite corners
            assert_eq!(corners[0] + corners[1], 1.0);
            assert_eq!(corners[2] + corners[3], 1.0);
        }
    }

    #[test]
    fn batches_are_deterministic_and_bounded() {
        for kind in [SynthKind::Gradient, SynthKind::Checker, SynthKind::GaussianBlobs, SynthKind::Noise] {
            let a = synth_batch(&spec(kind, 32, 5), 4);
            assert_eq!(a, synth_batch(&spec(kind, 32, 5), 4));
            assert!(a.iter().all(|t| t.data().iter().all(|v| (0.0..=1.0).contains(v))));
            assert_eq!(a[0].shape(), &[3, 32, 32]);
        }
        assert_ne!(synth_batch(&spec(SynthKind::Noise, 8, 1), 1), synth_batch(&spec(SynthKind::Noise, 8, 2), 1));
    }

    #[test]
    fn noise_mean() {
        for seed in 0..5 {
            let img = &synth_batch(&spec(SynthKind::Noise, 32, seed), 1)[0];
            let mean = img.sum() / img.numel() as f64;
            assert!((0.45..=0.55).contains(&mean), "{mean}");
        }
    }
}

//! Image transformations with explicitly sampled parameters.
//!
//! Images are `size × size × 3` row-major HWC arrays of unit-interval values.
//! Every transformation is a pure function of its parameters and the input, so
//! a recorded [`AugmentationParams`] reproduces its output exactly.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::Scalar;

/// Zero padding added on every side before cropping.
pub const CROP_PAD: usize = 12;
pub const CUTOUT_MIN: usize = 8;
pub const CUTOUT_MAX: usize = 24;
pub const JITTER_MIN: f32 = 0.6;
pub const JITTER_MAX: f32 = 1.4;
pub const RANDOM_CONV_STD: f64 = 1.0 / 9.0;
/// Bumped whenever [`REGISTRY`] changes order or membership.
pub const REGISTRY_VERSION: u32 = 1;

/// 3×3 convolution from 3 to 3 channels, indexed `[out][ky][kx][in]`.
pub const KERNEL_LEN: usize = 81;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentationId {
    Crop,
    Grayscale,
    Cutout,
    CutoutColor,
    Flip,
    Rotate,
    RandomConv,
    ColorJitter,
    LearnedConv,
    Identity,
}

/// Fixed registry order; selectors index augmentations by position here.
pub const REGISTRY: [AugmentationId; 10] = [
    AugmentationId::Crop,
    AugmentationId::Grayscale,
    AugmentationId::Cutout,
    AugmentationId::CutoutColor,
    AugmentationId::Flip,
    AugmentationId::Rotate,
    AugmentationId::RandomConv,
    AugmentationId::ColorJitter,
    AugmentationId::LearnedConv,
    AugmentationId::Identity,
];

/// The eight transformations with sampled parameters.
pub const SAMPLED: [AugmentationId; 8] = [
    AugmentationId::Crop,
    AugmentationId::Grayscale,
    AugmentationId::Cutout,
    AugmentationId::CutoutColor,
    AugmentationId::Flip,
    AugmentationId::Rotate,
    AugmentationId::RandomConv,
    AugmentationId::ColorJitter,
];

impl AugmentationId {
    pub fn as_str(self) -> &'static str {
        match self {
            AugmentationId::Crop => "crop",
            AugmentationId::Grayscale => "grayscale",
            AugmentationId::Cutout => "cutout",
            AugmentationId::CutoutColor => "cutout_color",
            AugmentationId::Flip => "flip",
            AugmentationId::Rotate => "rotate",
            AugmentationId::RandomConv => "random_conv",
            AugmentationId::ColorJitter => "color_jitter",
            AugmentationId::LearnedConv => "learned_conv",
            AugmentationId::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        REGISTRY.iter().copied().find(|id| id.as_str() == s)
    }

    pub fn index(self) -> usize {
        REGISTRY.iter().position(|&id| id == self).unwrap_or(0)
    }

    /// Human-readable parameter domain.
    pub fn domain(self) -> &'static str {
        match self {
            AugmentationId::Crop => "offset (row, col) uniform over [0, 24]^2 after zero padding by 12",
            AugmentationId::Grayscale => "no parameters",
            AugmentationId::Cutout => "rectangle sides uniform in [8, 24], position uniform, fill 0",
            AugmentationId::CutoutColor => "rectangle sides uniform in [8, 24], position uniform, fill uniform RGB",
            AugmentationId::Flip => "no parameters (horizontal mirror)",
            AugmentationId::Rotate => "quarter turns uniform over {1, 2, 3}",
            AugmentationId::RandomConv => "3x3x3x3 kernel, entries N(0, (1/9)^2), same padding, clamped",
            AugmentationId::ColorJitter => "brightness, contrast, saturation factors uniform in [0.6, 1.4]",
            AugmentationId::LearnedConv => "meta-learned 3x3x3x3 kernel, valid convolution re-padded by 1",
            AugmentationId::Identity => "no parameters",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum AugmentationParams {
    Crop { top: usize, left: usize },
    Grayscale,
    Cutout { top: usize, left: usize, height: usize, width: usize },
    CutoutColor { top: usize, left: usize, height: usize, width: usize, color: [f32; 3] },
    Flip,
    Rotate { quarter_turns: u8 },
    RandomConv { kernel: Vec<f32> },
    ColorJitter { brightness: f32, contrast: f32, saturation: f32 },
    LearnedConv { weights: Vec<f32> },
    Identity,
}

impl AugmentationParams {
    pub fn id(&self) -> AugmentationId {
        match self {
            AugmentationParams::Crop { .. } => AugmentationId::Crop,
            AugmentationParams::Grayscale => AugmentationId::Grayscale,
            AugmentationParams::Cutout { .. } => AugmentationId::Cutout,
            AugmentationParams::CutoutColor { .. } => AugmentationId::CutoutColor,
            AugmentationParams::Flip => AugmentationId::Flip,
            AugmentationParams::Rotate { .. } => AugmentationId::Rotate,
            AugmentationParams::RandomConv { .. } => AugmentationId::RandomConv,
            AugmentationParams::ColorJitter { .. } => AugmentationId::ColorJitter,
            AugmentationParams::LearnedConv { .. } => AugmentationId::LearnedConv,
            AugmentationParams::Identity => AugmentationId::Identity,
        }
    }
}

/// Draws `ν` uniformly from the domain of `id` for a `size × size` image.
pub fn sample_params<R: Rng + ?Sized>(id: AugmentationId, size: usize, rng: &mut R) -> Result<AugmentationParams> {
    let cutout_rect = |rng: &mut R| {
        let lo = CUTOUT_MIN.min(size);
        let hi = CUTOUT_MAX.min(size);
        let height = rng.random_range(lo..=hi);
        let width = rng.random_range(lo..=hi);
        let top = rng.random_range(0..=size - height);
        let left = rng.random_range(0..=size - width);
        (top, left, height, width)
    };
    Ok(match id {
        AugmentationId::Crop => AugmentationParams::Crop {
            top: rng.random_range(0..=2 * CROP_PAD),
            left: rng.random_range(0..=2 * CROP_PAD),
        },
        AugmentationId::Grayscale => AugmentationParams::Grayscale,
        AugmentationId::Cutout => {
            let (top, left, height, width) = cutout_rect(rng);
            AugmentationParams::Cutout { top, left, height, width }
        }
        AugmentationId::CutoutColor => {
            let (top, left, height, width) = cutout_rect(rng);
            let color = [rng.random::<f32>(), rng.random::<f32>(), rng.random::<f32>()];
            AugmentationParams::CutoutColor { top, left, height, width, color }
        }
        AugmentationId::Flip => AugmentationParams::Flip,
        AugmentationId::Rotate => AugmentationParams::Rotate { quarter_turns: rng.random_range(1..=3) },
        AugmentationId::RandomConv => {
            let mut kernel = vec![0.0f32; KERNEL_LEN];
            for w in kernel.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *w = (z * RANDOM_CONV_STD) as f32;
            }
            AugmentationParams::RandomConv { kernel }
        }
        AugmentationId::ColorJitter => AugmentationParams::ColorJitter {
            brightness: rng.random_range(JITTER_MIN..=JITTER_MAX),
            contrast: rng.random_range(JITTER_MIN..=JITTER_MAX),
            saturation: rng.random_range(JITTER_MIN..=JITTER_MAX),
        },
        AugmentationId::LearnedConv => {
            bail!(Usage, "learned_conv has no sampled parameters; use the meta-learned weights")
        }
        AugmentationId::Identity => AugmentationParams::Identity,
    })
}

fn check_image<S>(image: &[S], size: usize) -> Result<()> {
    if size == 0 || image.len() != size * size * 3 {
        bail!(Input, "expected a {size}x{size}x3 image ({} values), got {}", size * size * 3, image.len());
    }
    Ok(())
}

#[inline]
fn luminance<S: Scalar>(px: &[S]) -> S {
    S::from_f64(0.299) * px[0] + S::from_f64(0.587) * px[1] + S::from_f64(0.114) * px[2]
}

fn kernel_as<S: Scalar>(kernel: &[f32]) -> Vec<S> {
    kernel.iter().map(|&w| S::from_f64(w as f64)).collect()
}

/// 3×3, 3→3 channel convolution with stride 1.
///
/// With `same_padding` every output pixel is computed against a zero-padded
/// input; otherwise only the `(size-2)²` valid interior is computed and the
/// one-pixel border is left at zero.
pub fn conv3x3<S: Scalar>(kernel: &[S], image: &[S], size: usize, same_padding: bool) -> Vec<S> {
    assert_eq!(kernel.len(), KERNEL_LEN);
    let mut out = vec![S::ZERO; size * size * 3];
    let (lo, hi) = if same_padding { (0, size) } else { (1, size.saturating_sub(1)) };
    for r in lo..hi {
        for c in lo..hi {
            let mut acc = [S::ZERO; 3];
            for ky in 0..3 {
                let y = r as isize + ky as isize - 1;
                if y < 0 || y >= size as isize {
                    continue;
                }
                for kx in 0..3 {
                    let x = c as isize + kx as isize - 1;
                    if x < 0 || x >= size as isize {
                        continue;
                    }
                    let px = &image[(y as usize * size + x as usize) * 3..][..3];
                    for (o, slot) in acc.iter_mut().enumerate() {
                        let w = &kernel[((o * 3 + ky) * 3 + kx) * 3..][..3];
                        *slot += w[0] * px[0] + w[1] * px[1] + w[2] * px[2];
                    }
                }
            }
            out[(r * size + c) * 3..][..3].copy_from_slice(&acc);
        }
    }
    out
}

/// Valid convolution with `weights`, zero-padded by one pixel back to the input
/// size. Differentiable with respect to `weights` via [`learned_conv_backward`].
pub fn learned_conv_apply<S: Scalar>(weights: &[S], image: &[S], size: usize) -> Result<Vec<S>> {
    check_image(image, size)?;
    if weights.len() != KERNEL_LEN {
        bail!(Input, "learned conv needs {KERNEL_LEN} weights, got {}", weights.len());
    }
    if weights.iter().any(|w| !w.is_finite()) {
        bail!(Numeric, "learned conv weights are not finite");
    }
    if size < 3 {
        bail!(Input, "learned conv needs images of at least 3x3");
    }
    Ok(conv3x3(weights, image, size, false))
}

/// Accumulates `∂L/∂weights` given `∂L/∂output` of [`learned_conv_apply`].
pub fn learned_conv_backward<S: Scalar>(image: &[S], grad_out: &[S], size: usize, grad_weights: &mut [S]) {
    assert_eq!(grad_weights.len(), KERNEL_LEN);
    for r in 1..size - 1 {
        for c in 1..size - 1 {
            let g = &grad_out[(r * size + c) * 3..][..3];
            for ky in 0..3 {
                for kx in 0..3 {
                    let px = &image[((r + ky - 1) * size + (c + kx - 1)) * 3..][..3];
                    for (o, &go) in g.iter().enumerate() {
                        let w = &mut grad_weights[((o * 3 + ky) * 3 + kx) * 3..][..3];
                        w[0] += go * px[0];
                        w[1] += go * px[1];
                        w[2] += go * px[2];
                    }
                }
            }
        }
    }
}

fn fill_rect<S: Scalar>(out: &mut [S], size: usize, (top, left, height, width): (usize, usize, usize, usize), color: [S; 3]) {
    for r in top..(top + height).min(size) {
        for c in left..(left + width).min(size) {
            out[(r * size + c) * 3..][..3].copy_from_slice(&color);
        }
    }
}

/// Applies one transformation to one image.
pub fn apply<S: Scalar>(params: &AugmentationParams, image: &[S], size: usize) -> Result<Vec<S>> {
    check_image(image, size)?;
    let px = |r: usize, c: usize| &image[(r * size + c) * 3..][..3];
    Ok(match params {
        AugmentationParams::Identity => image.to_vec(),
        AugmentationParams::Crop { top, left } => {
            if *top > 2 * CROP_PAD || *left > 2 * CROP_PAD {
                bail!(Input, "crop offset ({top}, {left}) outside [0, {}]", 2 * CROP_PAD);
            }
            let mut out = vec![S::ZERO; image.len()];
            for r in 0..size {
                // Row r of the window is row r + top - PAD of the original.
                let src_r = (r + top) as isize - CROP_PAD as isize;
                if src_r < 0 || src_r >= size as isize {
                    continue;
                }
                for c in 0..size {
                    let src_c = (c + left) as isize - CROP_PAD as isize;
                    if src_c < 0 || src_c >= size as isize {
                        continue;
                    }
                    out[(r * size + c) * 3..][..3].copy_from_slice(px(src_r as usize, src_c as usize));
                }
            }
            out
        }
        AugmentationParams::Grayscale => {
            let mut out = Vec::with_capacity(image.len());
            for p in image.chunks_exact(3) {
                let y = luminance(p);
                out.extend_from_slice(&[y, y, y]);
            }
            out
        }
        AugmentationParams::Cutout { top, left, height, width } => {
            let mut out = image.to_vec();
            fill_rect(&mut out, size, (*top, *left, *height, *width), [S::ZERO; 3]);
            out
        }
        AugmentationParams::CutoutColor { top, left, height, width, color } => {
            let mut out = image.to_vec();
            let fill = [
                S::from_f64(color[0] as f64),
                S::from_f64(color[1] as f64),
                S::from_f64(color[2] as f64),
            ];
            fill_rect(&mut out, size, (*top, *left, *height, *width), fill);
            out
        }
        AugmentationParams::Flip => {
            let mut out = Vec::with_capacity(image.len());
            for r in 0..size {
                for c in (0..size).rev() {
                    out.extend_from_slice(px(r, c));
                }
            }
            out
        }
        AugmentationParams::Rotate { quarter_turns } => {
            let n = size - 1;
            let mut out = Vec::with_capacity(image.len());
            for r in 0..size {
                for c in 0..size {
                    // Counter-clockwise quarter turns.
                    let (sr, sc) = match quarter_turns % 4 {
                        0 => (r, c),
                        1 => (c, n - r),
                        2 => (n - r, n - c),
                        _ => (n - c, r),
                    };
                    out.extend_from_slice(px(sr, sc));
                }
            }
            out
        }
        AugmentationParams::RandomConv { kernel } => {
            let mut out = conv3x3(&kernel_as::<S>(kernel), image, size, true);
            for v in out.iter_mut() {
                *v = v.clamp(S::ZERO, S::ONE);
            }
            out
        }
        AugmentationParams::ColorJitter { brightness, contrast, saturation } => {
            let (b, ct, sat) = (
                S::from_f64(*brightness as f64),
                S::from_f64(*contrast as f64),
                S::from_f64(*saturation as f64),
            );
            let mut out: Vec<S> = image.iter().map(|&v| (v * b).clamp(S::ZERO, S::ONE)).collect();
            let mut mean = S::ZERO;
            for p in out.chunks_exact(3) {
                mean += luminance(p);
            }
            mean /= S::from_f64((size * size) as f64);
            for v in out.iter_mut() {
                *v = ((*v - mean) * ct + mean).clamp(S::ZERO, S::ONE);
            }
            for p in out.chunks_exact_mut(3) {
                let y = luminance(p);
                for v in p.iter_mut() {
                    *v = ((*v - y) * sat + y).clamp(S::ZERO, S::ONE);
                }
            }
            out
        }
        AugmentationParams::LearnedConv { weights } => learned_conv_apply(&kernel_as::<S>(weights), image, size)?,
    })
}

/// Applies `params[i]` to the `i`-th image of a contiguous batch.
pub fn apply_batch<S: Scalar>(params: &[AugmentationParams], batch: &[S], size: usize) -> Result<Vec<S>> {
    let stride = size * size * 3;
    if stride == 0 || batch.len() != params.len() * stride {
        bail!(
            Input,
            "batch of {} values does not hold {} images of {size}x{size}x3",
            batch.len(),
            params.len()
        );
    }
    let mut out = Vec::with_capacity(batch.len());
    for (p, image) in params.iter().zip(batch.chunks_exact(stride)) {
        out.extend(apply(p, image, size)?);
    }
    Ok(out)
}

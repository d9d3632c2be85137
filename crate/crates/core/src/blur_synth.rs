//! Physically based blur synthesis: temporal frame averaging in linear
//! color space for motion blur, and depth-dependent disk kernels for
//! defocus blur. Also builds ground-truthed blurred/sharp benchmark pairs.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::imaging::{
    convolve2d, linear_to_srgb, srgb_to_linear, Border, ColorSpace, Image, Kernel2D,
};

/// An ordered sequence of same-sized frames with strictly increasing
/// timestamps, covering one exposure span.
#[derive(Debug, Clone)]
pub struct FrameSequence {
    frames: Vec<Image>,
    timestamps: Vec<f64>,
}

impl FrameSequence {
    pub fn new(frames: Vec<Image>, timestamps: Vec<f64>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::EmptyInput("frame sequence"));
        }
        if frames.len() != timestamps.len() {
            return Err(Error::InvalidArgument(format!(
                "{} frames but {} timestamps",
                frames.len(),
                timestamps.len()
            )));
        }
        let first = &frames[0];
        for f in &frames[1..] {
            if !f.same_dims(first) || f.space() != first.space() {
                return Err(Error::DimensionMismatch(
                    first.width(),
                    first.height(),
                    f.width(),
                    f.height(),
                ));
            }
        }
        if timestamps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("timestamps must strictly increase".into()));
        }
        Ok(FrameSequence { frames, timestamps })
    }

    /// Convenience constructor with unit-spaced timestamps.
    pub fn from_frames(frames: Vec<Image>) -> Result<Self> {
        let ts = (0..frames.len()).map(|i| i as f64).collect();
        FrameSequence::new(frames, ts)
    }

    pub fn frames(&self) -> &[Image] {
        &self.frames
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// One blurred observation paired with its ground-truth sharp mid-frame.
#[derive(Debug, Clone)]
pub struct BenchmarkPair {
    pub blurred: Image,
    pub sharp: Image,
    pub n_averaged: usize,
    pub mid_index: usize,
}

/// Average sRGB frames in linear space and re-encode:
/// decode every frame, take the per-pixel mean, encode the mean.
/// This is the discrete temporal integral of the blur formation model
/// with no defocus kernel.
pub fn synthesize_motion_blur(seq: &FrameSequence) -> Result<Image> {
    if seq.frames.iter().any(|f| f.space() != ColorSpace::SrgbEncoded) {
        return Err(Error::WrongColorSpace {
            expected: ColorSpace::SrgbEncoded.name(),
            got: ColorSpace::Linear.name(),
        });
    }
    let first = &seq.frames[0];
    let mut acc = vec![0.0f64; first.data().len()];
    for frame in &seq.frames {
        let lin = srgb_to_linear(frame)?;
        for (a, v) in acc.iter_mut().zip(lin.data()) {
            *a += v;
        }
    }
    let n = seq.frames.len() as f64;
    for a in &mut acc {
        *a /= n;
    }
    let mean =
        Image::from_data(first.width(), first.height(), first.channels(), ColorSpace::Linear, acc)?;
    linear_to_srgb(&mean)
}

const DISK_SUPERSAMPLES: usize = 4;

/// Normalized disk point-spread function for a circle of confusion of the
/// given radius in pixels. Each weight approximates the fraction of the
/// pixel covered by the disk, estimated on a 4x4 subsample grid; each
/// subsample contributes the portion of its subcell inside the disk via a
/// signed-distance ramp, which keeps boundary pixels accurate at this
/// sample count. Radius 0 degenerates to the 1x1 identity.
pub fn defocus_kernel(radius_px: f64) -> Kernel2D {
    assert!(radius_px >= 0.0 && radius_px.is_finite(), "radius must be finite and >= 0");
    if radius_px == 0.0 {
        return Kernel2D::identity();
    }
    let r = radius_px.ceil() as isize;
    let size = (2 * r + 1) as usize;
    let step = 1.0 / DISK_SUPERSAMPLES as f64;
    let mut weights = vec![0.0f64; size * size];
    for i in 0..size {
        for j in 0..size {
            let cy = (i as isize - r) as f64;
            let cx = (j as isize - r) as f64;
            let mut coverage = 0.0;
            for sy in 0..DISK_SUPERSAMPLES {
                for sx in 0..DISK_SUPERSAMPLES {
                    let px = cx - 0.5 + (sx as f64 + 0.5) * step;
                    let py = cy - 0.5 + (sy as f64 + 0.5) * step;
                    let dist = (px * px + py * py).sqrt() - radius_px;
                    coverage += (0.5 - dist / step).clamp(0.0, 1.0);
                }
            }
            weights[i * size + j] = coverage;
        }
    }
    let total: f64 = weights.iter().sum();
    if total == 0.0 {
        // Degenerate tiny radius: all subsamples missed the disk.
        weights[(size / 2) * size + size / 2] = 1.0;
    } else {
        for w in &mut weights {
            *w /= total;
        }
    }
    Kernel2D::new(size, weights).expect("odd size by construction")
}

/// Depth-dependent defocus blur. The per-pixel circle-of-confusion radius
/// follows the thin-lens model `coc_gain * |depth - focus| / depth`; pixels
/// gather through the disk kernel of their own radius. Operates in the
/// image's own space (convert to linear first for physical correctness).
pub fn synthesize_defocus_blur(
    img: &Image,
    depth: &Image,
    focus_depth: f64,
    coc_gain: f64,
) -> Result<Image> {
    if depth.width() != img.width() || depth.height() != img.height() || depth.channels() != 1 {
        return Err(Error::DimensionMismatch(
            img.width(),
            img.height(),
            depth.width(),
            depth.height(),
        ));
    }
    for y in 0..depth.height() {
        for x in 0..depth.width() {
            if depth.get(x, y, 0) <= 0.0 {
                return Err(Error::InvalidDepth(x, y));
            }
        }
    }
    let mut out = Image::new(img.width(), img.height(), img.channels(), img.space());
    let mut cache: HashMap<u64, Kernel2D> = HashMap::new();
    for y in 0..img.height() {
        for x in 0..img.width() {
            let d = depth.get(x, y, 0);
            let radius = coc_gain * (d - focus_depth).abs() / d;
            let kernel =
                cache.entry(radius.to_bits()).or_insert_with(|| defocus_kernel(radius));
            let r = (kernel.size() / 2) as isize;
            for c in 0..img.channels() {
                let mut acc = 0.0;
                for i in -r..=r {
                    for j in -r..=r {
                        acc += kernel.at((i + r) as usize, (j + r) as usize)
                            * img.get_clamped(x as isize + j, y as isize + i, c);
                    }
                }
                out.set(x, y, c, acc);
            }
        }
    }
    Ok(out)
}

/// Build one blurred/sharp pair from the first `n` frames of a sequence:
/// the blur is the linear-space average, the sharp reference is the middle
/// frame at index `floor(n / 2)`.
pub fn make_benchmark_pair(seq: &FrameSequence, n: usize) -> Result<BenchmarkPair> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one frame to average".into()));
    }
    if n > seq.len() {
        return Err(Error::InvalidArgument(format!(
            "requested {n} frames but sequence has {}",
            seq.len()
        )));
    }
    let window = FrameSequence::new(
        seq.frames[..n].to_vec(),
        seq.timestamps[..n].to_vec(),
    )?;
    let blurred = synthesize_motion_blur(&window)?;
    let mid_index = n / 2;
    Ok(BenchmarkPair { blurred, sharp: seq.frames[mid_index].clone(), n_averaged: n, mid_index })
}

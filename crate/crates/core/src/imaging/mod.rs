//! Images, color-space transfer, convolution, rescaling and the quality
//! metrics used across the pipeline.
//!
//! Samples are stored as `f64` in row-major order, interleaved by channel.
//! Two color spaces are distinguished: physically linear samples (where
//! averaging is meaningful) and display-encoded sRGB samples in `[0, 1]`.

mod metrics;
pub mod io;

pub use metrics::{laplacian_variance, psnr, ssim, PSNR_INFINITE};

use crate::error::{Error, Result};

/// Tag describing how the samples of an [`Image`] are encoded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColorSpace {
    /// Scene-linear samples, non-negative and unbounded above.
    Linear,
    /// Display-encoded sRGB samples in `[0, 1]`.
    SrgbEncoded,
}

impl ColorSpace {
    pub fn name(self) -> &'static str {
        match self {
            ColorSpace::Linear => "linear",
            ColorSpace::SrgbEncoded => "sRGB-encoded",
        }
    }
}

/// A 2D grid of 1- or 3-channel float samples tagged with a color space.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    space: ColorSpace,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, space: ColorSpace) -> Self {
        assert!(channels == 1 || channels == 3, "channels must be 1 or 3");
        Image { width, height, channels, space, data: vec![0.0; width * height * channels] }
    }

    pub fn from_data(
        width: usize,
        height: usize,
        channels: usize,
        space: ColorSpace,
        data: Vec<f64>,
    ) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidArgument(format!("channels must be 1 or 3, got {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::InvalidArgument(format!(
                "data length {} does not match {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Image { width, height, channels, space, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn space(&self) -> ColorSpace {
        self.space
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Sample with coordinates clamped to the image bounds.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize, c: usize) -> f64 {
        let xc = x.clamp(0, self.width as isize - 1) as usize;
        let yc = y.clamp(0, self.height as isize - 1) as usize;
        self.get(xc, yc, c)
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// Single-channel luminance view. 3-channel input uses the Rec. 709
    /// weights (0.2126, 0.7152, 0.0722); 1-channel input is copied.
    pub fn to_luminance(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let mut out = Image::new(self.width, self.height, 1, self.space);
        for i in 0..self.width * self.height {
            let r = self.data[i * 3];
            let g = self.data[i * 3 + 1];
            let b = self.data[i * 3 + 2];
            out.data[i] = 0.2126 * r + 0.7152 * g + 0.0722 * b;
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        let mut out = self.clone();
        for v in &mut out.data {
            *v = f(*v);
        }
        out
    }

    pub fn with_space(mut self, space: ColorSpace) -> Image {
        self.space = space;
        self
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

/// Square odd-sized convolution kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel2D {
    size: usize,
    weights: Vec<f64>,
}

impl Kernel2D {
    pub fn new(size: usize, weights: Vec<f64>) -> Result<Self> {
        if size % 2 == 0 || size == 0 {
            return Err(Error::InvalidKernel(format!("kernel size {size} is not odd")));
        }
        if weights.len() != size * size {
            return Err(Error::InvalidKernel(format!(
                "{} weights for a {size}x{size} kernel",
                weights.len()
            )));
        }
        Ok(Kernel2D { size, weights })
    }

    pub fn identity() -> Self {
        Kernel2D { size: 1, weights: vec![1.0] }
    }

    /// Normalized box kernel of the given odd size.
    pub fn box_filter(size: usize) -> Result<Self> {
        let n = size * size;
        Kernel2D::new(size, vec![1.0 / n as f64; n])
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.size + j]
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn is_normalized(&self) -> bool {
        (self.sum() - 1.0).abs() <= 1e-9
    }
}

/// Exact IEC 61966-2-1 inverse transfer applied per sample.
#[inline]
pub fn srgb_decode_sample(x: f64) -> f64 {
    if x <= 0.04045 {
        x / 12.92
    } else {
        ((x + 0.055) / 1.055).powf(2.4)
    }
}

/// Exact IEC 61966-2-1 forward transfer; input clamped to `[0, 1]`.
#[inline]
pub fn srgb_encode_sample(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    if x <= 0.0031308 {
        x * 12.92
    } else {
        1.055 * x.powf(1.0 / 2.4) - 0.055
    }
}

/// Decode an sRGB image to scene-linear samples.
pub fn srgb_to_linear(img: &Image) -> Result<Image> {
    if img.space != ColorSpace::SrgbEncoded {
        return Err(Error::WrongColorSpace {
            expected: ColorSpace::SrgbEncoded.name(),
            got: img.space.name(),
        });
    }
    Ok(img.map(srgb_decode_sample).with_space(ColorSpace::Linear))
}

/// Encode a linear image into sRGB. Samples are clamped to `[0, 1]` first.
pub fn linear_to_srgb(img: &Image) -> Result<Image> {
    if img.space != ColorSpace::Linear {
        return Err(Error::WrongColorSpace {
            expected: ColorSpace::Linear.name(),
            got: img.space.name(),
        });
    }
    Ok(img.map(srgb_encode_sample).with_space(ColorSpace::SrgbEncoded))
}

/// Border handling for spatial filtering. Only edge replication is used;
/// it keeps blur synthesis free of darkened borders.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Border {
    Replicate,
}

/// Correlation-style 2D convolution with replicated borders. Output has the
/// same size and color space as the input.
pub fn convolve2d(img: &Image, k: &Kernel2D, _border: Border) -> Result<Image> {
    if k.size % 2 == 0 {
        return Err(Error::InvalidKernel(format!("kernel size {} is even", k.size)));
    }
    let r = (k.size / 2) as isize;
    let mut out = Image::new(img.width, img.height, img.channels, img.space);
    for y in 0..img.height {
        for x in 0..img.width {
            for c in 0..img.channels {
                let mut acc = 0.0;
                for i in -r..=r {
                    for j in -r..=r {
                        let w = k.at((i + r) as usize, (j + r) as usize);
                        acc += w * img.get_clamped(x as isize + j, y as isize + i, c);
                    }
                }
                out.set(x, y, c, acc);
            }
        }
    }
    Ok(out)
}

/// Block-mean downscaling by an integer factor in the image's own space.
/// Dimensions that are not multiples of the factor are padded by edge
/// replication before averaging. Factor 1 is the identity.
pub fn downscale(img: &Image, factor: usize) -> Result<Image> {
    if factor == 0 {
        return Err(Error::InvalidArgument("downscale factor must be >= 1".into()));
    }
    if factor == 1 {
        return Ok(img.clone());
    }
    let ow = img.width.div_ceil(factor);
    let oh = img.height.div_ceil(factor);
    let mut out = Image::new(ow, oh, img.channels, img.space);
    let inv = 1.0 / (factor * factor) as f64;
    for oy in 0..oh {
        for ox in 0..ow {
            for c in 0..img.channels {
                let mut acc = 0.0;
                for dy in 0..factor {
                    for dx in 0..factor {
                        acc += img.get_clamped(
                            (ox * factor + dx) as isize,
                            (oy * factor + dy) as isize,
                            c,
                        );
                    }
                }
                out.set(ox, oy, c, acc * inv);
            }
        }
    }
    Ok(out)
}

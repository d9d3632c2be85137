//! Learnable per-pixel blur proposals: a low-resolution grid of kernel,
//! mask, and depth-gain logits, bilinearly upsampled to full resolution.
//! Kernels decode through a softmax; an unsharp stencil scaled by a
//! depth-dependent gain adds distance-adaptive sharpening.

use crate::error::{Error, Result};
use crate::imaging::{ColorSpace, Image};

/// Blur proposal at one scale. Logit grids have resolution
/// `ceil(width / g) x ceil(height / g)` for grid factor `g`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlurProposal {
    width: usize,
    height: usize,
    kernel_size: usize,
    grid_factor: usize,
    grid_w: usize,
    grid_h: usize,
    kernel_logits: Vec<f64>,
    mask_logits: Vec<f64>,
    alpha_logits: Vec<f64>,
}

/// Gradients mirroring a proposal's logit buffers.
#[derive(Debug, Clone)]
pub struct BlurProposalGrad {
    pub kernel_logits: Vec<f64>,
    pub mask_logits: Vec<f64>,
    pub alpha_logits: Vec<f64>,
}

impl BlurProposalGrad {
    pub fn add_scaled(&mut self, other: &BlurProposalGrad, s: f64) {
        for (a, b) in self.kernel_logits.iter_mut().zip(&other.kernel_logits) {
            *a += b * s;
        }
        for (a, b) in self.mask_logits.iter_mut().zip(&other.mask_logits) {
            *a += b * s;
        }
        for (a, b) in self.alpha_logits.iter_mut().zip(&other.alpha_logits) {
            *a += b * s;
        }
    }
}

impl BlurProposal {
    /// Fresh proposal with all logits at zero: uniform kernels, masks at
    /// 0.5, unit softplus depth gain.
    pub fn new(width: usize, height: usize, kernel_size: usize, grid_factor: usize) -> Result<Self> {
        if kernel_size % 2 == 0 || kernel_size == 0 {
            return Err(Error::InvalidKernel(format!("kernel size {kernel_size} is not odd")));
        }
        if grid_factor == 0 {
            return Err(Error::InvalidArgument("grid factor must be >= 1".into()));
        }
        let grid_w = width.div_ceil(grid_factor).max(1);
        let grid_h = height.div_ceil(grid_factor).max(1);
        Ok(BlurProposal {
            width,
            height,
            kernel_size,
            grid_factor,
            grid_w,
            grid_h,
            kernel_logits: vec![0.0; grid_w * grid_h * kernel_size * kernel_size],
            mask_logits: vec![0.0; grid_w * grid_h],
            alpha_logits: vec![0.0; grid_w * grid_h],
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    pub fn grid_factor(&self) -> usize {
        self.grid_factor
    }

    pub fn grid_dims(&self) -> (usize, usize) {
        (self.grid_w, self.grid_h)
    }

    pub fn kernel_logits(&self) -> &[f64] {
        &self.kernel_logits
    }

    pub fn kernel_logits_mut(&mut self) -> &mut [f64] {
        &mut self.kernel_logits
    }

    pub fn mask_logits(&self) -> &[f64] {
        &self.mask_logits
    }

    pub fn mask_logits_mut(&mut self) -> &mut [f64] {
        &mut self.mask_logits
    }

    pub fn alpha_logits(&self) -> &[f64] {
        &self.alpha_logits
    }

    pub fn alpha_logits_mut(&mut self) -> &mut [f64] {
        &mut self.alpha_logits
    }

    pub fn zero_grad(&self) -> BlurProposalGrad {
        BlurProposalGrad {
            kernel_logits: vec![0.0; self.kernel_logits.len()],
            mask_logits: vec![0.0; self.mask_logits.len()],
            alpha_logits: vec![0.0; self.alpha_logits.len()],
        }
    }

    /// Bilinear footprint of full-resolution pixel (x, y) on the logit
    /// grid: four (cell index, weight) pairs.
    fn footprint(&self, x: usize, y: usize) -> [(usize, f64); 4] {
        let gx = (x as f64 + 0.5) / self.grid_factor as f64 - 0.5;
        let gy = (y as f64 + 0.5) / self.grid_factor as f64 - 0.5;
        let x0f = gx.floor();
        let y0f = gy.floor();
        let fx = gx - x0f;
        let fy = gy - y0f;
        let clamp_x = |v: f64| (v as isize).clamp(0, self.grid_w as isize - 1) as usize;
        let clamp_y = |v: f64| (v as isize).clamp(0, self.grid_h as isize - 1) as usize;
        let (x0, x1) = (clamp_x(x0f), clamp_x(x0f + 1.0));
        let (y0, y1) = (clamp_y(y0f), clamp_y(y0f + 1.0));
        [
            (y0 * self.grid_w + x0, (1.0 - fx) * (1.0 - fy)),
            (y0 * self.grid_w + x1, fx * (1.0 - fy)),
            (y1 * self.grid_w + x0, (1.0 - fx) * fy),
            (y1 * self.grid_w + x1, fx * fy),
        ]
    }

    fn sample_scalar(&self, logits: &[f64], fp: &[(usize, f64); 4]) -> f64 {
        fp.iter().map(|(i, w)| logits[*i] * w).sum()
    }

    fn sample_kernel_logits(&self, fp: &[(usize, f64); 4], out: &mut [f64]) {
        let kk = self.kernel_size * self.kernel_size;
        out.fill(0.0);
        for (cell, w) in fp {
            let base = cell * kk;
            for (o, l) in out.iter_mut().zip(&self.kernel_logits[base..base + kk]) {
                *o += l * w;
            }
        }
    }

    /// Decoded blending mask at one pixel.
    pub fn mask_at(&self, x: usize, y: usize) -> f64 {
        sigmoid(self.sample_scalar(&self.mask_logits, &self.footprint(x, y)))
    }
}

#[inline]
fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

#[inline]
fn softplus(v: f64) -> f64 {
    if v > 30.0 {
        v
    } else {
        (1.0 + v.exp()).ln()
    }
}

/// Unsharp stencil embedded at the center of a K x K support: +1 at the
/// center, -1/4 at the four axis neighbors. Sums to zero.
fn sharpen_stencil(kernel_size: usize) -> Vec<f64> {
    let kk = kernel_size * kernel_size;
    let mut s = vec![0.0; kk];
    if kernel_size >= 3 {
        let c = kernel_size / 2;
        s[c * kernel_size + c] = 1.0;
        s[(c - 1) * kernel_size + c] = -0.25;
        s[(c + 1) * kernel_size + c] = -0.25;
        s[c * kernel_size + c - 1] = -0.25;
        s[c * kernel_size + c + 1] = -0.25;
    }
    s
}

/// Decode the depth-aware kernel at a pixel:
/// `h = normalize(softmax(kernel logits) + alpha(depth) * sharpen)` with
/// `alpha(depth) = softplus(alpha logit) * depth / (1 + depth)`. The result
/// sums to one; sharpening entries may be negative.
pub fn decode_depth_kernel(
    bp: &BlurProposal,
    x: usize,
    y: usize,
    depth: f64,
) -> crate::error::Result<crate::imaging::Kernel2D> {
    if depth < 0.0 {
        return Err(Error::InvalidArgument(format!("negative depth {depth}")));
    }
    let kk = bp.kernel_size * bp.kernel_size;
    let fp = bp.footprint(x, y);
    let mut logits = vec![0.0; kk];
    bp.sample_kernel_logits(&fp, &mut logits);
    let mut h = softmax(&logits);
    let gain = softplus(bp.sample_scalar(&bp.alpha_logits, &fp)) * depth / (1.0 + depth);
    let stencil = sharpen_stencil(bp.kernel_size);
    for (v, s) in h.iter_mut().zip(&stencil) {
        *v += gain * s;
    }
    let total: f64 = h.iter().sum();
    for v in &mut h {
        *v /= total;
    }
    crate::imaging::Kernel2D::new(bp.kernel_size, h)
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = p.iter().sum();
    for v in &mut p {
        *v /= sum;
    }
    p
}

/// Full-resolution decoded mask image (ungated).
pub fn decode_mask_image(bp: &BlurProposal) -> Image {
    let mut out = Image::new(bp.width, bp.height, 1, ColorSpace::Linear);
    for y in 0..bp.height {
        for x in 0..bp.width {
            out.set(x, y, 0, bp.mask_at(x, y));
        }
    }
    out
}

/// Blend each pixel with its own depth-aware kernel response:
/// `out(x) = (1 - m(x)) img(x) + m(x) (img (*)_x h(x, depth(x)))` with
/// replicate borders. `gate`, when given, multiplies the decoded mask
/// pixel-wise (used to switch the proposal off in unreliable regions).
pub fn apply_blur_proposal_gated(
    img: &Image,
    depth: &Image,
    bp: &BlurProposal,
    gate: Option<&Image>,
) -> Result<Image> {
    check_dims(img, depth, bp)?;
    let kk = bp.kernel_size * bp.kernel_size;
    let r = (bp.kernel_size / 2) as isize;
    let stencil = sharpen_stencil(bp.kernel_size);
    let mut logits = vec![0.0; kk];
    let mut out = Image::new(img.width(), img.height(), img.channels(), img.space());
    for y in 0..img.height() {
        for x in 0..img.width() {
            let fp = bp.footprint(x, y);
            let mut m = sigmoid(bp.sample_scalar(&bp.mask_logits, &fp));
            if let Some(g) = gate {
                m *= g.get(x, y, 0);
            }
            if m == 0.0 {
                for c in 0..img.channels() {
                    out.set(x, y, c, img.get(x, y, c));
                }
                continue;
            }
            bp.sample_kernel_logits(&fp, &mut logits);
            let mut h = softmax(&logits);
            let d = depth.get(x, y, 0).max(0.0);
            let gain = softplus(bp.sample_scalar(&bp.alpha_logits, &fp)) * d / (1.0 + d);
            for (v, s) in h.iter_mut().zip(&stencil) {
                *v += gain * s;
            }
            let total: f64 = h.iter().sum();
            for c in 0..img.channels() {
                let mut conv = 0.0;
                for i in -r..=r {
                    for j in -r..=r {
                        let w = h[((i + r) * bp.kernel_size as isize + (j + r)) as usize];
                        conv += w * img.get_clamped(x as isize + j, y as isize + i, c);
                    }
                }
                conv /= total;
                out.set(x, y, c, (1.0 - m) * img.get(x, y, c) + m * conv);
            }
        }
    }
    Ok(out)
}

/// Ungated form of [`apply_blur_proposal_gated`].
pub fn apply_blur_proposal(img: &Image, depth: &Image, bp: &BlurProposal) -> Result<Image> {
    apply_blur_proposal_gated(img, depth, bp, None)
}

fn check_dims(img: &Image, depth: &Image, bp: &BlurProposal) -> Result<()> {
    if img.width() != bp.width || img.height() != bp.height {
        return Err(Error::DimensionMismatch(bp.width, bp.height, img.width(), img.height()));
    }
    if depth.width() != img.width() || depth.height() != img.height() || depth.channels() != 1 {
        return Err(Error::DimensionMismatch(
            img.width(),
            img.height(),
            depth.width(),
            depth.height(),
        ));
    }
    Ok(())
}

/// Gradients produced by [`apply_blur_proposal_backward`].
pub struct ProposalBackward {
    /// Gradient w.r.t. the convolved input image.
    pub g_img: Image,
    /// Gradient w.r.t. the depth map through the kernel's depth gain only.
    /// When the input image *is* the depth map, add [`Self::g_img`].
    pub g_depth: Image,
    pub grad: BlurProposalGrad,
}

/// Reverse-mode pass of [`apply_blur_proposal_gated`]. `g_out` is the
/// adjoint of the output image; `g_mask_extra`, when given, is an adjoint
/// applied directly to the decoded (ungated) mask, which is how sparsity
/// terms reach the mask logits.
pub fn apply_blur_proposal_backward(
    img: &Image,
    depth: &Image,
    bp: &BlurProposal,
    gate: Option<&Image>,
    g_out: &Image,
    g_mask_extra: Option<&Image>,
) -> Result<ProposalBackward> {
    check_dims(img, depth, bp)?;
    let kk = bp.kernel_size * bp.kernel_size;
    let k = bp.kernel_size as isize;
    let r = (bp.kernel_size / 2) as isize;
    let stencil = sharpen_stencil(bp.kernel_size);
    let channels = img.channels();

    let mut g_img = Image::new(img.width(), img.height(), channels, img.space());
    let mut g_depth = Image::new(img.width(), img.height(), 1, ColorSpace::Linear);
    let mut grad = bp.zero_grad();

    let mut logits = vec![0.0; kk];
    let mut g_h = vec![0.0; kk];
    for y in 0..img.height() {
        for x in 0..img.width() {
            let fp = bp.footprint(x, y);
            let mask_logit = bp.sample_scalar(&bp.mask_logits, &fp);
            let m_raw = sigmoid(mask_logit);
            let gate_v = gate.map_or(1.0, |g| g.get(x, y, 0));
            let m = m_raw * gate_v;

            bp.sample_kernel_logits(&fp, &mut logits);
            let p = softmax(&logits);
            let d = depth.get(x, y, 0).max(0.0);
            let alpha_logit = bp.sample_scalar(&bp.alpha_logits, &fp);
            let sp = softplus(alpha_logit);
            let ratio = d / (1.0 + d);
            let gain = sp * ratio;
            let mut h_base = p.clone();
            for (v, s) in h_base.iter_mut().zip(&stencil) {
                *v += gain * s;
            }
            let total: f64 = h_base.iter().sum();

            // dL/dm and dL/d(normalized kernel); the image adjoint splits
            // between the passthrough and convolution branches.
            let mut g_m = 0.0;
            g_h.fill(0.0);
            let mut any = false;
            for c in 0..channels {
                let go = g_out.get(x, y, c);
                if go == 0.0 {
                    continue;
                }
                any = true;
                // Passthrough branch.
                let own = g_img.idx(x, y, c);
                g_img.data_mut()[own] += go * (1.0 - m);
                let mut conv = 0.0;
                for i in -r..=r {
                    for j in -r..=r {
                        let idx = ((i + r) * k + (j + r)) as usize;
                        let sample = img.get_clamped(x as isize + j, y as isize + i, c);
                        conv += h_base[idx] / total * sample;
                        // Convolution branch into the input image.
                        let sx = (x as isize + j).clamp(0, img.width() as isize - 1) as usize;
                        let sy = (y as isize + i).clamp(0, img.height() as isize - 1) as usize;
                        let gi = g_img.idx(sx, sy, c);
                        g_img.data_mut()[gi] += go * m * h_base[idx] / total;
                        g_h[idx] += go * m * sample;
                    }
                }
                g_m += go * (conv - img.get(x, y, c));
            }
            let g_mask_direct = g_mask_extra.map_or(0.0, |g| g.get(x, y, 0));
            if !any && g_mask_direct == 0.0 {
                continue;
            }

            // Through the normalization: h = h_base / total.
            let mut g_hbase = vec![0.0; kk];
            let mut dot = 0.0;
            for i in 0..kk {
                dot += g_h[i] * h_base[i] / total;
            }
            for i in 0..kk {
                g_hbase[i] = (g_h[i] - dot) / total;
            }
            // Softmax part.
            let mut pdot = 0.0;
            for i in 0..kk {
                pdot += p[i] * g_hbase[i];
            }
            // Gain part.
            let mut g_gain = 0.0;
            for i in 0..kk {
                g_gain += g_hbase[i] * stencil[i];
            }
            let g_alpha_logit = g_gain * sigmoid(alpha_logit) * ratio;
            if d > 0.0 {
                let gd = g_depth.idx(x, y, 0);
                g_depth.data_mut()[gd] += g_gain * sp / ((1.0 + d) * (1.0 + d));
            }

            // dL/dm_raw includes both the blend and any direct mask adjoint.
            let g_mask_logit =
                (g_m * gate_v + g_mask_direct) * m_raw * (1.0 - m_raw);

            // Scatter into the logit grids with the bilinear weights.
            for (cell, w) in &fp {
                grad.mask_logits[*cell] += g_mask_logit * w;
                grad.alpha_logits[*cell] += g_alpha_logit * w;
                let base = cell * kk;
                for i in 0..kk {
                    grad.kernel_logits[base + i] += p[i] * (g_hbase[i] - pdot) * w;
                }
            }
        }
    }
    Ok(ProposalBackward { g_img, g_depth, grad })
}

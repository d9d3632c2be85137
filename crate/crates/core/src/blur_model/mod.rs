//! Residual-blur and heavy-blur formation on top of renders: exposure
//! compensation, learnable per-pixel kernel and mask fields with
//! depth-aware sharpening, and virtual sub-frame trajectories discretizing
//! the exposure-time integral.

mod proposal;

pub use proposal::{
    apply_blur_proposal, apply_blur_proposal_backward, apply_blur_proposal_gated,
    decode_depth_kernel, decode_mask_image, BlurProposal, BlurProposalGrad, ProposalBackward,
};

use crate::error::{Error, Result};
use crate::imaging::{ColorSpace, Image};
use crate::scene::{render, Camera, Gaussian3D};
use crate::se3::{SE3Pose, Tangent};

/// Per-frame affine exposure compensation `exp(a) * I + b`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ExposureParams {
    pub log_scale: f64,
    pub offset: f64,
}

impl ExposureParams {
    pub fn new(log_scale: f64, offset: f64) -> Result<Self> {
        if !log_scale.is_finite() || !offset.is_finite() {
            return Err(Error::InvalidArgument("exposure parameters must be finite".into()));
        }
        Ok(ExposureParams { log_scale, offset })
    }
}

/// Apply the exposure affine to a linear image; output is unclamped.
pub fn apply_exposure(img: &Image, e: &ExposureParams) -> Result<Image> {
    if img.space() != ColorSpace::Linear {
        return Err(Error::WrongColorSpace {
            expected: ColorSpace::Linear.name(),
            got: img.space().name(),
        });
    }
    let scale = e.log_scale.exp();
    Ok(img.map(|v| scale * v + e.offset))
}

/// Backward pass of [`apply_exposure`]: gradients for the two exposure
/// parameters and the input image.
pub fn apply_exposure_backward(
    img: &Image,
    e: &ExposureParams,
    g_out: &Image,
) -> (f64, f64, Image) {
    let scale = e.log_scale.exp();
    let mut g_a = 0.0;
    let mut g_b = 0.0;
    let mut g_img = g_out.clone();
    for (i, g) in g_out.data().iter().enumerate() {
        g_a += g * scale * img.data()[i];
        g_b += g;
        g_img.data_mut()[i] = g * scale;
    }
    (g_a, g_b, g_img)
}

/// Virtual camera trajectory across one exposure: geodesic between two
/// endpoint poses plus a learnable Lie-algebra correction per sub-frame.
/// Internally the end pose is stored as the relative tangent
/// `log(end * start^-1)` so that trajectory optimization can treat it as a
/// free vector.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualTrajectory {
    start: SE3Pose,
    rel: Tangent,
    corrections: Vec<Tangent>,
}

impl VirtualTrajectory {
    pub fn from_endpoints(start: SE3Pose, end: SE3Pose, n_sub: usize) -> Result<Self> {
        if n_sub == 0 {
            return Err(Error::InvalidArgument("n_sub must be >= 1".into()));
        }
        let rel = end.compose(&start.inverse()).log();
        Ok(VirtualTrajectory { start, rel, corrections: vec![[0.0; 6]; n_sub] })
    }

    /// Degenerate trajectory holding a single pose.
    pub fn stationary(pose: SE3Pose, n_sub: usize) -> Result<Self> {
        VirtualTrajectory::from_endpoints(pose, pose, n_sub)
    }

    pub fn n_sub(&self) -> usize {
        self.corrections.len()
    }

    pub fn start(&self) -> SE3Pose {
        self.start
    }

    pub fn end(&self) -> SE3Pose {
        SE3Pose::exp(&self.rel).compose(&self.start)
    }

    pub fn rel_tangent(&self) -> Tangent {
        self.rel
    }

    pub fn corrections(&self) -> &[Tangent] {
        &self.corrections
    }

    pub fn corrections_mut(&mut self) -> &mut [Tangent] {
        &mut self.corrections
    }

    pub fn set_rel_tangent(&mut self, rel: Tangent) {
        self.rel = rel;
    }

    /// Right-apply a tangent step to the start pose (the geodesic keeps its
    /// relative tangent, so the whole trajectory shifts).
    pub fn apply_start_step(&mut self, delta: &Tangent) {
        self.start = self.start.compose(&SE3Pose::exp(delta));
    }

    /// Interpolation parameter of sub-frame `k`: evenly spaced on `[0, 1]`
    /// for multiple sub-frames, the midpoint for a single one.
    pub fn subframe_u(&self, k: usize) -> f64 {
        let n = self.n_sub();
        if n == 1 {
            0.5
        } else {
            k as f64 / (n - 1) as f64
        }
    }

    /// Geodesic pose of sub-frame `k` before its correction.
    pub fn base_pose(&self, k: usize) -> SE3Pose {
        let u = self.subframe_u(k);
        let scaled = self.rel.map(|v| v * u);
        SE3Pose::exp(&scaled).compose(&self.start)
    }

    pub fn subframe_pose(&self, k: usize) -> SE3Pose {
        self.base_pose(k).compose(&SE3Pose::exp(&self.corrections[k]))
    }
}

/// Poses of all sub-frames: the geodesic sample composed with each
/// per-sub-frame correction.
pub fn interpolate_subframe_poses(vt: &VirtualTrajectory) -> Vec<SE3Pose> {
    (0..vt.n_sub()).map(|k| vt.subframe_pose(k)).collect()
}

/// Render every sub-frame, apply exposure and its blur proposal, and
/// average color and depth across sub-frames.
pub fn compose_subframe_blur(
    scene: &[Gaussian3D],
    cam: &Camera,
    vt: &VirtualTrajectory,
    proposals: &[BlurProposal],
    exposure: &ExposureParams,
) -> Result<(Image, Image)> {
    if proposals.len() != vt.n_sub() {
        return Err(Error::InvalidArgument(format!(
            "{} proposals for {} sub-frames",
            proposals.len(),
            vt.n_sub()
        )));
    }
    let n = vt.n_sub() as f64;
    let mut color_acc = Image::new(cam.width, cam.height, 3, ColorSpace::Linear);
    let mut depth_acc = Image::new(cam.width, cam.height, 1, ColorSpace::Linear);
    for k in 0..vt.n_sub() {
        let out = render(scene, cam, &vt.subframe_pose(k));
        let adjusted = apply_exposure(&out.color, exposure)?;
        let blurred_color = apply_blur_proposal(&adjusted, &out.depth, &proposals[k])?;
        let blurred_depth = apply_blur_proposal(&out.depth, &out.depth, &proposals[k])?;
        for (a, v) in color_acc.data_mut().iter_mut().zip(blurred_color.data()) {
            *a += v / n;
        }
        for (a, v) in depth_acc.data_mut().iter_mut().zip(blurred_depth.data()) {
            *a += v / n;
        }
    }
    Ok((color_acc, depth_acc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};

    fn random_linear(width: usize, height: usize, channels: usize, seed: u64) -> Image {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data = (0..width * height * channels).map(|_| rng.random::<f64>()).collect();
        Image::from_data(width, height, channels, ColorSpace::Linear, data).unwrap()
    }

    #[test]
    fn exposure_identity_and_doubling() {
        let img = random_linear(4, 4, 3, 1);
        let out = apply_exposure(&img, &ExposureParams::default()).unwrap();
        assert_eq!(out, img);
        let out =
            apply_exposure(&img, &ExposureParams::new(2.0f64.ln(), 0.0).unwrap()).unwrap();
        for (a, b) in out.data().iter().zip(img.data()) {
            assert_abs_diff_eq!(*a, 2.0 * b, epsilon = 1e-12);
        }
    }

    #[test]
    fn exposure_matches_elementwise_oracle() {
        let img = random_linear(5, 3, 3, 2);
        let e = ExposureParams::new(0.37, -0.12).unwrap();
        let out = apply_exposure(&img, &e).unwrap();
        for (a, b) in out.data().iter().zip(img.data()) {
            assert_abs_diff_eq!(*a, 0.37f64.exp() * b - 0.12, epsilon = 1e-12);
        }
    }

    #[test]
    fn exposure_backward_matches_finite_differences() {
        let img = random_linear(4, 3, 3, 3);
        let e = ExposureParams::new(0.2, 0.05).unwrap();
        let g_out = random_linear(4, 3, 3, 4);
        let loss = |e: &ExposureParams| -> f64 {
            apply_exposure(&img, e)
                .unwrap()
                .data()
                .iter()
                .zip(g_out.data())
                .map(|(v, g)| v * g)
                .sum()
        };
        let (g_a, g_b, g_img) = apply_exposure_backward(&img, &e, &g_out);
        let h = 1e-6;
        let fd_a = (loss(&ExposureParams::new(e.log_scale + h, e.offset).unwrap())
            - loss(&ExposureParams::new(e.log_scale - h, e.offset).unwrap()))
            / (2.0 * h);
        let fd_b = (loss(&ExposureParams::new(e.log_scale, e.offset + h).unwrap())
            - loss(&ExposureParams::new(e.log_scale, e.offset - h).unwrap()))
            / (2.0 * h);
        assert_abs_diff_eq!(g_a, fd_a, epsilon = 1e-6);
        assert_abs_diff_eq!(g_b, fd_b, epsilon = 1e-6);
        for (i, g) in g_img.data().iter().enumerate() {
            assert_abs_diff_eq!(*g, g_out.data()[i] * e.log_scale.exp(), epsilon = 1e-12);
        }
    }

    #[test]
    fn subframe_poses_hit_endpoints() {
        let start = SE3Pose::from_translation(0.0, 0.0, 0.0);
        let end = SE3Pose::from_translation(1.0, 2.0, 3.0);
        let vt = VirtualTrajectory::from_endpoints(start, end, 2).unwrap();
        let poses = interpolate_subframe_poses(&vt);
        assert_abs_diff_eq!(poses[0].translation(), start.translation(), epsilon = 1e-12);
        assert_abs_diff_eq!(poses[1].translation(), end.translation(), epsilon = 1e-12);
    }

    #[test]
    fn subframe_midpoint_is_arithmetic_mean_for_translation() {
        let start = SE3Pose::from_translation(1.0, 0.0, -1.0);
        let end = SE3Pose::from_translation(3.0, 4.0, 1.0);
        let vt = VirtualTrajectory::from_endpoints(start, end, 3).unwrap();
        let poses = interpolate_subframe_poses(&vt);
        assert_abs_diff_eq!(poses[1].translation(), Vector3::new(2.0, 2.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn subframe_midpoint_matches_slerp_for_rotation() {
        let start = SE3Pose::identity();
        let end = SE3Pose::from_parts(
            nalgebra::UnitQuaternion::from_scaled_axis(Vector3::new(
                0.0,
                0.0,
                std::f64::consts::FRAC_PI_2,
            )),
            Vector3::zeros(),
        );
        let vt = VirtualTrajectory::from_endpoints(start, end, 3).unwrap();
        let mid = interpolate_subframe_poses(&vt)[1];
        let slerped = start.rotation().slerp(&end.rotation(), 0.5);
        assert!(mid.rotation().angle_to(&slerped) < 1e-6);
    }

    #[test]
    fn single_subframe_sits_at_midpoint() {
        let start = SE3Pose::from_translation(0.0, 0.0, 0.0);
        let end = SE3Pose::from_translation(2.0, 0.0, 0.0);
        let vt = VirtualTrajectory::from_endpoints(start, end, 1).unwrap();
        let poses = interpolate_subframe_poses(&vt);
        assert_eq!(poses.len(), 1);
        assert_abs_diff_eq!(poses[0].translation(), Vector3::new(1.0, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn endpoints_round_trip_through_rel_tangent() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let start = SE3Pose::exp(&std::array::from_fn(|_| rng.random::<f64>() - 0.5));
        let end = SE3Pose::exp(&std::array::from_fn(|_| rng.random::<f64>() - 0.5));
        let vt = VirtualTrajectory::from_endpoints(start, end, 3).unwrap();
        assert_abs_diff_eq!(vt.end().translation(), end.translation(), epsilon = 1e-10);
        assert!(vt.end().rotation().angle_to(&end.rotation()) < 1e-10);
    }

    fn small_scene(rng: &mut impl Rng) -> Vec<Gaussian3D> {
        (0..4)
            .map(|_| {
                Gaussian3D::isotropic(
                    Vector3::new(
                        rng.random::<f64>() * 0.8 - 0.4,
                        rng.random::<f64>() * 0.8 - 0.4,
                        2.0 + rng.random::<f64>(),
                    ),
                    0.15,
                    0.5,
                    [rng.random(), rng.random(), rng.random()],
                )
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn compose_single_subframe_reduces_to_plain_render() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let scene = small_scene(&mut rng);
        let cam = Camera::new(12.0, 12.0, 6.0, 6.0, 12, 12).unwrap();
        let pose = SE3Pose::from_translation(0.05, 0.0, -0.1);
        let vt = VirtualTrajectory::stationary(pose, 1).unwrap();
        let mut bp = BlurProposal::new(12, 12, 3, 4).unwrap();
        for l in bp.mask_logits_mut() {
            *l = -40.0; // mask ~ 0: proposal is the identity
        }
        let (color, depth) =
            compose_subframe_blur(&scene, &cam, &vt, &[bp], &ExposureParams::default()).unwrap();
        let direct = render(&scene, &cam, &pose);
        for (a, b) in color.data().iter().zip(direct.color.data()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        for (a, b) in depth.data().iter().zip(direct.depth.data()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn compose_identical_subposes_equals_single_frame() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let scene = small_scene(&mut rng);
        let cam = Camera::new(12.0, 12.0, 6.0, 6.0, 12, 12).unwrap();
        let pose = SE3Pose::identity();
        let vt = VirtualTrajectory::stationary(pose, 3).unwrap();
        let bp = BlurProposal::new(12, 12, 3, 4).unwrap();
        let e = ExposureParams::new(0.1, 0.02).unwrap();
        let (color, _) =
            compose_subframe_blur(&scene, &cam, &vt, &[bp.clone(), bp.clone(), bp.clone()], &e)
                .unwrap();
        let r = render(&scene, &cam, &pose);
        let adjusted = apply_exposure(&r.color, &e).unwrap();
        let single = apply_blur_proposal(&adjusted, &r.depth, &bp).unwrap();
        for (a, b) in color.data().iter().zip(single.data()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn compose_matches_bruteforce_average_and_permutation_invariance() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let scene = small_scene(&mut rng);
        let cam = Camera::new(12.0, 12.0, 6.0, 6.0, 12, 12).unwrap();
        let mut vt = VirtualTrajectory::from_endpoints(
            SE3Pose::from_translation(-0.05, 0.0, 0.0),
            SE3Pose::from_translation(0.05, 0.02, 0.0),
            3,
        )
        .unwrap();
        for c in vt.corrections_mut() {
            for v in c.iter_mut() {
                *v = (rng.random::<f64>() - 0.5) * 0.02;
            }
        }
        let mut bps = Vec::new();
        for _ in 0..3 {
            let mut bp = BlurProposal::new(12, 12, 3, 4).unwrap();
            for l in bp.kernel_logits_mut() {
                *l = rng.random::<f64>() - 0.5;
            }
            for l in bp.mask_logits_mut() {
                *l = rng.random::<f64>() - 0.5;
            }
            bps.push(bp);
        }
        let e = ExposureParams::new(-0.05, 0.01).unwrap();
        let (color, depth) = compose_subframe_blur(&scene, &cam, &vt, &bps, &e).unwrap();

        // Straight-line oracle: render each sub-pose, process, average.
        let mut oracle_c = Image::new(12, 12, 3, ColorSpace::Linear);
        let mut oracle_d = Image::new(12, 12, 1, ColorSpace::Linear);
        for k in 0..3 {
            let r = render(&scene, &cam, &vt.subframe_pose(k));
            let adj = apply_exposure(&r.color, &e).unwrap();
            let bc = apply_blur_proposal(&adj, &r.depth, &bps[k]).unwrap();
            let bd = apply_blur_proposal(&r.depth, &r.depth, &bps[k]).unwrap();
            for (a, v) in oracle_c.data_mut().iter_mut().zip(bc.data()) {
                *a += v / 3.0;
            }
            for (a, v) in oracle_d.data_mut().iter_mut().zip(bd.data()) {
                *a += v / 3.0;
            }
        }
        for (a, b) in color.data().iter().zip(oracle_c.data()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        for (a, b) in depth.data().iter().zip(oracle_d.data()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }

        // Reversing the sub-frame order (swapped endpoints, mirrored
        // corrections, permuted proposals) leaves the average unchanged.
        let n = vt.n_sub();
        let mut vt_rev = VirtualTrajectory::from_endpoints(vt.end(), vt.start(), n).unwrap();
        for k in 0..n {
            vt_rev.corrections_mut()[k] = vt.corrections()[n - 1 - k];
        }
        let bps_rev: Vec<BlurProposal> = bps.iter().rev().cloned().collect();
        let (color_rev, _) =
            compose_subframe_blur(&scene, &cam, &vt_rev, &bps_rev, &e).unwrap();
        for (a, b) in color.data().iter().zip(color_rev.data()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
    }
}

//! Forward alpha-composited splatting and its exact reverse-mode
//! derivatives.
//!
//! The backward pass differentiates the rendering contract as implemented:
//! the depth sort is treated as piecewise constant, the alpha clamp has
//! zero gradient in the clamped region, and contributions skipped in the
//! forward pass receive no gradient.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use super::{
    blank_output, normalize_quat, rotation_matrix_from_quat, Camera, Gaussian3D, RenderOutput,
    COV2D_FLOOR, NEAR_PLANE,
};
use crate::imaging::Image;
use crate::se3::SE3Pose;

/// Alpha ceiling per splat.
const ALPHA_MAX: f64 = 0.99;
/// Contributions below this alpha are skipped entirely.
const ALPHA_SKIP: f64 = 1e-12;
/// Front-to-back accumulation stops once transmittance drops below this.
const TRANSMITTANCE_MIN: f64 = 1e-4;
/// Pixel-radius multiplier on sqrt(lambda_max); chosen so the density at
/// the box edge is below ALPHA_SKIP.
const BBOX_SIGMA: f64 = 7.5;

struct Splat {
    gauss_idx: usize,
    mean2d: Vector2<f64>,
    minv: Matrix2<f64>,
    depth: f64,
    opacity: f64,
    color: [f64; 3],
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
}

struct Frame {
    w: Matrix3<f64>,
    cam_translation: Vector3<f64>,
    splats: Vec<Splat>,
    // Per-splat intermediates needed by the projection backward.
    t_cam: Vec<Vector3<f64>>,
}

fn prepare(scene: &[Gaussian3D], cam: &Camera, pose: &SE3Pose) -> Frame {
    let w = pose.rotation_matrix().transpose();
    let p = pose.translation();
    let mut splats = Vec::new();
    let mut t_cam = Vec::new();
    for (gauss_idx, g) in scene.iter().enumerate() {
        let t = w * (g.mean - p);
        if t.z <= NEAR_PLANE {
            continue;
        }
        let mean2d =
            Vector2::new(cam.fx * t.x / t.z + cam.cx, cam.fy * t.y / t.z + cam.cy);
        let j = pinhole_jacobian(cam, &t);
        let rs = rotation_matrix_from_quat(&normalize_quat(&g.rotation))
            * Matrix3::from_diagonal(&g.scale);
        let sigma = rs * rs.transpose();
        let pm = j * w;
        let mut cov = pm * sigma * pm.transpose();
        cov[(0, 0)] += COV2D_FLOOR;
        cov[(1, 1)] += COV2D_FLOOR;
        let det = cov[(0, 0)] * cov[(1, 1)] - cov[(0, 1)] * cov[(1, 0)];
        if det <= 0.0 {
            continue;
        }
        let minv = Matrix2::new(cov[(1, 1)], -cov[(0, 1)], -cov[(1, 0)], cov[(0, 0)]) / det;
        let mid = 0.5 * (cov[(0, 0)] + cov[(1, 1)]);
        let half = (0.25 * (cov[(0, 0)] - cov[(1, 1)]).powi(2) + cov[(0, 1)].powi(2)).sqrt();
        let radius = BBOX_SIGMA * (mid + half).max(0.0).sqrt();
        let x0 = (mean2d.x - radius).floor().max(0.0) as usize;
        let y0 = (mean2d.y - radius).floor().max(0.0) as usize;
        if mean2d.x + radius < 0.0
            || mean2d.y + radius < 0.0
            || x0 >= cam.width
            || y0 >= cam.height
        {
            continue;
        }
        let x1 = ((mean2d.x + radius).ceil() as usize).min(cam.width - 1);
        let y1 = ((mean2d.y + radius).ceil() as usize).min(cam.height - 1);
        splats.push(Splat {
            gauss_idx,
            mean2d,
            minv,
            depth: t.z,
            opacity: g.opacity,
            color: g.color,
            x0,
            x1,
            y0,
            y1,
        });
        t_cam.push(t);
    }
    // Depth-ascending order; ties broken by index for determinism.
    let mut order: Vec<usize> = (0..splats.len()).collect();
    order.sort_by(|&a, &b| {
        splats[a]
            .depth
            .partial_cmp(&splats[b].depth)
            .unwrap()
            .then(splats[a].gauss_idx.cmp(&splats[b].gauss_idx))
    });
    let mut sorted = Vec::with_capacity(splats.len());
    let mut sorted_t = Vec::with_capacity(splats.len());
    for i in order {
        sorted_t.push(t_cam[i]);
        sorted.push(Splat { ..splats[i].take() });
    }
    Frame { w, cam_translation: p, splats: sorted, t_cam: sorted_t }
}

impl Splat {
    fn take(&self) -> Splat {
        Splat {
            gauss_idx: self.gauss_idx,
            mean2d: self.mean2d,
            minv: self.minv,
            depth: self.depth,
            opacity: self.opacity,
            color: self.color,
            x0: self.x0,
            x1: self.x1,
            y0: self.y0,
            y1: self.y1,
        }
    }

    #[inline]
    fn alpha_at(&self, px: f64, py: f64) -> f64 {
        let d = Vector2::new(px - self.mean2d.x, py - self.mean2d.y);
        let power = -0.5 * (d.transpose() * self.minv * d)[0];
        (self.opacity * power.exp()).min(ALPHA_MAX)
    }
}

fn pinhole_jacobian(cam: &Camera, t: &Vector3<f64>) -> Matrix2x3<f64> {
    Matrix2x3::new(
        cam.fx / t.z,
        0.0,
        -cam.fx * t.x / (t.z * t.z),
        0.0,
        cam.fy / t.z,
        -cam.fy * t.y / (t.z * t.z),
    )
}

/// Render the scene front to back. Background is black with zero depth and
/// zero alpha; per-splat alpha is clamped to 0.99 and accumulation stops
/// once transmittance falls below 1e-4.
pub fn render(scene: &[Gaussian3D], cam: &Camera, pose: &SE3Pose) -> RenderOutput {
    let frame = prepare(scene, cam, pose);
    let mut out = blank_output(cam);
    for y in 0..cam.height {
        for x in 0..cam.width {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut transmittance = 1.0;
            let mut color = [0.0f64; 3];
            let mut depth = 0.0f64;
            let mut alpha_acc = 0.0f64;
            for s in &frame.splats {
                if x < s.x0 || x > s.x1 || y < s.y0 || y > s.y1 {
                    continue;
                }
                let alpha = s.alpha_at(px, py);
                if alpha < ALPHA_SKIP {
                    continue;
                }
                let wgt = alpha * transmittance;
                for c in 0..3 {
                    color[c] += s.color[c] * wgt;
                }
                depth += s.depth * wgt;
                alpha_acc += wgt;
                transmittance *= 1.0 - alpha;
                if transmittance < TRANSMITTANCE_MIN {
                    break;
                }
            }
            for c in 0..3 {
                out.color.set(x, y, c, color[c]);
            }
            out.depth.set(x, y, 0, depth);
            out.alpha.set(x, y, 0, alpha_acc);
        }
    }
    out
}

/// Per-pixel adjoints fed into the backward pass. Missing channels are
/// treated as zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct RenderAdjoint<'a> {
    pub color: Option<&'a Image>,
    pub depth: Option<&'a Image>,
}

/// Gradient of the loss with respect to one Gaussian's parameters.
#[derive(Debug, Clone, Copy, Default)]
pub struct GaussianGrad {
    pub mean: Vector3<f64>,
    pub rotation: [f64; 4],
    pub scale: Vector3<f64>,
    pub opacity: f64,
    pub color: [f64; 3],
}

/// Gradients of the rendering with respect to the scene and the pose. The
/// pose gradient is reported against the raw rotation-matrix entries and
/// the translation vector; callers chain it onto whatever pose
/// parameterization they optimize.
#[derive(Debug, Clone)]
pub struct RenderGradients {
    pub gaussians: Vec<GaussianGrad>,
    pub pose_rotation: Matrix3<f64>,
    pub pose_translation: Vector3<f64>,
}

impl RenderGradients {
    pub fn zeros(n: usize) -> Self {
        RenderGradients {
            gaussians: vec![GaussianGrad::default(); n],
            pose_rotation: Matrix3::zeros(),
            pose_translation: Vector3::zeros(),
        }
    }

    pub fn add_scaled(&mut self, other: &RenderGradients, s: f64) {
        for (a, b) in self.gaussians.iter_mut().zip(&other.gaussians) {
            a.mean += b.mean * s;
            for k in 0..4 {
                a.rotation[k] += b.rotation[k] * s;
            }
            a.scale += b.scale * s;
            a.opacity += b.opacity * s;
            for k in 0..3 {
                a.color[k] += b.color[k] * s;
            }
        }
        self.pose_rotation += other.pose_rotation * s;
        self.pose_translation += other.pose_translation * s;
    }
}

#[derive(Clone, Copy, Default)]
struct SplatAcc {
    mean2d: Vector2<f64>,
    // dL/d(inverse covariance), accumulated; converted to dL/dcov once.
    minv: Matrix2<f64>,
    depth: f64,
    opacity: f64,
    color: [f64; 3],
}

/// Reverse-mode derivatives of [`render`] for the given upstream adjoints.
pub fn render_gradients(
    scene: &[Gaussian3D],
    cam: &Camera,
    pose: &SE3Pose,
    adjoint: RenderAdjoint<'_>,
) -> RenderGradients {
    let frame = prepare(scene, cam, pose);
    let mut grads = RenderGradients::zeros(scene.len());
    if frame.splats.is_empty() {
        return grads;
    }
    let mut acc = vec![SplatAcc::default(); frame.splats.len()];

    for y in 0..cam.height {
        for x in 0..cam.width {
            let gc = match adjoint.color {
                Some(img) => [img.get(x, y, 0), img.get(x, y, 1), img.get(x, y, 2)],
                None => [0.0; 3],
            };
            let gd = adjoint.depth.map_or(0.0, |img| img.get(x, y, 0));
            if gc == [0.0; 3] && gd == 0.0 {
                continue;
            }
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);

            // Replay the forward pass to get the pixel totals under the
            // same skip / clamp / early-out decisions.
            let mut c_tot = [0.0f64; 3];
            let mut d_tot = 0.0f64;
            {
                let mut transmittance = 1.0;
                for s in &frame.splats {
                    if x < s.x0 || x > s.x1 || y < s.y0 || y > s.y1 {
                        continue;
                    }
                    let alpha = s.alpha_at(px, py);
                    if alpha < ALPHA_SKIP {
                        continue;
                    }
                    let wgt = alpha * transmittance;
                    for c in 0..3 {
                        c_tot[c] += s.color[c] * wgt;
                    }
                    d_tot += s.depth * wgt;
                    transmittance *= 1.0 - alpha;
                    if transmittance < TRANSMITTANCE_MIN {
                        break;
                    }
                }
            }

            // Second pass: accumulate adjoints using running prefix sums.
            let mut transmittance = 1.0;
            let mut c_run = [0.0f64; 3];
            let mut d_run = 0.0f64;
            for (si, s) in frame.splats.iter().enumerate() {
                if x < s.x0 || x > s.x1 || y < s.y0 || y > s.y1 {
                    continue;
                }
                let d = Vector2::new(px - s.mean2d.x, py - s.mean2d.y);
                let md = s.minv * d;
                let power = -0.5 * d.dot(&md);
                let gaussian = power.exp();
                let raw_alpha = s.opacity * gaussian;
                let clamped = raw_alpha > ALPHA_MAX;
                let alpha = raw_alpha.min(ALPHA_MAX);
                if alpha < ALPHA_SKIP {
                    continue;
                }
                let wgt = alpha * transmittance;
                for c in 0..3 {
                    c_run[c] += s.color[c] * wgt;
                }
                d_run += s.depth * wgt;

                let a = &mut acc[si];
                // Color is linear in the compositing weight.
                for c in 0..3 {
                    a.color[c] += gc[c] * wgt;
                }
                // Depth channel contributes to the splat's camera depth.
                a.depth += gd * wgt;

                // d(pixel)/d(alpha_i): own term minus the suffix scaled by
                // the lost transmittance.
                let inv_keep = 1.0 / (1.0 - alpha);
                let mut g_alpha = 0.0;
                for c in 0..3 {
                    g_alpha += gc[c] * (s.color[c] * transmittance - (c_tot[c] - c_run[c]) * inv_keep);
                }
                g_alpha += gd * (s.depth * transmittance - (d_tot - d_run) * inv_keep);

                if !clamped {
                    a.opacity += g_alpha * gaussian;
                    let g_power = g_alpha * s.opacity * gaussian;
                    // power = -1/2 d^T M d with d = pixel - mean2d.
                    a.mean2d += md * g_power;
                    let outer = d * d.transpose();
                    a.minv += outer * (-0.5 * g_power);
                }

                transmittance *= 1.0 - alpha;
                if transmittance < TRANSMITTANCE_MIN {
                    break;
                }
            }
        }
    }

    // Projection backward, one pass per visible splat.
    let w = frame.w;
    let p = frame.cam_translation;
    for (si, s) in frame.splats.iter().enumerate() {
        let a = acc[si];
        let g = &scene[s.gauss_idx];
        let t = frame.t_cam[si];
        let (tx, ty, tz) = (t.x, t.y, t.z);

        // dL/dM -> dL/dcov via M = cov^-1.
        let g_minv = 0.5 * (a.minv + a.minv.transpose());
        let g_cov = -(s.minv * g_minv * s.minv);

        let j = pinhole_jacobian(cam, &t);
        let pm = j * w;
        let rot = rotation_matrix_from_quat(&normalize_quat(&g.rotation));
        let rs = rot * Matrix3::from_diagonal(&g.scale);
        let sigma = rs * rs.transpose();

        let g_sigma = pm.transpose() * g_cov * pm;
        let g_pm = 2.0 * g_cov * pm * sigma;
        let g_j = g_pm * w.transpose();
        let mut g_w = j.transpose() * g_pm;

        // Mean path: mean2d = (fx tx / tz + cx, fy ty / tz + cy).
        let mut g_t = j.transpose() * a.mean2d;
        // Jacobian entries depend on t as well.
        let tz2 = tz * tz;
        let tz3 = tz2 * tz;
        g_t.x += g_j[(0, 2)] * (-cam.fx / tz2);
        g_t.y += g_j[(1, 2)] * (-cam.fy / tz2);
        g_t.z += g_j[(0, 0)] * (-cam.fx / tz2)
            + g_j[(1, 1)] * (-cam.fy / tz2)
            + g_j[(0, 2)] * (2.0 * cam.fx * tx / tz3)
            + g_j[(1, 2)] * (2.0 * cam.fy * ty / tz3);
        // Composited depth is the camera-space z.
        g_t.z += a.depth;

        // t = W (mu - p).
        let gg = &mut grads.gaussians[s.gauss_idx];
        gg.mean += w.transpose() * g_t;
        g_w += g_t * (g.mean - p).transpose();
        grads.pose_translation += -(w.transpose() * g_t);

        // Sigma = (R S)(R S)^T.
        let g_rs = 2.0 * g_sigma * rs;
        let g_rot_mat = g_rs * Matrix3::from_diagonal(&g.scale);
        for k in 0..3 {
            gg.scale[k] += rot.column(k).dot(&g_rs.column(k));
        }
        let gq = quat_backward(&g.rotation, &g_rot_mat);
        for k in 0..4 {
            gg.rotation[k] += gq[k];
        }

        gg.opacity += a.opacity;
        for c in 0..3 {
            gg.color[c] += a.color[c];
        }

        // W = R_pose^T.
        grads.pose_rotation += g_w.transpose();
    }
    grads
}

/// Chain a rotation-matrix gradient back to the raw (unnormalized)
/// quaternion components, including the normalization Jacobian.
fn quat_backward(q_raw: &[f64; 4], g_rot: &Matrix3<f64>) -> [f64; 4] {
    let norm = q_raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    let q = normalize_quat(q_raw);
    let [w, x, y, z] = q;
    let dr_dq = [
        // dR/dw
        Matrix3::new(0.0, -z, y, z, 0.0, -x, -y, x, 0.0) * 2.0,
        // dR/dx
        Matrix3::new(0.0, y, z, y, -2.0 * x, -w, z, w, -2.0 * x) * 2.0,
        // dR/dy
        Matrix3::new(-2.0 * y, x, w, x, 0.0, z, -w, z, -2.0 * y) * 2.0,
        // dR/dz
        Matrix3::new(-2.0 * z, -w, x, w, -2.0 * z, y, x, y, 0.0) * 2.0,
    ];
    let mut g_unit = [0.0f64; 4];
    for k in 0..4 {
        g_unit[k] = g_rot.component_mul(&dr_dq[k]).sum();
    }
    let dot = q[0] * g_unit[0] + q[1] * g_unit[1] + q[2] * g_unit[2] + q[3] * g_unit[3];
    std::array::from_fn(|k| (g_unit[k] - q[k] * dot) / norm)
}

//! The 3D Gaussian map: primitives, pinhole projection, alpha-composited
//! rendering with analytic gradients, depth-driven deformation, and the
//! text scene format.

mod render;

pub use render::{render, render_gradients, GaussianGrad, RenderAdjoint, RenderGradients};

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::imaging::{ColorSpace, Image};
use crate::se3::SE3Pose;

/// One scene primitive: an anisotropic 3D Gaussian with opacity and
/// linear-RGB color. The rotation quaternion is stored in (w, x, y, z)
/// order and is normalized wherever the rotation matrix is formed, so
/// gradients flow through the normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian3D {
    pub mean: Vector3<f64>,
    pub rotation: [f64; 4],
    pub scale: Vector3<f64>,
    pub opacity: f64,
    pub color: [f64; 3],
}

impl Gaussian3D {
    pub fn new(
        mean: Vector3<f64>,
        rotation: [f64; 4],
        scale: Vector3<f64>,
        opacity: f64,
        color: [f64; 3],
    ) -> Result<Self> {
        if scale.iter().any(|s| *s <= 0.0 || !s.is_finite()) {
            return Err(Error::InvalidArgument(format!("scales must be positive, got {scale:?}")));
        }
        if !(0.0..=1.0).contains(&opacity) {
            return Err(Error::InvalidArgument(format!("opacity {opacity} outside [0, 1]")));
        }
        let norm = rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(Error::InvalidArgument("zero-norm rotation quaternion".into()));
        }
        Ok(Gaussian3D { mean, rotation, scale, opacity, color })
    }

    /// Axis-aligned isotropic Gaussian.
    pub fn isotropic(
        mean: Vector3<f64>,
        scale: f64,
        opacity: f64,
        color: [f64; 3],
    ) -> Result<Self> {
        Gaussian3D::new(mean, [1.0, 0.0, 0.0, 0.0], Vector3::repeat(scale), opacity, color)
    }

    /// Rotation matrix of the normalized quaternion.
    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        rotation_matrix_from_quat(&normalize_quat(&self.rotation))
    }

    /// Covariance `R diag(S^2) R^T`.
    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.rotation_matrix();
        let m = r * Matrix3::from_diagonal(&self.scale);
        m * m.transpose()
    }
}

pub(crate) fn normalize_quat(q: &[f64; 4]) -> [f64; 4] {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
}

/// Rotation matrix of a unit quaternion (w, x, y, z).
pub(crate) fn rotation_matrix_from_quat(q: &[f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = *q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Pinhole camera intrinsics in pixel units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        if fx <= 0.0 || fy <= 0.0 {
            return Err(Error::InvalidArgument("focal lengths must be positive".into()));
        }
        if cx < 0.0 || cx > width as f64 || cy < 0.0 || cy > height as f64 {
            return Err(Error::InvalidArgument("principal point outside image".into()));
        }
        Ok(Camera { fx, fy, cx, cy, width, height })
    }

    /// Intrinsics for rendering at `1/factor` resolution, consistent with
    /// block-mean downscaling of observations.
    pub fn downscaled(&self, factor: usize) -> Camera {
        let f = factor as f64;
        Camera {
            fx: self.fx / f,
            fy: self.fy / f,
            cx: self.cx / f,
            cy: self.cy / f,
            width: self.width.div_ceil(factor),
            height: self.height.div_ceil(factor),
        }
    }
}

/// Near plane in meters; Gaussians closer than this are culled.
pub const NEAR_PLANE: f64 = 0.01;

/// Anti-aliasing floor added to both diagonal entries of the projected
/// covariance, in squared pixels.
pub const COV2D_FLOOR: f64 = 0.3;

/// Result of projecting one Gaussian into a camera.
#[derive(Debug, Clone, Copy)]
pub struct Projection2D {
    pub mean2d: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    pub depth: f64,
}

/// Evaluate the unnormalized Gaussian density `exp(-1/2 (x-mu)^T Sigma^-1 (x-mu))`.
pub fn eval_gaussian(g: &Gaussian3D, x: &Vector3<f64>) -> Result<f64> {
    if g.scale.iter().any(|s| *s < 1e-9) {
        return Err(Error::SingularCovariance);
    }
    let r = g.rotation_matrix();
    let d_local = r.transpose() * (x - g.mean);
    let mut q = 0.0;
    for k in 0..3 {
        q += (d_local[k] / g.scale[k]) * (d_local[k] / g.scale[k]);
    }
    Ok((-0.5 * q).exp())
}

/// Project a Gaussian through a pinhole camera: first-order (Jacobian)
/// propagation of the covariance with the anti-aliasing floor added.
/// Returns `None` when the mean is behind the near plane.
pub fn project_gaussian(g: &Gaussian3D, cam: &Camera, pose: &SE3Pose) -> Option<Projection2D> {
    let w = pose.rotation_matrix().transpose();
    let t = w * (g.mean - pose.translation());
    if t.z <= NEAR_PLANE {
        return None;
    }
    let (tx, ty, tz) = (t.x, t.y, t.z);
    let mean2d = Vector2::new(cam.fx * tx / tz + cam.cx, cam.fy * ty / tz + cam.cy);
    let j = nalgebra::Matrix2x3::new(
        cam.fx / tz,
        0.0,
        -cam.fx * tx / (tz * tz),
        0.0,
        cam.fy / tz,
        -cam.fy * ty / (tz * tz),
    );
    let rs = g.rotation_matrix() * Matrix3::from_diagonal(&g.scale);
    let sigma = rs * rs.transpose();
    let p = j * w;
    let mut cov2d = p * sigma * p.transpose();
    cov2d[(0, 0)] += COV2D_FLOOR;
    cov2d[(1, 1)] += COV2D_FLOOR;
    Some(Projection2D { mean2d, cov2d, depth: tz })
}

/// Rendered color, alpha-weighted depth, and accumulated alpha.
#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub color: Image,
    pub depth: Image,
    pub alpha: Image,
}

/// Move Gaussian means radially from the keyframe's camera center to track
/// a depth-map update `d -> d'` read at each mean's projected pixel
/// (nearest neighbor). Gaussians projecting outside the maps, behind the
/// camera, or onto invalid (non-positive) depth are left unchanged.
pub fn deform_gaussians(
    scene: &[Gaussian3D],
    keyframe_pose: &SE3Pose,
    cam: &Camera,
    depth_old: &Image,
    depth_new: &Image,
) -> Result<Vec<Gaussian3D>> {
    if depth_old.width() != cam.width
        || depth_old.height() != cam.height
        || !depth_old.same_dims(depth_new)
        || depth_old.channels() != 1
    {
        return Err(Error::DimensionMismatch(
            cam.width,
            cam.height,
            depth_old.width(),
            depth_old.height(),
        ));
    }
    let t_k = keyframe_pose.translation();
    let w = keyframe_pose.rotation_matrix().transpose();
    let mut out = Vec::with_capacity(scene.len());
    for g in scene {
        let cam_pt = w * (g.mean - t_k);
        if cam_pt.z <= NEAR_PLANE {
            out.push(g.clone());
            continue;
        }
        let u = cam.fx * cam_pt.x / cam_pt.z + cam.cx;
        let v = cam.fy * cam_pt.y / cam_pt.z + cam.cy;
        let px = u.floor();
        let py = v.floor();
        if px < 0.0 || py < 0.0 || px >= cam.width as f64 || py >= cam.height as f64 {
            out.push(g.clone());
            continue;
        }
        let (px, py) = (px as usize, py as usize);
        let d = depth_old.get(px, py, 0);
        let d_new = depth_new.get(px, py, 0);
        if d <= 0.0 || d_new <= 0.0 {
            out.push(g.clone());
            continue;
        }
        let mut moved = g.clone();
        moved.mean = g.mean + (g.mean - t_k) * ((d_new - d) / d);
        out.push(moved);
    }
    Ok(out)
}

/// Seed one isotropic Gaussian per stride-sampled pixel with valid
/// (positive) depth: the mean is the back-projected point, the scale is
/// half a stride of pixel footprint at that depth, opacity 0.7, color from
/// the image.
pub fn seed_gaussians_from_depth(
    img: &Image,
    depth: &Image,
    cam: &Camera,
    pose: &SE3Pose,
    stride: usize,
) -> Result<Vec<Gaussian3D>> {
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be >= 1".into()));
    }
    if img.width() != cam.width || img.height() != cam.height || !depth.same_dims(img) {
        if depth.width() != img.width() || depth.height() != img.height() {
            return Err(Error::DimensionMismatch(
                img.width(),
                img.height(),
                depth.width(),
                depth.height(),
            ));
        }
    }
    let mut out = Vec::new();
    let mut y = stride / 2;
    while y < img.height() {
        let mut x = stride / 2;
        while x < img.width() {
            let d = depth.get(x, y, 0);
            if d > 0.0 {
                let u = x as f64 + 0.5;
                let v = y as f64 + 0.5;
                let cam_pt =
                    Vector3::new((u - cam.cx) / cam.fx * d, (v - cam.cy) / cam.fy * d, d);
                let mean = pose.transform_point(&cam_pt);
                let scale = d / cam.fx * stride as f64 / 2.0;
                let color = if img.channels() == 3 {
                    [img.get(x, y, 0), img.get(x, y, 1), img.get(x, y, 2)]
                } else {
                    let g = img.get(x, y, 0);
                    [g, g, g]
                };
                out.push(Gaussian3D::isotropic(mean, scale, 0.7, color)?);
            }
            x += stride;
        }
        y += stride;
    }
    Ok(out)
}

/// Serialize a scene to the text format: one Gaussian per line,
/// `mu_x mu_y mu_z qw qx qy qz sx sy sz opacity r g b`, `#` comments.
/// Floats are written with shortest round-trip precision.
pub fn scene_to_string(scene: &[Gaussian3D]) -> String {
    let mut s = String::new();
    s.push_str("# mu_x mu_y mu_z qw qx qy qz sx sy sz opacity r g b\n");
    for g in scene {
        let _ = writeln!(
            s,
            "{} {} {} {} {} {} {} {} {} {} {} {} {} {}",
            g.mean.x,
            g.mean.y,
            g.mean.z,
            g.rotation[0],
            g.rotation[1],
            g.rotation[2],
            g.rotation[3],
            g.scale.x,
            g.scale.y,
            g.scale.z,
            g.opacity,
            g.color[0],
            g.color[1],
            g.color[2],
        );
    }
    s
}

pub fn parse_scene(text: &str, origin: &Path) -> Result<Vec<Gaussian3D>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>().map_err(|_| Error::Parse {
                    path: origin.to_path_buf(),
                    message: format!("line {}: bad float {tok:?}", lineno + 1),
                })
            })
            .collect::<Result<_>>()?;
        if vals.len() != 14 {
            return Err(Error::Parse {
                path: origin.to_path_buf(),
                message: format!("line {}: expected 14 fields, got {}", lineno + 1, vals.len()),
            });
        }
        out.push(Gaussian3D::new(
            Vector3::new(vals[0], vals[1], vals[2]),
            [vals[3], vals[4], vals[5], vals[6]],
            Vector3::new(vals[7], vals[8], vals[9]),
            vals[10],
            [vals[11], vals[12], vals[13]],
        )?);
    }
    Ok(out)
}

pub fn save_scene(scene: &[Gaussian3D], path: &Path) -> Result<()> {
    std::fs::write(path, scene_to_string(scene))
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn load_scene(path: &Path) -> Result<Vec<Gaussian3D>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_scene(&text, path)
}

/// Empty render target helper.
pub(crate) fn blank_output(cam: &Camera) -> RenderOutput {
    RenderOutput {
        color: Image::new(cam.width, cam.height, 3, ColorSpace::Linear),
        depth: Image::new(cam.width, cam.height, 1, ColorSpace::Linear),
        alpha: Image::new(cam.width, cam.height, 1, ColorSpace::Linear),
    }
}

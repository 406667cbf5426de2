//! Perspective projection and reference-frame camera fitting.
//!
//! A camera is a general 3×3 matrix applied to camera-space joints followed
//! by the perspective divide, plus an optional pixel offset. Fitting
//! minimizes the mean squared reprojection error of the first driving frame
//! against the reference 2D keypoints with Levenberg–Marquardt.

use nalgebra::{DMatrix, DVector, Matrix3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{Keypoints2D, PoseFrame, Vec2, Vec3};

/// Minimum number of joint correspondences accepted by the fit.
pub const MIN_CORRESPONDENCES: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "CameraRepr", into = "CameraRepr")]
pub struct CameraModel {
    pub matrix: Matrix3<f64>,
    pub pixel_offset: Vec2,
    pub image_size: (u32, u32),
}

#[derive(Serialize, Deserialize)]
struct CameraRepr {
    matrix: [[f64; 3]; 3],
    pixel_offset: [f64; 2],
    image_size: [u32; 2],
}

impl From<CameraRepr> for CameraModel {
    fn from(r: CameraRepr) -> Self {
        CameraModel {
            matrix: Matrix3::from_fn(|i, j| r.matrix[i][j]),
            pixel_offset: Vec2::new(r.pixel_offset[0], r.pixel_offset[1]),
            image_size: (r.image_size[0], r.image_size[1]),
        }
    }
}

impl From<CameraModel> for CameraRepr {
    fn from(c: CameraModel) -> Self {
        let m = &c.matrix;
        CameraRepr {
            matrix: [
                [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
                [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
                [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
            ],
            pixel_offset: [c.pixel_offset.x, c.pixel_offset.y],
            image_size: [c.image_size.0, c.image_size.1],
        }
    }
}

impl CameraModel {
    /// Pinhole camera `diag(f, f, 1)` with the principal point at `offset`.
    pub fn pinhole(focal: f64, offset: Vec2, image_size: (u32, u32)) -> Self {
        CameraModel {
            matrix: Matrix3::new(focal, 0.0, 0.0, 0.0, focal, 0.0, 0.0, 0.0, 1.0),
            pixel_offset: offset,
            image_size,
        }
    }

    /// Default camera for an image: focal length equal to the image width,
    /// principal point at the image center.
    pub fn for_image(width: u32, height: u32) -> Self {
        CameraModel::pinhole(
            width as f64,
            Vec2::new(width as f64 / 2.0, height as f64 / 2.0),
            (width, height),
        )
    }

    /// The same view rendered at another image size.
    pub fn resized(&self, width: u32, height: u32) -> Self {
        let (w, h) = self.image_size;
        if w == 0 || h == 0 || (w, h) == (width, height) {
            return CameraModel {
                image_size: (width, height),
                ..self.clone()
            };
        }
        let sx = width as f64 / w as f64;
        let sy = height as f64 / h as f64;
        let scale = Matrix3::new(sx, 0.0, 0.0, 0.0, sy, 0.0, 0.0, 0.0, 1.0);
        CameraModel {
            matrix: scale * self.matrix,
            pixel_offset: Vec2::new(self.pixel_offset.x * sx, self.pixel_offset.y * sy),
            image_size: (width, height),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.matrix.iter().all(|v| v.is_finite())
            && self.pixel_offset.iter().all(|v| v.is_finite())
            && self.matrix.determinant().abs() > 1e-12
    }

    pub fn project(&self, point: &Vec3) -> Result<Vec2> {
        let v = self.matrix * point;
        if !(v.z > 0.0) {
            return Err(Error::BehindCamera(v.z));
        }
        Ok(Vec2::new(v.x / v.z, v.y / v.z) + self.pixel_offset)
    }

    /// Direction of the viewing ray through pixel coordinate `pixel`.
    ///
    /// The ray starts at the camera center (the camera-space origin).
    pub fn ray_direction(&self, inverse: &Matrix3<f64>, pixel: Vec2) -> Vec3 {
        let p = pixel - self.pixel_offset;
        inverse * Vec3::new(p.x, p.y, 1.0)
    }

    pub fn inverse_matrix(&self) -> Result<Matrix3<f64>> {
        self.matrix
            .try_inverse()
            .ok_or_else(|| Error::Degenerate("camera matrix is singular".into()))
    }
}

/// Free function form of [`CameraModel::project`].
pub fn project(cam: &CameraModel, point: &Vec3) -> Result<Vec2> {
    cam.project(point)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub max_iterations: usize,
    /// Stop once an accepted step decreases the loss by less than this fraction.
    pub tolerance: f64,
    pub use_offset: bool,
    pub initial_lambda: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_iterations: 100,
            tolerance: 1e-8,
            use_offset: true,
            initial_lambda: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Mean squared reprojection error in px².
    pub final_loss: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Reprojection distance per joint in px; `None` where no correspondence exists.
    pub per_joint_residual: Vec<Option<f64>>,
    /// Loss after the initial guess and after every accepted step.
    pub loss_history: Vec<f64>,
}

struct Correspondence {
    joint: usize,
    point: Vec3,
    target: Vec2,
}

fn correspondences(frame: &PoseFrame, ref2d: &Keypoints2D) -> Result<Vec<Correspondence>> {
    let pairs: Vec<_> = (0..frame.len())
        .filter_map(|j| {
            let point = frame.joint(j)?;
            let target = ref2d.point(j)?;
            Some(Correspondence {
                joint: j,
                point,
                target,
            })
        })
        .collect();
    if pairs.len() < MIN_CORRESPONDENCES {
        return Err(Error::Underdetermined {
            found: pairs.len(),
            required: MIN_CORRESPONDENCES,
        });
    }
    Ok(pairs)
}

fn bbox_diagonal_and_centroid(points: impl Iterator<Item = Vec2> + Clone) -> (f64, Vec2) {
    let mut lo = Vec2::repeat(f64::INFINITY);
    let mut hi = Vec2::repeat(f64::NEG_INFINITY);
    let mut sum = Vec2::zeros();
    let mut count = 0usize;
    for p in points {
        lo = lo.inf(&p);
        hi = hi.sup(&p);
        sum += p;
        count += 1;
    }
    ((hi - lo).norm(), sum / count as f64)
}

/// Pinhole starting point for the fit: the focal length matches bounding-box
/// diagonals and the offset matches centroids.
pub fn initial_camera_guess(first_frame: &PoseFrame, ref2d: &Keypoints2D) -> Result<CameraModel> {
    let pairs = correspondences(first_frame, ref2d)?;
    let mut normalized = Vec::with_capacity(pairs.len());
    for c in &pairs {
        if !(c.point.z > 0.0) {
            return Err(Error::BehindCamera(c.point.z));
        }
        normalized.push(Vec2::new(c.point.x / c.point.z, c.point.y / c.point.z));
    }
    let (ref_diag, ref_centroid) = bbox_diagonal_and_centroid(pairs.iter().map(|c| c.target));
    let (unit_diag, unit_centroid) = bbox_diagonal_and_centroid(normalized.iter().copied());
    if !(ref_diag > 1e-9) {
        return Err(Error::Degenerate(
            "reference keypoints have a zero-size bounding box".into(),
        ));
    }
    if !(unit_diag > 1e-12) {
        return Err(Error::Degenerate(
            "3D joints project to a single point".into(),
        ));
    }
    let focal = ref_diag / unit_diag;
    let offset = ref_centroid - unit_centroid * focal;
    Ok(CameraModel::pinhole(focal, offset, (0, 0)))
}

struct Problem<'a> {
    pairs: &'a [Correspondence],
    use_offset: bool,
}

impl Problem<'_> {
    fn n_params(&self) -> usize {
        if self.use_offset {
            11
        } else {
            9
        }
    }

    fn to_params(&self, cam: &CameraModel) -> DVector<f64> {
        let mut p = DVector::zeros(self.n_params());
        for r in 0..3 {
            for c in 0..3 {
                p[r * 3 + c] = cam.matrix[(r, c)];
            }
        }
        if self.use_offset {
            p[9] = cam.pixel_offset.x;
            p[10] = cam.pixel_offset.y;
        }
        p
    }

    fn to_camera(&self, p: &DVector<f64>, template: &CameraModel) -> CameraModel {
        let matrix = Matrix3::from_fn(|r, c| p[r * 3 + c]);
        let pixel_offset = if self.use_offset {
            Vec2::new(p[9], p[10])
        } else {
            template.pixel_offset
        };
        CameraModel {
            matrix,
            pixel_offset,
            image_size: template.image_size,
        }
    }

    /// Mean squared reprojection error, or `None` if any joint lands at z <= 0.
    fn loss(&self, cam: &CameraModel) -> Option<f64> {
        let mut total = 0.0;
        for c in self.pairs {
            let projected = cam.project(&c.point).ok()?;
            total += (projected - c.target).norm_squared();
        }
        Some(total / self.pairs.len() as f64)
    }

    fn residuals_and_jacobian(&self, cam: &CameraModel) -> (DVector<f64>, DMatrix<f64>) {
        let k = self.pairs.len();
        let mut r = DVector::zeros(2 * k);
        let mut jac = DMatrix::zeros(2 * k, self.n_params());
        for (i, c) in self.pairs.iter().enumerate() {
            let v = cam.matrix * c.point;
            let inv_z = 1.0 / v.z;
            let (u, w) = (v.x * inv_z, v.y * inv_z);
            r[2 * i] = u + cam.pixel_offset.x - c.target.x;
            r[2 * i + 1] = w + cam.pixel_offset.y - c.target.y;
            for col in 0..3 {
                let x = c.point[col];
                jac[(2 * i, col)] = x * inv_z;
                jac[(2 * i, 6 + col)] = -u * x * inv_z;
                jac[(2 * i + 1, 3 + col)] = x * inv_z;
                jac[(2 * i + 1, 6 + col)] = -w * x * inv_z;
            }
            if self.use_offset {
                jac[(2 * i, 9)] = 1.0;
                jac[(2 * i + 1, 10)] = 1.0;
            }
        }
        (r, jac)
    }
}

/// Keeps the projective scale of the matrix fixed (unit-norm third row).
fn normalize_scale(cam: &mut CameraModel) {
    let norm = cam.matrix.row(2).norm();
    if norm > 0.0 && norm.is_finite() {
        cam.matrix /= norm;
    }
}

fn per_joint_residuals(cam: &CameraModel, pairs: &[Correspondence], n: usize) -> Vec<Option<f64>> {
    let mut out = vec![None; n];
    for c in pairs {
        out[c.joint] = cam.project(&c.point).ok().map(|p| (p - c.target).norm());
    }
    out
}

const ABSOLUTE_LOSS_FLOOR: f64 = 1e-24;
const MAX_LAMBDA: f64 = 1e16;

/// Fits the camera that maps `first_frame` onto `ref2d`, starting from
/// [`initial_camera_guess`].
pub fn fit_camera(
    first_frame: &PoseFrame,
    ref2d: &Keypoints2D,
    config: &FitConfig,
) -> Result<(CameraModel, FitReport)> {
    let start = initial_camera_guess(first_frame, ref2d)?;
    fit_camera_from(first_frame, ref2d, start, config)
}

/// Levenberg–Marquardt refinement from an explicit starting camera.
pub fn fit_camera_from(
    first_frame: &PoseFrame,
    ref2d: &Keypoints2D,
    start: CameraModel,
    config: &FitConfig,
) -> Result<(CameraModel, FitReport)> {
    if config.max_iterations == 0 || !(config.tolerance >= 0.0) || !(config.initial_lambda > 0.0) {
        return Err(Error::Config(format!(
            "invalid fit configuration {config:?}"
        )));
    }
    let pairs = correspondences(first_frame, ref2d)?;
    let problem = Problem {
        pairs: &pairs,
        use_offset: config.use_offset,
    };

    let mut cam = start;
    normalize_scale(&mut cam);
    let mut loss = problem.loss(&cam).ok_or_else(|| {
        Error::BehindCamera(
            pairs
                .iter()
                .map(|c| (cam.matrix * c.point).z)
                .fold(f64::INFINITY, f64::min),
        )
    })?;
    let mut history = vec![loss];
    let mut lambda = config.initial_lambda;
    let mut iterations = 0;
    let mut converged = loss <= ABSOLUTE_LOSS_FLOOR;

    while !converged && iterations < config.max_iterations {
        iterations += 1;
        let (r, jac) = problem.residuals_and_jacobian(&cam);
        let jtj = jac.transpose() * &jac;
        let gradient = jac.transpose() * &r;
        let max_diag = jtj.diagonal().max();
        let params = problem.to_params(&cam);

        let mut accepted = false;
        while lambda <= MAX_LAMBDA {
            let mut damped = jtj.clone();
            for i in 0..damped.nrows() {
                damped[(i, i)] += lambda * jtj[(i, i)].max(max_diag * 1e-12);
            }
            let Some(chol) = damped.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let step = chol.solve(&(-&gradient));
            let mut trial = problem.to_camera(&(&params + &step), &cam);
            normalize_scale(&mut trial);
            match problem.loss(&trial) {
                Some(trial_loss) if trial_loss < loss => {
                    let decrease = (loss - trial_loss) / loss;
                    cam = trial;
                    loss = trial_loss;
                    history.push(loss);
                    lambda = (lambda / 10.0).max(1e-12);
                    accepted = true;
                    if decrease < config.tolerance || loss <= ABSOLUTE_LOSS_FLOOR {
                        converged = true;
                    }
                    break;
                }
                _ => lambda *= 10.0,
            }
        }
        if !accepted {
            // No damped step improves the loss: stationary point.
            converged = true;
        }
    }

    let report = FitReport {
        final_loss: loss,
        iterations,
        converged,
        per_joint_residual: per_joint_residuals(&cam, &pairs, first_frame.len()),
        loss_history: history,
    };
    Ok((cam, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::KeypointKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_frame(rng: &mut impl Rng, n: usize) -> PoseFrame {
        PoseFrame::all_valid(
            (0..n)
                .map(|_| {
                    Vec3::new(
                        rng.gen_range(-800.0..800.0),
                        rng.gen_range(-900.0..900.0),
                        rng.gen_range(800.0..4000.0),
                    )
                })
                .collect(),
        )
    }

    fn project_all(cam: &CameraModel, frame: &PoseFrame) -> Keypoints2D {
        Keypoints2D::all_valid(
            KeypointKind::Body,
            frame
                .joints
                .iter()
                .map(|p| cam.project(p).unwrap())
                .collect(),
        )
    }

    #[test]
    fn project_on_axis_point() {
        let cam = CameraModel::pinhole(1.0, Vec2::zeros(), (0, 0));
        let p = cam.project(&Vec3::new(0.0, 0.0, 1000.0)).unwrap();
        assert_eq!(p, Vec2::zeros());
    }

    #[test]
    fn project_pinhole_formula() {
        let f = 640.0;
        let cam = CameraModel::pinhole(f, Vec2::zeros(), (0, 0));
        let (x, y, z) = (123.0, -45.0, 2500.0);
        let p = cam.project(&Vec3::new(x, y, z)).unwrap();
        assert!((p.x - f * x / z).abs() < 1e-12);
        assert!((p.y - f * y / z).abs() < 1e-12);
    }

    #[test]
    fn project_with_offset_hand_value() {
        let cam = CameraModel::pinhole(2.0, Vec2::new(256.0, 256.0), (512, 512));
        let p = cam.project(&Vec3::new(100.0, -50.0, 1000.0)).unwrap();
        assert!((p.x - 256.2).abs() < 1e-12);
        assert!((p.y - 255.9).abs() < 1e-12);
    }

    #[test]
    fn project_behind_camera_fails() {
        let cam = CameraModel::pinhole(800.0, Vec2::zeros(), (0, 0));
        assert!(matches!(
            cam.project(&Vec3::new(0.0, 0.0, -5.0)),
            Err(Error::BehindCamera(_))
        ));
        assert!(cam.project(&Vec3::new(1.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn fit_recovers_synthetic_camera() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let frame = random_frame(&mut rng, 24);
        let truth = CameraModel::pinhole(800.0, Vec2::new(256.0, 256.0), (512, 512));
        let ref2d = project_all(&truth, &frame);
        let (cam, report) = fit_camera(&frame, &ref2d, &FitConfig::default()).unwrap();
        assert!(report.final_loss < 1e-6, "{report:?}");
        for (p, target) in frame.joints.iter().zip(&ref2d.points) {
            assert!((cam.project(p).unwrap() - target).norm() < 1e-3);
        }
    }

    #[test]
    fn fit_at_optimum_stops_immediately() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let frame = random_frame(&mut rng, 24);
        let seed_ref = project_all(
            &CameraModel::pinhole(700.0, Vec2::new(300.0, 200.0), (0, 0)),
            &frame,
        );
        let guess = initial_camera_guess(&frame, &seed_ref).unwrap();
        let ref2d = project_all(&guess, &frame);
        let (_, report) = fit_camera(&frame, &ref2d, &FitConfig::default()).unwrap();
        assert!(report.iterations <= 2, "{report:?}");
        assert!(report.final_loss < 1e-12);
        assert!(report.converged);
    }

    #[test]
    fn fit_needs_four_correspondences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let frame = random_frame(&mut rng, 24);
        let mut ref2d = project_all(&CameraModel::for_image(512, 512), &frame);
        for v in ref2d.valid.iter_mut().skip(3) {
            *v = false;
        }
        assert!(matches!(
            fit_camera(&frame, &ref2d, &FitConfig::default()),
            Err(Error::Underdetermined { found: 3, .. })
        ));
    }

    #[test]
    fn loss_history_is_monotone_and_residuals_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let frame = random_frame(&mut rng, 24);
        let truth = CameraModel::pinhole(900.0, Vec2::new(200.0, 300.0), (0, 0));
        let mut ref2d = project_all(&truth, &frame);
        for p in ref2d.points.iter_mut() {
            p.x += rng.gen_range(-3.0..3.0);
            p.y += rng.gen_range(-3.0..3.0);
        }
        let (cam, report) = fit_camera(&frame, &ref2d, &FitConfig::default()).unwrap();
        assert!(report.loss_history.windows(2).all(|w| w[1] <= w[0]));
        for (j, res) in report.per_joint_residual.iter().enumerate() {
            let expected = (cam.project(&frame.joints[j]).unwrap() - ref2d.points[j]).norm();
            assert!((res.unwrap() - expected).abs() < 1e-9);
        }
        let mean_sq = report
            .per_joint_residual
            .iter()
            .map(|r| r.unwrap().powi(2))
            .sum::<f64>()
            / 24.0;
        assert!((mean_sq - report.final_loss).abs() < 1e-9 * report.final_loss.max(1.0));
    }

    #[test]
    fn initial_guess_matches_pinhole_focal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let frame = random_frame(&mut rng, 24);
            let f = rng.gen_range(400.0..1600.0);
            let truth = CameraModel::pinhole(f, Vec2::new(256.0, 256.0), (0, 0));
            let guess = initial_camera_guess(&frame, &project_all(&truth, &frame)).unwrap();
            let f0 = guess.matrix[(0, 0)];
            assert!((f0 - f).abs() / f < 0.2);
        }
    }

    #[test]
    fn initial_guess_rejects_point_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let frame = random_frame(&mut rng, 24);
        let ref2d = Keypoints2D::all_valid(KeypointKind::Body, vec![Vec2::new(10.0, 10.0); 24]);
        assert!(matches!(
            initial_camera_guess(&frame, &ref2d),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn initial_guess_focal_doubles_with_reference_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let frame = random_frame(&mut rng, 24);
        let ref2d = project_all(&CameraModel::for_image(640, 480), &frame);
        let centroid = ref2d.points.iter().sum::<Vec2>() / 24.0;
        let mut doubled = ref2d.clone();
        for p in doubled.points.iter_mut() {
            *p = centroid + (*p - centroid) * 2.0;
        }
        let f1 = initial_camera_guess(&frame, &ref2d).unwrap().matrix[(0, 0)];
        let f2 = initial_camera_guess(&frame, &doubled).unwrap().matrix[(0, 0)];
        assert!((f2 / f1 - 2.0).abs() < 1e-9);
    }

    #[test]
    fn fit_is_invariant_to_joint_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let frame = random_frame(&mut rng, 24);
        let truth = CameraModel::pinhole(750.0, Vec2::new(320.0, 240.0), (0, 0));
        let mut ref2d = project_all(&truth, &frame);
        for p in ref2d.points.iter_mut() {
            p.x += rng.gen_range(-2.0..2.0);
        }
        let perm: Vec<usize> = (0..24).rev().collect();
        let pframe = PoseFrame::all_valid(perm.iter().map(|&i| frame.joints[i]).collect());
        let pref = Keypoints2D::all_valid(
            KeypointKind::Body,
            perm.iter().map(|&i| ref2d.points[i]).collect(),
        );
        let (a, ra) = fit_camera(&frame, &ref2d, &FitConfig::default()).unwrap();
        let (b, rb) = fit_camera(&pframe, &pref, &FitConfig::default()).unwrap();
        assert!((ra.final_loss - rb.final_loss).abs() < 1e-6);
        for p in &frame.joints {
            assert!((a.project(p).unwrap() - b.project(p).unwrap()).norm() < 1e-3);
        }
    }

    #[test]
    fn resized_camera_scales_pixels() {
        let cam = CameraModel::for_image(640, 480);
        let half = cam.resized(320, 240);
        let p = Vec3::new(120.0, -80.0, 2500.0);
        let a = cam.project(&p).unwrap();
        let b = half.project(&p).unwrap();
        assert!((b - a * 0.5).norm() < 1e-12);
        assert_eq!(cam.resized(640, 480), cam);
    }
}

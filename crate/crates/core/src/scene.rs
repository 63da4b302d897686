//! Synthetic scenes with exact ray-cast depth, used as ground truth for
//! second views.
//!
//! A scene is a list of solid primitives placed in the world by rigid
//! transforms (local-to-world). Cameras are placed by camera-to-world poses.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::camera::{CameraIntrinsics, Pose};
use crate::datagen::{sample_pose, PoseSamplerConfig};
use crate::error::{Error, Result};
use crate::image::{DepthImage, PixelMask};
use crate::rng::DetRng;
use crate::warp::{dual_warp, warp_depth, ConsistencyTolerance, WarpConfig};

/// Axis-aligned box in its local frame, centered at the local origin.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxPrimitive {
    pub half_extents: Vector3<f64>,
    pub placement: Pose,
}

/// The plane `z = 0` of its local frame. Local `+z` is the visible side;
/// the half-space `z < 0` is solid.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanePrimitive {
    pub placement: Pose,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    Box(BoxPrimitive),
    Plane(PlanePrimitive),
}

impl Primitive {
    /// Box with full side lengths `size`, centered at `center`, rotated by
    /// `yaw` about the world y axis.
    pub fn cuboid(center: [f64; 3], size: [f64; 3], yaw: f64) -> Result<Self> {
        if size.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::invalid("box sides must be positive"));
        }
        Ok(Primitive::Box(BoxPrimitive {
            half_extents: Vector3::new(size[0], size[1], size[2]) / 2.0,
            placement: Pose::from_yaw_translation(yaw, center[0], center[1], center[2]),
        }))
    }

    /// Plane through `point` whose visible side faces along `normal`.
    pub fn plane(point: [f64; 3], normal: [f64; 3]) -> Result<Self> {
        let n = Vector3::new(normal[0], normal[1], normal[2]);
        let len = n.norm();
        if !(len > 0.0 && len.is_finite()) {
            return Err(Error::invalid("plane normal must be non-zero"));
        }
        let z = n / len;
        let helper = if z.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        let x = helper.cross(&z).normalize();
        let y = z.cross(&x);
        let r = nalgebra::Matrix3::from_columns(&[x, y, z]);
        Ok(Primitive::Plane(PlanePrimitive {
            placement: Pose::new(r, Vector3::new(point[0], point[1], point[2]))?,
        }))
    }

    pub fn placement(&self) -> &Pose {
        match self {
            Primitive::Box(b) => &b.placement,
            Primitive::Plane(p) => &p.placement,
        }
    }

    /// Smallest ray parameter `t > t_min` at which the ray hits the surface.
    fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, t_min: f64) -> Option<f64> {
        let inv = self.placement().inverse();
        let o = inv.transform_point(origin);
        let d = inv.rotation() * dir;
        match self {
            Primitive::Plane(_) => {
                if d.z == 0.0 {
                    return None;
                }
                let t = -o.z / d.z;
                (t > t_min).then_some(t)
            }
            Primitive::Box(b) => {
                let mut t0 = f64::NEG_INFINITY;
                let mut t1 = f64::INFINITY;
                for axis in 0..3 {
                    let h = b.half_extents[axis];
                    if d[axis] == 0.0 {
                        if o[axis].abs() > h {
                            return None;
                        }
                        continue;
                    }
                    let a = (-h - o[axis]) / d[axis];
                    let c = (h - o[axis]) / d[axis];
                    t0 = t0.max(a.min(c));
                    t1 = t1.min(a.max(c));
                }
                if t0 > t1 {
                    return None;
                }
                if t0 > t_min {
                    Some(t0)
                } else if t1 > t_min {
                    Some(t1)
                } else {
                    None
                }
            }
        }
    }

    /// Whether a world point lies strictly inside the solid.
    fn contains(&self, p: &Vector3<f64>) -> bool {
        let q = self.placement().inverse().transform_point(p);
        match self {
            Primitive::Plane(_) => q.z < 0.0,
            Primitive::Box(b) => (0..3).all(|i| q[i].abs() < b.half_extents[i]),
        }
    }
}

/// Axis-aligned world-space bounding box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    primitives: Vec<Primitive>,
    bounds: Bounds,
}

impl Scene {
    pub fn new(primitives: Vec<Primitive>, bounds: Bounds) -> Result<Self> {
        if primitives.is_empty() {
            return Err(Error::invalid("a scene needs at least one primitive"));
        }
        if (0..3).any(|i| bounds.min[i].is_nan() || bounds.max[i].is_nan() || bounds.min[i] > bounds.max[i]) {
            return Err(Error::invalid("scene bounds are inverted"));
        }
        Ok(Self { primitives, bounds })
    }

    pub fn primitives(&self) -> &[Primitive] {
        &self.primitives
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    /// Distance parameter of the first hit along `origin + t dir`.
    pub fn first_hit(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, t_min: f64) -> Option<f64> {
        self.primitives
            .iter()
            .filter_map(|p| p.intersect(origin, dir, t_min))
            .min_by(f64::total_cmp)
    }

    fn check_camera(&self, camera: &Pose) -> Result<()> {
        let c = camera.translation();
        if self.primitives.iter().any(|p| p.contains(c)) {
            return Err(Error::invalid(format!(
                "camera at ({:.3}, {:.3}, {:.3}) is inside a solid primitive",
                c.x, c.y, c.z
            )));
        }
        Ok(())
    }

    /// Renders z-depth through pixel centers from a camera-to-world pose.
    pub fn render_depth(&self, k: &CameraIntrinsics, camera: &Pose, width: usize, height: usize) -> Result<DepthImage> {
        self.check_camera(camera)?;
        let origin = *camera.translation();
        let mut data = Vec::with_capacity(width * height);
        for v in 0..height {
            for u in 0..width {
                // camera-frame ray with unit z, so the hit parameter is the z-depth
                let d_cam = k.unproject(u as f64, v as f64, 1.0);
                let dir = camera.rotation() * d_cam;
                let depth = self.first_hit(&origin, &dir, 0.0).map_or(0.0, |t| t as f32);
                data.push(if depth.is_finite() && depth > 0.0 { depth } else { 0.0 });
            }
        }
        DepthImage::new(width, height, data)
    }

    /// Whether the world point `p` is seen by a `width x height` camera at
    /// `camera`: it projects inside the frame, lies in front of the camera,
    /// and no surface is hit before it along the viewing ray.
    pub fn is_visible(&self, p: &Vector3<f64>, k: &CameraIntrinsics, camera: &Pose, width: usize, height: usize, eps: f64) -> bool {
        let local = camera.inverse().transform_point(p);
        if local.z.is_nan() || local.z <= 0.0 {
            return false;
        }
        let (u, v, _) = k.project(&local);
        if !(u > -0.5 && v > -0.5 && u < width as f64 - 0.5 && v < height as f64 - 0.5) {
            return false;
        }
        let dir = camera.rotation() * (local / local.z);
        match self.first_hit(camera.translation(), &dir, 0.0) {
            Some(t) => t >= local.z - eps * local.z.max(1.0),
            None => true,
        }
    }
}

/// Parameters of the randomized box-in-front-of-wall scenes.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSamplerConfig {
    pub min_boxes: usize,
    pub max_boxes: usize,
    pub side_range: (f64, f64),
    /// Distance of box centers in front of the back wall.
    pub wall_gap_range: (f64, f64),
    /// z of the back wall in world coordinates (cameras sit near the origin).
    pub wall_z: f64,
    pub lateral_range: f64,
    pub vertical_range: f64,
}

impl Default for SceneSamplerConfig {
    fn default() -> Self {
        Self {
            min_boxes: 3,
            max_boxes: 8,
            side_range: (0.3, 2.0),
            wall_gap_range: (1.0, 6.0),
            wall_z: 9.0,
            lateral_range: 3.0,
            vertical_range: 1.0,
        }
    }
}

/// Random scene for trial `index`: a back wall facing the origin plus
/// several yawed boxes in front of it.
pub fn random_scene(cfg: &SceneSamplerConfig, seed: u64, index: u64) -> Result<Scene> {
    let mut rng = DetRng::derived(seed, &[0x5ce7e, index]);
    let n = rng.int_inclusive(cfg.min_boxes as u64, cfg.max_boxes as u64) as usize;
    let mut primitives = vec![Primitive::plane([0.0, 0.0, cfg.wall_z], [0.0, 0.0, -1.0])?];
    for _ in 0..n {
        let size = [
            rng.uniform(cfg.side_range.0, cfg.side_range.1),
            rng.uniform(cfg.side_range.0, cfg.side_range.1),
            rng.uniform(cfg.side_range.0, cfg.side_range.1),
        ];
        let center = [
            rng.uniform(-cfg.lateral_range, cfg.lateral_range),
            rng.uniform(-cfg.vertical_range, cfg.vertical_range),
            cfg.wall_z - rng.uniform(cfg.wall_gap_range.0, cfg.wall_gap_range.1),
        ];
        let yaw = rng.uniform(-45f64.to_radians(), 45f64.to_radians());
        primitives.push(Primitive::cuboid(center, size, yaw)?);
    }
    let r = cfg.lateral_range + cfg.side_range.1;
    let bounds = Bounds {
        min: [-r, -cfg.vertical_range - cfg.side_range.1, -1.0],
        max: [r, cfg.vertical_range + cfg.side_range.1, cfg.wall_z],
    };
    Scene::new(primitives, bounds)
}

/// Outcome of one occlusion-containment check.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LemmaReport {
    /// Pixels of the (guarded) dual-warp occlusion outside the true occlusion.
    pub violations: usize,
    /// `|O ∖ Õ|`.
    pub occluded_dual: usize,
    /// `|O ∖ P^[O]|`.
    pub occluded_true: usize,
}

/// Full set of masks behind a [`LemmaReport`], for diagnostics.
#[derive(Clone, Debug)]
pub struct LemmaTrial {
    pub report: LemmaReport,
    pub original: DepthImage,
    pub second_view: DepthImage,
    /// `O ∖ Õ`
    pub dual_mask: PixelMask,
    /// `O ∖ P^[O]`
    pub true_mask: PixelMask,
    /// Pixels counted as violations.
    pub violation_mask: PixelMask,
}

/// Pixels of `original` whose surface point is absent from `warped`:
/// unknown there, or showing a different depth.
pub fn missing_from(original: &DepthImage, warped: &DepthImage, k: &CameraIntrinsics, tol: &ConsistencyTolerance) -> PixelMask {
    let width = original.width();
    let bits = warped
        .data()
        .iter()
        .enumerate()
        .map(|(i, &w)| original.data()[i] > 0.0 && !crate::warp::agrees_with(original, i % width, i / width, w, k, tol))
        .collect();
    PixelMask::from_raw_unchecked(original.width(), original.height(), bits)
}

/// Renders `O` and `P` from the oracle and checks `O ∖ Õ ⊆ O ∖ P^[O]`.
///
/// Point splatting moves occlusion boundaries by up to a pixel, so the
/// check runs with a one-pixel guard band: the dual-warp occlusion is eroded
/// and the true occlusion dilated (3x3) before testing containment. Any
/// violating region at least three pixels thick and more than one pixel away
/// from the true occlusion is still reported.
pub fn verify_lemma_trial(
    scene: &Scene,
    k: &CameraIntrinsics,
    pose_o: &Pose,
    pose_p: &Pose,
    width: usize,
    height: usize,
    cfg: &WarpConfig,
) -> Result<LemmaTrial> {
    let original = scene.render_depth(k, pose_o, width, height)?;
    let second_view = scene.render_depth(k, pose_p, width, height)?;
    // maps O-camera coordinates into P-camera coordinates
    let o_to_p = pose_p.inverse().compose(pose_o);
    let dual = dual_warp(&original, k, &o_to_p, cfg)?;
    let p_in_o = warp_depth(&second_view, k, &o_to_p.inverse(), cfg)?;
    let true_mask = missing_from(&original, &p_in_o, k, &cfg.consistency);
    let violation_mask = dual.mask.erode().difference(&true_mask.dilate())?;
    Ok(LemmaTrial {
        report: LemmaReport {
            violations: violation_mask.count(),
            occluded_dual: dual.mask.count(),
            occluded_true: true_mask.count(),
        },
        original,
        second_view,
        dual_mask: dual.mask,
        true_mask,
        violation_mask,
    })
}

pub fn verify_lemma(
    scene: &Scene,
    k: &CameraIntrinsics,
    pose_o: &Pose,
    pose_p: &Pose,
    width: usize,
    height: usize,
    cfg: &WarpConfig,
) -> Result<LemmaReport> {
    verify_lemma_trial(scene, k, pose_o, pose_p, width, height, cfg).map(|t| t.report)
}

/// Setup of a randomized lemma run: camera `O` at the world origin,
/// camera `P` drawn from the pose sampler, one random scene per trial.
#[derive(Clone, Debug, PartialEq)]
pub struct LemmaSuiteConfig {
    pub width: usize,
    pub height: usize,
    pub intrinsics: CameraIntrinsics,
    pub scenes: SceneSamplerConfig,
    /// The seed field is ignored; trials use the suite seed.
    pub poses: PoseSamplerConfig,
    pub warp: WarpConfig,
}

impl Default for LemmaSuiteConfig {
    fn default() -> Self {
        Self {
            width: 160,
            height: 120,
            intrinsics: CameraIntrinsics::centered(140.0, 160, 120).expect("valid default intrinsics"),
            scenes: SceneSamplerConfig::default(),
            poses: PoseSamplerConfig::default(),
            warp: WarpConfig::default(),
        }
    }
}

impl LemmaSuiteConfig {
    pub fn scene(&self, seed: u64, index: u64) -> Result<Scene> {
        random_scene(&self.scenes, seed, index)
    }

    pub fn second_pose(&self, seed: u64, index: u64) -> Pose {
        sample_pose(&PoseSamplerConfig { seed, ..self.poses }, index)
    }

    pub fn trial(&self, seed: u64, index: u64) -> Result<LemmaTrial> {
        let scene = self.scene(seed, index)?;
        let pose_p = self.second_pose(seed, index);
        verify_lemma_trial(&scene, &self.intrinsics, &Pose::identity(), &pose_p, self.width, self.height, &self.warp)
    }

    /// Runs `trials` trials in parallel; reports are in trial order.
    pub fn run(&self, trials: usize, seed: u64) -> Result<Vec<LemmaReport>> {
        (0..trials as u64).into_par_iter().map(|i| self.trial(seed, i).map(|t| t.report)).collect()
    }
}

/// Pixels of the view `O` rendered at `pose_o` whose surface point is
/// visible from `pose_p` according to exact ray casting.
pub fn oracle_visible_mask(
    scene: &Scene,
    original: &DepthImage,
    k: &CameraIntrinsics,
    pose_o: &Pose,
    pose_p: &Pose,
) -> PixelMask {
    let (w, h) = (original.width(), original.height());
    let bits = (0..h)
        .flat_map(|v| (0..w).map(move |u| (u, v)))
        .map(|(u, v)| {
            let s = original.get(u, v);
            if s <= 0.0 {
                return false;
            }
            let world = pose_o.transform_point(&k.unproject(u as f64, v as f64, s as f64));
            scene.is_visible(&world, k, pose_p, w, h, 1e-4)
        })
        .collect();
    PixelMask::from_raw_unchecked(w, h, bits)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::centered(100.0, 64, 48).unwrap()
    }

    fn wall(z: f64) -> Scene {
        Scene::new(
            vec![Primitive::plane([0.0, 0.0, z], [0.0, 0.0, -1.0]).unwrap()],
            Bounds { min: [-10.0; 3], max: [10.0; 3] },
        )
        .unwrap()
    }

    #[test]
    fn frontal_plane_has_constant_depth() {
        let d = wall(2.0).render_depth(&k(), &Pose::identity(), 64, 48).unwrap();
        assert!(d.data().iter().all(|v| (*v - 2.0).abs() < 1e-6));
    }

    #[test]
    fn rays_that_miss_are_unknown() {
        let d = wall(2.0).render_depth(&k(), &Pose::from_yaw_translation(std::f64::consts::PI, 0.0, 0.0, 0.0), 64, 48).unwrap();
        assert_eq!(d.known_count(), 0);
    }

    #[test]
    fn unit_box_near_face() {
        let scene = Scene::new(
            vec![Primitive::cuboid([0.0, 0.0, 3.0], [1.0, 1.0, 1.0], 0.0).unwrap()],
            Bounds { min: [-1.0; 3], max: [4.0; 3] },
        )
        .unwrap();
        let kk = CameraIntrinsics::new(100.0, 32.0, 24.0).unwrap();
        let d = scene.render_depth(&kk, &Pose::identity(), 65, 49).unwrap();
        assert_eq!(d.get(32, 24), 2.5);
        assert_eq!(d.get(0, 0), 0.0);
    }

    #[test]
    fn camera_inside_box_is_rejected() {
        let scene = Scene::new(
            vec![Primitive::cuboid([0.0, 0.0, 0.0], [1.0, 1.0, 1.0], 0.0).unwrap()],
            Bounds { min: [-1.0; 3], max: [1.0; 3] },
        )
        .unwrap();
        assert!(matches!(scene.render_depth(&k(), &Pose::identity(), 4, 4), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn camera_behind_plane_is_rejected() {
        assert!(wall(-1.0).render_depth(&k(), &Pose::identity(), 4, 4).is_err());
    }

    #[test]
    fn rendering_is_deterministic() {
        let scene = random_scene(&SceneSamplerConfig::default(), 3, 1).unwrap();
        let a = scene.render_depth(&k(), &Pose::identity(), 64, 48).unwrap();
        let b = scene.render_depth(&k(), &Pose::identity(), 64, 48).unwrap();
        assert_eq!(a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn random_scenes_respect_sampler_ranges() {
        let cfg = SceneSamplerConfig::default();
        for i in 0..50 {
            let s = random_scene(&cfg, 11, i).unwrap();
            let boxes = s.primitives().iter().filter(|p| matches!(p, Primitive::Box(_))).count();
            assert!((3..=8).contains(&boxes));
            for p in s.primitives() {
                if let Primitive::Box(b) = p {
                    assert!(b.half_extents.iter().all(|h| (0.15..=1.0).contains(h)));
                    let gap = cfg.wall_z - b.placement.translation().z;
                    assert!((1.0..=6.0).contains(&gap));
                }
            }
        }
    }

    #[test]
    fn identical_poses_have_no_occlusion() {
        let scene = random_scene(&SceneSamplerConfig::default(), 5, 0).unwrap();
        let r = verify_lemma(&scene, &k(), &Pose::identity(), &Pose::identity(), 64, 48, &WarpConfig::default()).unwrap();
        assert_eq!(r, LemmaReport { violations: 0, occluded_dual: 0, occluded_true: 0 });
    }

    #[test]
    fn visibility_oracle_sees_through_empty_space() {
        let scene = wall(5.0);
        let p = Vector3::new(0.0, 0.0, 5.0);
        assert!(scene.is_visible(&p, &k(), &Pose::identity(), 64, 48, 1e-6));
        // behind the wall
        assert!(!scene.is_visible(&Vector3::new(0.0, 0.0, 6.0), &k(), &Pose::identity(), 64, 48, 1e-6));
        // outside the frustum
        assert!(!scene.is_visible(&Vector3::new(50.0, 0.0, 5.0), &k(), &Pose::identity(), 64, 48, 1e-6));
    }
}

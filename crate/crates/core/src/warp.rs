//! Forward depth warping by z-buffered point splatting.
//!
//! A source pixel `x = (u, v, 1)` with depth `s` lands at `x'` with depth
//! `s'` where `s' x' = K (R K⁻¹ s x + T)`. Each point is written to the
//! nearest target pixel; collisions keep the smallest `s'`, exact ties keep
//! the first writer in row-major source order. Warping at a supersampled
//! resolution (nearest replication, scaled intrinsics) followed by min-depth
//! pooling suppresses the pinholes that point rendering leaves behind.

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::camera::{CameraIntrinsics, Pose};
use crate::error::{Error, Result};
use crate::image::{DepthImage, PixelMask, RgbImage};

/// How z-buffer collisions are resolved. Only nearest-wins is supported;
/// exact ties keep the first writer in row-major source order.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ZBufferTieRule {
    #[default]
    KeepNearest,
}

/// What happens to points projecting outside the target frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum OutOfFrame {
    #[default]
    Drop,
}

/// Margin used by [`dual_warp`] when deciding whether a round-tripped depth
/// still shows the original surface (see [`agrees_with`]):
/// `absolute + pixel_slack * s / f` meters at depth `s`.
///
/// Rounding to pixel centers in two successive warps shifts a point
/// laterally by up to about a pixel, i.e. `s / f` meters, which changes its
/// depth on any surface not parallel to the image plane. A fixed 1 mm margin
/// rejects most of a wall a few meters away.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConsistencyTolerance {
    pub absolute: f64,
    pub pixel_slack: f64,
}

impl Default for ConsistencyTolerance {
    fn default() -> Self {
        Self { absolute: 1e-3, pixel_slack: 1.0 }
    }
}

impl ConsistencyTolerance {
    /// Pure absolute threshold in meters.
    pub fn absolute(meters: f64) -> Self {
        Self { absolute: meters, pixel_slack: 0.0 }
    }

    #[inline]
    pub fn at(&self, depth: f64, k: &CameraIntrinsics) -> f64 {
        self.absolute + self.pixel_slack * depth / k.f()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WarpConfig {
    pub supersample: usize,
    pub zbuffer_tie_rule: ZBufferTieRule,
    pub out_of_frame: OutOfFrame,
    pub consistency: ConsistencyTolerance,
}

impl Default for WarpConfig {
    fn default() -> Self {
        Self {
            supersample: 2,
            zbuffer_tie_rule: ZBufferTieRule::KeepNearest,
            out_of_frame: OutOfFrame::Drop,
            consistency: ConsistencyTolerance::default(),
        }
    }
}

impl WarpConfig {
    pub fn with_supersample(supersample: usize) -> Self {
        Self { supersample, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.supersample == 0 {
            return Err(Error::invalid("supersample factor must be at least 1"));
        }
        Ok(())
    }
}

/// Continuous target coordinates and depth of one reprojected pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub x: f64,
    pub y: f64,
    pub depth: f64,
}

impl Projection {
    /// False when the point ends up on or behind the target camera plane.
    pub fn in_front(&self) -> bool {
        self.depth > 0.0
    }
}

/// Reprojects pixel `(x, y)` with depth `s` into the camera at `pose`.
pub fn project_pixel(x: f64, y: f64, s: f64, k: &CameraIntrinsics, pose: &Pose) -> Result<Projection> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::invalid(format!("depth must be positive, got {s}")));
    }
    let p = pose.transform_point(&k.unproject(x, y, s));
    let (u, v, depth) = k.project(&p);
    Ok(Projection { x: u, y: v, depth })
}

const EMPTY: u64 = u64::MAX;

/// Z-buffer entry ordering by (depth, source index). Positive finite f32
/// bit patterns sort like their values.
#[inline]
fn pack(depth: f32, src_index: usize) -> u64 {
    ((depth.to_bits() as u64) << 32) | src_index as u64
}

#[inline]
fn unpack_depth(key: u64) -> f32 {
    if key == EMPTY { 0.0 } else { f32::from_bits((key >> 32) as u32) }
}

#[inline]
fn unpack_source(key: u64) -> Option<usize> {
    (key != EMPTY).then_some((key & 0xFFFF_FFFF) as usize)
}

/// Precomputed `K R K⁻¹` and `K T`, so that a pixel maps with one 3x3
/// product: `h = s * (M [u v 1]) + KT`.
struct Reprojector {
    m: Matrix3<f64>,
    kt: Vector3<f64>,
    width: usize,
    height: usize,
}

impl Reprojector {
    fn new(k: &CameraIntrinsics, pose: &Pose, width: usize, height: usize) -> Self {
        let kk = k.matrix();
        let k_inv = Matrix3::new(
            1.0 / k.f(), 0.0, -k.cx() / k.f(),
            0.0, 1.0 / k.f(), -k.cy() / k.f(),
            0.0, 0.0, 1.0,
        );
        Self { m: kk * pose.rotation() * k_inv, kt: kk * pose.translation(), width, height }
    }

    /// Target pixel index and depth, or `None` when dropped.
    #[inline]
    fn splat(&self, u: usize, v: usize, s: f32) -> Option<(usize, f32)> {
        let s = s as f64;
        let ray = self.m * Vector3::new(u as f64, v as f64, 1.0);
        let h = ray * s + self.kt;
        let z = h.z;
        if z.is_nan() || z <= 0.0 {
            return None;
        }
        let x = (h.x / z).round();
        let y = (h.y / z).round();
        if !(x >= 0.0 && y >= 0.0 && x < self.width as f64 && y < self.height as f64) {
            return None;
        }
        let depth = z as f32;
        if !(depth > 0.0 && depth.is_finite()) {
            return None;
        }
        Some((y as usize * self.width + x as usize, depth))
    }
}

/// Splats every known pixel of `src` (already at working resolution) and
/// returns the z-buffer keys.
fn splat_sequential(src: &DepthImage, k: &CameraIntrinsics, pose: &Pose) -> Vec<u64> {
    let (w, h) = (src.width(), src.height());
    let proj = Reprojector::new(k, pose, w, h);
    let mut zbuf = vec![EMPTY; w * h];
    for v in 0..h {
        for u in 0..w {
            let s = src.get(u, v);
            if s <= 0.0 {
                continue;
            }
            if let Some((t, depth)) = proj.splat(u, v, s) {
                let key = pack(depth, v * w + u);
                if key < zbuf[t] {
                    zbuf[t] = key;
                }
            }
        }
    }
    zbuf
}

fn splat_parallel(src: &DepthImage, k: &CameraIntrinsics, pose: &Pose) -> Vec<u64> {
    let (w, h) = (src.width(), src.height());
    let proj = Reprojector::new(k, pose, w, h);
    let zbuf: Vec<AtomicU64> = (0..w * h).map(|_| AtomicU64::new(EMPTY)).collect();
    (0..h).into_par_iter().for_each(|v| {
        for u in 0..w {
            let s = src.get(u, v);
            if s <= 0.0 {
                continue;
            }
            if let Some((t, depth)) = proj.splat(u, v, s) {
                zbuf[t].fetch_min(pack(depth, v * w + u), Ordering::Relaxed);
            }
        }
    });
    zbuf.into_iter().map(AtomicU64::into_inner).collect()
}

/// Min-key pooling over `factor x factor` blocks.
fn pool_keys(keys: &[u64], width: usize, height: usize, factor: usize) -> Vec<u64> {
    if factor == 1 {
        return keys.to_vec();
    }
    let (w, h) = (width / factor, height / factor);
    let mut out = vec![EMPTY; w * h];
    for y in 0..height {
        let out_row = &mut out[(y / factor) * w..][..w];
        for (x, &key) in keys[y * width..][..width].iter().enumerate() {
            let slot = &mut out_row[x / factor];
            *slot = (*slot).min(key);
        }
    }
    out
}

/// Winning z-buffer keys at base resolution; source indices refer to the
/// supersampled source grid.
fn warp_keys(src: &DepthImage, k: &CameraIntrinsics, pose: &Pose, cfg: &WarpConfig, parallel: bool) -> Result<Vec<u64>> {
    cfg.validate()?;
    let factor = cfg.supersample;
    let up = src.upsample_nearest(factor);
    let k_up = k.scale(factor as f64)?;
    let keys = if parallel {
        splat_parallel(&up, &k_up, pose)
    } else {
        splat_sequential(&up, &k_up, pose)
    };
    Ok(pool_keys(&keys, up.width(), up.height(), factor))
}

fn keys_to_depth(keys: &[u64], width: usize, height: usize) -> DepthImage {
    DepthImage::from_raw_unchecked(width, height, keys.iter().map(|k| unpack_depth(*k)).collect())
}

/// Warps `src` into the camera at relative pose `pose` (source frame to
/// target frame). Single-threaded.
pub fn warp_depth(src: &DepthImage, k: &CameraIntrinsics, pose: &Pose, cfg: &WarpConfig) -> Result<DepthImage> {
    let keys = warp_keys(src, k, pose, cfg, false)?;
    Ok(keys_to_depth(&keys, src.width(), src.height()))
}

/// Same result as [`warp_depth`], splatting rows on the rayon pool with an
/// atomic min over packed `(depth, source index)` keys.
pub fn warp_depth_parallel(src: &DepthImage, k: &CameraIntrinsics, pose: &Pose, cfg: &WarpConfig) -> Result<DepthImage> {
    let keys = warp_keys(src, k, pose, cfg, true)?;
    Ok(keys_to_depth(&keys, src.width(), src.height()))
}

/// Warps a registered depth + colour pair; colours travel with the winning
/// depth sample. Pixels without a sample are black.
pub fn warp_rgbd(
    depth: &DepthImage,
    rgb: &RgbImage,
    k: &CameraIntrinsics,
    pose: &Pose,
    cfg: &WarpConfig,
) -> Result<(DepthImage, RgbImage)> {
    crate::image::ensure_same_dims(depth, rgb)?;
    let keys = warp_keys(depth, k, pose, cfg, false)?;
    let (w, factor) = (depth.width(), cfg.supersample);
    let up_w = w * factor;
    let pixels = keys
        .iter()
        .map(|key| match unpack_source(*key) {
            Some(i) => rgb.get((i % up_w) / factor, (i / up_w) / factor),
            None => [0, 0, 0],
        })
        .collect();
    Ok((keys_to_depth(&keys, w, depth.height()), RgbImage::new(w, depth.height(), pixels)?))
}

/// Result of warping forth to a nearby pose and back.
#[derive(Clone, Debug, PartialEq)]
pub struct DualWarp {
    /// `O` warped into the intermediate pose.
    pub forward: DepthImage,
    /// The occluded image: `O` restricted to the pixels that survive the
    /// round trip.
    pub occluded: DepthImage,
    /// `O ∖ Õ`: pixels known in `O` but lost in the round trip.
    pub mask: PixelMask,
}

/// Whether `value` plausibly shows the same surface as `original` at
/// `(x, y)`: it must lie within the depth range of the known 3x3
/// neighbourhood, widened by the tolerance at that depth.
pub fn agrees_with(original: &DepthImage, x: usize, y: usize, value: f32, k: &CameraIntrinsics, tol: &ConsistencyTolerance) -> bool {
    let o = original.get(x, y);
    if o <= 0.0 || value <= 0.0 {
        return false;
    }
    let (mut lo, mut hi) = (o, o);
    for ny in y.saturating_sub(1)..=(y + 1).min(original.height() - 1) {
        for nx in x.saturating_sub(1)..=(x + 1).min(original.width() - 1) {
            let d = original.get(nx, ny);
            if d > 0.0 {
                lo = lo.min(d);
                hi = hi.max(d);
            }
        }
    }
    let t = tol.at(o as f64, k);
    let v = value as f64;
    v >= lo as f64 - t && v <= hi as f64 + t
}

fn surviving(original: &DepthImage, back: &DepthImage, k: &CameraIntrinsics, tol: &ConsistencyTolerance) -> Vec<bool> {
    let w = original.width();
    back.data()
        .iter()
        .enumerate()
        .map(|(i, &b)| agrees_with(original, i % w, i / w, b, k, tol))
        .collect()
}

/// Dual warping: `O -> O^[P] -> Õ`. A pixel of `O` survives when the
/// back-warped depth agrees with it under `cfg.consistency`; surviving
/// pixels keep the exact value of `O`, so `Õ_y = O_y` wherever `Õ_y > 0`.
pub fn dual_warp(original: &DepthImage, k: &CameraIntrinsics, pose: &Pose, cfg: &WarpConfig) -> Result<DualWarp> {
    let forward = warp_depth(original, k, pose, cfg)?;
    let back = warp_depth(&forward, k, &pose.inverse(), cfg)?;
    let keep = surviving(original, &back, k, &cfg.consistency);
    let (w, h) = (original.width(), original.height());
    let occluded = DepthImage::from_raw_unchecked(
        w,
        h,
        original.data().iter().zip(&keep).map(|(&o, &kp)| if kp { o } else { 0.0 }).collect(),
    );
    let mask = PixelMask::from_raw_unchecked(
        w,
        h,
        original.data().iter().zip(&keep).map(|(&o, &kp)| o > 0.0 && !kp).collect(),
    );
    Ok(DualWarp { forward, occluded, mask })
}

/// Colour counterpart of [`dual_warp`]: the depth channel decides
/// visibility, colours of lost pixels are zeroed.
pub fn dual_warp_rgbd(
    depth: &DepthImage,
    rgb: &RgbImage,
    k: &CameraIntrinsics,
    pose: &Pose,
    cfg: &WarpConfig,
) -> Result<(DualWarp, RgbImage)> {
    crate::image::ensure_same_dims(depth, rgb)?;
    let dw = dual_warp(depth, k, pose, cfg)?;
    let pixels = rgb
        .pixels()
        .iter()
        .zip(dw.occluded.data())
        .map(|(c, d)| if *d > 0.0 { *c } else { [0, 0, 0] })
        .collect();
    let occluded_rgb = RgbImage::new(depth.width(), depth.height(), pixels)?;
    Ok((dw, occluded_rgb))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 320.0, 240.0).unwrap()
    }

    #[test]
    fn identity_projection() {
        let p = project_pixel(320.0, 240.0, 2.0, &k(), &Pose::identity()).unwrap();
        assert_eq!((p.x, p.y, p.depth), (320.0, 240.0, 2.0));
    }

    #[test]
    fn principal_ray_forward_translation() {
        let p = project_pixel(320.0, 240.0, 2.0, &k(), &Pose::from_translation(0.0, 0.0, -1.0)).unwrap();
        assert_eq!((p.x, p.y, p.depth), (320.0, 240.0, 1.0));
    }

    #[test]
    fn off_axis_forward_translation() {
        // K⁻¹ s x = (0.4, 0, 2); + T = (0.4, 0, 1); 500 * 0.4 / 1 + 320 = 520
        let p = project_pixel(420.0, 240.0, 2.0, &k(), &Pose::from_translation(0.0, 0.0, -1.0)).unwrap();
        assert!((p.x - 520.0).abs() < 1e-12);
        assert!((p.y - 240.0).abs() < 1e-12);
        assert!((p.depth - 1.0).abs() < 1e-12);
    }

    #[test]
    fn non_positive_depth_is_rejected() {
        assert!(project_pixel(0.0, 0.0, 0.0, &k(), &Pose::identity()).is_err());
        assert!(project_pixel(0.0, 0.0, -1.0, &k(), &Pose::identity()).is_err());
    }

    #[test]
    fn behind_camera_is_flagged() {
        let p = project_pixel(320.0, 240.0, 1.0, &k(), &Pose::from_translation(0.0, 0.0, -3.0)).unwrap();
        assert!(!p.in_front());
    }

    fn small_k() -> CameraIntrinsics {
        CameraIntrinsics::new(10.0, 4.0, 3.0).unwrap()
    }

    #[test]
    fn identity_warp_without_supersampling_is_exact() {
        let src = DepthImage::from_fn(9, 7, |x, y| if (x + y) % 4 == 0 { 0.0 } else { 1.0 + 0.13 * x as f32 + 0.07 * y as f32 }).unwrap();
        let out = warp_depth(&src, &small_k(), &Pose::identity(), &WarpConfig::with_supersample(1)).unwrap();
        assert_eq!(out, src);
        let out2 = warp_depth(&src, &small_k(), &Pose::identity(), &WarpConfig::with_supersample(2)).unwrap();
        assert_eq!(out2, src);
    }

    #[test]
    fn single_pixel_moves_closer() {
        let src = DepthImage::from_fn(9, 7, |x, y| if (x, y) == (4, 3) { 2.0 } else { 0.0 }).unwrap();
        let out = warp_depth(&src, &small_k(), &Pose::from_translation(0.0, 0.0, -1.0), &WarpConfig::with_supersample(1)).unwrap();
        assert_eq!(out.known_count(), 1);
        assert_eq!(out.get(4, 3), 1.0);
    }

    #[test]
    fn zbuffer_keeps_nearest_of_colliding_points() {
        // A lateral shift tx moves a pixel by f * tx / s: with tx = -0.2,
        // (5, s=1) -> 3.0 and (4, s=3) -> 3.33, both rounding to column 3.
        let src = DepthImage::from_fn(9, 7, |x, y| match (x, y) {
            (5, 3) => 1.0,
            (4, 3) => 3.0,
            _ => 0.0,
        })
        .unwrap();
        let pose = Pose::from_translation(-0.2, 0.0, 0.0);
        let a = project_pixel(5.0, 3.0, 1.0, &small_k(), &pose).unwrap();
        let b = project_pixel(4.0, 3.0, 3.0, &small_k(), &pose).unwrap();
        assert_eq!((a.x.round(), b.x.round()), (3.0, 3.0));
        let out = warp_depth(&src, &small_k(), &pose, &WarpConfig::with_supersample(1)).unwrap();
        assert_eq!(out.get(3, 3), 1.0);
        assert_eq!(out.known_count(), 1);
    }

    #[test]
    fn out_of_frame_points_are_dropped() {
        let src = DepthImage::from_fn(9, 7, |_, _| 1.0).unwrap();
        let out = warp_depth(&src, &small_k(), &Pose::from_translation(-10.0, 0.0, 0.0), &WarpConfig::with_supersample(1)).unwrap();
        assert_eq!(out.known_count(), 0);
    }

    #[test]
    fn parallel_matches_sequential() {
        let src = DepthImage::from_fn(40, 30, |x, y| 1.0 + ((x * 7 + y * 13) % 11) as f32 * 0.25).unwrap();
        let kk = CameraIntrinsics::centered(35.0, 40, 30).unwrap();
        let pose = Pose::from_yaw_translation(0.2, 0.3, 0.0, -0.4);
        for ss in [1, 2, 3] {
            let cfg = WarpConfig::with_supersample(ss);
            assert_eq!(warp_depth(&src, &kk, &pose, &cfg).unwrap(), warp_depth_parallel(&src, &kk, &pose, &cfg).unwrap());
        }
    }

    #[test]
    fn zero_supersample_is_rejected() {
        let src = DepthImage::from_fn(2, 2, |_, _| 1.0).unwrap();
        assert!(warp_depth(&src, &small_k(), &Pose::identity(), &WarpConfig::with_supersample(0)).is_err());
    }

    #[test]
    fn dual_warp_identity_is_exact() {
        let src = DepthImage::from_fn(9, 7, |x, y| if x == y { 0.0 } else { 2.0 + 0.1 * x as f32 }).unwrap();
        let dw = dual_warp(&src, &small_k(), &Pose::identity(), &WarpConfig::with_supersample(1)).unwrap();
        assert_eq!(dw.occluded, src);
        assert!(dw.mask.is_clear());
    }

    #[test]
    fn rgbd_warp_carries_colour() {
        let depth = DepthImage::from_fn(9, 7, |x, y| if (x, y) == (4, 3) { 2.0 } else { 0.0 }).unwrap();
        let rgb = RgbImage::from_fn(9, 7, |x, y| [x as u8, y as u8, 200]).unwrap();
        let (d, c) = warp_rgbd(&depth, &rgb, &small_k(), &Pose::from_translation(0.0, 0.0, -1.0), &WarpConfig::default()).unwrap();
        assert_eq!(d.get(4, 3), 1.0);
        assert_eq!(c.get(4, 3), [4, 3, 200]);
        assert_eq!(c.get(0, 0), [0, 0, 0]);
    }
}

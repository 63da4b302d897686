//! Filling masked depth: displacement-field copies, a nearest-known-pixel
//! field, harmonic inpainting, and median fusion over nearby views.
//!
//! Every operation here leaves pixels that are known in its input untouched.

use std::collections::VecDeque;

use rayon::prelude::*;

use crate::camera::{CameraIntrinsics, Pose};
use crate::datagen::{sample_pose, PoseSamplerConfig};
use crate::error::{Error, Result};
use crate::image::{ensure_same_dims, DepthImage, DisplacementField, PixelMask};
use crate::warp::{warp_depth, WarpConfig};

/// Result of a completion step.
#[derive(Clone, Debug, PartialEq)]
pub struct Completion {
    pub depth: DepthImage,
    /// Mask pixels that are still unknown.
    pub unresolved: PixelMask,
}

/// Copies `occluded[x + dx, y + dy]` into every unknown mask pixel.
///
/// Sources that are themselves unknown leave the target unknown; such
/// targets are listed in [`Completion::unresolved`]. A displacement leaving
/// the frame is an invalid argument.
pub fn apply_displacement(occluded: &DepthImage, mask: &PixelMask, field: &DisplacementField) -> Result<Completion> {
    ensure_same_dims(occluded, mask)?;
    ensure_same_dims(occluded, field)?;
    let (w, h) = (occluded.width(), occluded.height());
    let mut out = occluded.data().to_vec();
    let mut unresolved = PixelMask::empty(w, h)?;
    for (x, y) in mask.iter_set() {
        if occluded.is_known(x, y) {
            continue;
        }
        let Some((sx, sy)) = field.source_of(x, y) else {
            let (dx, dy) = field.get(x, y);
            return Err(Error::invalid(format!("displacement ({dx}, {dy}) at ({x}, {y}) leaves the frame")));
        };
        let v = occluded.get(sx, sy);
        if v > 0.0 {
            out[y * w + x] = v;
        } else {
            unresolved.set(x, y, true);
        }
    }
    Ok(Completion { depth: DepthImage::from_raw_unchecked(w, h, out), unresolved })
}

/// Runs [`diffuse_inpaint`] over the pixels a previous step left unresolved.
pub fn fill_unresolved(completion: &Completion, iterations: usize, tolerance: f64) -> Completion {
    if completion.unresolved.is_clear() {
        return completion.clone();
    }
    diffuse_inpaint(&completion.depth, &completion.unresolved, iterations, tolerance)
        .expect("completion rasters share dimensions")
}

/// For every mask pixel, the offset to the nearest known pixel. Distance is
/// Euclidean; ties go to the smaller `dy`, then the smaller `dx` (signed).
/// Pixels outside the mask, and known mask pixels, get `(0, 0)`.
pub fn nearest_valid_field(occluded: &DepthImage, mask: &PixelMask) -> Result<DisplacementField> {
    ensure_same_dims(occluded, mask)?;
    if occluded.known_count() == 0 {
        return Err(Error::NoValidSource("the image has no known pixel to copy from".into()));
    }
    let (w, h) = (occluded.width(), occluded.height());
    // per row: nearest known column at or left of x, and at or right of x
    let mut left = vec![None; w * h];
    let mut right = vec![None; w * h];
    let mut row_has_known = vec![false; h];
    for y in 0..h {
        let mut last = None;
        for x in 0..w {
            if occluded.is_known(x, y) {
                last = Some(x);
                row_has_known[y] = true;
            }
            left[y * w + x] = last;
        }
        let mut next = None;
        for x in (0..w).rev() {
            if occluded.is_known(x, y) {
                next = Some(x);
            }
            right[y * w + x] = next;
        }
    }

    let row_best = |x: usize, yy: usize| -> Option<i64> {
        let l = left[yy * w + x].map(|c| c as i64 - x as i64);
        let r = right[yy * w + x].map(|c| c as i64 - x as i64);
        match (l, r) {
            (Some(a), Some(b)) => Some(if -a <= b { a } else { b }),
            (a, b) => a.or(b),
        }
    };

    let mut field = DisplacementField::zeros(w, h)?;
    for (x, y) in mask.iter_set() {
        if occluded.is_known(x, y) {
            continue;
        }
        // (d2, dy, dx)
        let mut best: Option<(i64, i64, i64)> = None;
        for r in 0..h as i64 {
            if let Some((d2, _, _)) = best {
                if r * r > d2 {
                    break;
                }
            }
            for dy in [-r, r] {
                let yy = y as i64 + dy;
                if yy < 0 || yy >= h as i64 || !row_has_known[yy as usize] {
                    continue;
                }
                if let Some(dx) = row_best(x, yy as usize) {
                    let cand = (dx * dx + dy * dy, dy, dx);
                    if best.is_none_or(|b| cand < b) {
                        best = Some(cand);
                    }
                }
                if r == 0 {
                    break;
                }
            }
        }
        let (_, dy, dx) = best.expect("some row has a known pixel");
        field.set(x, y, (dx as i32, dy as i32));
    }
    Ok(field)
}

/// Harmonic fill of the unknown mask pixels.
///
/// Each 4-connected region of unknown mask pixels is solved by Jacobi
/// iteration of the discrete Laplace equation, with the known pixels around
/// it held fixed. Unknown pixels outside the mask are treated as absent.
/// Iteration stops after `iterations` sweeps or once no pixel moves by
/// `tolerance` or more. Regions with no known neighbour stay unknown and are
/// reported as unresolved.
pub fn diffuse_inpaint(occluded: &DepthImage, mask: &PixelMask, iterations: usize, tolerance: f64) -> Result<Completion> {
    ensure_same_dims(occluded, mask)?;
    let (w, h) = (occluded.width(), occluded.height());
    let idx = |x: usize, y: usize| y * w + x;
    let target = |x: usize, y: usize| mask.get(x, y) && !occluded.is_known(x, y);
    let neighbours = |x: usize, y: usize| {
        let mut n = [None; 4];
        if x > 0 {
            n[0] = Some((x - 1, y));
        }
        if x + 1 < w {
            n[1] = Some((x + 1, y));
        }
        if y > 0 {
            n[2] = Some((x, y - 1));
        }
        if y + 1 < h {
            n[3] = Some((x, y + 1));
        }
        n.into_iter().flatten()
    };

    let mut values: Vec<f64> = occluded.data().iter().map(|&d| d as f64).collect();
    let mut unresolved = PixelMask::empty(w, h)?;
    let mut seen = vec![false; w * h];
    for (sx, sy) in mask.iter_set() {
        if seen[idx(sx, sy)] || !target(sx, sy) {
            continue;
        }
        let mut region = Vec::new();
        let mut boundary_sum = 0.0;
        let mut boundary_n = 0usize;
        let mut queue = VecDeque::from([(sx, sy)]);
        seen[idx(sx, sy)] = true;
        while let Some((x, y)) = queue.pop_front() {
            region.push((x, y));
            for (nx, ny) in neighbours(x, y) {
                if target(nx, ny) {
                    if !seen[idx(nx, ny)] {
                        seen[idx(nx, ny)] = true;
                        queue.push_back((nx, ny));
                    }
                } else if occluded.is_known(nx, ny) {
                    boundary_sum += occluded.get(nx, ny) as f64;
                    boundary_n += 1;
                }
            }
        }
        if boundary_n == 0 {
            for &(x, y) in &region {
                unresolved.set(x, y, true);
            }
            continue;
        }
        let init = boundary_sum / boundary_n as f64;
        for &(x, y) in &region {
            values[idx(x, y)] = init;
        }
        let stencil: Vec<Vec<usize>> = region
            .iter()
            .map(|&(x, y)| {
                neighbours(x, y)
                    .filter(|&(nx, ny)| target(nx, ny) || occluded.is_known(nx, ny))
                    .map(|(nx, ny)| idx(nx, ny))
                    .collect()
            })
            .collect();
        let mut next = vec![0.0; region.len()];
        for _ in 0..iterations {
            let mut max_step: f64 = 0.0;
            for (i, nb) in stencil.iter().enumerate() {
                next[i] = nb.iter().map(|&j| values[j]).sum::<f64>() / nb.len() as f64;
                let (x, y) = region[i];
                max_step = max_step.max((next[i] - values[idx(x, y)]).abs());
            }
            for (i, &(x, y)) in region.iter().enumerate() {
                values[idx(x, y)] = next[i];
            }
            if max_step < tolerance {
                break;
            }
        }
    }
    let data = values
        .iter()
        .zip(occluded.data())
        .map(|(&v, &orig)| if orig > 0.0 { orig } else { v as f32 })
        .collect();
    Ok(Completion { depth: DepthImage::from_raw_unchecked(w, h, data), unresolved })
}

/// Non-learned completion methods.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum Completer {
    /// Copy from the nearest known pixel.
    #[default]
    Nearest,
    /// Harmonic fill.
    Diffuse { iterations: usize, tolerance: f64 },
}

impl Completer {
    pub const DEFAULT_DIFFUSE: Completer = Completer::Diffuse { iterations: 2000, tolerance: 1e-6 };

    pub fn complete(&self, occluded: &DepthImage, mask: &PixelMask) -> Result<Completion> {
        match *self {
            Completer::Nearest => {
                let field = nearest_valid_field(occluded, mask)?;
                apply_displacement(occluded, mask, &field)
            }
            Completer::Diffuse { iterations, tolerance } => diffuse_inpaint(occluded, mask, iterations, tolerance),
        }
    }
}

/// Default view set for [`fuse_views`]: `count` poses from the default
/// pose sampler with the given seed.
pub fn default_fusion_poses(count: usize, seed: u64) -> Vec<Pose> {
    let cfg = PoseSamplerConfig { seed, ..Default::default() };
    (0..count as u64).map(|i| sample_pose(&cfg, i)).collect()
}

pub const DEFAULT_FUSION_VIEWS: usize = 8;

/// Warps `base` to each pose, completes the holes opened there, warps back,
/// and takes the per-pixel lower median of all known candidates together
/// with the known base value. Views whose warp leaves nothing to copy from
/// are skipped.
pub fn fuse_views(
    base: &DepthImage,
    k: &CameraIntrinsics,
    poses: &[Pose],
    completer: &Completer,
    warp_cfg: &WarpConfig,
) -> Result<DepthImage> {
    if poses.is_empty() {
        return Err(Error::invalid("fuse_views needs at least one pose"));
    }
    warp_cfg.validate()?;
    let views: Vec<Option<DepthImage>> = poses
        .par_iter()
        .enumerate()
        .map(|(i, pose)| {
            let warped = warp_depth(base, k, pose, warp_cfg)?;
            let holes = warped.unknown_mask();
            match completer.complete(&warped, &holes) {
                Ok(done) => warp_depth(&done.depth, k, &pose.inverse(), warp_cfg).map(Some),
                Err(Error::NoValidSource(_)) => {
                    log::warn!("view {i}: no known pixel after warping, skipped");
                    Ok(None)
                }
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let views: Vec<DepthImage> = views.into_iter().flatten().collect();
    let data = (0..base.len())
        .into_par_iter()
        .map(|i| {
            let mut c: Vec<f32> = std::iter::once(base.data()[i])
                .chain(views.iter().map(|v| v.data()[i]))
                .filter(|&d| d > 0.0)
                .collect();
            lower_median(&mut c).unwrap_or(0.0)
        })
        .collect();
    Ok(DepthImage::from_raw_unchecked(base.width(), base.height(), data))
}

/// Element at index `(n - 1) / 2` of the sorted values.
pub fn lower_median(values: &mut [f32]) -> Option<f32> {
    if values.is_empty() {
        return None;
    }
    let mid = (values.len() - 1) / 2;
    let (_, m, _) = values.select_nth_unstable_by(mid, f32::total_cmp);
    Some(*m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(w: usize, h: usize, data: &[f32]) -> DepthImage {
        DepthImage::new(w, h, data.to_vec()).unwrap()
    }

    #[test]
    fn zero_field_leaves_holes() {
        let o = img(3, 1, &[1.0, 0.0, 2.0]);
        let m = o.unknown_mask();
        let c = apply_displacement(&o, &m, &DisplacementField::zeros(3, 1).unwrap()).unwrap();
        assert_eq!(c.depth, o);
        assert_eq!(c.unresolved, m);
    }

    #[test]
    fn copy_from_neighbour() {
        let o = img(3, 1, &[1.7, 0.0, 2.0]);
        let mut f = DisplacementField::zeros(3, 1).unwrap();
        f.set(1, 0, (-1, 0));
        let c = apply_displacement(&o, &o.unknown_mask(), &f).unwrap();
        assert_eq!(c.depth.data(), &[1.7, 1.7, 2.0]);
        assert!(c.unresolved.is_clear());
    }

    #[test]
    fn pointing_at_a_hole_is_reported() {
        let o = img(4, 1, &[1.0, 0.0, 0.0, 2.0]);
        let mut f = DisplacementField::zeros(4, 1).unwrap();
        f.set(1, 0, (1, 0));
        f.set(2, 0, (1, 0));
        let c = apply_displacement(&o, &o.unknown_mask(), &f).unwrap();
        assert_eq!(c.depth.data(), &[1.0, 0.0, 2.0, 2.0]);
        assert_eq!(c.unresolved.iter_set().collect::<Vec<_>>(), vec![(1, 0)]);
    }

    #[test]
    fn displacement_out_of_frame_is_rejected() {
        let o = img(2, 1, &[0.0, 1.0]);
        let mut f = DisplacementField::zeros(2, 1).unwrap();
        f.set(0, 0, (-1, 0));
        assert!(matches!(apply_displacement(&o, &o.unknown_mask(), &f), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let o = img(2, 1, &[0.0, 1.0]);
        let m = PixelMask::empty(1, 2).unwrap();
        assert!(matches!(
            apply_displacement(&o, &m, &DisplacementField::zeros(2, 1).unwrap()),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn nearest_prefers_left_neighbour_in_row() {
        let o = img(3, 1, &[1.0, 0.0, 2.0]);
        let f = nearest_valid_field(&o, &o.unknown_mask()).unwrap();
        assert_eq!(f.get(1, 0), (-1, 0));
    }

    #[test]
    fn nearest_prefers_up_over_left() {
        #[rustfmt::skip]
        let o = img(2, 2, &[
            0.0, 1.0,
            2.0, 0.0,
        ]);
        let mut m = PixelMask::empty(2, 2).unwrap();
        m.set(1, 1, true);
        let f = nearest_valid_field(&o, &m).unwrap();
        assert_eq!(f.get(1, 1), (0, -1));
        assert_eq!(f.get(0, 0), (0, 0));
    }

    #[test]
    fn nearest_on_all_unknown_image_fails() {
        let o = DepthImage::unknown(3, 3).unwrap();
        assert!(matches!(nearest_valid_field(&o, &o.unknown_mask()), Err(Error::NoValidSource(_))));
    }

    #[test]
    fn diffuse_constant_boundary() {
        #[rustfmt::skip]
        let o = img(3, 3, &[
            4.0, 2.5, 4.0,
            2.5, 0.0, 2.5,
            4.0, 2.5, 4.0,
        ]);
        let c = diffuse_inpaint(&o, &o.unknown_mask(), 100, 1e-9).unwrap();
        assert_eq!(c.depth.get(1, 1), 2.5);
    }

    #[test]
    fn diffuse_empty_mask_is_identity() {
        let o = img(3, 1, &[1.0, 0.0, 2.0]);
        let c = diffuse_inpaint(&o, &PixelMask::empty(3, 1).unwrap(), 10, 1e-9).unwrap();
        assert_eq!(c.depth, o);
        assert!(c.unresolved.is_clear());
    }

    #[test]
    fn diffuse_isolated_region_is_unresolved() {
        let o = img(3, 1, &[0.0, 0.0, 0.0]);
        let c = diffuse_inpaint(&o, &o.unknown_mask(), 10, 1e-9).unwrap();
        assert_eq!(c.unresolved.count(), 3);
        assert_eq!(c.depth, o);
    }

    #[test]
    fn unresolved_pixels_can_be_post_filled() {
        let o = img(4, 1, &[1.0, 0.0, 0.0, 2.0]);
        let c = apply_displacement(&o, &o.unknown_mask(), &DisplacementField::zeros(4, 1).unwrap()).unwrap();
        let filled = fill_unresolved(&c, 1000, 1e-12);
        assert!(filled.unresolved.is_clear());
        assert!((filled.depth.get(1, 0) - 4.0 / 3.0).abs() < 1e-5);
    }

    #[test]
    fn lower_median_conventions() {
        assert_eq!(lower_median(&mut [9.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(lower_median(&mut [4.0, 1.0, 3.0, 2.0]), Some(2.0));
        assert_eq!(lower_median(&mut [5.0, 5.0]), Some(5.0));
        assert_eq!(lower_median(&mut []), None);
    }

    #[test]
    fn fuse_identity_returns_base() {
        let base = DepthImage::from_fn(12, 9, |x, y| 2.0 + 0.1 * x as f32 + 0.05 * y as f32).unwrap();
        let k = CameraIntrinsics::centered(20.0, 12, 9).unwrap();
        let out = fuse_views(&base, &k, &[Pose::identity()], &Completer::Nearest, &WarpConfig::with_supersample(1)).unwrap();
        assert_eq!(out, base);
    }

    #[test]
    fn fuse_needs_a_pose() {
        let base = DepthImage::from_fn(4, 4, |_, _| 1.0).unwrap();
        let k = CameraIntrinsics::centered(20.0, 4, 4).unwrap();
        assert!(fuse_views(&base, &k, &[], &Completer::Nearest, &WarpConfig::default()).is_err());
    }
}

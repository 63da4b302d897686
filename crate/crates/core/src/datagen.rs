//! Training-pair generation.
//!
//! Output tree of both strategies:
//!
//! ```text
//! <out>/manifest.jsonl
//! <out>/images/img00000.dpm                    complete depth, one per input
//! <out>/pairs/img00000_pair000_occluded.dpm
//! <out>/pairs/img00000_pair000_mask.pgm
//! ```
//!
//! Manifest paths are relative to `<out>`. Every entry draws its randomness
//! from `derive_seed(seed, [image index, pair index])`, so the tree does not
//! depend on the number of worker threads.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraIntrinsics, Pose};
use crate::error::{Error, Result};
use crate::image::{DepthImage, PixelMask};
use crate::io;
use crate::rng::{derive_seed, DetRng};
use crate::warp::{dual_warp, WarpConfig};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseSamplerConfig {
    /// Half-width of the uniform range for x and z translation, meters.
    pub translation_range: f64,
    /// Half-width of the uniform yaw range, degrees.
    pub yaw_range: f64,
    pub seed: u64,
}

impl Default for PoseSamplerConfig {
    fn default() -> Self {
        Self { translation_range: 1.0, yaw_range: 15.0, seed: 0 }
    }
}

impl PoseSamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.translation_range >= 0.0 && self.translation_range.is_finite()) {
            return Err(Error::invalid(format!("translation range must be >= 0, got {}", self.translation_range)));
        }
        if !(self.yaw_range >= 0.0 && self.yaw_range.is_finite()) {
            return Err(Error::invalid(format!("yaw range must be >= 0, got {}", self.yaw_range)));
        }
        Ok(())
    }
}

const POSE_TAG: u64 = 0x9053;
const BLOCK_TAG: u64 = 0xb10c;
const CROP_TAG: u64 = 0xc409;

/// Random camera motion on the horizontal plane: `tx, tz` uniform in
/// `±translation_range`, `ty = 0`, and a pure yaw uniform in `±yaw_range`.
/// Draw order is `tx, tz, yaw`.
pub fn sample_pose(cfg: &PoseSamplerConfig, index: u64) -> Pose {
    let mut rng = DetRng::derived(cfg.seed, &[POSE_TAG, index]);
    let t = cfg.translation_range;
    let tx = rng.uniform(-t, t);
    let tz = rng.uniform(-t, t);
    let yaw = rng.uniform(-cfg.yaw_range, cfg.yaw_range).to_radians();
    Pose::from_yaw_translation(yaw, tx, 0.0, tz)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockRemovalConfig {
    pub max_removed_fraction: f64,
    /// Inclusive range of block side lengths, pixels, drawn per axis.
    pub block_side_range: (usize, usize),
    pub seed: u64,
}

impl Default for BlockRemovalConfig {
    fn default() -> Self {
        Self { max_removed_fraction: 0.2, block_side_range: (1, 50), seed: 0 }
    }
}

impl BlockRemovalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_removed_fraction > 0.0 && self.max_removed_fraction <= 1.0) {
            return Err(Error::invalid(format!(
                "max removed fraction must be in (0, 1], got {}",
                self.max_removed_fraction
            )));
        }
        let (lo, hi) = self.block_side_range;
        if lo < 1 || lo > hi {
            return Err(Error::invalid(format!("block side range [{lo}, {hi}] is empty or starts below 1")));
        }
        Ok(())
    }
}

/// Removes random rectangles until the next one would push the number of
/// removed pixels past the budget. Blocks may overlap and are clipped at the
/// frame; the budget counts distinct pixels.
pub fn random_block_mask(width: usize, height: usize, cfg: &BlockRemovalConfig, seed: u64) -> Result<PixelMask> {
    cfg.validate()?;
    let mut mask = PixelMask::empty(width, height)?;
    let total = width * height;
    let budget = ((cfg.max_removed_fraction * total as f64) + 1e-9).floor() as usize;
    let (lo, hi) = cfg.block_side_range;
    let mut rng = DetRng::derived(seed, &[BLOCK_TAG]);
    let mut removed = 0;
    while removed < total {
        let bw = rng.int_inclusive(lo as u64, hi as u64) as usize;
        let bh = rng.int_inclusive(lo as u64, hi as u64) as usize;
        let x0 = rng.int_inclusive(0, width as u64 - 1) as usize;
        let y0 = rng.int_inclusive(0, height as u64 - 1) as usize;
        let (x1, y1) = ((x0 + bw).min(width), (y0 + bh).min(height));
        let fresh = (y0..y1).flat_map(|y| (x0..x1).map(move |x| (x, y))).filter(|&(x, y)| !mask.get(x, y)).count();
        if removed + fresh > budget {
            break;
        }
        for y in y0..y1 {
            for x in x0..x1 {
                mask.set(x, y, true);
            }
        }
        removed += fresh;
    }
    Ok(mask)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Warp to a random pose and back.
    Dual,
    /// Random rectangular holes.
    Blocks,
}

/// One training pair as recorded in `manifest.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub complete: String,
    pub occluded: String,
    pub mask: String,
    /// Relative pose of the dual warp, `R` row-major then `T`.
    pub pose: [f64; 12],
    /// `[f, cx, cy]`
    pub intrinsics: [f64; 3],
    pub strategy: Strategy,
    pub seed: u64,
}

impl ManifestEntry {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("complete", &self.complete), ("occluded", &self.occluded), ("mask", &self.mask)] {
            if p.is_empty() {
                return Err(Error::invalid(format!("empty {name} path")));
            }
        }
        self.pose()?;
        self.camera()?;
        Ok(())
    }

    pub fn pose(&self) -> Result<Pose> {
        Pose::from_row_major(&self.pose)
    }

    pub fn camera(&self) -> Result<CameraIntrinsics> {
        let [f, cx, cy] = self.intrinsics;
        CameraIntrinsics::new(f, cx, cy)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Loads every referenced file and checks that dimensions agree within
    /// each entry.
    pub fn check_files(&self, base: &Path) -> Result<()> {
        for (i, e) in self.entries.iter().enumerate() {
            TrainingPair::load(e, base).map_err(|err| match err {
                Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("entry {}: {io}", i + 1))),
                Error::Format(m) => Error::Format(format!("entry {}: {m}", i + 1)),
                other => other,
            })?;
        }
        Ok(())
    }
}

/// An (occluded, complete) pair held in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair {
    pub complete: DepthImage,
    pub occluded: DepthImage,
    pub mask: PixelMask,
    pub intrinsics: CameraIntrinsics,
    pub pose: Pose,
}

impl TrainingPair {
    pub fn load(entry: &ManifestEntry, base: &Path) -> Result<Self> {
        let complete = io::read_depth_raw(base.join(&entry.complete))?;
        let occluded = io::read_depth_raw(base.join(&entry.occluded))?;
        if !complete.same_dims(&occluded) {
            return Err(Error::format(format!(
                "{} and {} differ in size",
                entry.complete, entry.occluded
            )));
        }
        let mask = io::read_mask_for(base.join(&entry.mask), &complete)?;
        Ok(Self {
            complete,
            occluded,
            mask,
            intrinsics: entry.camera().map_err(|e| Error::format(e.to_string()))?,
            pose: entry.pose().map_err(|e| Error::format(e.to_string()))?,
        })
    }
}

/// Crops all three rasters to the same `crop` window, placed uniformly at
/// random from `seed`, then mirrors columns if `flip` is set. Intrinsics
/// follow the crop and flip; the pose is mirrored through the `x = 0` plane.
pub fn augment(pair: &TrainingPair, crop: (usize, usize), flip: bool, seed: u64) -> Result<TrainingPair> {
    let (w, h) = (pair.complete.width(), pair.complete.height());
    let (cw, ch) = crop;
    if cw == 0 || ch == 0 || cw > w || ch > h {
        return Err(Error::invalid(format!("crop {cw}x{ch} does not fit in {w}x{h}")));
    }
    let mut rng = DetRng::derived(seed, &[CROP_TAG]);
    let x0 = rng.int_inclusive(0, (w - cw) as u64) as usize;
    let y0 = rng.int_inclusive(0, (h - ch) as u64) as usize;
    let k = &pair.intrinsics;
    let mut out = TrainingPair {
        complete: pair.complete.crop(x0, y0, cw, ch)?,
        occluded: pair.occluded.crop(x0, y0, cw, ch)?,
        mask: pair.mask.crop(x0, y0, cw, ch)?,
        intrinsics: CameraIntrinsics::new(k.f(), k.cx() - x0 as f64, k.cy() - y0 as f64)?,
        pose: pair.pose,
    };
    if flip {
        let k = &out.intrinsics;
        out.intrinsics = CameraIntrinsics::new(k.f(), (cw - 1) as f64 - k.cx(), k.cy())?;
        out.complete = out.complete.flip_horizontal();
        out.occluded = out.occluded.flip_horizontal();
        out.mask = out.mask.flip_horizontal();
        out.pose = mirror_x(&out.pose);
    }
    Ok(out)
}

/// Conjugates a pose by the reflection `x -> -x`.
pub fn mirror_x(pose: &Pose) -> Pose {
    let mut v = pose.to_row_major();
    // R' = F R F flips the sign of entries with exactly one x index, T' = F T
    for i in [1, 2, 3, 6, 9] {
        v[i] = -v[i];
    }
    Pose::from_row_major(&v).expect("reflection conjugate of a rotation is a rotation")
}

pub fn complete_path(image: usize) -> String {
    format!("images/img{image:05}.dpm")
}

pub fn occluded_path(image: usize, pair: usize) -> String {
    format!("pairs/img{image:05}_pair{pair:03}_occluded.dpm")
}

pub fn mask_path(image: usize, pair: usize) -> String {
    format!("pairs/img{image:05}_pair{pair:03}_mask.pgm")
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";

fn prepare_tree(images: &[DepthImage], out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir.join("images"))?;
    fs::create_dir_all(out_dir.join("pairs"))?;
    images
        .par_iter()
        .enumerate()
        .try_for_each(|(i, img)| io::write_depth_raw(out_dir.join(complete_path(i)), img))
}

fn run_pairs(
    images: &[DepthImage],
    pairs_per_image: usize,
    seed: u64,
    out_dir: &Path,
    make: impl Fn(usize, usize, &DepthImage, u64) -> Result<Option<ManifestEntry>> + Sync,
) -> Result<DatasetManifest> {
    prepare_tree(images, out_dir)?;
    let jobs: Vec<(usize, usize)> =
        (0..images.len()).flat_map(|i| (0..pairs_per_image).map(move |j| (i, j))).collect();
    let results: Vec<Option<ManifestEntry>> = jobs
        .par_iter()
        .map(|&(i, j)| {
            let entry_seed = derive_seed(seed, &[i as u64, j as u64]);
            make(i, j, &images[i], entry_seed)
        })
        .collect::<Result<_>>()?;
    let manifest = DatasetManifest { entries: results.into_iter().flatten().collect() };
    io::write_manifest(out_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

fn write_pair(out_dir: &Path, i: usize, j: usize, occluded: &DepthImage, mask: &PixelMask) -> Result<()> {
    io::write_depth_raw(out_dir.join(occluded_path(i, j)), occluded)?;
    io::write_mask(out_dir.join(mask_path(i, j)), mask)
}

/// Dual-warping generator. Pairs whose occluded image has no known pixel are
/// skipped with a warning, so the manifest may be shorter than
/// `images.len() * pairs_per_image`.
pub fn generate_strategy1(
    images: &[DepthImage],
    k: &CameraIntrinsics,
    pose_cfg: &PoseSamplerConfig,
    warp_cfg: &WarpConfig,
    pairs_per_image: usize,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    pose_cfg.validate()?;
    warp_cfg.validate()?;
    run_pairs(images, pairs_per_image, pose_cfg.seed, out_dir, |i, j, img, entry_seed| {
        let pose = sample_pose(&PoseSamplerConfig { seed: entry_seed, ..*pose_cfg }, 0);
        let dual = dual_warp(img, k, &pose, warp_cfg)?;
        if dual.occluded.known_count() == 0 {
            log::warn!("image {i} pair {j}: no known pixels after dual warp, skipped");
            return Ok(None);
        }
        write_pair(out_dir, i, j, &dual.occluded, &dual.mask)?;
        Ok(Some(ManifestEntry {
            complete: complete_path(i),
            occluded: occluded_path(i, j),
            mask: mask_path(i, j),
            pose: pose.to_row_major(),
            intrinsics: [k.f(), k.cx(), k.cy()],
            strategy: Strategy::Dual,
            seed: entry_seed,
        }))
    })
}

/// Block-removal generator. The mask holds removed pixels that were known
/// in the complete image.
pub fn generate_strategy2(
    images: &[DepthImage],
    k: &CameraIntrinsics,
    cfg: &BlockRemovalConfig,
    pairs_per_image: usize,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    cfg.validate()?;
    run_pairs(images, pairs_per_image, cfg.seed, out_dir, |i, j, img, entry_seed| {
        let removed = random_block_mask(img.width(), img.height(), cfg, entry_seed)?;
        let mask = removed.intersection(&img.known_mask())?;
        let occluded = img.with_removed(&removed)?;
        if occluded.known_count() == 0 {
            log::warn!("image {i} pair {j}: no known pixels after block removal, skipped");
            return Ok(None);
        }
        write_pair(out_dir, i, j, &occluded, &mask)?;
        Ok(Some(ManifestEntry {
            complete: complete_path(i),
            occluded: occluded_path(i, j),
            mask: mask_path(i, j),
            pose: Pose::identity().to_row_major(),
            intrinsics: [k.f(), k.cx(), k.cy()],
            strategy: Strategy::Blocks,
            seed: entry_seed,
        }))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_ranges_give_identity() {
        let cfg = PoseSamplerConfig { translation_range: 0.0, yaw_range: 0.0, seed: 5 };
        for i in 0..20 {
            assert!(sample_pose(&cfg, i).is_identity());
        }
    }

    #[test]
    fn pose_samples_cover_their_ranges() {
        let cfg = PoseSamplerConfig::default();
        let n = 10_000;
        let samples: Vec<[f64; 3]> = (0..n)
            .map(|i| {
                let p = sample_pose(&cfg, i);
                let r = p.rotation();
                assert_eq!(p.translation().y, 0.0);
                assert!((r[(1, 1)] - 1.0).abs() < 1e-12);
                [p.translation().x, p.translation().z, r[(0, 2)].atan2(r[(0, 0)]).to_degrees()]
            })
            .collect();
        for (c, bound) in [(0, 1.0), (1, 1.0), (2, 15.0)] {
            let vals: Vec<f64> = samples.iter().map(|s| s[c]).collect();
            let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(min >= -bound && max <= bound, "component {c}: [{min}, {max}]");
            assert!(min < -0.99 * bound && max > 0.99 * bound);
            let mean = vals.iter().sum::<f64>() / n as f64;
            // uniform on [-b, b]: sigma of the mean is b / sqrt(3n)
            let sigma = bound / (3.0 * n as f64).sqrt();
            assert!(mean.abs() < 3.0 * sigma, "component {c}: mean {mean}");
        }
    }

    #[test]
    fn pose_sampling_is_deterministic() {
        let cfg = PoseSamplerConfig { seed: 42, ..Default::default() };
        assert_eq!(sample_pose(&cfg, 3), sample_pose(&cfg, 3));
        assert_ne!(sample_pose(&cfg, 3), sample_pose(&cfg, 4));
    }

    #[test]
    fn budget_for_exactly_one_block() {
        // fixed 10x10 blocks on a 100x100 frame; any second block adds at least one pixel
        let cfg = BlockRemovalConfig { max_removed_fraction: 0.01, block_side_range: (10, 10), seed: 0 };
        for seed in 0..50 {
            let m = random_block_mask(100, 100, &cfg, seed).unwrap();
            assert!(m.count() > 0 && m.count() <= 100, "seed {seed}: {}", m.count());
        }
        let below = BlockRemovalConfig { max_removed_fraction: 0.0099, ..cfg };
        let m = random_block_mask(100, 100, &below, 0).unwrap();
        assert!(m.count() < 100);
    }

    #[test]
    fn default_blocks_on_full_frame() {
        let cfg = BlockRemovalConfig::default();
        for seed in 0..10 {
            let m = random_block_mask(512, 384, &cfg, seed).unwrap();
            let frac = m.count() as f64 / (512.0 * 384.0);
            assert!(frac > 0.0 && frac <= 0.2, "{frac}");
            assert_eq!(m, random_block_mask(512, 384, &cfg, seed).unwrap());
        }
    }

    #[test]
    fn block_config_validation() {
        let bad = [
            BlockRemovalConfig { max_removed_fraction: 0.0, ..Default::default() },
            BlockRemovalConfig { max_removed_fraction: 1.5, ..Default::default() },
            BlockRemovalConfig { block_side_range: (0, 4), ..Default::default() },
            BlockRemovalConfig { block_side_range: (5, 4), ..Default::default() },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(Error::InvalidArgument(_))), "{cfg:?}");
        }
    }

    fn pair(w: usize, h: usize) -> TrainingPair {
        let complete = DepthImage::from_fn(w, h, |x, y| 1.0 + x as f32 * 0.1 + y as f32).unwrap();
        let mask = PixelMask::from_fn(w, h, |x, y| (x + 2 * y) % 3 == 0).unwrap();
        TrainingPair {
            occluded: complete.with_removed(&mask).unwrap(),
            complete,
            mask,
            intrinsics: CameraIntrinsics::new(50.0, 3.0, 2.0).unwrap(),
            pose: Pose::from_yaw_translation(0.2, 0.5, 0.0, -0.3),
        }
    }

    #[test]
    fn full_frame_without_flip_is_identity() {
        let p = pair(7, 5);
        assert_eq!(augment(&p, (7, 5), false, 9).unwrap(), p);
    }

    #[test]
    fn crop_larger_than_image_is_rejected() {
        assert!(matches!(augment(&pair(7, 5), (8, 5), false, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn flip_is_an_involution_and_keeps_mask_size() {
        let p = pair(9, 6);
        let once = augment(&p, (5, 4), true, 3).unwrap();
        let plain = augment(&p, (5, 4), false, 3).unwrap();
        assert_eq!(once.mask.count(), plain.mask.count());
        let twice = augment(&once, (5, 4), true, 3).unwrap();
        assert_eq!(twice, plain);
    }

    #[test]
    fn mirrored_pose_is_negated_yaw() {
        let p = Pose::from_yaw_translation(0.3, 0.4, 0.1, -0.2);
        let m = mirror_x(&p);
        assert!(m.max_abs_diff(&Pose::from_yaw_translation(-0.3, -0.4, 0.1, -0.2)) < 1e-12);
    }

    proptest! {
        #[test]
        fn mirror_matches_flipped_projection(yaw in -0.5f64..0.5, tx in -1.0f64..1.0, tz in -1.0f64..1.0,
                                             x in 0usize..9, y in 0usize..6, s in 0.5f64..5.0) {
            // projecting through the mirrored camera equals mirroring the projection
            let k = CameraIntrinsics::new(50.0, 3.5, 2.0).unwrap();
            let w = 9usize;
            let pose = Pose::from_yaw_translation(yaw, tx, 0.0, tz);
            let a = crate::warp::project_pixel(x as f64, y as f64, s, &k, &pose).unwrap();
            let kf = CameraIntrinsics::new(50.0, (w - 1) as f64 - 3.5, 2.0).unwrap();
            let b = crate::warp::project_pixel((w - 1 - x) as f64, y as f64, s, &kf, &mirror_x(&pose)).unwrap();
            prop_assert!((a.x - ((w - 1) as f64 - b.x)).abs() < 1e-9);
            prop_assert!((a.y - b.y).abs() < 1e-9);
            prop_assert!((a.depth - b.depth).abs() < 1e-9);
        }

        #[test]
        fn block_masks_respect_budget(w in 1usize..60, h in 1usize..60, frac in 0.01f64..1.0,
                                      lo in 1usize..10, extra in 0usize..10, seed in any::<u64>()) {
            let cfg = BlockRemovalConfig { max_removed_fraction: frac, block_side_range: (lo, lo + extra), seed };
            let m = random_block_mask(w, h, &cfg, seed).unwrap();
            prop_assert!(m.count() as f64 <= frac * (w * h) as f64 + 1e-6);
        }
    }
}

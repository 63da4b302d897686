//! Straightforward reference implementations used to check the library.
#![allow(dead_code, clippy::needless_range_loop)]

use depthwarp::camera::{CameraIntrinsics, Pose};
use depthwarp::datagen::{DatasetManifest, ManifestEntry, Strategy};
use depthwarp::image::{DepthImage, PixelMask};
use depthwarp::rng::DetRng;

pub type Mat4 = [[f64; 4]; 4];

pub fn mat4_mul(a: &Mat4, b: &Mat4) -> Mat4 {
    let mut c = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            for k in 0..4 {
                c[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    c
}

/// `[K 0; 0 1] [R T; 0 1] [K^-1 0; 0 1]` as a 4x4 matrix.
pub fn homogeneous_warp_matrix(k: &CameraIntrinsics, pose: &Pose) -> Mat4 {
    let (f, cx, cy) = (k.f(), k.cx(), k.cy());
    let kk = [[f, 0.0, cx, 0.0], [0.0, f, cy, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]];
    let kinv = [[1.0 / f, 0.0, -cx / f, 0.0], [0.0, 1.0 / f, -cy / f, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]];
    let m = pose.to_row_major();
    let rt = [
        [m[0], m[1], m[2], m[9]],
        [m[3], m[4], m[5], m[10]],
        [m[6], m[7], m[8], m[11]],
        [0.0, 0.0, 0.0, 1.0],
    ];
    mat4_mul(&kk, &mat4_mul(&rt, &kinv))
}

/// Target `(x', y', s')` of pixel `(x, y)` at depth `s`.
pub fn homogeneous_project(x: f64, y: f64, s: f64, k: &CameraIntrinsics, pose: &Pose) -> (f64, f64, f64) {
    let m = homogeneous_warp_matrix(k, pose);
    let p = [s * x, s * y, s, 1.0];
    let h: Vec<f64> = (0..4).map(|i| (0..4).map(|j| m[i][j] * p[j]).sum()).collect();
    (h[0] / h[2], h[1] / h[2], h[2])
}

/// Point-splatting warp written with plain loops: replicate pixels
/// `factor` times, scale the intrinsics, keep the nearest depth per target
/// (first writer on ties), then take the minimum known depth per block.
pub fn brute_force_warp(src: &DepthImage, k: &CameraIntrinsics, pose: &Pose, factor: usize) -> Vec<f32> {
    let (w, h) = (src.width(), src.height());
    let (uw, uh) = (w * factor, h * factor);
    let ku = CameraIntrinsics::new(k.f() * factor as f64, k.cx() * factor as f64, k.cy() * factor as f64).unwrap();
    let mut zbuf = vec![f32::INFINITY; uw * uh];
    for v in 0..uh {
        for u in 0..uw {
            let s = src.get(u / factor, v / factor);
            if s <= 0.0 {
                continue;
            }
            let (x, y, z) = homogeneous_project(u as f64, v as f64, s as f64, &ku, pose);
            if z <= 0.0 {
                continue;
            }
            let (xi, yi) = (x.round(), y.round());
            if xi < 0.0 || yi < 0.0 || xi >= uw as f64 || yi >= uh as f64 {
                continue;
            }
            let t = yi as usize * uw + xi as usize;
            if (z as f32) < zbuf[t] {
                zbuf[t] = z as f32;
            }
        }
    }
    let mut out = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut best = f32::INFINITY;
            for dy in 0..factor {
                for dx in 0..factor {
                    best = best.min(zbuf[(y * factor + dy) * uw + x * factor + dx]);
                }
            }
            out[y * w + x] = if best.is_finite() { best } else { 0.0 };
        }
    }
    out
}

/// `(d^2, dy, dx)` of the lexicographically smallest known pixel.
pub fn brute_force_nearest(img: &DepthImage, x: usize, y: usize) -> Option<(i64, i64, i64)> {
    let mut best = None;
    for sy in 0..img.height() {
        for sx in 0..img.width() {
            if img.get(sx, sy) > 0.0 {
                let (dx, dy) = (sx as i64 - x as i64, sy as i64 - y as i64);
                let cand = (dx * dx + dy * dy, dy, dx);
                if best.is_none_or(|b| cand < b) {
                    best = Some(cand);
                }
            }
        }
    }
    best
}

/// Random image with depths in `[0.5, 10)` and a fraction `holes` of
/// unknown pixels.
pub fn random_depth(rng: &mut DetRng, w: usize, h: usize, holes: f64) -> DepthImage {
    DepthImage::from_fn(w, h, |_, _| if rng.unit() < holes { 0.0 } else { rng.uniform(0.5, 10.0) as f32 }).unwrap()
}

pub fn random_mask(rng: &mut DetRng, w: usize, h: usize, p: f64) -> PixelMask {
    PixelMask::from_fn(w, h, |_, _| rng.unit() < p).unwrap()
}

pub fn random_pose(rng: &mut DetRng, max_angle: f64, max_t: f64) -> Pose {
    // rotation from a random unit quaternion scaled toward identity
    let axis = loop {
        let a = [rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)];
        let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
        if n > 0.1 && n <= 1.0 {
            break [a[0] / n, a[1] / n, a[2] / n];
        }
    };
    let angle = rng.uniform(-max_angle, max_angle);
    let (s, c) = angle.sin_cos();
    let [x, y, z] = axis;
    let t = 1.0 - c;
    // Rodrigues
    let r = [
        t * x * x + c,
        t * x * y - s * z,
        t * x * z + s * y,
        t * x * y + s * z,
        t * y * y + c,
        t * y * z - s * x,
        t * x * z - s * y,
        t * y * z + s * x,
        t * z * z + c,
    ];
    let mut m = [0.0; 12];
    m[..9].copy_from_slice(&r);
    for v in &mut m[9..] {
        *v = rng.uniform(-max_t, max_t);
    }
    Pose::from_row_major(&m).unwrap()
}

/// Connected components of `mask` under 4-connectivity.
pub fn components(mask: &PixelMask) -> Vec<Vec<(usize, usize)>> {
    let (w, h) = (mask.width(), mask.height());
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    for (x, y) in mask.iter_set() {
        if seen[y * w + x] {
            continue;
        }
        let mut comp = Vec::new();
        let mut stack = vec![(x, y)];
        seen[y * w + x] = true;
        while let Some((cx, cy)) = stack.pop() {
            comp.push((cx, cy));
            let mut nb = Vec::new();
            if cx > 0 {
                nb.push((cx - 1, cy));
            }
            if cx + 1 < w {
                nb.push((cx + 1, cy));
            }
            if cy > 0 {
                nb.push((cx, cy - 1));
            }
            if cy + 1 < h {
                nb.push((cx, cy + 1));
            }
            for (nx, ny) in nb {
                if mask.get(nx, ny) && !seen[ny * w + nx] {
                    seen[ny * w + nx] = true;
                    stack.push((nx, ny));
                }
            }
        }
        out.push(comp);
    }
    out
}

/// Reference feature map: gradient magnitude with one-sided differences at
/// the last row and column, average-pooled over `s x s` cells.
pub fn reference_features(img: &DepthImage, s: usize) -> Vec<Vec<f64>> {
    let (w, h) = (img.width(), img.height());
    let at = |x: usize, y: usize| img.get(x, y) as f64;
    let mut mag = vec![vec![0.0; w]; h];
    for y in 0..h {
        for x in 0..w {
            let gx = if w < 2 { 0.0 } else if x + 1 < w { at(x + 1, y) - at(x, y) } else { at(x, y) - at(x - 1, y) };
            let gy = if h < 2 { 0.0 } else if y + 1 < h { at(x, y + 1) - at(x, y) } else { at(x, y) - at(x, y - 1) };
            mag[y][x] = (gx * gx + gy * gy).sqrt();
        }
    }
    let (gw, gh) = (w.div_ceil(s), h.div_ceil(s));
    let mut grid = vec![vec![0.0; gw]; gh];
    for (cy, row) in grid.iter_mut().enumerate() {
        for (cx, cell) in row.iter_mut().enumerate() {
            let mut sum = 0.0;
            let mut n = 0;
            for y in cy * s..((cy + 1) * s).min(h) {
                for x in cx * s..((cx + 1) * s).min(w) {
                    sum += mag[y][x];
                    n += 1;
                }
            }
            *cell = sum / n as f64;
        }
    }
    grid
}

/// Reference content loss over the given pooling scales.
pub fn reference_content_loss(a: &DepthImage, b: &DepthImage, mask: &PixelMask, gamma: f64, scales: &[usize]) -> f64 {
    let mut total = 0.0;
    for &s in scales {
        let (fa, fb) = (reference_features(a, s), reference_features(b, s));
        for (cy, row) in fa.iter().enumerate() {
            for (cx, va) in row.iter().enumerate() {
                let in_mask = (cy * s..((cy + 1) * s).min(a.height()))
                    .any(|y| (cx * s..((cx + 1) * s).min(a.width())).any(|x| mask.get(x, y)));
                if in_mask {
                    total += (va - fb[cy][cx]).abs();
                }
            }
        }
    }
    gamma * total
}

/// Manifest with `n` entries of random poses, intrinsics and seeds.
pub fn random_manifest(rng: &mut DetRng, n: usize) -> DatasetManifest {
    let entries = (0..n)
        .map(|i| {
            let pose = random_pose(rng, 1.0, 2.0);
            ManifestEntry {
                complete: format!("images/img{i:05}.dpm"),
                occluded: format!("pairs/img{i:05}_pair000_occluded.dpm"),
                mask: format!("pairs/img{i:05}_pair000_mask.pgm"),
                pose: pose.to_row_major(),
                intrinsics: [rng.uniform(10.0, 900.0), rng.uniform(-5.0, 400.0), rng.uniform(-5.0, 300.0)],
                strategy: if rng.coin() { Strategy::Dual } else { Strategy::Blocks },
                seed: rng.next_u64(),
            }
        })
        .collect();
    DatasetManifest { entries }
}

//! On-disk formats shared with other tools. All binary formats are
//! little-endian; writers are deterministic and readers reject (never
//! repair) malformed input.
//!
//! | format | layout |
//! |--------|--------|
//! | depth raw | `"DPM1"`, `u32` width, `u32` height, `width*height` `f32` meters, row-major, `0` = unknown |
//! | depth png16 | 16-bit grayscale PNG, `value = round(depth * 1000 / scale)`, `0` = unknown |
//! | mask | binary PGM (`P5`, maxval 255), `255` = set, `0` = clear |
//! | flow | `"DFL1"`, `u32` width, `u32` height, interleaved `(dx, dy)` as `i16` |
//! | rgb | binary PPM (`P6`, maxval 255) |
//! | manifest | JSON Lines, one [`ManifestEntry`] per line |
//! | scene | line-oriented text, see [`write_scene`] |

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::camera::Pose;
use crate::datagen::{DatasetManifest, ManifestEntry};
use crate::error::{Error, Result};
use crate::image::{DepthImage, DisplacementField, PixelMask, RgbImage};
use crate::scene::{BoxPrimitive, Bounds, PlanePrimitive, Primitive, Scene};

pub const DEPTH_MAGIC: &[u8; 4] = b"DPM1";
pub const FLOW_MAGIC: &[u8; 4] = b"DFL1";
const HEADER_LEN: usize = 12;

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(bytes)?;
    w.flush()?;
    Ok(())
}

fn read_header(bytes: &[u8], magic: &[u8; 4], what: &str) -> Result<(usize, usize)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(format!("{what}: file shorter than its {HEADER_LEN}-byte header")));
    }
    if &bytes[..4] != magic {
        return Err(Error::format(format!(
            "{what}: bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&bytes[..4]),
            String::from_utf8_lossy(magic)
        )));
    }
    let w = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if w == 0 || h == 0 {
        return Err(Error::format(format!("{what}: zero dimension {w}x{h}")));
    }
    Ok((w, h))
}

fn header(magic: &[u8; 4], w: usize, h: usize) -> Result<Vec<u8>> {
    let w32 = u32::try_from(w).map_err(|_| Error::format("width exceeds u32"))?;
    let h32 = u32::try_from(h).map_err(|_| Error::format("height exceeds u32"))?;
    let mut out = Vec::with_capacity(HEADER_LEN);
    out.extend_from_slice(magic);
    out.extend_from_slice(&w32.to_le_bytes());
    out.extend_from_slice(&h32.to_le_bytes());
    Ok(out)
}

pub fn encode_depth_raw(img: &DepthImage) -> Result<Vec<u8>> {
    let mut out = header(DEPTH_MAGIC, img.width(), img.height())?;
    out.reserve(img.len() * 4);
    for d in img.data() {
        out.extend_from_slice(&d.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_depth_raw(bytes: &[u8]) -> Result<DepthImage> {
    let (w, h) = read_header(bytes, DEPTH_MAGIC, "depth")?;
    let payload = &bytes[HEADER_LEN..];
    let expected = w.checked_mul(h).and_then(|n| n.checked_mul(4));
    if expected != Some(payload.len()) {
        return Err(Error::format(format!(
            "depth: payload is {} bytes, expected {} for {w}x{h}",
            payload.len(),
            w * h * 4
        )));
    }
    let data: Vec<f32> = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    if let Some(i) = data.iter().position(|d| !d.is_finite() || d.is_sign_negative()) {
        return Err(Error::format(format!("depth: invalid value {} at pixel {i}", data[i])));
    }
    DepthImage::new(w, h, data).map_err(|e| Error::format(e.to_string()))
}

pub fn write_depth_raw(path: impl AsRef<Path>, img: &DepthImage) -> Result<()> {
    write_file(path.as_ref(), &encode_depth_raw(img)?)
}

pub fn read_depth_raw(path: impl AsRef<Path>) -> Result<DepthImage> {
    decode_depth_raw(&fs::read(path)?)
}

/// Writes a 16-bit PNG with `value = round(depth * 1000 / scale)`; `scale`
/// is millimeters per stored unit.
pub fn write_depth_png16(path: impl AsRef<Path>, img: &DepthImage, scale: f64) -> Result<()> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::invalid(format!("png16 scale must be positive, got {scale}")));
    }
    let mut raw = Vec::with_capacity(img.len() * 2);
    for (i, &d) in img.data().iter().enumerate() {
        let v = (d as f64 * 1000.0 / scale).round();
        if v > u16::MAX as f64 {
            return Err(Error::format(format!("depth {d} at pixel {i} does not fit in 16 bits at scale {scale}")));
        }
        raw.extend_from_slice(&(v as u16).to_be_bytes());
    }
    let file = fs::File::create(path)?;
    let mut enc = png::Encoder::new(BufWriter::new(file), img.width() as u32, img.height() as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Sixteen);
    let mut writer = enc.write_header().map_err(|e| Error::format(e.to_string()))?;
    writer.write_image_data(&raw).map_err(|e| Error::format(e.to_string()))?;
    writer.finish().map_err(|e| Error::format(e.to_string()))?;
    Ok(())
}

pub fn read_depth_png16(path: impl AsRef<Path>, scale: f64) -> Result<DepthImage> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::invalid(format!("png16 scale must be positive, got {scale}")));
    }
    let file = BufReader::new(fs::File::open(path)?);
    let decoder = png::Decoder::new(file);
    let mut reader = decoder.read_info().map_err(|e| Error::format(e.to_string()))?;
    let info = reader.info();
    if info.bit_depth != png::BitDepth::Sixteen || info.color_type != png::ColorType::Grayscale {
        return Err(Error::format(format!(
            "expected a 16-bit grayscale PNG, got {:?} {:?}",
            info.bit_depth, info.color_type
        )));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| Error::format("png: image too large"))?];
    let frame = reader.next_frame(&mut buf).map_err(|e| Error::format(e.to_string()))?;
    let bytes = &buf[..frame.buffer_size()];
    let data = bytes
        .chunks_exact(2)
        .map(|c| (u16::from_be_bytes([c[0], c[1]]) as f64 * scale / 1000.0) as f32)
        .collect();
    DepthImage::new(w, h, data).map_err(|e| Error::format(e.to_string()))
}

/// Parses a binary Netpbm header (`P5`/`P6`) and returns
/// `(width, height, payload offset)`.
fn parse_pnm_header(bytes: &[u8], magic: &[u8; 2]) -> Result<(usize, usize, usize)> {
    let what = String::from_utf8_lossy(magic);
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(Error::format(format!("expected a binary {what} file")));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|b| *b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(format!("{what}: malformed header")));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::format(format!("{what}: header number out of range")))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::format(format!("{what}: missing whitespace after header")));
    }
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(Error::format(format!("{what}: maxval must be 255, got {maxval}")));
    }
    if w == 0 || h == 0 {
        return Err(Error::format(format!("{what}: zero dimension {w}x{h}")));
    }
    Ok((w, h, pos + 1))
}

pub fn encode_mask(mask: &PixelMask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    out.extend(mask.bits().iter().map(|b| if *b { 255u8 } else { 0 }));
    out
}

pub fn decode_mask(bytes: &[u8]) -> Result<PixelMask> {
    let (w, h, off) = parse_pnm_header(bytes, b"P5")?;
    let payload = &bytes[off..];
    if payload.len() != w * h {
        return Err(Error::format(format!("mask: payload is {} bytes, expected {}", payload.len(), w * h)));
    }
    let bits = payload
        .iter()
        .enumerate()
        .map(|(i, v)| match v {
            0 => Ok(false),
            255 => Ok(true),
            other => Err(Error::format(format!("mask: value {other} at pixel {i}; only 0 and 255 are allowed"))),
        })
        .collect::<Result<Vec<_>>>()?;
    PixelMask::new(w, h, bits).map_err(|e| Error::format(e.to_string()))
}

pub fn write_mask(path: impl AsRef<Path>, mask: &PixelMask) -> Result<()> {
    write_file(path.as_ref(), &encode_mask(mask))
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<PixelMask> {
    decode_mask(&fs::read(path)?)
}

/// Reads a mask and checks it against the depth image it annotates.
pub fn read_mask_for(path: impl AsRef<Path>, companion: &DepthImage) -> Result<PixelMask> {
    let mask = read_mask(path)?;
    if !companion.same_dims(&mask) {
        return Err(Error::format(format!(
            "mask is {}x{} but its depth image is {}x{}",
            mask.width(),
            mask.height(),
            companion.width(),
            companion.height()
        )));
    }
    Ok(mask)
}

pub fn encode_flow(field: &DisplacementField) -> Result<Vec<u8>> {
    let mut out = header(FLOW_MAGIC, field.width(), field.height())?;
    out.reserve(field.offsets().len() * 4);
    for (i, &(dx, dy)) in field.offsets().iter().enumerate() {
        let (Ok(dx), Ok(dy)) = (i16::try_from(dx), i16::try_from(dy)) else {
            return Err(Error::format(format!("flow: displacement ({dx}, {dy}) at pixel {i} exceeds 16 bits")));
        };
        out.extend_from_slice(&dx.to_le_bytes());
        out.extend_from_slice(&dy.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_flow(bytes: &[u8]) -> Result<DisplacementField> {
    let (w, h) = read_header(bytes, FLOW_MAGIC, "flow")?;
    let payload = &bytes[HEADER_LEN..];
    if w.checked_mul(h).and_then(|n| n.checked_mul(4)) != Some(payload.len()) {
        return Err(Error::format(format!("flow: payload is {} bytes, expected {}", payload.len(), w * h * 4)));
    }
    let offsets = payload
        .chunks_exact(4)
        .map(|c| (i16::from_le_bytes([c[0], c[1]]) as i32, i16::from_le_bytes([c[2], c[3]]) as i32))
        .collect();
    DisplacementField::new(w, h, offsets).map_err(|e| Error::format(e.to_string()))
}

pub fn write_flow(path: impl AsRef<Path>, field: &DisplacementField) -> Result<()> {
    write_file(path.as_ref(), &encode_flow(field)?)
}

pub fn read_flow(path: impl AsRef<Path>) -> Result<DisplacementField> {
    decode_flow(&fs::read(path)?)
}

pub fn encode_rgb(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.pixels().iter().flatten());
    out
}

pub fn decode_rgb(bytes: &[u8]) -> Result<RgbImage> {
    let (w, h, off) = parse_pnm_header(bytes, b"P6")?;
    let payload = &bytes[off..];
    if payload.len() != w * h * 3 {
        return Err(Error::format(format!("rgb: payload is {} bytes, expected {}", payload.len(), w * h * 3)));
    }
    let pixels = payload.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    RgbImage::new(w, h, pixels).map_err(|e| Error::format(e.to_string()))
}

pub fn write_rgb(path: impl AsRef<Path>, img: &RgbImage) -> Result<()> {
    write_file(path.as_ref(), &encode_rgb(img))
}

pub fn read_rgb(path: impl AsRef<Path>) -> Result<RgbImage> {
    decode_rgb(&fs::read(path)?)
}

pub fn encode_manifest(manifest: &DatasetManifest) -> Result<String> {
    let mut out = String::new();
    for entry in &manifest.entries {
        out.push_str(&serde_json::to_string(entry).map_err(|e| Error::format(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn decode_manifest(text: &str) -> Result<DatasetManifest> {
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(line)
            .map_err(|e| Error::format(format!("manifest line {}: {e}", i + 1)))?;
        entry.validate().map_err(|e| Error::format(format!("manifest line {}: {e}", i + 1)))?;
        entries.push(entry);
    }
    Ok(DatasetManifest { entries })
}

pub fn write_manifest(path: impl AsRef<Path>, manifest: &DatasetManifest) -> Result<()> {
    write_file(path.as_ref(), encode_manifest(manifest)?.as_bytes())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let bytes = fs::read(path)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::format("manifest is not valid UTF-8"))?;
    decode_manifest(&text)
}

fn fmt_nums(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

/// Text form of a scene:
///
/// ```text
/// scene v1
/// bounds <minx> <miny> <minz> <maxx> <maxy> <maxz>
/// box <hx> <hy> <hz> <12 placement numbers: R row-major, then T>
/// plane <12 placement numbers>
/// ```
///
/// Numbers use the shortest representation that round-trips exactly.
pub fn encode_scene(scene: &Scene) -> String {
    let mut out = String::from("scene v1\n");
    let b = scene.bounds();
    out.push_str(&format!("bounds {}\n", fmt_nums(&[b.min[0], b.min[1], b.min[2], b.max[0], b.max[1], b.max[2]])));
    for p in scene.primitives() {
        match p {
            Primitive::Box(bx) => {
                let h = bx.half_extents;
                out.push_str(&format!("box {} {}\n", fmt_nums(&[h.x, h.y, h.z]), fmt_nums(&bx.placement.to_row_major())));
            }
            Primitive::Plane(pl) => {
                out.push_str(&format!("plane {}\n", fmt_nums(&pl.placement.to_row_major())));
            }
        }
    }
    out
}

pub fn decode_scene(text: &str) -> Result<Scene> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
    match lines.next() {
        Some((_, l)) if l.trim() == "scene v1" => {}
        _ => return Err(Error::format("scene: missing 'scene v1' header")),
    }
    let mut bounds = None;
    let mut primitives = Vec::new();
    for (i, line) in lines {
        let mut parts = line.split_whitespace();
        let kind = parts.next().unwrap();
        let nums = parts
            .map(|t| t.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| Error::format(format!("scene line {}: malformed number", i + 1)))?;
        let want = |n: usize| {
            if nums.len() == n {
                Ok(())
            } else {
                Err(Error::format(format!("scene line {}: '{kind}' takes {n} numbers, got {}", i + 1, nums.len())))
            }
        };
        let pose = |vals: &[f64]| {
            Pose::from_row_major(vals.try_into().unwrap())
                .map_err(|e| Error::format(format!("scene line {}: {e}", i + 1)))
        };
        match kind {
            "bounds" => {
                want(6)?;
                bounds = Some(Bounds { min: [nums[0], nums[1], nums[2]], max: [nums[3], nums[4], nums[5]] });
            }
            "box" => {
                want(15)?;
                if nums[..3].iter().any(|h| *h <= 0.0) {
                    return Err(Error::format(format!("scene line {}: box extents must be positive", i + 1)));
                }
                primitives.push(Primitive::Box(BoxPrimitive {
                    half_extents: Vector3::new(nums[0], nums[1], nums[2]),
                    placement: pose(&nums[3..])?,
                }));
            }
            "plane" => {
                want(12)?;
                primitives.push(Primitive::Plane(PlanePrimitive { placement: pose(&nums)? }));
            }
            other => return Err(Error::format(format!("scene line {}: unknown record '{other}'", i + 1))),
        }
    }
    let bounds = bounds.ok_or_else(|| Error::format("scene: missing bounds"))?;
    Scene::new(primitives, bounds).map_err(|e| Error::format(e.to_string()))
}

pub fn write_scene(path: impl AsRef<Path>, scene: &Scene) -> Result<()> {
    write_file(path.as_ref(), encode_scene(scene).as_bytes())
}

pub fn read_scene(path: impl AsRef<Path>) -> Result<Scene> {
    let mut text = String::new();
    BufReader::new(fs::File::open(path)?).read_to_string(&mut text)?;
    decode_scene(&text)
}

/// Loads a depth image, choosing the format by extension: `.png` is PNG16
/// at 1 mm per unit, anything else the raw format.
pub fn read_depth_auto(path: impl AsRef<Path>) -> Result<DepthImage> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("png") => read_depth_png16(path, 1.0),
        _ => read_depth_raw(path),
    }
}

pub fn write_depth_auto(path: impl AsRef<Path>, img: &DepthImage) -> Result<()> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("png") => write_depth_png16(path, img, 1.0),
        _ => write_depth_raw(path, img),
    }
}

/// Lines of a text file, for tools that take lists of paths.
pub fn read_lines(path: impl AsRef<Path>) -> Result<Vec<String>> {
    BufReader::new(fs::File::open(path)?).lines().map(|l| l.map_err(Error::from)).collect()
}

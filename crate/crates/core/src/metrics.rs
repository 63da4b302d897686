//! Error measures and training losses, evaluated on a pixel mask.

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::image::{ensure_same_dims, DepthImage, PixelMask, RgbImage};

fn require_nonempty(mask: &PixelMask) -> Result<()> {
    if mask.is_clear() {
        return Err(Error::invalid("mask is empty"));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MaskedErrors {
    #[serde(serialize_with = "float_or_tag")]
    pub mean: f64,
    /// Average of the two middle values for an even count.
    #[serde(serialize_with = "float_or_tag")]
    pub median: f64,
    /// Pixels that contributed.
    pub count: usize,
    /// Mask pixels skipped because the prediction is unknown there.
    pub excluded_unknown_pred: usize,
    /// Mask pixels skipped because the ground truth is unknown there.
    pub excluded_unknown_truth: usize,
}

/// Absolute depth error over mask pixels where both images are known.
/// Mean and median are NaN when no pixel qualifies.
pub fn masked_errors(pred: &DepthImage, truth: &DepthImage, mask: &PixelMask) -> Result<MaskedErrors> {
    ensure_same_dims(pred, truth)?;
    ensure_same_dims(pred, mask)?;
    require_nonempty(mask)?;
    let mut errs = Vec::new();
    let (mut no_pred, mut no_truth) = (0, 0);
    for (x, y) in mask.iter_set() {
        let (p, t) = (pred.get(x, y), truth.get(x, y));
        if t <= 0.0 {
            no_truth += 1;
        } else if p <= 0.0 {
            no_pred += 1;
        } else {
            errs.push((p as f64 - t as f64).abs());
        }
    }
    let count = errs.len();
    let (mean, median) = if count == 0 {
        (f64::NAN, f64::NAN)
    } else {
        errs.sort_by(f64::total_cmp);
        let median = if count % 2 == 1 { errs[count / 2] } else { (errs[count / 2 - 1] + errs[count / 2]) / 2.0 };
        (errs.iter().sum::<f64>() / count as f64, median)
    };
    Ok(MaskedErrors { mean, median, count, excluded_unknown_pred: no_pred, excluded_unknown_truth: no_truth })
}

/// `10 log10(255^2 / MSE)` over all channels of the mask pixels; infinite
/// when the images agree there.
pub fn psnr(pred: &RgbImage, truth: &RgbImage, mask: &PixelMask) -> Result<f64> {
    ensure_same_dims(pred, truth)?;
    ensure_same_dims(pred, mask)?;
    require_nonempty(mask)?;
    let mut sum = 0.0;
    for (x, y) in mask.iter_set() {
        let (a, b) = (pred.get(x, y), truth.get(x, y));
        for c in 0..3 {
            let d = a[c] as f64 - b[c] as f64;
            sum += d * d;
        }
    }
    let mse = sum / (3 * mask.count()) as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { 10.0 * (255.0f64 * 255.0 / mse).log10() })
}

/// Which image the content loss takes features from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ContentSource {
    /// The completed prediction.
    #[default]
    Prediction,
    /// The occluded network input.
    OccludedInput,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    /// Weight of the gradient term in the TV loss.
    pub lambda: f64,
    /// Weight of the content loss.
    pub gamma: f64,
    /// Average-pooling factors of the feature pyramid.
    pub feature_scales: Vec<usize>,
    pub content_source: ContentSource,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { lambda: 1e-3, gamma: 1e-5, feature_scales: vec![4, 8], content_source: ContentSource::Prediction }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.gamma >= 0.0) {
            return Err(Error::invalid("loss weights must be >= 0"));
        }
        if self.feature_scales.contains(&0) {
            return Err(Error::invalid("feature scales must be >= 1"));
        }
        Ok(())
    }
}

/// Forward differences `(d/dx, d/dy)`, switching to backward differences on
/// the last column and row. A single-pixel axis has derivative 0.
pub fn gradient(img: &DepthImage, x: usize, y: usize) -> (f64, f64) {
    let (w, h) = (img.width(), img.height());
    let at = |x: usize, y: usize| img.get(x, y) as f64;
    let gx = if w == 1 {
        0.0
    } else if x + 1 < w {
        at(x + 1, y) - at(x, y)
    } else {
        at(x, y) - at(x - 1, y)
    };
    let gy = if h == 1 {
        0.0
    } else if y + 1 < h {
        at(x, y + 1) - at(x, y)
    } else {
        at(x, y) - at(x, y - 1)
    };
    (gx, gy)
}

/// `sum over the mask of |truth - pred| + lambda (|d/dx pred| + |d/dy pred|)`.
pub fn loss_tv(pred: &DepthImage, truth: &DepthImage, mask: &PixelMask, cfg: &LossConfig) -> Result<f64> {
    ensure_same_dims(pred, truth)?;
    ensure_same_dims(pred, mask)?;
    Ok(mask
        .iter_set()
        .map(|(x, y)| {
            let (gx, gy) = gradient(pred, x, y);
            (truth.get(x, y) as f64 - pred.get(x, y) as f64).abs() + cfg.lambda * (gx.abs() + gy.abs())
        })
        .sum())
}

/// One pooled feature map.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureGrid {
    pub scale: usize,
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

/// Gradient-magnitude maps average-pooled by each scale factor. A grid at
/// scale `s` is `ceil(W/s) x ceil(H/s)`; edge cells average only the pixels
/// they cover.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePyramid {
    pub grids: Vec<FeatureGrid>,
}

impl FeaturePyramid {
    pub fn new(img: &DepthImage, scales: &[usize]) -> Result<Self> {
        if scales.contains(&0) {
            return Err(Error::invalid("feature scales must be >= 1"));
        }
        let (w, h) = (img.width(), img.height());
        let mag: Vec<f64> = (0..h)
            .flat_map(|y| (0..w).map(move |x| (x, y)))
            .map(|(x, y)| {
                let (gx, gy) = gradient(img, x, y);
                gx.hypot(gy)
            })
            .collect();
        let grids = scales
            .iter()
            .map(|&s| {
                let (gw, gh) = (w.div_ceil(s), h.div_ceil(s));
                let mut sums = vec![0.0; gw * gh];
                let mut counts = vec![0usize; gw * gh];
                for y in 0..h {
                    for x in 0..w {
                        let c = (y / s) * gw + x / s;
                        sums[c] += mag[y * w + x];
                        counts[c] += 1;
                    }
                }
                let values = sums.iter().zip(&counts).map(|(s, &n)| s / n as f64).collect();
                FeatureGrid { scale: s, width: gw, height: gh, values }
            })
            .collect();
        Ok(Self { grids })
    }
}

/// `gamma * sum over scales of sum over coarse mask cells |phi(features_of) - phi(truth)|`,
/// where a coarse cell belongs to the mask if any of its pixels does.
pub fn loss_content(features_of: &DepthImage, truth: &DepthImage, mask: &PixelMask, cfg: &LossConfig) -> Result<f64> {
    ensure_same_dims(features_of, truth)?;
    ensure_same_dims(features_of, mask)?;
    cfg.validate()?;
    if cfg.gamma == 0.0 {
        return Ok(0.0);
    }
    let a = FeaturePyramid::new(features_of, &cfg.feature_scales)?;
    let b = FeaturePyramid::new(truth, &cfg.feature_scales)?;
    let mut total = 0.0;
    for (ga, gb) in a.grids.iter().zip(&b.grids) {
        let mut coarse = vec![false; ga.width * ga.height];
        for (x, y) in mask.iter_set() {
            coarse[(y / ga.scale) * ga.width + x / ga.scale] = true;
        }
        total += coarse
            .iter()
            .enumerate()
            .filter(|(_, m)| **m)
            .map(|(i, _)| (ga.values[i] - gb.values[i]).abs())
            .sum::<f64>();
    }
    Ok(cfg.gamma * total)
}

/// `loss_tv + loss_content`. The content term uses `occluded` when the
/// config asks for the occluded input.
pub fn total_loss(
    pred: &DepthImage,
    truth: &DepthImage,
    occluded: Option<&DepthImage>,
    mask: &PixelMask,
    cfg: &LossConfig,
) -> Result<f64> {
    let features_of = content_input(pred, occluded, cfg)?;
    Ok(loss_tv(pred, truth, mask, cfg)? + loss_content(features_of, truth, mask, cfg)?)
}

fn content_input<'a>(pred: &'a DepthImage, occluded: Option<&'a DepthImage>, cfg: &LossConfig) -> Result<&'a DepthImage> {
    match cfg.content_source {
        ContentSource::Prediction => Ok(pred),
        ContentSource::OccludedInput => {
            occluded.ok_or_else(|| Error::invalid("content loss on the occluded input needs the occluded image"))
        }
    }
}

fn float_or_tag<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str(&fmt_float(*v))
    }
}

fn opt_float_or_tag<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(v) => float_or_tag(v, s),
        None => s.serialize_none(),
    }
}

fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        v.to_string()
    }
}

/// Everything `eval` reports. Non-finite numbers are written as the strings
/// `"inf"` and `"nan"` in JSON.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    #[serde(flatten)]
    pub errors: MaskedErrors,
    pub mask_pixels: usize,
    pub loss_tv: f64,
    pub loss_content: f64,
    pub loss_total: f64,
    pub content_source: ContentSource,
    #[serde(serialize_with = "opt_float_or_tag", skip_serializing_if = "Option::is_none")]
    pub psnr: Option<f64>,
}

impl MetricsReport {
    pub fn compute(
        pred: &DepthImage,
        truth: &DepthImage,
        occluded: Option<&DepthImage>,
        mask: &PixelMask,
        cfg: &LossConfig,
    ) -> Result<Self> {
        let errors = masked_errors(pred, truth, mask)?;
        let tv = loss_tv(pred, truth, mask, cfg)?;
        let content = loss_content(content_input(pred, occluded, cfg)?, truth, mask, cfg)?;
        Ok(Self {
            errors,
            mask_pixels: mask.count(),
            loss_tv: tv,
            loss_content: content,
            loss_total: tv + content,
            content_source: cfg.content_source,
            psnr: None,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One `key=value` pair per line.
    pub fn to_text(&self) -> String {
        let e = &self.errors;
        let mut lines = vec![
            format!("mean={}", fmt_float(e.mean)),
            format!("median={}", fmt_float(e.median)),
            format!("count={}", e.count),
            format!("excluded_unknown_pred={}", e.excluded_unknown_pred),
            format!("excluded_unknown_truth={}", e.excluded_unknown_truth),
            format!("mask_pixels={}", self.mask_pixels),
            format!("loss_tv={}", fmt_float(self.loss_tv)),
            format!("loss_content={}", fmt_float(self.loss_content)),
            format!("loss_total={}", fmt_float(self.loss_total)),
        ];
        if let Some(p) = self.psnr {
            lines.push(format!("psnr={}", fmt_float(p)));
        }
        lines.join("\n") + "\n"
    }
}

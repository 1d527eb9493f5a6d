//! Execution of an input's ordered pre-processing steps.
//!
//! Fixed semantics:
//! - center crop: `H' = floor(H * p / 100)`, window offset `floor((H - H') / 2)`;
//! - bilinear resize: half-pixel centers, `src = (dst + 0.5) * in / out - 0.5`
//!   clamped to `[0, in - 1]`, float32 arithmetic, byte output rounded half
//!   away from zero;
//! - `keep_aspect_ratio`: scale so both sides cover the target, then center
//!   crop to it;
//! - normalization follows the cast step's [`OrderPolicy`].
//!
//! Steps never get reordered.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::doc::{self, Value};
use crate::image::{
    convert_color_layout, decode_image, DecodeOptions, DecoderRegistry, ImageBuffer, ImageError,
    ImageFormat, PixelData,
};
use crate::manifest::{
    self, CastStep, ColorLayout, DataLayout, DctMethod, DecodeStep, ElementType, InputSpec,
    ManifestError, OrderPolicy, ProcessingStep, ResizeStep,
};
use crate::tensor::{to_layout, Tensor, TensorError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("step {index} ({kind}): {source}")]
    Step {
        index: usize,
        kind: &'static str,
        #[source]
        source: StepError,
    },
    #[error(transparent)]
    Override(#[from] OverrideError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StepError {
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Normalization(#[from] NormalizationError),
    #[error("resize to {0:?} is invalid: dimensions must be [C, H, W] with C matching the image")]
    ResizeDims(Vec<usize>),
    #[error("cannot convert to {0}")]
    Cast(ElementType),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NormalizationError {
    #[error("rescale must not be zero")]
    ZeroRescale,
    #[error("rescale {0} rounds to zero in the byte domain")]
    ZeroIntegerRescale(f64),
    #[error("{expected} mean values needed, got {actual}")]
    MeanLength { expected: usize, actual: usize },
    #[error("byte-domain normalization needs uint8 input")]
    NotBytes,
}

trait Sample: Copy {
    fn to_f32(self) -> f32;
    fn from_f32(v: f32) -> Self;
}

impl Sample for u8 {
    fn to_f32(self) -> f32 {
        f32::from(self)
    }
    fn from_f32(v: f32) -> Self {
        v.round().clamp(0.0, 255.0) as u8
    }
}

impl Sample for i32 {
    fn to_f32(self) -> f32 {
        self as f32
    }
    fn from_f32(v: f32) -> Self {
        v.round() as i32
    }
}

impl Sample for f32 {
    fn to_f32(self) -> f32 {
        self
    }
    fn from_f32(v: f32) -> Self {
        v
    }
}

macro_rules! map_pixels {
    ($data:expr, |$d:ident| $body:expr) => {
        match $data {
            PixelData::U8($d) => PixelData::U8($body),
            PixelData::I32($d) => PixelData::I32($body),
            PixelData::F32($d) => PixelData::F32($body),
        }
    };
}

/// Output side of a center crop: `floor(len * p / 100)`.
pub fn crop_extent(len: usize, percentage: f64) -> usize {
    (len as f64 * percentage / 100.0).floor() as usize
}

/// Copies the `h x w` window whose top-left corner is `(top, left)`.
pub fn crop_window(
    img: &ImageBuffer,
    top: usize,
    left: usize,
    h: usize,
    w: usize,
) -> Result<ImageBuffer, ImageError> {
    if top + h > img.height || left + w > img.width {
        return Err(ImageError::CropOutOfBounds {
            top,
            left,
            h,
            w,
            height: img.height,
            width: img.width,
        });
    }
    let c = img.channels;
    fn window<T: Copy>(d: &[T], width: usize, c: usize, top: usize, left: usize, h: usize, w: usize) -> Vec<T> {
        let mut out = Vec::with_capacity(h * w * c);
        for y in top..top + h {
            let start = (y * width + left) * c;
            out.extend_from_slice(&d[start..start + w * c]);
        }
        out
    }
    let data = map_pixels!(&img.data, |d| window(d, img.width, c, top, left, h, w));
    Ok(ImageBuffer {
        width: w,
        height: h,
        data,
        ..*img
    })
}

pub fn center_crop(img: &ImageBuffer, percentage: f64) -> Result<ImageBuffer, ImageError> {
    let h = crop_extent(img.height, percentage);
    let w = crop_extent(img.width, percentage);
    if !(percentage > 0.0 && percentage <= 100.0) || h == 0 || w == 0 {
        return Err(ImageError::DegenerateCrop {
            height: img.height,
            width: img.width,
            percentage,
        });
    }
    crop_window(img, (img.height - h) / 2, (img.width - w) / 2, h, w)
}

/// Source taps for one axis: `(i0, i1, w0, w1)` per output coordinate.
fn axis_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f32, f32)> {
    let scale = in_len as f32 / out_len as f32;
    let max = (in_len - 1) as f32;
    (0..out_len)
        .map(|o| {
            let src = ((o as f32 + 0.5) * scale - 0.5).clamp(0.0, max);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(in_len - 1);
            let frac = src - i0 as f32;
            (i0, i1, 1.0 - frac, frac)
        })
        .collect()
}

fn resize_plane<T: Sample>(d: &[T], h: usize, w: usize, c: usize, oh: usize, ow: usize) -> Vec<T> {
    let ys = axis_taps(h, oh);
    let xs = axis_taps(w, ow);
    let mut out = Vec::with_capacity(oh * ow * c);
    for &(y0, y1, wy0, wy1) in &ys {
        for &(x0, x1, wx0, wx1) in &xs {
            for ch in 0..c {
                let p = |y: usize, x: usize| d[(y * w + x) * c + ch].to_f32();
                let v = (p(y0, x0) * wx0 + p(y0, x1) * wx1) * wy0 + (p(y1, x0) * wx0 + p(y1, x1) * wx1) * wy1;
                out.push(T::from_f32(v));
            }
        }
    }
    out
}

/// Bilinear resize to `out_h x out_w`. Sizes of zero are clamped to one.
pub fn resize_bilinear(img: &ImageBuffer, out_h: usize, out_w: usize, keep_aspect_ratio: bool) -> ImageBuffer {
    let (oh, ow) = (out_h.max(1), out_w.max(1));
    if img.width == 0 || img.height == 0 {
        return img.clone();
    }
    if keep_aspect_ratio {
        let scale = (oh as f64 / img.height as f64).max(ow as f64 / img.width as f64);
        let ih = ((img.height as f64 * scale).round() as usize).max(oh);
        let iw = ((img.width as f64 * scale).round() as usize).max(ow);
        let scaled = resize_bilinear(img, ih, iw, false);
        return crop_window(&scaled, (ih - oh) / 2, (iw - ow) / 2, oh, ow)
            .expect("window lies inside the scaled image");
    }
    let c = img.channels;
    let data = map_pixels!(&img.data, |d| resize_plane(d, img.height, img.width, c, oh, ow));
    ImageBuffer {
        width: ow,
        height: oh,
        data,
        ..*img
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub mean: Vec<f64>,
    pub rescale: f64,
    pub order_policy: OrderPolicy,
}

fn channel_mean(mean: &[f64], c: usize) -> Result<Vec<f64>, NormalizationError> {
    match mean.len() {
        1 => Ok(vec![mean[0]; c]),
        n if n == c => Ok(mean.to_vec()),
        n => Err(NormalizationError::MeanLength { expected: c, actual: n }),
    }
}

fn integer_rescale(rescale: f64) -> Result<i32, NormalizationError> {
    if rescale == 0.0 {
        return Err(NormalizationError::ZeroRescale);
    }
    match rescale.round() as i32 {
        0 => Err(NormalizationError::ZeroIntegerRescale(rescale)),
        r => Ok(r),
    }
}

/// Subtracts a per-channel mean. Byte data moves to float32 or, under
/// the byte-domain policy, to the integer intermediate.
pub fn subtract_mean(img: &ImageBuffer, mean: &[f64], policy: OrderPolicy) -> Result<ImageBuffer, NormalizationError> {
    let c = img.channels;
    let mean = channel_mean(mean, c)?;
    let data = match (&img.data, policy) {
        (PixelData::U8(d), OrderPolicy::NormalizeInBytesThenConvert) => {
            let m: Vec<i32> = mean.iter().map(|m| m.round() as i32).collect();
            PixelData::I32(d.iter().enumerate().map(|(i, &x)| i32::from(x) - m[i % c]).collect())
        }
        (PixelData::I32(d), _) => {
            let m: Vec<i32> = mean.iter().map(|m| m.round() as i32).collect();
            PixelData::I32(d.iter().enumerate().map(|(i, &x)| x - m[i % c]).collect())
        }
        (data, _) => {
            let m: Vec<f32> = mean.iter().map(|&m| m as f32).collect();
            PixelData::F32(data.to_f32().iter().enumerate().map(|(i, &x)| x - m[i % c]).collect())
        }
    };
    Ok(ImageBuffer { data, ..*img })
}

/// Divides by `rescale`; integer division truncates toward zero.
pub fn divide_rescale(img: &ImageBuffer, rescale: f64, policy: OrderPolicy) -> Result<ImageBuffer, NormalizationError> {
    if rescale == 0.0 {
        return Err(NormalizationError::ZeroRescale);
    }
    let data = match (&img.data, policy) {
        (PixelData::U8(d), OrderPolicy::NormalizeInBytesThenConvert) => {
            let r = integer_rescale(rescale)?;
            PixelData::I32(d.iter().map(|&x| i32::from(x) / r).collect())
        }
        (PixelData::I32(d), _) => {
            let r = integer_rescale(rescale)?;
            PixelData::I32(d.iter().map(|&x| x / r).collect())
        }
        (data, _) => {
            let r = rescale as f32;
            PixelData::F32(data.to_f32().iter().map(|&x| x / r).collect())
        }
    };
    Ok(ImageBuffer { data, ..*img })
}

/// Mean subtraction, rescale and conversion to float32 in the order the
/// policy names. Only byte input is accepted.
pub fn normalize_and_cast(img: &ImageBuffer, p: &NormalizationParams) -> Result<ImageBuffer, NormalizationError> {
    if img.as_u8().is_none() {
        return Err(NormalizationError::NotBytes);
    }
    if p.rescale == 0.0 {
        return Err(NormalizationError::ZeroRescale);
    }
    let centered = subtract_mean(img, &p.mean, p.order_policy)?;
    let scaled = divide_rescale(&centered, p.rescale, p.order_policy)?;
    Ok(cast(&scaled, ElementType::Float32))
}

/// Converts pixel storage. Float to byte rounds half away from zero and
/// saturates; int8 saturates to `[-128, 127]` and is held as float32.
pub fn cast(img: &ImageBuffer, target: ElementType) -> ImageBuffer {
    let data = match (target, &img.data) {
        (ElementType::Uint8, PixelData::U8(_)) => img.data.clone(),
        (ElementType::Uint8, d) => PixelData::U8(d.to_f32().into_iter().map(u8::from_f32).collect()),
        (ElementType::Float32, d) => PixelData::F32(d.to_f32()),
        (ElementType::Int8, d) => PixelData::F32(
            d.to_f32()
                .into_iter()
                .map(|v| v.round().clamp(-128.0, 127.0))
                .collect(),
        ),
    };
    ImageBuffer { data, ..*img }
}

/// One executed step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub index: usize,
    pub step: String,
    pub params: serde_json::Value,
    /// Inserted by the engine rather than listed in the manifest.
    pub implicit: bool,
    /// `[H, W, C]` after the step.
    pub output_shape: [usize; 3],
}

/// What the pipeline did, in execution order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub steps: Vec<StepRecord>,
    pub format: String,
    pub decoder: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dct_method: Option<DctMethod>,
    pub order_policy: OrderPolicy,
    pub color_layout: ColorLayout,
    pub data_layout: DataLayout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub tensor: Tensor,
    pub provenance: Provenance,
}

fn record(steps: &mut Vec<StepRecord>, index: usize, step: &ProcessingStep, implicit: bool, img: &ImageBuffer) {
    steps.push(StepRecord {
        index,
        step: step.kind().to_string(),
        params: manifest::step_to_value(step).to_json(),
        implicit,
        output_shape: [img.height, img.width, img.channels],
    });
}

/// The order policy in effect: the first cast step's, else
/// convert-then-normalize.
pub fn order_policy(spec: &InputSpec) -> OrderPolicy {
    spec.processing
        .iter()
        .find_map(|s| match s {
            ProcessingStep::Cast(c) => Some(c.order_policy),
            _ => None,
        })
        .unwrap_or(OrderPolicy::ConvertThenNormalize)
}

/// Runs `spec`'s steps on `raw` with the registry's default JPEG decoder.
pub fn run_pipeline(spec: &InputSpec, raw: &[u8], decoders: &DecoderRegistry) -> Result<PipelineOutput, PipelineError> {
    run_pipeline_with_decoder(spec, raw, decoders, None)
}

pub fn run_pipeline_with_decoder(
    spec: &InputSpec,
    raw: &[u8],
    decoders: &DecoderRegistry,
    jpeg_decoder: Option<&str>,
) -> Result<PipelineOutput, PipelineError> {
    let policy = order_policy(spec);
    let decode = spec.effective_decode();
    let fail = |index: usize, kind: &'static str| move |e: StepError| PipelineError::Step { index, kind, source: e };

    let opts = DecodeOptions {
        color_layout: decode.color_layout,
        dct_method: decode.dct_method.unwrap_or(DctMethod::IntegerAccurate),
        jpeg_decoder,
    };
    let (mut img, info) = decode_image(raw, &opts, decoders).map_err(|e| fail(0, "decode")(e.into()))?;

    let mut records = Vec::with_capacity(spec.processing.len() + 2);
    let explicit_decode = matches!(spec.processing.first(), Some(ProcessingStep::Decode(_)));
    if !explicit_decode {
        record(&mut records, 0, &ProcessingStep::Decode(decode.clone()), true, &img);
    }
    let offset = usize::from(!explicit_decode);

    for (i, step) in spec.processing.iter().enumerate() {
        let index = i + offset;
        let kind = step.kind();
        img = match step {
            ProcessingStep::Decode(d) => {
                if i != 0 {
                    return Err(fail(index, kind)(StepError::Image(ImageError::Malformed {
                        format: "pipeline",
                        reason: "decode must be the first step".into(),
                    })));
                }
                convert_color_layout(&img, d.color_layout)
            }
            ProcessingStep::Crop(c) => center_crop(&img, c.percentage).map_err(|e| fail(index, kind)(e.into()))?,
            ProcessingStep::Resize(r) => resize_step(&img, r).map_err(fail(index, kind))?,
            ProcessingStep::Mean { values } => {
                subtract_mean(&img, values, policy).map_err(|e| fail(index, kind)(e.into()))?
            }
            ProcessingStep::Rescale { value } => {
                divide_rescale(&img, *value, policy).map_err(|e| fail(index, kind)(e.into()))?
            }
            ProcessingStep::Cast(c) => {
                if c.element_type == ElementType::Int8 {
                    return Err(fail(index, kind)(StepError::Cast(c.element_type)));
                }
                cast(&img, c.element_type)
            }
        };
        record(&mut records, index, step, false, &img);
    }

    if spec.element_type != final_type(&img) {
        let step = ProcessingStep::Cast(CastStep {
            element_type: spec.element_type,
            order_policy: policy,
        });
        img = cast(&img, spec.element_type);
        let index = records.len();
        record(&mut records, index, &step, true, &img);
    }

    let nhwc = Tensor::new(
        vec![1, img.height, img.width, img.channels],
        DataLayout::Nhwc,
        spec.element_type,
        img.data.to_f32(),
    )
    .map_err(|e| fail(records.len(), "layout")(e.into()))?;
    let tensor = to_layout(&nhwc, decode.data_layout).map_err(|e| fail(records.len(), "layout")(e.into()))?;

    Ok(PipelineOutput {
        tensor,
        provenance: Provenance {
            steps: records,
            format: format_name(info.format).to_string(),
            decoder: info.decoder,
            dct_method: info.dct_method,
            order_policy: policy,
            color_layout: img.color_layout,
            data_layout: decode.data_layout,
        },
    })
}

fn final_type(img: &ImageBuffer) -> ElementType {
    match img.data {
        PixelData::U8(_) => ElementType::Uint8,
        PixelData::I32(_) => ElementType::Int8, // never equal to a declared type; forces the closing cast
        PixelData::F32(_) => ElementType::Float32,
    }
}

fn format_name(f: ImageFormat) -> &'static str {
    match f {
        ImageFormat::Ppm => "ppm",
        ImageFormat::Png => "png",
        ImageFormat::Jpeg => "jpeg",
    }
}

fn resize_step(img: &ImageBuffer, r: &ResizeStep) -> Result<ImageBuffer, StepError> {
    if r.dimensions.len() != 3 || r.channels() != img.channels || r.height() == 0 || r.width() == 0 {
        return Err(StepError::ResizeDims(r.dimensions.clone()));
    }
    Ok(resize_bilinear(img, r.height(), r.width(), r.keep_aspect_ratio))
}

// ---------------------------------------------------------------------------
// Overrides

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OverrideError {
    #[error("override `{0}` is not of the form key=value")]
    Syntax(String),
    #[error("override `{key}`: no `{step}` step to override")]
    MissingStep { key: String, step: String },
    #[error("override `{key}`: unknown key")]
    UnknownKey { key: String },
    #[error("override `{key}={value}`: {reason}")]
    Invalid { key: String, value: String, reason: String },
}

/// Step-parameter overrides. Keys are kept sorted so equal override sets
/// compare and serialize identically.
///
/// Keys:
/// - `color_layout`, `data_layout`, `dct_method`: decode parameters;
/// - `<step>.<param>`: one parameter on every step of that kind;
/// - `<step>`: `skip`/`off`/`none` drops the step, anything else replaces
///   its whole value (e.g. `mean=[0, 0, 0]`);
/// - `order_policy`: the normalization order, adding a cast step if needed;
/// - `jpeg_decoder`: the JPEG decoder plug-in, by name.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PipelineOverrides(pub BTreeMap<String, String>);

impl PipelineOverrides {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: &str, value: &str) -> Self {
        self.0.insert(key.to_string(), value.to_string());
        self
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Parses `key=value` items.
    pub fn parse<'a>(items: impl IntoIterator<Item = &'a str>) -> Result<Self, OverrideError> {
        let mut out = Self::new();
        for item in items {
            let (k, v) = item
                .split_once('=')
                .filter(|(k, _)| !k.trim().is_empty())
                .ok_or_else(|| OverrideError::Syntax(item.to_string()))?;
            out.0.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(out)
    }

    pub fn jpeg_decoder(&self) -> Option<&str> {
        self.0.get("jpeg_decoder").map(String::as_str)
    }

    /// Short human label, e.g. for result tables.
    pub fn label(&self) -> String {
        if self.is_empty() {
            return "Baseline".into();
        }
        self.0
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(", ")
    }

    /// `spec` with the overrides merged in. Step order is preserved.
    pub fn apply(&self, spec: &InputSpec) -> Result<InputSpec, OverrideError> {
        let mut out = spec.clone();
        for (key, value) in &self.0 {
            apply_one(&mut out, key, value)?;
        }
        Ok(out)
    }
}

impl fmt::Display for PipelineOverrides {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

const STEP_KINDS: [&str; 6] = ["decode", "crop", "resize", "mean", "rescale", "cast"];

fn invalid(key: &str, value: &str, reason: impl fmt::Display) -> OverrideError {
    OverrideError::Invalid {
        key: key.to_string(),
        value: value.to_string(),
        reason: reason.to_string(),
    }
}

/// Reads an override value as a document fragment so `[1, 2, 3]` becomes
/// a sequence.
fn fragment(key: &str, value: &str) -> Result<Value, OverrideError> {
    let node = doc::parse(&format!("v: {value}")).map_err(|e| invalid(key, value, e))?;
    Ok(node.get("v").map(|n| n.to_value()).unwrap_or(Value::str("")))
}

fn reparse(kind: &str, v: &Value, key: &str, value: &str) -> Result<ProcessingStep, OverrideError> {
    manifest::parse_step(kind, v).map_err(|e: ManifestError| invalid(key, value, e))
}

fn apply_one(spec: &mut InputSpec, key: &str, value: &str) -> Result<(), OverrideError> {
    match key {
        "jpeg_decoder" => Ok(()),
        "color_layout" | "data_layout" | "dct_method" => {
            if spec.decode_step().is_none() {
                match key {
                    "color_layout" => {
                        spec.color_layout = Some(value.parse().map_err(|_| invalid(key, value, "unknown color layout"))?);
                        return Ok(());
                    }
                    "data_layout" => {
                        spec.layout = Some(value.parse().map_err(|_| invalid(key, value, "unknown data layout"))?);
                        return Ok(());
                    }
                    _ => {
                        let decode = DecodeStep {
                            element_type: ElementType::Uint8,
                            ..spec.effective_decode()
                        };
                        spec.processing.insert(0, ProcessingStep::Decode(decode));
                    }
                }
            }
            set_param(spec, "decode", key, key, value)
        }
        "order_policy" => {
            let policy: OrderPolicy = value.parse().map_err(|_| invalid(key, value, "unknown order policy"))?;
            let mut found = false;
            for step in &mut spec.processing {
                if let ProcessingStep::Cast(c) = step {
                    c.order_policy = policy;
                    found = true;
                }
            }
            if !found {
                spec.processing.push(ProcessingStep::Cast(CastStep {
                    element_type: ElementType::Float32,
                    order_policy: policy,
                }));
            }
            Ok(())
        }
        _ => {
            let (kind, param) = match key.split_once('.') {
                Some((k, p)) => (k, Some(p)),
                None => (key, None),
            };
            if !STEP_KINDS.contains(&kind) {
                return Err(OverrideError::UnknownKey { key: key.to_string() });
            }
            if !spec.processing.iter().any(|s| s.kind() == kind) {
                return Err(OverrideError::MissingStep {
                    key: key.to_string(),
                    step: kind.to_string(),
                });
            }
            match param {
                Some(p) => set_param(spec, kind, p, key, value),
                None if matches!(value.to_ascii_lowercase().as_str(), "skip" | "off" | "none") => {
                    spec.processing.retain(|s| s.kind() != kind);
                    Ok(())
                }
                None => {
                    let v = fragment(key, value)?;
                    let replacement = reparse(kind, &v, key, value)?;
                    for step in &mut spec.processing {
                        if step.kind() == kind {
                            *step = replacement.clone();
                        }
                    }
                    Ok(())
                }
            }
        }
    }
}

fn set_param(spec: &mut InputSpec, kind: &str, param: &str, key: &str, value: &str) -> Result<(), OverrideError> {
    let v = fragment(key, value)?;
    for step in &mut spec.processing {
        if step.kind() != kind {
            continue;
        }
        let Value::Map(mut entries) = manifest::step_to_value(step) else {
            return Err(invalid(key, value, format!("`{kind}` has no named parameters")));
        };
        match entries.iter_mut().find(|(k, _)| k == param) {
            Some((_, slot)) => *slot = v.clone(),
            None => entries.push((param.to_string(), v.clone())),
        }
        *step = reparse(kind, &Value::Map(entries), key, value)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::encode_ppm;

    fn rgb(w: usize, h: usize, f: impl Fn(usize, usize, usize) -> u8) -> ImageBuffer {
        let mut data = Vec::with_capacity(w * h * 3);
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    data.push(f(y, x, c));
                }
            }
        }
        ImageBuffer::from_u8(w, h, ColorLayout::Rgb, data).unwrap()
    }

    #[test]
    fn checkerboard_to_one_pixel() {
        let img = rgb(2, 2, |y, x, _| if (x + y) % 2 == 0 { 0 } else { 255 });
        let out = resize_bilinear(&img, 1, 1, false);
        assert_eq!(out.as_u8().unwrap(), &[128, 128, 128]);
    }

    #[test]
    fn resize_identity() {
        let img = rgb(5, 3, |y, x, c| (y * 50 + x * 7 + c) as u8);
        assert_eq!(resize_bilinear(&img, 3, 5, false), img);
    }

    #[test]
    fn crop_extents() {
        assert_eq!(crop_extent(299, 87.5), 261);
        assert_eq!(crop_extent(512, 87.5), 448);
        let img = rgb(299, 299, |y, x, c| ((y + x + c) % 256) as u8);
        let out = center_crop(&img, 87.5).unwrap();
        assert_eq!((out.height, out.width), (261, 261));
        assert_eq!(out.pixel_u8(0, 0), img.pixel_u8(19, 19));
        assert_eq!(center_crop(&img, 100.0).unwrap(), img);
        assert!(matches!(center_crop(&rgb(1, 1, |_, _, _| 0), 50.0), Err(ImageError::DegenerateCrop { .. })));
    }

    #[test]
    fn keep_aspect_ratio_fills_then_crops() {
        let img = rgb(8, 4, |_, x, _| (x * 30) as u8);
        let out = resize_bilinear(&img, 2, 2, true);
        assert_eq!((out.height, out.width), (2, 2));
        // 4x8 scaled by 0.5 -> 2x4, middle two columns kept
        let scaled = resize_bilinear(&img, 2, 4, false);
        assert_eq!(out, crop_window(&scaled, 0, 1, 2, 2).unwrap());
    }

    #[test]
    fn normalization_examples() {
        let img = ImageBuffer::new(2, 1, 1, ColorLayout::Rgb, PixelData::U8(vec![255, 127])).unwrap();
        let a = NormalizationParams {
            mean: vec![127.5],
            rescale: 127.5,
            order_policy: OrderPolicy::ConvertThenNormalize,
        };
        let out = normalize_and_cast(&img, &a).unwrap();
        let d = out.as_f32().unwrap();
        assert_eq!(d[0], 1.0);
        assert!((d[1] - (-0.5 / 127.5)).abs() < 1e-7);
        let b = NormalizationParams {
            order_policy: OrderPolicy::NormalizeInBytesThenConvert,
            ..a.clone()
        };
        assert_eq!(normalize_and_cast(&img, &b).unwrap().as_f32().unwrap(), &[0.0, 0.0]);
        let zero = NormalizationParams { rescale: 0.0, ..a };
        assert_eq!(normalize_and_cast(&img, &zero), Err(NormalizationError::ZeroRescale));
    }

    #[test]
    fn overrides_merge_by_kind() {
        let m = manifest::parse_manifest(include_str!("../fixtures/manifests/inception_v3.yml")).unwrap();
        let spec = &m.inputs[0];
        let ov = PipelineOverrides::new().with("color_layout", "BGR").with("crop", "skip");
        let out = ov.apply(spec).unwrap();
        assert_eq!(out.effective_decode().color_layout, ColorLayout::Bgr);
        let kinds: Vec<_> = out.processing.iter().map(|s| s.kind()).collect();
        assert_eq!(kinds, ["decode", "resize", "mean", "rescale"]);

        let ov = PipelineOverrides::parse(["crop.percentage=50", "order_policy=normalize_in_bytes_then_convert"]).unwrap();
        let out = ov.apply(spec).unwrap();
        assert!(matches!(&out.processing[1], ProcessingStep::Crop(c) if c.percentage == 50.0));
        assert_eq!(order_policy(&out), OrderPolicy::NormalizeInBytesThenConvert);

        let bad = PipelineOverrides::new().with("resize.nope", "1");
        assert!(matches!(bad.apply(spec), Err(OverrideError::Invalid { .. })));
        let mut no_crop = spec.clone();
        no_crop.processing.retain(|s| s.kind() != "crop");
        assert!(matches!(
            PipelineOverrides::new().with("crop.percentage", "50").apply(&no_crop),
            Err(OverrideError::MissingStep { .. })
        ));
    }

    #[test]
    fn listing_pipeline_shape_and_range() {
        let m = manifest::parse_manifest(include_str!("../fixtures/manifests/inception_v3.yml")).unwrap();
        let img = rgb(512, 512, |y, x, c| ((y * 3 + x * 5 + c * 11) % 256) as u8);
        let out = run_pipeline(&m.inputs[0], &encode_ppm(&img), &DecoderRegistry::default()).unwrap();
        assert_eq!(out.tensor.dims, vec![1, 299, 299, 3]);
        assert_eq!(out.tensor.element_type, ElementType::Float32);
        assert!(out.tensor.data.iter().all(|v| (-1.0..=1.0).contains(v)));
        let kinds: Vec<_> = out.provenance.steps.iter().map(|s| s.step.as_str()).collect();
        assert_eq!(kinds, ["decode", "crop", "resize", "mean", "rescale"]);
        assert_eq!(out.provenance.decoder, "ppm");
    }
}

//! Pixel buffers and image decoding.
//!
//! PPM (P6) and PNG decode losslessly. JPEG goes through a [`JpegDecoder`]
//! plug-in because decoded pixels depend on the decoder; the identity of the
//! decoder that ran is reported back so it can be recorded.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::manifest::{ColorLayout, DctMethod, ElementType};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ImageError {
    #[error("unsupported image format")]
    UnsupportedFormat,
    #[error("truncated image data: {0}")]
    Truncated(String),
    #[error("malformed {format} data: {reason}")]
    Malformed { format: &'static str, reason: String },
    #[error("unknown JPEG decoder `{name}`; registered: {}", registered.join(", "))]
    UnknownDecoder { name: String, registered: Vec<String> },
    #[error("buffer has {actual} elements, expected {expected}")]
    BadLength { expected: usize, actual: usize },
    #[error("operation needs {expected} channels, image has {actual}")]
    Channels { expected: usize, actual: usize },
    #[error("crop of {height}x{width} at {percentage}% leaves no pixels")]
    DegenerateCrop {
        height: usize,
        width: usize,
        percentage: f64,
    },
    #[error("crop window {h}x{w}+{top}+{left} exceeds a {height}x{width} image")]
    CropOutOfBounds {
        top: usize,
        left: usize,
        h: usize,
        w: usize,
        height: usize,
        width: usize,
    },
}

/// Scalar storage for [`ImageBuffer`]. `I32` only appears as the
/// intermediate of byte-domain normalization.
#[derive(Debug, Clone, PartialEq)]
pub enum PixelData {
    U8(Vec<u8>),
    I32(Vec<i32>),
    F32(Vec<f32>),
}

impl PixelData {
    pub fn len(&self) -> usize {
        match self {
            PixelData::U8(d) => d.len(),
            PixelData::I32(d) => d.len(),
            PixelData::F32(d) => d.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_f32(&self) -> Vec<f32> {
        match self {
            PixelData::U8(d) => d.iter().map(|&x| f32::from(x)).collect(),
            PixelData::I32(d) => d.iter().map(|&x| x as f32).collect(),
            PixelData::F32(d) => d.clone(),
        }
    }
}

/// Row-major `H x W x C` pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub color_layout: ColorLayout,
    pub data: PixelData,
}

impl ImageBuffer {
    pub fn from_u8(
        width: usize,
        height: usize,
        color_layout: ColorLayout,
        data: Vec<u8>,
    ) -> Result<Self, ImageError> {
        Self::new(width, height, 3, color_layout, PixelData::U8(data))
    }

    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        color_layout: ColorLayout,
        data: PixelData,
    ) -> Result<Self, ImageError> {
        let expected = width * height * channels;
        if data.len() != expected {
            return Err(ImageError::BadLength {
                expected,
                actual: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            color_layout,
            data,
        })
    }

    /// Solid-color RGB image.
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self {
            width,
            height,
            channels: 3,
            color_layout: ColorLayout::Rgb,
            data: PixelData::U8(data),
        }
    }

    /// `uint8` or `float32`; the integer intermediate reports as float32
    /// since it is no longer byte data.
    pub fn element_type(&self) -> ElementType {
        match self.data {
            PixelData::U8(_) => ElementType::Uint8,
            _ => ElementType::Float32,
        }
    }

    pub fn as_u8(&self) -> Option<&[u8]> {
        match &self.data {
            PixelData::U8(d) => Some(d),
            _ => None,
        }
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            PixelData::F32(d) => Some(d),
            _ => None,
        }
    }

    pub fn pixel_u8(&self, y: usize, x: usize) -> Option<&[u8]> {
        let idx = (y * self.width + x) * self.channels;
        self.as_u8().map(|d| &d[idx..idx + self.channels])
    }
}

/// Which container format a byte stream holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormat {
    Ppm,
    Png,
    Jpeg,
}

pub fn sniff_format(bytes: &[u8]) -> Option<ImageFormat> {
    if bytes.starts_with(b"P6") {
        Some(ImageFormat::Ppm)
    } else if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        Some(ImageFormat::Png)
    } else if bytes.starts_with(&[0xFF, 0xD8]) {
        Some(ImageFormat::Jpeg)
    } else {
        None
    }
}

/// Interleaved RGB bytes as produced by a decoder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbPixels {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

/// A JPEG decoding implementation.
pub trait JpegDecoder: Send + Sync {
    fn name(&self) -> &str;
    fn decode(&self, bytes: &[u8], dct_method: DctMethod) -> Result<RgbPixels, ImageError>;
}

/// JPEG decoding through the `image` crate (zune-jpeg backed).
#[derive(Debug, Default)]
pub struct ZuneJpegDecoder;

impl JpegDecoder for ZuneJpegDecoder {
    fn name(&self) -> &str {
        "zune-jpeg"
    }

    fn decode(&self, bytes: &[u8], _dct: DctMethod) -> Result<RgbPixels, ImageError> {
        let img = ::image::load_from_memory_with_format(bytes, ::image::ImageFormat::Jpeg)
            .map_err(|e| classify_image_error("jpeg", e))?
            .to_rgb8();
        Ok(RgbPixels {
            width: img.width() as usize,
            height: img.height() as usize,
            data: img.into_raw(),
        })
    }
}

/// JPEG decoding through `jpeg-decoder`, keeping the raw YCbCr planes and
/// converting to RGB with fixed-point arithmetic. `IntegerFast` uses 8
/// fractional bits for the conversion constants, `IntegerAccurate` 16.
#[derive(Debug, Default)]
pub struct FixedPointJpegDecoder;

impl FixedPointJpegDecoder {
    fn ycc_to_rgb(y: u8, cb: u8, cr: u8, bits: u32) -> [u8; 3] {
        let one = 1i64 << bits;
        let half = one >> 1;
        let fix = |x: f64| (x * one as f64).round() as i64;
        let y = i64::from(y) << bits;
        let cb = i64::from(cb) - 128;
        let cr = i64::from(cr) - 128;
        let r = y + fix(1.402) * cr;
        let g = y - fix(0.344_136) * cb - fix(0.714_136) * cr;
        let b = y + fix(1.772) * cb;
        let clamp = |v: i64| ((v + half) >> bits).clamp(0, 255) as u8;
        [clamp(r), clamp(g), clamp(b)]
    }
}

impl JpegDecoder for FixedPointJpegDecoder {
    fn name(&self) -> &str {
        "jpeg-decoder-fixed"
    }

    fn decode(&self, bytes: &[u8], dct: DctMethod) -> Result<RgbPixels, ImageError> {
        let mut decoder = jpeg_decoder::Decoder::new(bytes);
        decoder.set_color_transform(jpeg_decoder::ColorTransform::None);
        let raw = decoder.decode().map_err(|e| match e {
            jpeg_decoder::Error::Io(io) => ImageError::Truncated(io.to_string()),
            other => ImageError::Malformed {
                format: "jpeg",
                reason: other.to_string(),
            },
        })?;
        let info = decoder.info().ok_or_else(|| ImageError::Malformed {
            format: "jpeg",
            reason: "missing frame header".into(),
        })?;
        let (width, height) = (usize::from(info.width), usize::from(info.height));
        let bits = match dct {
            DctMethod::IntegerFast => 8,
            DctMethod::IntegerAccurate => 16,
        };
        let data = match info.pixel_format {
            jpeg_decoder::PixelFormat::L8 => raw.iter().flat_map(|&l| [l, l, l]).collect(),
            // without a transform each row comes back planar: [Y..][Cb..][Cr..]
            jpeg_decoder::PixelFormat::RGB24 => raw
                .chunks_exact(3 * width)
                .flat_map(|row| {
                    let (y, rest) = row.split_at(width);
                    let (cb, cr) = rest.split_at(width);
                    (0..width).flat_map(move |x| Self::ycc_to_rgb(y[x], cb[x], cr[x], bits))
                })
                .collect(),
            other => {
                return Err(ImageError::Malformed {
                    format: "jpeg",
                    reason: format!("unsupported pixel format {other:?}"),
                })
            }
        };
        Ok(RgbPixels {
            width,
            height,
            data,
        })
    }
}

fn classify_image_error(format: &'static str, e: ::image::ImageError) -> ImageError {
    let reason = e.to_string();
    match e {
        ::image::ImageError::IoError(_) => ImageError::Truncated(reason),
        _ if reason.contains("EOF") || reason.contains("eof") || reason.contains("end of") => {
            ImageError::Truncated(reason)
        }
        _ => ImageError::Malformed { format, reason },
    }
}

/// Decoder selection for [`decode_image`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodeOptions<'a> {
    pub color_layout: ColorLayout,
    pub dct_method: DctMethod,
    /// JPEG decoder by name; the registry default when `None`.
    pub jpeg_decoder: Option<&'a str>,
}

impl Default for DecodeOptions<'_> {
    fn default() -> Self {
        Self {
            color_layout: ColorLayout::Rgb,
            dct_method: DctMethod::IntegerAccurate,
            jpeg_decoder: None,
        }
    }
}

/// What actually ran during a decode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DecodeInfo {
    pub format: ImageFormat,
    pub decoder: String,
    pub dct_method: Option<DctMethod>,
}

/// Registered JPEG decoders, keyed by name.
#[derive(Clone)]
pub struct DecoderRegistry {
    jpeg: BTreeMap<String, Arc<dyn JpegDecoder>>,
    default_jpeg: String,
}

impl Default for DecoderRegistry {
    fn default() -> Self {
        let mut registry = Self {
            jpeg: BTreeMap::new(),
            default_jpeg: String::new(),
        };
        registry.register(Arc::new(ZuneJpegDecoder));
        registry.register(Arc::new(FixedPointJpegDecoder));
        registry.default_jpeg = "zune-jpeg".into();
        registry
    }
}

impl std::fmt::Debug for DecoderRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DecoderRegistry")
            .field("jpeg", &self.jpeg.keys().collect::<Vec<_>>())
            .field("default_jpeg", &self.default_jpeg)
            .finish()
    }
}

impl DecoderRegistry {
    pub fn register(&mut self, decoder: Arc<dyn JpegDecoder>) {
        if self.default_jpeg.is_empty() {
            self.default_jpeg = decoder.name().to_string();
        }
        self.jpeg.insert(decoder.name().to_string(), decoder);
    }

    pub fn set_default(&mut self, name: &str) -> Result<(), ImageError> {
        self.jpeg_decoder(Some(name))?;
        self.default_jpeg = name.to_string();
        Ok(())
    }

    pub fn names(&self) -> Vec<String> {
        self.jpeg.keys().cloned().collect()
    }

    pub fn jpeg_decoder(&self, name: Option<&str>) -> Result<&Arc<dyn JpegDecoder>, ImageError> {
        let name = name.unwrap_or(&self.default_jpeg);
        self.jpeg.get(name).ok_or_else(|| ImageError::UnknownDecoder {
            name: name.to_string(),
            registered: self.names(),
        })
    }
}

/// Decodes `bytes` into a `uint8` buffer in the requested color layout.
pub fn decode_image(
    bytes: &[u8],
    opts: &DecodeOptions<'_>,
    registry: &DecoderRegistry,
) -> Result<(ImageBuffer, DecodeInfo), ImageError> {
    let format = sniff_format(bytes).ok_or(ImageError::UnsupportedFormat)?;
    let (pixels, decoder, dct_method) = match format {
        ImageFormat::Ppm => (decode_ppm(bytes)?, "ppm".to_string(), None),
        ImageFormat::Png => {
            let img = ::image::load_from_memory_with_format(bytes, ::image::ImageFormat::Png)
                .map_err(|e| classify_image_error("png", e))?
                .to_rgb8();
            let pixels = RgbPixels {
                width: img.width() as usize,
                height: img.height() as usize,
                data: img.into_raw(),
            };
            (pixels, "png".to_string(), None)
        }
        ImageFormat::Jpeg => {
            let decoder = registry.jpeg_decoder(opts.jpeg_decoder)?;
            let pixels = decoder.decode(bytes, opts.dct_method)?;
            (pixels, decoder.name().to_string(), Some(opts.dct_method))
        }
    };
    let img = ImageBuffer::from_u8(pixels.width, pixels.height, ColorLayout::Rgb, pixels.data)?;
    Ok((
        convert_color_layout(&img, opts.color_layout),
        DecodeInfo {
            format,
            decoder,
            dct_method,
        },
    ))
}

/// Reverses the channel order when `target` differs from the current
/// layout.
pub fn convert_color_layout(img: &ImageBuffer, target: ColorLayout) -> ImageBuffer {
    if img.color_layout == target || img.channels < 2 {
        return ImageBuffer {
            color_layout: target,
            ..img.clone()
        };
    }
    let c = img.channels;
    fn reverse<T: Copy>(data: &[T], c: usize) -> Vec<T> {
        data.chunks_exact(c)
            .flat_map(|px| px.iter().rev().copied())
            .collect()
    }
    let data = match &img.data {
        PixelData::U8(d) => PixelData::U8(reverse(d, c)),
        PixelData::I32(d) => PixelData::I32(reverse(d, c)),
        PixelData::F32(d) => PixelData::F32(reverse(d, c)),
    };
    ImageBuffer {
        data,
        color_layout: target,
        ..*img
    }
}

fn decode_ppm(bytes: &[u8]) -> Result<RgbPixels, ImageError> {
    let malformed = |reason: &str| ImageError::Malformed {
        format: "ppm",
        reason: reason.to_string(),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // whitespace and comments between header tokens
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(ImageError::Truncated("ppm header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(malformed("expected a number in the header"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| malformed("header number out of range"))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        Some(_) => return Err(malformed("missing whitespace after maxval")),
        None => return Err(ImageError::Truncated("ppm header".into())),
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(malformed("zero-sized image"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(malformed("only 8-bit PPM (maxval 1..=255) is supported"));
    }
    let len = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| malformed("image too large"))?;
    let body = bytes.get(pos..pos + len).ok_or_else(|| {
        ImageError::Truncated(format!("expected {len} pixel bytes, found {}", bytes.len() - pos))
    })?;
    let data = if maxval == 255 {
        body.to_vec()
    } else {
        body.iter()
            .map(|&v| ((u32::from(v.min(maxval as u8)) * 255 + maxval as u32 / 2) / maxval as u32) as u8)
            .collect()
    };
    Ok(RgbPixels {
        width,
        height,
        data,
    })
}

/// Encodes a `uint8` buffer as binary PPM, writing channels in RGB order.
pub fn encode_ppm(img: &ImageBuffer) -> Vec<u8> {
    let rgb = convert_color_layout(img, ColorLayout::Rgb);
    let data = rgb.as_u8().expect("encode_ppm needs a uint8 buffer");
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(data);
    out
}

/// Encodes a `uint8` RGB buffer as PNG.
pub fn encode_png(img: &ImageBuffer) -> Vec<u8> {
    encode_with(img, ::image::ImageFormat::Png)
}

/// Encodes a `uint8` RGB buffer as baseline JPEG at the given quality.
pub fn encode_jpeg(img: &ImageBuffer, quality: u8) -> Vec<u8> {
    let rgb = convert_color_layout(img, ColorLayout::Rgb);
    let mut out = Vec::new();
    let encoder = ::image::codecs::jpeg::JpegEncoder::new_with_quality(&mut out, quality);
    ::image::ImageEncoder::write_image(
        encoder,
        rgb.as_u8().expect("uint8 buffer"),
        img.width as u32,
        img.height as u32,
        ::image::ExtendedColorType::Rgb8,
    )
    .expect("in-memory JPEG encoding");
    out
}

fn encode_with(img: &ImageBuffer, format: ::image::ImageFormat) -> Vec<u8> {
    let rgb = convert_color_layout(img, ColorLayout::Rgb);
    let buf = ::image::RgbImage::from_raw(
        img.width as u32,
        img.height as u32,
        rgb.as_u8().expect("uint8 buffer").to_vec(),
    )
    .expect("dimensions match");
    let mut out = std::io::Cursor::new(Vec::new());
    buf.write_to(&mut out, format).expect("in-memory encoding");
    out.into_inner()
}

//! Image buffers, binary PGM/PPM I/O and bilinear resampling.
//!
//! Files are written with a fixed header layout (`P5`/`P6`, one whitespace
//! byte after each token, maxval 255) so that re-encoding a decoded file is
//! byte-identical. Samples are quantized with round-half-up.

use std::path::Path;

use crate::error::{check_len, Error, PnmError, Result};

/// Row-major raster with interleaved channels and samples in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidArgument(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        check_len("image data length", height * width * channels, data.len())?;
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "sample {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Builds a buffer from arbitrary reals, clamping every sample into `[0, 1]`.
    /// NaN maps to 0.
    pub fn from_clamped(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        let data = data
            .into_iter()
            .map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) })
            .collect();
        Self::new(height, width, channels, data)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(
            height,
            width,
            channels,
            vec![value; height * width * channels],
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// The channel values of one pixel.
    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[f64] {
        let start = (y * self.width + x) * self.channels;
        &self.data[start..start + self.channels]
    }

    /// Stores `value` clamped into `[0, 1]`.
    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, value: f64) {
        self.data[(y * self.width + x) * self.channels + c] = value.clamp(0.0, 1.0);
    }

    pub fn same_shape(&self, other: &ImageBuffer) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    /// Samples quantized to bytes with round-half-up.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize(v)).collect()
    }

    /// Snaps every sample onto the byte grid, i.e. what a write/read cycle yields.
    pub fn quantized(&self) -> ImageBuffer {
        ImageBuffer {
            data: self
                .data
                .iter()
                .map(|&v| f64::from(quantize(v)) / 255.0)
                .collect(),
            ..self.clone()
        }
    }

    /// RGBA bytes for display surfaces; grayscale is replicated across RGB.
    pub fn to_rgba8(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.height * self.width * 4);
        for px in self.data.chunks_exact(self.channels) {
            if self.channels == 1 {
                let g = quantize(px[0]);
                out.extend_from_slice(&[g, g, g, 255]);
            } else {
                out.extend_from_slice(&[quantize(px[0]), quantize(px[1]), quantize(px[2]), 255]);
            }
        }
        out
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// Round-half-up quantization of a `[0, 1]` sample to a byte.
#[inline]
pub fn quantize(v: f64) -> u8 {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Encodes as binary PGM (1 channel) or PPM (3 channels), maxval 255.
pub fn encode_pnm(image: &ImageBuffer) -> Vec<u8> {
    let magic = if image.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend(image.to_bytes());
    out
}

/// Decodes a binary PGM/PPM file with maxval 255.
pub fn decode_pnm(bytes: &[u8]) -> Result<ImageBuffer> {
    if bytes.len() < 2 {
        return Err(PnmError::MalformedHeader("file shorter than magic number".into()).into());
    }
    let channels = match &bytes[..2] {
        b"P5" => 1,
        b"P6" => 3,
        other => {
            return Err(
                PnmError::UnsupportedMagic(String::from_utf8_lossy(other).into_owned()).into(),
            )
        }
    };
    let mut pos = 2;
    let mut header = [0u32; 3];
    for (i, slot) in header.iter_mut().enumerate() {
        // Every header token is preceded by whitespace (and optional comments).
        let ws_start = pos;
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        if pos == ws_start {
            return Err(
                PnmError::MalformedHeader(format!("missing whitespace before token {i}")).into(),
            );
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(
                PnmError::MalformedHeader(format!("expected a number for token {i}")).into(),
            );
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *slot = text
            .parse()
            .map_err(|_| PnmError::MalformedHeader(format!("number out of range: {text}")))?;
    }
    let [width, height, maxval] = header;
    if width == 0 || height == 0 {
        return Err(PnmError::MalformedHeader(format!("zero dimension {width}x{height}")).into());
    }
    if maxval != 255 {
        return Err(PnmError::UnsupportedMaxval(maxval).into());
    }
    // Exactly one whitespace byte separates maxval from the raster.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => {
            return Err(PnmError::MalformedHeader("missing whitespace after maxval".into()).into())
        }
    }
    let expected = width as usize * height as usize * channels;
    let payload = &bytes[pos..];
    if payload.len() < expected {
        return Err(PnmError::Truncated {
            expected,
            found: payload.len(),
        }
        .into());
    }
    let data = payload[..expected]
        .iter()
        .map(|&b| f64::from(b) / 255.0)
        .collect();
    ImageBuffer::new(height as usize, width as usize, channels, data)
}

pub fn read_image(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    decode_pnm(&std::fs::read(path)?)
}

pub fn write_image(image: &ImageBuffer, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_pnm(image))?;
    Ok(())
}

/// Linear interpolation written so that equal endpoints reproduce the endpoint
/// exactly and the result never leaves `[min(a, b), max(a, b)]`.
#[inline]
pub(crate) fn lerp(a: f64, b: f64, t: f64) -> f64 {
    let v = a + (b - a) * t;
    v.clamp(a.min(b), a.max(b))
}

/// Bilinear sample at continuous *index* coordinates (pixel `(i, j)` sits at
/// `(i, j)`), clamping to the edge pixels.
#[inline]
pub fn sample_bilinear(image: &ImageBuffer, y: f64, x: f64, c: usize) -> f64 {
    let y = y.clamp(0.0, (image.height - 1) as f64);
    let x = x.clamp(0.0, (image.width - 1) as f64);
    let y0 = y.floor() as usize;
    let x0 = x.floor() as usize;
    let y1 = (y0 + 1).min(image.height - 1);
    let x1 = (x0 + 1).min(image.width - 1);
    let fy = y - y0 as f64;
    let fx = x - x0 as f64;
    let top = lerp(image.get(y0, x0, c), image.get(y0, x1, c), fx);
    let bottom = lerp(image.get(y1, x0, c), image.get(y1, x1, c), fx);
    lerp(top, bottom, fy)
}

/// Bilinear resize with pixel-center alignment: output index `i` reads source
/// coordinate `(i + 0.5) * in / out - 0.5`, clamped to the source extent.
pub fn resize_bilinear(image: &ImageBuffer, out_h: usize, out_w: usize) -> Result<ImageBuffer> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument(format!(
            "resize target must be positive, got {out_h}x{out_w}"
        )));
    }
    let sy = image.height as f64 / out_h as f64;
    let sx = image.width as f64 / out_w as f64;
    let c = image.channels;
    let mut data = Vec::with_capacity(out_h * out_w * c);
    for i in 0..out_h {
        let y = (i as f64 + 0.5) * sy - 0.5;
        for j in 0..out_w {
            let x = (j as f64 + 0.5) * sx - 0.5;
            for ch in 0..c {
                data.push(sample_bilinear(image, y, x, ch));
            }
        }
    }
    ImageBuffer::new(out_h, out_w, c, data)
}

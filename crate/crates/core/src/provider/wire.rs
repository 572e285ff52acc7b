//! JSON wire protocol between the engine and a remote logit server.
//!
//! Request, one object per call:
//!
//! ```json
//! { "protocol_version": 1,
//!   "images": [ { "height": 32, "width": 32, "channels": 3,
//!                 "encoding": "raw-f32-base64", "data": "..." } ],
//!   "prompt": "...",
//!   "prefix_tokens": [3, 17] }
//! ```
//!
//! Response: `{ "protocol_version": 1, "vocab_size": V, "vocab_id": "...",
//! "logits": [..V floats..] }` or `{ "protocol_version": 1, "error":
//! { "code": "...", "message": "..." } }`.
//!
//! `raw-f32-base64` is row-major `H x W x C` little-endian f32 and is
//! bit-exact. `png-base64` quantizes to 8 bits per element.

use std::io::Cursor;
use std::sync::Arc;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::ProviderRequest;
use crate::error::{Error, Result};
use crate::types::{ImageContext, ImageTensor, LogitVector, TokenId};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ImageEncoding {
    #[default]
    #[serde(rename = "raw-f32-base64")]
    RawF32Base64,
    #[serde(rename = "png-base64")]
    PngBase64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireImage {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub encoding: ImageEncoding,
    pub data: String,
}

impl WireImage {
    pub fn encode(image: &ImageTensor, encoding: ImageEncoding) -> Result<Self> {
        let data = match encoding {
            ImageEncoding::RawF32Base64 => {
                let mut bytes = Vec::with_capacity(image.data().len() * 4);
                for v in image.data() {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
                BASE64.encode(bytes)
            }
            ImageEncoding::PngBase64 => BASE64.encode(encode_png(image)?),
        };
        Ok(Self {
            height: image.height(),
            width: image.width(),
            channels: image.channels(),
            encoding,
            data,
        })
    }

    pub fn decode(&self) -> Result<ImageTensor> {
        let bytes = BASE64
            .decode(&self.data)
            .map_err(|e| Error::Protocol(format!("image data is not valid base64: {e}")))?;
        match self.encoding {
            ImageEncoding::RawF32Base64 => {
                let expected = self.height * self.width * self.channels * 4;
                if bytes.len() != expected {
                    return Err(Error::Protocol(format!(
                        "raw image {}x{}x{} needs {expected} bytes, got {}",
                        self.height,
                        self.width,
                        self.channels,
                        bytes.len()
                    )));
                }
                let data = bytes
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                    .collect();
                ImageTensor::new(self.height, self.width, self.channels, data)
            }
            ImageEncoding::PngBase64 => {
                let img = decode_png(&bytes)?;
                if img.height() != self.height || img.width() != self.width || img.channels() != self.channels {
                    return Err(Error::Protocol(format!(
                        "png is {}x{}x{} but header says {}x{}x{}",
                        img.height(),
                        img.width(),
                        img.channels(),
                        self.height,
                        self.width,
                        self.channels
                    )));
                }
                Ok(img)
            }
        }
    }
}

/// 8-bit PNG (grayscale or RGB) of an image.
pub fn encode_png(image: &ImageTensor) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, image.width() as u32, image.height() as u32);
        encoder.set_color(if image.channels() == 1 {
            png::ColorType::Grayscale
        } else {
            png::ColorType::Rgb
        });
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder
            .write_header()
            .map_err(|e| Error::InvalidImage(format!("png encode: {e}")))?;
        let bytes: Vec<u8> = image.data().iter().map(|v| (v * 255.0).round() as u8).collect();
        writer
            .write_image_data(&bytes)
            .map_err(|e| Error::InvalidImage(format!("png encode: {e}")))?;
        writer
            .finish()
            .map_err(|e| Error::InvalidImage(format!("png encode: {e}")))?;
    }
    Ok(out)
}

/// Decodes any 8- or 16-bit PNG to `[0, 1]` values. Alpha is dropped;
/// gray-alpha becomes grayscale and RGBA becomes RGB.
pub fn decode_png(bytes: &[u8]) -> Result<ImageTensor> {
    let err = |e: png::DecodingError| Error::InvalidImage(format!("png decode: {e}"));
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(err)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::InvalidImage("png too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(err)?;
    buf.truncate(info.buffer_size());
    let (src_channels, keep) = match info.color_type {
        png::ColorType::Grayscale => (1, 1),
        png::ColorType::GrayscaleAlpha => (2, 1),
        png::ColorType::Rgb => (3, 3),
        png::ColorType::Rgba => (4, 3),
        png::ColorType::Indexed => {
            return Err(Error::InvalidImage("unexpanded indexed png".into()));
        }
    };
    let data = buf
        .chunks_exact(src_channels)
        .flat_map(|px| px[..keep].iter().map(|&b| f32::from(b) / 255.0))
        .collect();
    ImageTensor::new(info.height as usize, info.width as usize, keep, data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireRequest {
    pub protocol_version: u32,
    pub images: Vec<WireImage>,
    pub prompt: String,
    pub prefix_tokens: Vec<TokenId>,
}

impl WireRequest {
    pub fn from_request(request: &ProviderRequest, encoding: ImageEncoding) -> Result<Self> {
        Ok(Self {
            protocol_version: PROTOCOL_VERSION,
            images: request
                .images()
                .iter()
                .map(|img| WireImage::encode(img, encoding))
                .collect::<Result<_>>()?,
            prompt: request.prompt().to_string(),
            prefix_tokens: request.prefix_tokens().to_vec(),
        })
    }

    /// Server-side decoding. Masking is client-side, so every slot arrives
    /// as a plain image.
    pub fn to_request(&self) -> Result<ProviderRequest> {
        if self.protocol_version != PROTOCOL_VERSION {
            return Err(Error::Protocol(format!(
                "unsupported protocol_version {}",
                self.protocol_version
            )));
        }
        let images: Vec<Arc<ImageTensor>> = self
            .images
            .iter()
            .map(|w| w.decode().map(Arc::new))
            .collect::<Result<_>>()?;
        let n = images.len();
        let context = ImageContext::new(images, vec![false; n])?;
        ProviderRequest::new(context, self.prompt.clone(), self.prefix_tokens.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireError {
    pub code: String,
    pub message: String,
}

/// Response as written by a server.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum WireResponse {
    Logits {
        protocol_version: u32,
        vocab_size: usize,
        vocab_id: String,
        logits: Vec<f64>,
    },
    Error {
        protocol_version: u32,
        error: WireError,
    },
}

impl WireResponse {
    pub fn logits(logits: &LogitVector) -> Self {
        WireResponse::Logits {
            protocol_version: PROTOCOL_VERSION,
            vocab_size: logits.len(),
            vocab_id: logits.vocab_id().to_string(),
            logits: logits.values().to_vec(),
        }
    }

    pub fn error(code: impl Into<String>, message: impl Into<String>) -> Self {
        WireResponse::Error {
            protocol_version: PROTOCOL_VERSION,
            error: WireError {
                code: code.into(),
                message: message.into(),
            },
        }
    }
}

/// Response as read by a client: every field optional so that missing ones
/// are reported as protocol violations rather than parse errors.
#[derive(Clone, Debug, Default, Deserialize)]
pub struct RawResponse {
    pub protocol_version: Option<u32>,
    pub vocab_size: Option<usize>,
    pub vocab_id: Option<String>,
    pub logits: Option<Vec<f64>>,
    pub error: Option<WireError>,
}

impl RawResponse {
    pub fn parse(body: &str) -> Result<Self> {
        serde_json::from_str(body).map_err(|e| Error::Protocol(format!("response is not a JSON object: {e}")))
    }

    /// Validates a response; server error objects come back as
    /// [`Error::Server`] with code and message untouched.
    pub fn into_logits(self) -> Result<LogitVector> {
        match self.protocol_version {
            Some(PROTOCOL_VERSION) => {}
            Some(v) => return Err(Error::Protocol(format!("unsupported protocol_version {v}"))),
            None => return Err(Error::Protocol("missing field `protocol_version`".into())),
        }
        if let Some(err) = self.error {
            return Err(Error::Server {
                code: err.code,
                message: err.message,
            });
        }
        let vocab_size = self
            .vocab_size
            .ok_or_else(|| Error::Protocol("missing field `vocab_size`".into()))?;
        let vocab_id = self
            .vocab_id
            .ok_or_else(|| Error::Protocol("missing field `vocab_id`".into()))?;
        let logits = self
            .logits
            .ok_or_else(|| Error::Protocol("missing field `logits`".into()))?;
        if logits.len() != vocab_size {
            return Err(Error::Protocol(format!(
                "{} logits but vocab_size is {vocab_size}",
                logits.len()
            )));
        }
        LogitVector::new(logits, vocab_id).map_err(|e| Error::Protocol(e.to_string()))
    }
}

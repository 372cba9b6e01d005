//! Minimal multi-channel float image with binary PGM/PPM (8-bit) I/O and
//! border-clamped bilinear sampling.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::camera::Pixel2;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("malformed PNM data: {0}")]
    Format(String),
    #[error("image has no pixels")]
    Empty,
    #[error("buffer length {got} does not match {width}x{height}x{channels}")]
    BufferSize {
        got: usize,
        width: usize,
        height: usize,
        channels: usize,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Row-major image with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(ImageError::Empty);
        }
        if data.len() != width * height * channels {
            return Err(ImageError::BufferSize {
                got: data.len(),
                width,
                height,
                channels,
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Result<Self, ImageError> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self, ImageError> {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self::new(width, height, channels, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Value at integer column `x`, row `y`, channel `c`.
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn set(&mut self, x: usize, y: usize, c: usize, value: f64) {
        self.data[(y * self.width + x) * self.channels + c] = value;
    }

    /// Whether `coord` lies inside `[0, w-1] x [0, h-1]`.
    pub fn contains(&self, coord: &Pixel2) -> bool {
        coord.x >= 0.0
            && coord.y >= 0.0
            && coord.x <= (self.width - 1) as f64
            && coord.y <= (self.height - 1) as f64
    }

    /// Bilinear sample of channel `c`. Pixel `(x, y)` sits at integer
    /// coordinates; out-of-image coordinates are clamped to the border.
    ///
    /// Interpolation is written as nested lerps so equal neighbours reproduce
    /// their value bit-exactly.
    pub fn bilinear(&self, coord: &Pixel2, c: usize) -> f64 {
        let (x0, x1, ax) = axis_weights(coord.x, self.width);
        let (y0, y1, ay) = axis_weights(coord.y, self.height);
        let top = lerp(self.get(x0, y0, c), self.get(x1, y0, c), ax);
        let bottom = lerp(self.get(x0, y1, c), self.get(x1, y1, c), ax);
        lerp(top, bottom, ay)
    }

    pub fn read_pnm(path: impl AsRef<Path>) -> Result<Self, ImageError> {
        Self::decode_pnm(&fs::read(path)?)
    }

    pub fn write_pnm(&self, path: impl AsRef<Path>) -> Result<(), ImageError> {
        fs::write(path, self.encode_pnm()?)?;
        Ok(())
    }

    /// Decodes binary P5 (grayscale) or P6 (RGB) with maxval 255.
    pub fn decode_pnm(bytes: &[u8]) -> Result<Self, ImageError> {
        let mut cursor = 0usize;
        let magic = next_token(bytes, &mut cursor)?;
        let channels = match magic.as_str() {
            "P5" => 1,
            "P6" => 3,
            other => return Err(ImageError::Format(format!("unsupported magic {other:?}"))),
        };
        let width = parse_header_number(bytes, &mut cursor, "width")?;
        let height = parse_header_number(bytes, &mut cursor, "height")?;
        let maxval = parse_header_number(bytes, &mut cursor, "maxval")?;
        if maxval != 255 {
            return Err(ImageError::Format(format!("only maxval 255 is supported, got {maxval}")));
        }
        // exactly one whitespace byte separates the header from the raster
        if cursor >= bytes.len() || !bytes[cursor].is_ascii_whitespace() {
            return Err(ImageError::Format("missing whitespace after header".into()));
        }
        cursor += 1;
        let expected = width * height * channels;
        let raster = &bytes[cursor..];
        if raster.len() != expected {
            return Err(ImageError::Format(format!(
                "expected {expected} raster bytes, found {}",
                raster.len()
            )));
        }
        Self::new(width, height, channels, raster.iter().map(|&b| b as f64).collect())
    }

    /// Encodes as P5/P6. Values are rounded and clamped to `[0, 255]`.
    pub fn encode_pnm(&self) -> Result<Vec<u8>, ImageError> {
        let magic = match self.channels {
            1 => "P5",
            3 => "P6",
            n => return Err(ImageError::Format(format!("cannot encode {n}-channel image as PNM"))),
        };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.data.iter().map(|&v| quantize(v)));
        Ok(out)
    }
}

fn quantize(v: f64) -> u8 {
    if v.is_nan() {
        0
    } else {
        v.round().clamp(0.0, 255.0) as u8
    }
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

fn axis_weights(coord: f64, len: usize) -> (usize, usize, f64) {
    if len == 1 {
        return (0, 0, 0.0);
    }
    let max = (len - 1) as f64;
    let c = if coord.is_nan() { 0.0 } else { coord.clamp(0.0, max) };
    let i0 = (c.floor() as usize).min(len - 2);
    (i0, i0 + 1, c - i0 as f64)
}

fn next_token(bytes: &[u8], cursor: &mut usize) -> Result<String, ImageError> {
    loop {
        while *cursor < bytes.len() && bytes[*cursor].is_ascii_whitespace() {
            *cursor += 1;
        }
        if *cursor < bytes.len() && bytes[*cursor] == b'#' {
            while *cursor < bytes.len() && bytes[*cursor] != b'\n' {
                *cursor += 1;
            }
            continue;
        }
        break;
    }
    let start = *cursor;
    while *cursor < bytes.len() && !bytes[*cursor].is_ascii_whitespace() {
        *cursor += 1;
    }
    if start == *cursor {
        return Err(ImageError::Format("truncated header".into()));
    }
    Ok(String::from_utf8_lossy(&bytes[start..*cursor]).into_owned())
}

fn parse_header_number(bytes: &[u8], cursor: &mut usize, what: &str) -> Result<usize, ImageError> {
    let token = next_token(bytes, cursor)?;
    token
        .parse::<usize>()
        .map_err(|_| ImageError::Format(format!("invalid {what} {token:?}")))
}

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{to_u8, Image};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageFormat {
    Png,
    /// Binary PPM (P6) or PGM (P5).
    Pnm,
}

impl ImageFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .unwrap_or_default();
        match ext.as_str() {
            "png" => Ok(ImageFormat::Png),
            "ppm" | "pgm" | "pnm" => Ok(ImageFormat::Pnm),
            _ => Err(Error::UnsupportedFormat(format!("extension of {}", path.display()))),
        }
    }
}

/// Reads an 8-bit PNG (gray, RGB, palette; alpha is dropped) or binary PPM/PGM.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let head = reader.fill_buf().map_err(|e| Error::io(path, e))?;
    let magic: Option<[u8; 2]> = head.get(..2).map(|m| [m[0], m[1]]);
    match magic {
        Some([b'P', b'5' | b'6']) => read_pnm(reader, path),
        Some([0x89, b'P']) => read_png(reader, path),
        _ => Err(Error::UnsupportedFormat(format!(
            "{} is neither PNG nor binary PNM",
            path.display()
        ))),
    }
}

/// Writes PNG or PPM/PGM depending on the extension, quantising to 8 bits.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let format = ImageFormat::from_path(path)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let bytes = interleave(img);
    match format {
        ImageFormat::Png => {
            let mut enc = png::Encoder::new(&mut out, img.width() as u32, img.height() as u32);
            enc.set_color(if img.channels() == 3 {
                png::ColorType::Rgb
            } else {
                png::ColorType::Grayscale
            });
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header().map_err(|e| encode_err(path, e))?;
            w.write_image_data(&bytes).map_err(|e| encode_err(path, e))?;
            w.finish().map_err(|e| encode_err(path, e))?;
        }
        ImageFormat::Pnm => {
            let tag = if img.channels() == 3 { "P6" } else { "P5" };
            write!(out, "{tag}\n{} {}\n255\n", img.width(), img.height()).map_err(|e| Error::io(path, e))?;
            out.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn encode_err(path: &Path, e: png::EncodingError) -> Error {
    match e {
        png::EncodingError::IoError(io) => Error::io(path, io),
        other => Error::Decode(other.to_string()),
    }
}

fn interleave(img: &Image) -> Vec<u8> {
    let (c, n) = (img.channels(), img.height() * img.width());
    let mut out = vec![0u8; n * c];
    for ch in 0..c {
        for (i, &v) in img.plane(ch).iter().enumerate() {
            out[i * c + ch] = to_u8(v);
        }
    }
    out
}

fn deinterleave(bytes: &[u8], height: usize, width: usize, stride: usize, keep: usize, max: f64) -> Result<Image> {
    let n = height * width;
    let mut data = vec![0f64; n * keep];
    for ch in 0..keep {
        for i in 0..n {
            data[ch * n + i] = bytes[i * stride + ch] as f64 / max;
        }
    }
    Image::new(height, width, keep, data)
}

fn read_png(reader: BufReader<File>, path: &Path) -> Result<Image> {
    let mut decoder = png::Decoder::new(reader);
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| decode_err(path, e))?;
    let info = reader.info();
    if info.bit_depth == png::BitDepth::Sixteen {
        return Err(Error::UnsupportedFormat("16-bit PNG".into()));
    }
    if info.interlaced {
        return Err(Error::UnsupportedFormat("interlaced PNG".into()));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Decode("PNG too large".into()))?;
    let mut buf = vec![0u8; size];
    let frame = reader.next_frame(&mut buf).map_err(|e| decode_err(path, e))?;
    let (h, w) = (frame.height as usize, frame.width as usize);
    let (stride, keep) = match frame.color_type {
        png::ColorType::Grayscale => (1, 1),
        png::ColorType::GrayscaleAlpha => (2, 1),
        png::ColorType::Rgb => (3, 3),
        png::ColorType::Rgba => (4, 3),
        png::ColorType::Indexed => return Err(Error::UnsupportedFormat("unexpanded palette PNG".into())),
    };
    if frame.bit_depth != png::BitDepth::Eight || frame.line_size != w * stride {
        return Err(Error::UnsupportedFormat(format!("PNG bit depth {:?}", frame.bit_depth)));
    }
    deinterleave(&buf[..h * w * stride], h, w, stride, keep, 255.0)
}

fn decode_err(path: &Path, e: png::DecodingError) -> Error {
    match e {
        png::DecodingError::IoError(io) if io.kind() == std::io::ErrorKind::UnexpectedEof => {
            Error::Decode("PNG stream ends early".into())
        }
        png::DecodingError::IoError(io) => Error::io(path, io),
        other => Error::Decode(other.to_string()),
    }
}

fn read_pnm(mut reader: BufReader<File>, path: &Path) -> Result<Image> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    let channels = if &bytes[..2] == b"P6" { 3 } else { 1 };
    // Header: magic, width, height, maxval separated by whitespace and
    // `#` comments, then exactly one whitespace byte.
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for f in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *f = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Decode("malformed PNM header".into()))?;
    }
    let [w, h, max] = fields;
    if max == 0 || max > 255 {
        return Err(Error::UnsupportedFormat(format!("PNM maxval {max}")));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Decode("malformed PNM header".into()));
    }
    pos += 1;
    let need = w * h * channels;
    if bytes.len() - pos < need {
        return Err(Error::Decode(format!(
            "PNM data truncated: {} of {need} bytes",
            bytes.len() - pos
        )));
    }
    deinterleave(&bytes[pos..pos + need], h, w, channels, channels, max as f64)
}

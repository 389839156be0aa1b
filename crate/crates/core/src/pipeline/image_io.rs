//! Binary PPM (P6) and PGM (P5) with maxval 255.

use std::path::Path;

use crate::error::{Error, Result};

/// 8-bit image with interleaved channels (1 = grey, 3 = RGB).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Image(format!("{channels} channels; expected 1 or 3")));
        }
        if width == 0 || height == 0 {
            return Err(Error::Image(format!("empty image {width}x{height}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::Image(format!(
                "{} bytes for {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> u8,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(c, y, x));
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

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Image("truncated header".into()));
    }
    Ok(&bytes[start..*pos])
}

fn header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let tok = next_token(bytes, pos)?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Image(format!("bad {what} in header")))
}

pub fn decode_pnm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0;
    let channels = match next_token(bytes, &mut pos)? {
        b"P5" => 1,
        b"P6" => 3,
        other => {
            return Err(Error::Image(format!(
                "unsupported magic {:?}; expected P5 or P6",
                String::from_utf8_lossy(other)
            )))
        }
    };
    let width = header_number(bytes, &mut pos, "width")?;
    let height = header_number(bytes, &mut pos, "height")?;
    let maxval = header_number(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(Error::Image(format!("maxval {maxval}; only 8-bit (255) input is supported")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let need = width * height * channels;
    let raster = bytes
        .get(pos..pos + need)
        .ok_or_else(|| Error::Image(format!("raster truncated: need {need} bytes")))?;
    Image::new(width, height, channels, raster.to_vec())
}

pub fn encode_pnm(img: &Image) -> Vec<u8> {
    let magic = if img.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn read_image(path: &Path) -> Result<Image> {
    decode_pnm(&std::fs::read(path)?)
}

pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    std::fs::write(path, encode_pnm(img))?;
    Ok(())
}

//! RGB float images with PNG (8-bit) and PFM (32-bit float) I/O.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// `height x width x 3` linear values, top row first.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invariant("image", "empty image"));
        }
        if data.len() != width * height * 3 {
            return Err(Error::dimension("image data", width * height * 3, data.len()));
        }
        Ok(Image { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Image { width, height, data }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Reads a PNG or PFM file, chosen by extension.
    pub fn read(path: &Path) -> Result<Self> {
        match extension(path).as_str() {
            "pfm" => Self::read_pfm(path),
            _ => Self::read_png(path),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        match extension(path).as_str() {
            "pfm" => self.write_pfm(path),
            _ => self.write_png(path),
        }
    }

    pub fn read_png(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| match e {
                image::ImageError::IoError(err) => Error::io(path, err),
                other => Error::Image(format!("{}: {other}", path.display())),
            })?
            .to_rgb8();
        let (w, h) = img.dimensions();
        let data = img.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
        Image::new(w as usize, h as usize, data)
    }

    /// Values are clamped to [0, 1] and rounded to 8 bits.
    pub fn write_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self.data.iter().map(|&v| to_u8(v)).collect();
        image::save_buffer(path, &bytes, self.width as u32, self.height as u32, image::ColorType::Rgb8)
            .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
    }

    pub fn write_pfm(&self, path: &Path) -> Result<()> {
        let mut out = Vec::with_capacity(self.data.len() * 4 + 32);
        write!(out, "PF\n{} {}\n-1.0\n", self.width, self.height).expect("write to Vec");
        // PFM stores rows bottom to top
        for y in (0..self.height).rev() {
            for v in &self.data[3 * y * self.width..3 * (y + 1) * self.width] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read_pfm(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let parse_err = |line: usize, reason: &str| Error::Parse {
            path: path.display().to_string(),
            line,
            reason: reason.to_string(),
        };
        let mut line = String::new();
        let next = |r: &mut BufReader<std::fs::File>, line: &mut String| -> Result<()> {
            line.clear();
            r.read_line(line).map_err(|e| Error::io(path, e))?;
            Ok(())
        };
        next(&mut r, &mut line)?;
        if line.trim() != "PF" {
            return Err(parse_err(1, "expected a color PFM header 'PF'"));
        }
        next(&mut r, &mut line)?;
        let dims: Vec<usize> = line.split_whitespace().filter_map(|t| t.parse().ok()).collect();
        if dims.len() != 2 {
            return Err(parse_err(2, "expected '<width> <height>'"));
        }
        next(&mut r, &mut line)?;
        let scale: f32 = line.trim().parse().map_err(|_| parse_err(3, "invalid scale"))?;
        let little = scale < 0.0;
        let (w, h) = (dims[0], dims[1]);
        let mut raw = vec![0u8; w * h * 12];
        r.read_exact(&mut raw).map_err(|e| Error::io(path, e))?;
        let mut data = vec![0.0f32; w * h * 3];
        for (row, chunk) in raw.chunks_exact(w * 12).enumerate() {
            let y = h - 1 - row;
            for (i, b) in chunk.chunks_exact(4).enumerate() {
                let bytes = [b[0], b[1], b[2], b[3]];
                data[3 * y * w + i] = if little {
                    f32::from_le_bytes(bytes)
                } else {
                    f32::from_be_bytes(bytes)
                };
            }
        }
        Image::new(w, h, data)
    }
}

/// Reads a validity mask: pixels with luminance above one half are valid.
pub fn read_mask(path: &Path) -> Result<(usize, usize, Vec<bool>)> {
    let img = Image::read(path)?;
    let mask = img
        .data
        .chunks_exact(3)
        .map(|c| (c[0] + c[1] + c[2]) / 3.0 > 0.5)
        .collect();
    Ok((img.width, img.height, mask))
}

#[inline]
pub fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase()
}

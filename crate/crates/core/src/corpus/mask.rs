use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::CorpusError;

/// Binary hair bitmap, packed 64 pixels per word in row-major order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HairMask {
    width: usize,
    height: usize,
    words: Vec<u64>,
}

impl HairMask {
    /// An all-background mask.
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            words: vec![0; (width * height).div_ceil(64)],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut hair: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                if hair(x, y) {
                    m.set(x, y, true);
                }
            }
        }
        m
    }

    /// Mask whose first `pixels` pixels in raster order are hair.
    pub fn top_filled(width: usize, height: usize, pixels: usize) -> Self {
        let total = width * height;
        let pixels = pixels.min(total);
        let mut m = Self::new(width, height);
        for (w, word) in m.words.iter_mut().enumerate() {
            let lo = w * 64;
            if lo >= pixels {
                break;
            }
            let n = (pixels - lo).min(64);
            *word = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
        }
        m
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        let i = y * self.width + x;
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set(&mut self, x: usize, y: usize, hair: bool) {
        assert!(x < self.width && y < self.height, "pixel ({x}, {y}) out of bounds");
        let i = y * self.width + x;
        if hair {
            self.words[i / 64] |= 1 << (i % 64);
        } else {
            self.words[i / 64] &= !(1 << (i % 64));
        }
    }

    /// Number of hair pixels.
    pub fn hair_pixels(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }
}

/// How PGM pixel values map to hair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaskEncoding {
    /// Any nonzero pixel is hair.
    #[default]
    Binary,
    /// Pixels hold segmentation class labels; this label is hair.
    Labels(u8),
}

impl MaskEncoding {
    fn is_hair(self, v: u8) -> bool {
        match self {
            MaskEncoding::Binary => v != 0,
            MaskEncoding::Labels(l) => v == l,
        }
    }
}

fn malformed(path: &Path, reason: impl Into<String>) -> CorpusError {
    CorpusError::MalformedMask {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn next_token<R: Read>(r: &mut R, path: &Path) -> Result<String, CorpusError> {
    let mut tok = String::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte).map_err(|e| CorpusError::io(path, e))? == 0 {
            return Err(malformed(path, "truncated header"));
        }
        match byte[0] {
            b'#' if tok.is_empty() => loop {
                if r.read(&mut byte).map_err(|e| CorpusError::io(path, e))? == 0 {
                    return Err(malformed(path, "truncated header"));
                }
                if byte[0] == b'\n' {
                    break;
                }
            },
            b' ' | b'\t' | b'\r' | b'\n' => {
                if !tok.is_empty() {
                    return Ok(tok);
                }
            }
            b => {
                if tok.len() > 16 {
                    return Err(malformed(path, "header token too long"));
                }
                tok.push(b as char);
            }
        }
    }
}

fn header_number<R: Read>(r: &mut R, path: &Path, what: &str) -> Result<usize, CorpusError> {
    let tok = next_token(r, path)?;
    tok.parse().map_err(|_| malformed(path, format!("bad {what} `{tok}`")))
}

/// Reads `(width, height, maxval)` and leaves `r` at the first pixel.
fn parse_header<R: Read>(r: &mut R, path: &Path) -> Result<(usize, usize), CorpusError> {
    let magic = next_token(r, path)?;
    if magic != "P5" {
        return Err(malformed(path, format!("expected P5, found `{magic}`")));
    }
    let width = header_number(r, path, "width")?;
    let height = header_number(r, path, "height")?;
    let maxval = header_number(r, path, "maxval")?;
    if width == 0 || height == 0 {
        return Err(malformed(path, "zero-sized raster"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(malformed(path, format!("unsupported maxval {maxval}")));
    }
    Ok((width, height))
}

/// Reads only the header of a PGM file.
pub fn read_pgm_header(path: &Path) -> Result<(usize, usize), CorpusError> {
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    parse_header(&mut BufReader::new(file), path)
}

pub fn read_pgm(path: &Path, encoding: MaskEncoding) -> Result<HairMask, CorpusError> {
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let mut r = BufReader::new(file);
    let (width, height) = parse_header(&mut r, path)?;
    let mut pixels = vec![0u8; width * height];
    r.read_exact(&mut pixels)
        .map_err(|_| malformed(path, "fewer pixels than the header declares"))?;
    let mut mask = HairMask::new(width, height);
    for (i, &v) in pixels.iter().enumerate() {
        if encoding.is_hair(v) {
            mask.words[i / 64] |= 1 << (i % 64);
        }
    }
    Ok(mask)
}

/// Writes a binary P5 PGM with hair = 255, background = 0.
pub fn write_pgm(path: &Path, mask: &HairMask) -> Result<(), CorpusError> {
    let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut body = format!("P5\n{} {}\n255\n", mask.width, mask.height).into_bytes();
    body.reserve(mask.pixel_count());
    for i in 0..mask.pixel_count() {
        body.push(if mask.words[i / 64] >> (i % 64) & 1 == 1 {
            255
        } else {
            0
        });
    }
    w.write_all(&body)
        .and_then(|_| w.flush())
        .map_err(|e| CorpusError::io(path, e))
}

//! Portable graymap/pixmap codec (P2/P5 read-write, P3/P6 read).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::MaskImage;
use crate::tensor::Tensor;

/// 2-D grid of values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl Grid {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::shape(
                "grid",
                format!("{height}×{width} vs {} values", values.len()),
            ));
        }
        Ok(Grid { height, width, values })
    }
}

/// Decoded PNM raster, channel-planar, scaled to `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Encoding {
    Ascii,
    Binary,
}

struct Header {
    channels: usize,
    encoding: Encoding,
    width: usize,
    height: usize,
    maxval: usize,
    data_start: usize,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self) -> Option<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).ok()?.parse().ok()
    }
}

fn parse_header(bytes: &[u8]) -> std::result::Result<Header, String> {
    if bytes.len() < 2 {
        return Err("file too short for a PNM header".into());
    }
    let (channels, encoding) = match &bytes[..2] {
        b"P2" => (1, Encoding::Ascii),
        b"P5" => (1, Encoding::Binary),
        b"P3" => (3, Encoding::Ascii),
        b"P6" => (3, Encoding::Binary),
        m => return Err(format!("bad magic {:?}", String::from_utf8_lossy(m))),
    };
    let mut cur = Cursor { bytes, pos: 2 };
    let mut field = |name: &str| cur_number(&mut cur, name);
    let width = field("width")?;
    let height = field("height")?;
    let maxval = field("maxval")?;
    if width == 0 || height == 0 {
        return Err(format!("empty raster {width}×{height}"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(format!("maxval {maxval} outside 1..=255"));
    }
    // exactly one whitespace byte separates the header from a binary raster
    if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
        return Err("missing whitespace after maxval".into());
    }
    Ok(Header {
        channels,
        encoding,
        width,
        height,
        maxval,
        data_start: cur.pos + 1,
    })
}

fn cur_number(cur: &mut Cursor<'_>, name: &str) -> std::result::Result<usize, String> {
    cur.number()
        .ok_or_else(|| format!("missing or malformed {name} at byte {}", cur.pos))
}

/// Decodes any of P2/P3/P5/P6 with maxval ≤ 255.
pub fn decode_pnm(bytes: &[u8]) -> std::result::Result<Raster, String> {
    let hdr = parse_header(bytes)?;
    let n = hdr.width * hdr.height * hdr.channels;
    let samples: Vec<usize> = match hdr.encoding {
        Encoding::Binary => {
            let body = bytes.get(hdr.data_start.min(bytes.len())..).unwrap_or(&[]);
            if body.len() < n {
                return Err(format!("truncated payload: expected {n} bytes, found {}", body.len()));
            }
            body[..n].iter().map(|&b| b as usize).collect()
        }
        Encoding::Ascii => {
            let mut cur = Cursor {
                bytes,
                pos: hdr.data_start.min(bytes.len()),
            };
            let mut out = Vec::with_capacity(n);
            for i in 0..n {
                let v = cur
                    .number()
                    .ok_or_else(|| format!("truncated payload: sample {i} of {n} missing"))?;
                out.push(v);
            }
            out
        }
    };
    if let Some(&v) = samples.iter().find(|&&v| v > hdr.maxval) {
        return Err(format!("sample {v} exceeds maxval {}", hdr.maxval));
    }
    let maxval = hdr.maxval as f64;
    let (h, w, c) = (hdr.height, hdr.width, hdr.channels);
    let mut values = vec![0.0; n];
    for p in 0..h * w {
        for ch in 0..c {
            values[ch * h * w + p] = samples[p * c + ch] as f64 / maxval;
        }
    }
    Ok(Raster {
        channels: c,
        height: h,
        width: w,
        values,
    })
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, detail: String) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        detail,
    }
}

/// Loads a P2 or P5 graymap as values in `[0, 1]`.
pub fn load_pgm(path: impl AsRef<Path>) -> Result<Grid> {
    let path = path.as_ref();
    let r = decode_pnm(&read(path)?).map_err(|d| parse_err(path, d))?;
    if r.channels != 1 {
        return Err(parse_err(path, "expected a graymap (P2/P5), found a pixmap".into()));
    }
    Grid::new(r.height, r.width, r.values)
}

/// Loads a mask graymap, binarizing at 0.5.
pub fn load_mask(path: impl AsRef<Path>) -> Result<MaskImage> {
    let g = load_pgm(path)?;
    MaskImage::from_values(g.height, g.width, &g.values)
}

/// Loads a graymap as `1×H×W` or a pixmap as `3×H×W`.
pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let r = decode_pnm(&read(path)?).map_err(|d| parse_err(path, d))?;
    Tensor::new([r.channels, r.height, r.width], r.values)
}

/// Encodes as binary P5 with maxval 255, `round(v·255)` half-up.
pub fn encode_pgm(grid: &Grid) -> Vec<u8> {
    let header = format!("P5\n{} {}\n255\n", grid.width, grid.height);
    let mut out = Vec::with_capacity(header.len() + grid.values.len());
    out.extend_from_slice(header.as_bytes());
    out.extend(grid.values.iter().map(|&v| quantize(v)));
    out
}

/// `[0,1]` → byte with round-half-up. Values outside the range saturate.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

pub fn save_pgm(grid: &Grid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(grid)).map_err(|e| Error::io(path, e))
}

/// Width and height from a PNM header without decoding the raster.
pub fn peek_size(path: impl AsRef<Path>) -> Result<(usize, usize)> {
    let path = path.as_ref();
    let bytes = read(path)?;
    let h = parse_header(&bytes).map_err(|d| parse_err(path, d))?;
    Ok((h.height, h.width))
}

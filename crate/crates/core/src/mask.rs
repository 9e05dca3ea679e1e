//! Binary rasters and the geometric primitives built on them.
//!
//! Coordinates are `(row, col)` with the origin at the top-left corner.
//! Horizontal shifts (`dx`) move columns, vertical shifts (`dy`) move rows.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MaskError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot decode PNG {path}: {reason}")]
    Decode { path: String, reason: String },
    #[error("cannot encode PNG {path}: {reason}")]
    Encode { path: String, reason: String },
    #[error("image has zero area")]
    ZeroArea,
    #[error("mask has no foreground pixels")]
    EmptyMask,
    #[error("data length {len} does not match {width}x{height}")]
    BadLength { len: usize, width: u32, height: u32 },
}

/// Row-major binary raster. `true` is foreground (shape or skeleton).
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    data: Vec<bool>,
}

impl std::fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "BinaryMask {}x{}", self.width, self.height)?;
        if self.width <= 64 && self.height <= 64 {
            for r in 0..self.height as usize {
                let row: String = (0..self.width as usize)
                    .map(|c| if self.get(r, c) { '#' } else { '.' })
                    .collect();
                writeln!(f, "{row}")?;
            }
        }
        Ok(())
    }
}

impl BinaryMask {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_vec(width: u32, height: u32, data: Vec<bool>) -> Result<Self, MaskError> {
        if data.len() != width as usize * height as usize {
            return Err(MaskError::BadLength {
                len: data.len(),
                width,
                height,
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Builds a mask from a predicate over `(row, col)`.
    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::new(width, height);
        for r in 0..height as usize {
            for c in 0..width as usize {
                m.data[r * width as usize + c] = f(r, c);
            }
        }
        m
    }

    /// Parses an ASCII picture: `#`, `1` or `X` are foreground, anything else background.
    /// Rows are separated by newlines; blank lines and surrounding whitespace are ignored.
    pub fn from_ascii(picture: &str) -> Self {
        let rows: Vec<&str> = picture
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .collect();
        let height = rows.len() as u32;
        let width = rows.iter().map(|r| r.chars().count()).max().unwrap_or(0) as u32;
        let mut m = Self::new(width, height);
        for (r, line) in rows.iter().enumerate() {
            for (c, ch) in line.chars().enumerate() {
                m.set(r, c, matches!(ch, '#' | '1' | 'X'));
            }
        }
        m
    }

    #[inline]
    pub fn width(&self) -> u32 {
        self.width
    }

    #[inline]
    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height as usize, self.width as usize)
    }

    #[inline]
    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width as usize + col]
    }

    /// Bounds-checked read with signed coordinates; outside the frame is background.
    #[inline]
    pub fn get_or_bg(&self, row: isize, col: isize) -> bool {
        if row < 0 || col < 0 || row >= self.height as isize || col >= self.width as isize {
            false
        } else {
            self.data[row as usize * self.width as usize + col as usize]
        }
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        let w = self.width as usize;
        self.data[row * w + col] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn same_dims(&self, other: &BinaryMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Foreground pixel coordinates in row-major order.
    pub fn foreground(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width as usize;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i / w, i % w))
    }

    /// `true` when every foreground pixel of `self` is also foreground in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.same_dims(other) && self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }

    pub fn complement(&self) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|b| !b).collect(),
        }
    }

    /// Number of foreground pixels among the 8 neighbours; the frame counts as background.
    pub fn neighbour_count(&self, row: usize, col: usize) -> usize {
        let (r, c) = (row as isize, col as isize);
        NEIGHBOURS_8
            .iter()
            .filter(|(dr, dc)| self.get_or_bg(r + dr, c + dc))
            .count()
    }
}

/// Offsets of the 8-neighbourhood in row-major order.
pub const NEIGHBOURS_8: [(isize, isize); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

/// Inclusive pixel bounds of a mask's foreground.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BBox {
    pub rmin: usize,
    pub cmin: usize,
    pub rmax: usize,
    pub cmax: usize,
}

impl BBox {
    /// Real-valued centre `(row, col)` of the inclusive extents.
    pub fn center(&self) -> (f64, f64) {
        (
            (self.rmin + self.rmax) as f64 / 2.0,
            (self.cmin + self.cmax) as f64 / 2.0,
        )
    }
}

/// Row-major real-valued image.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f64>,
}

impl GrayImage {
    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width as usize + col]
    }
}

/// Reads a PNG of any colour type and bit depth; a pixel is foreground when its
/// 8-bit luminance is at least 128. RGB uses BT.601 weights. Alpha is ignored.
pub fn load_png(path: impl AsRef<Path>) -> Result<BinaryMask, MaskError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let file = File::open(path).map_err(|source| MaskError::Io {
        path: display.clone(),
        source,
    })?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::normalize_to_color8());
    let decode_err = |e: png::DecodingError| MaskError::Decode {
        path: display.clone(),
        reason: e.to_string(),
    };
    let mut reader = decoder.read_info().map_err(decode_err)?;
    let size = reader.output_buffer_size().ok_or_else(|| MaskError::Decode {
        path: display.clone(),
        reason: "image too large".into(),
    })?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(decode_err)?;
    let (width, height) = (info.width, info.height);
    if width == 0 || height == 0 {
        return Err(MaskError::ZeroArea);
    }
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => {
            return Err(MaskError::Decode {
                path: display,
                reason: "palette was not expanded".into(),
            })
        }
    };
    let stride = info.line_size;
    let mut mask = BinaryMask::new(width, height);
    for r in 0..height as usize {
        let line = &buf[r * stride..r * stride + width as usize * channels];
        for c in 0..width as usize {
            let px = &line[c * channels..(c + 1) * channels];
            // BT.601 luminance in thousandths, compared exactly against 128.
            let luma = if channels >= 3 {
                299 * px[0] as u32 + 587 * px[1] as u32 + 114 * px[2] as u32
            } else {
                1000 * px[0] as u32
            };
            mask.set(r, c, luma >= 128_000);
        }
    }
    Ok(mask)
}

/// Encodes `mask` as an 8-bit grayscale PNG (foreground 255, background 0).
pub fn encode_png(mask: &BinaryMask) -> Result<Vec<u8>, png::EncodingError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, mask.width, mask.height);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header()?;
        let bytes: Vec<u8> = mask.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
        writer.write_image_data(&bytes)?;
        writer.finish()?;
    }
    Ok(out)
}

pub fn save_png(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<(), MaskError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let file = File::create(path).map_err(|source| MaskError::Io {
        path: display.clone(),
        source,
    })?;
    let mut w = BufWriter::new(file);
    let bytes = encode_png(mask).map_err(|e| MaskError::Encode {
        path: display.clone(),
        reason: e.to_string(),
    })?;
    std::io::Write::write_all(&mut w, &bytes)
        .and_then(|_| std::io::Write::flush(&mut w))
        .map_err(|source| MaskError::Io {
            path: display,
            source,
        })
}

/// Translates foreground by `(dx, dy)`; content leaving the frame is dropped.
pub fn shift_mask(mask: &BinaryMask, dx: isize, dy: isize) -> BinaryMask {
    let (h, w) = mask.dims();
    let mut out = BinaryMask::new(mask.width, mask.height);
    for (r, c) in mask.foreground() {
        let (nr, nc) = (r as isize + dy, c as isize + dx);
        if nr >= 0 && nc >= 0 && (nr as usize) < h && (nc as usize) < w {
            out.set(nr as usize, nc as usize, true);
        }
    }
    out
}

/// `true` when [`shift_mask`] would discard foreground for this translation.
pub fn shift_clips(mask: &BinaryMask, dx: isize, dy: isize) -> bool {
    let (h, w) = mask.dims();
    mask.foreground().any(|(r, c)| {
        let (nr, nc) = (r as isize + dy, c as isize + dx);
        nr < 0 || nc < 0 || nr as usize >= h || nc as usize >= w
    })
}

pub fn bounding_box(mask: &BinaryMask) -> Result<BBox, MaskError> {
    let mut it = mask.foreground();
    let (r0, c0) = it.next().ok_or(MaskError::EmptyMask)?;
    let mut b = BBox {
        rmin: r0,
        cmin: c0,
        rmax: r0,
        cmax: c0,
    };
    for (r, c) in it {
        b.rmin = b.rmin.min(r);
        b.rmax = b.rmax.max(r);
        b.cmin = b.cmin.min(c);
        b.cmax = b.cmax.max(c);
    }
    Ok(b)
}

/// Squared distance transform of a sampled 1-D function via the lower envelope of
/// parabolas. `f` holds `0` on sites and `INF` elsewhere.
fn lower_envelope_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let Some(first) = f.iter().position(|x| x.is_finite()) else {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    };
    let intersect = |q: usize, p: usize| {
        ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64))
    };
    let mut k = 0usize;
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in first + 1..f.len() {
        if !f[q].is_finite() {
            continue;
        }
        let mut s = intersect(q, v[k]);
        while s <= z[k] {
            k -= 1;
            s = intersect(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    let mut k = 0usize;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Exact Euclidean distance from every pixel to the nearest background pixel.
///
/// Pixels outside the frame count as background, so a shape touching the border
/// has distance 1 there. Background pixels get 0.
pub fn distance_transform(mask: &BinaryMask) -> GrayImage {
    let (h, w) = mask.dims();
    // Sites are background pixels plus a one-pixel background frame around the image.
    let (ph, pw) = (h + 2, w + 2);
    let mut grid = vec![f64::INFINITY; ph * pw];
    for r in 0..ph {
        for c in 0..pw {
            let inside = r >= 1 && c >= 1 && r <= h && c <= w;
            if !inside || !mask.get(r - 1, c - 1) {
                grid[r * pw + c] = 0.0;
            }
        }
    }
    let n = ph.max(pw);
    let mut f = vec![0.0; n];
    let mut out = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    for c in 0..pw {
        for r in 0..ph {
            f[r] = grid[r * pw + c];
        }
        lower_envelope_1d(&f[..ph], &mut out[..ph], &mut v, &mut z);
        for r in 0..ph {
            grid[r * pw + c] = out[r];
        }
    }
    for r in 0..ph {
        f[..pw].copy_from_slice(&grid[r * pw..(r + 1) * pw]);
        lower_envelope_1d(&f[..pw], &mut out[..pw], &mut v, &mut z);
        grid[r * pw..(r + 1) * pw].copy_from_slice(&out[..pw]);
    }
    let mut data = Vec::with_capacity(h * w);
    for r in 1..=h {
        for c in 1..=w {
            data.push(grid[r * pw + c].sqrt());
        }
    }
    GrayImage {
        width: mask.width,
        height: mask.height,
        data,
    }
}

/// 8-connected component labelling. Labels are dense from 1; background is 0.
#[derive(Clone, Debug)]
pub struct Components {
    pub count: usize,
    pub labels: Vec<u32>,
}

pub fn connected_components(mask: &BinaryMask) -> Components {
    let (h, w) = mask.dims();
    let mut labels = vec![0u32; h * w];
    let mut count = 0u32;
    let mut stack = Vec::new();
    for start in 0..h * w {
        if !mask.data[start] || labels[start] != 0 {
            continue;
        }
        count += 1;
        labels[start] = count;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (r, c) = ((i / w) as isize, (i % w) as isize);
            for (dr, dc) in NEIGHBOURS_8 {
                let (nr, nc) = (r + dr, c + dc);
                if mask.get_or_bg(nr, nc) {
                    let j = nr as usize * w + nc as usize;
                    if labels[j] == 0 {
                        labels[j] = count;
                        stack.push(j);
                    }
                }
            }
        }
    }
    Components {
        count: count as usize,
        labels,
    }
}

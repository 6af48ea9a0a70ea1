//! Row-major float image buffer with PGM and CSV export.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("raster dimensions must be nonzero")]
    EmptyRaster,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a P5 portable graymap: {0}")]
    BadFormat(String),
}

/// Grayscale image; values are nominally in [0, 1] but unclamped.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: u32,
    height: u32,
    data: Vec<f64>,
}

impl Raster {
    pub fn new(width: u32, height: u32) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: u32, height: u32, value: f64) -> Self {
        Self { width, height, data: vec![value; width as usize * height as usize] }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: f64) {
        self.data[y as usize * self.width as usize + x as usize] = value;
    }

    #[inline]
    pub fn add(&mut self, x: u32, y: u32, value: f64) {
        self.data[y as usize * self.width as usize + x as usize] += value;
    }

    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as u64) < self.width as u64 && (y as u64) < self.height as u64
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn map_in_place(&mut self, f: impl Fn(f64) -> f64) {
        for v in &mut self.data {
            *v = f(*v);
        }
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Writes a binary portable graymap, quantizing by round(v·255) after
    /// clamping to [0, 1].
    pub fn write_pgm(&self, path: &Path) -> Result<(), RasterError> {
        if self.data.is_empty() {
            return Err(RasterError::EmptyRaster);
        }
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        write!(out, "P5\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> =
            self.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        out.write_all(&bytes)?;
        Ok(())
    }

    pub fn read_pgm(path: &Path) -> Result<Self, RasterError> {
        let mut reader = BufReader::new(std::fs::File::open(path)?);
        let mut header = String::new();
        // Header is three whitespace-separated tokens after the magic; comments
        // are not produced by write_pgm and not accepted here.
        for _ in 0..3 {
            let mut line = String::new();
            reader.read_line(&mut line)?;
            header.push_str(&line);
        }
        let mut tokens = header.split_ascii_whitespace();
        if tokens.next() != Some("P5") {
            return Err(RasterError::BadFormat("missing P5 magic".into()));
        }
        let parse = |t: Option<&str>| -> Result<u32, RasterError> {
            t.ok_or_else(|| RasterError::BadFormat("truncated header".into()))?
                .parse()
                .map_err(|e| RasterError::BadFormat(format!("bad header field: {e}")))
        };
        let width = parse(tokens.next())?;
        let height = parse(tokens.next())?;
        let maxval = parse(tokens.next())?;
        if maxval != 255 {
            return Err(RasterError::BadFormat(format!("unsupported maxval {maxval}")));
        }
        let mut bytes = vec![0u8; width as usize * height as usize];
        reader.read_exact(&mut bytes)?;
        Ok(Self {
            width,
            height,
            data: bytes.into_iter().map(|b| b as f64 / 255.0).collect(),
        })
    }

    /// Lossless float export, one CSV row per raster row.
    pub fn write_csv(&self, path: &Path) -> Result<(), RasterError> {
        if self.data.is_empty() {
            return Err(RasterError::EmptyRaster);
        }
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for row in self.data.chunks(self.width as usize) {
            let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }
}

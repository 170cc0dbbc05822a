use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// RGB raster with channel values in `[0, 1]`, stored row-major, interleaved.
///
/// Pixel `(i, j)` covers `[j, j+1) × [i, i+1)` in continuous image
/// coordinates, so its center sits at `(j + 0.5, i + 0.5)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

pub type Rgb = [f32; 3];

impl Image {
    pub fn new(width: usize, height: usize, fill: Rgb) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidConfig(format!("image size {width}x{height}")));
        }
        let data = (0..width * height).flat_map(|_| fill).collect();
        Ok(Self { width, height, data })
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height * 3 {
            return Err(Error::InvalidConfig(format!(
                "{} values for a {width}x{height} RGB image",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> Rgb {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: Rgb) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Alpha-blends `rgb` over pixel `(x, y)`.
    pub fn blend(&mut self, x: usize, y: usize, rgb: Rgb, alpha: f32) {
        let i = (y * self.width + x) * 3;
        for (d, s) in self.data[i..i + 3].iter_mut().zip(rgb) {
            *d += (s - *d) * alpha;
        }
    }

    /// Bilinear sample at continuous coordinates; samples outside the raster read `fill`.
    pub fn sample_bilinear(&self, x: f64, y: f64, fill: Rgb) -> Rgb {
        let fx = x - 0.5;
        let fy = y - 0.5;
        let x0 = fx.floor();
        let y0 = fy.floor();
        let tx = (fx - x0) as f32;
        let ty = (fy - y0) as f32;
        let (x0, y0) = (x0 as i64, y0 as i64);
        let fetch = |xi: i64, yi: i64| -> Rgb {
            if xi < 0 || yi < 0 || xi >= self.width as i64 || yi >= self.height as i64 {
                fill
            } else {
                self.get(xi as usize, yi as usize)
            }
        };
        let (a, b) = (fetch(x0, y0), fetch(x0 + 1, y0));
        let (c, d) = (fetch(x0, y0 + 1), fetch(x0 + 1, y0 + 1));
        let mut out = [0.0; 3];
        for k in 0..3 {
            let top = a[k] + (b[k] - a[k]) * tx;
            let bottom = c[k] + (d[k] - c[k]) * tx;
            out[k] = top + (bottom - top) * ty;
        }
        out
    }

    /// Planar `[3, H, W]` tensor with values shifted to `[-0.5, 0.5]`.
    pub fn to_chw(&self) -> Tensor<f32> {
        let plane = self.width * self.height;
        let mut out = vec![0.0f32; 3 * plane];
        for (p, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * plane + p] = px[c] - 0.5;
            }
        }
        Tensor::new([3, self.height, self.width], out).expect("consistent image dimensions")
    }

    /// Binary PPM (`P6`, maxval 255); values are quantized here and only here.
    pub fn write_ppm<W: Write>(&self, mut out: W) -> Result<()> {
        write!(out, "P6\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        out.write_all(&bytes)?;
        out.flush()?;
        Ok(())
    }

    pub fn read_ppm<R: Read>(input: R) -> Result<Self> {
        let mut reader = BufReader::new(input);
        let mut tokens = Vec::new();
        while tokens.len() < 4 {
            let mut line = String::new();
            if reader.read_line(&mut line)? == 0 {
                return Err(ppm_err("truncated header"));
            }
            let content = line.split('#').next().unwrap_or("");
            tokens.extend(content.split_whitespace().map(str::to_string));
        }
        if tokens.len() != 4 || tokens[0] != "P6" {
            return Err(ppm_err("expected 'P6 width height maxval' header"));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|_| ppm_err("bad header number"));
        let (width, height, maxval) = (parse(&tokens[1])?, parse(&tokens[2])?, parse(&tokens[3])?);
        if maxval != 255 {
            return Err(ppm_err("only maxval 255 is supported"));
        }
        let mut bytes = vec![0u8; width * height * 3];
        reader.read_exact(&mut bytes)?;
        let data = bytes.iter().map(|b| *b as f32 / 255.0).collect();
        Self::from_raw(width, height, data)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_ppm(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_ppm(File::open(path)?)
    }

    /// Values rounded to the 8-bit grid a PPM round trip produces.
    pub fn quantized(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
                .collect(),
        }
    }
}

fn ppm_err(detail: &str) -> Error {
    Error::Format {
        kind: "PPM",
        detail: detail.to_string(),
    }
}

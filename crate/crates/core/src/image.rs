//! Interleaved float images and binary PPM I/O.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major, channel-interleaved image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, &vec![0.0; channels])
    }

    pub fn filled(width: usize, height: usize, value: &[f32]) -> Self {
        let mut data = Vec::with_capacity(width * height * value.len());
        for _ in 0..width * height {
            data.extend_from_slice(value);
        }
        Self {
            width,
            height,
            channels: value.len(),
            data,
        }
    }

    pub fn from_raw(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::Invalid(format!(
                "image buffer of {} values for {width}x{height}x{channels}",
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

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f32] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    pub fn channel_means(&self) -> Vec<f32> {
        let mut acc = vec![0.0f64; self.channels];
        for px in self.data.chunks(self.channels) {
            for (a, &v) in acc.iter_mut().zip(px) {
                *a += v as f64;
            }
        }
        let n = (self.width * self.height).max(1) as f64;
        acc.into_iter().map(|s| (s / n) as f32).collect()
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len().max(1) as f64
    }

    /// Bilinear sample at pixel coordinates (pixel `i` has its center at `i`).
    /// Neighbors outside the image read from `pad`.
    #[inline]
    pub fn sample_bilinear(&self, x: f64, y: f64, pad: &[f32], out: &mut [f32]) {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = (x - x0) as f32;
        let fy = (y - y0) as f32;
        let (xi, yi) = (x0 as i64, y0 as i64);
        let w = [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy];
        let pts = [(xi, yi), (xi + 1, yi), (xi, yi + 1), (xi + 1, yi + 1)];
        for (c, o) in out.iter_mut().enumerate().take(self.channels) {
            let mut acc = 0.0f32;
            for (k, &(px, py)) in pts.iter().enumerate() {
                if w[k] == 0.0 {
                    continue;
                }
                let v = if px >= 0 && py >= 0 && (px as usize) < self.width && (py as usize) < self.height {
                    self.get(px as usize, py as usize, c)
                } else {
                    pad[c]
                };
                acc += w[k] * v;
            }
            *o = acc;
        }
    }

    /// Applies `f` to each output pixel center mapped back into this image.
    pub fn warp(&self, out_w: usize, out_h: usize, pad: &[f32], inv: impl Fn(f64, f64) -> (f64, f64)) -> Image {
        let mut out = Image::new(out_w, out_h, self.channels);
        let mut px = vec![0.0f32; self.channels];
        for v in 0..out_h {
            for u in 0..out_w {
                let (x, y) = inv(u as f64 + 0.5, v as f64 + 0.5);
                self.sample_bilinear(x - 0.5, y - 0.5, pad, &mut px);
                out.pixel_mut(u, v).copy_from_slice(&px);
            }
        }
        out
    }

    /// Quantizes to 8 bits per channel.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn from_u8(width: usize, height: usize, channels: usize, raw: &[u8]) -> Result<Self> {
        Self::from_raw(width, height, channels, raw.iter().map(|&b| b as f32 / 255.0).collect())
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        if self.channels != 3 {
            return Err(Error::Invalid("PPM output needs 3 channels".into()));
        }
        ByteImage::from_image(self).write_ppm(path)
    }

    pub fn read_ppm(path: &Path) -> Result<Self> {
        Ok(ByteImage::read_ppm(path)?.to_image())
    }
}

/// 8-bit RGB frame, the storage form of generated video.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ByteImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl ByteImage {
    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Invalid(format!(
                "RGB buffer of {} bytes for {width}x{height}",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    /// Quantizes a 3-channel float image.
    pub fn from_image(img: &Image) -> Self {
        debug_assert_eq!(img.channels, 3);
        Self {
            width: img.width,
            height: img.height,
            data: img.to_u8(),
        }
    }

    pub fn to_image(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            channels: 3,
            data: self.data.iter().map(|&b| b as f32 / 255.0).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        write!(f, "P6\n{} {}\n255\n", self.width, self.height)?;
        f.write_all(&self.data)?;
        f.flush()?;
        Ok(())
    }

    pub fn read_ppm(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(std::fs::File::open(path)?);
        let perr = |msg: &str| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: msg.to_string(),
        };
        let mut tokens = Vec::new();
        while tokens.len() < 4 {
            let mut line = String::new();
            if r.read_line(&mut line)? == 0 {
                return Err(perr("truncated PPM header"));
            }
            let line = line.split('#').next().unwrap_or("");
            tokens.extend(line.split_whitespace().map(str::to_string));
        }
        if tokens[0] != "P6" || tokens[3] != "255" {
            return Err(perr("expected binary P6 with maxval 255"));
        }
        let w: usize = tokens[1].parse().map_err(|_| perr("bad width"))?;
        let h: usize = tokens[2].parse().map_err(|_| perr("bad height"))?;
        let mut raw = vec![0u8; w * h * 3];
        r.read_exact(&mut raw)?;
        Self::from_raw(w, h, raw)
    }
}

//! Temperature fields, RGB thermal images and the seven-anchor colormap that
//! maps between them.
//!
//! The colormap is a piecewise-linear curve through RGB space. Anchors sit at
//! uniformly spaced temperatures across `[t_min, t_max]`, so a temperature is
//! encoded by interpolating between the two anchors bracketing it. Decoding
//! projects a color onto the nearest point of that curve and reports the
//! projection distance as a residual; pixels far from the curve (background,
//! annotations, gray tones) come back with large residuals.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Residuals below this many RGB units count as decodable colormap pixels.
pub const DEFAULT_DECODE_THRESHOLD: f64 = 60.0;

/// Neutral gray used for non-foreground pixels when no background is given.
pub const DEFAULT_BACKGROUND: Rgb = Rgb([128, 128, 128]);

#[derive(Debug, Error)]
pub enum ThermalError {
    #[error("pixel ({x}, {y}) has temperature {value} outside colormap range [{t_min}, {t_max}]")]
    OutOfRange {
        x: usize,
        y: usize,
        value: f64,
        t_min: f64,
        t_max: f64,
    },
    #[error("invalid dimensions {width}x{height} for {len} values")]
    Dimensions {
        width: usize,
        height: usize,
        len: usize,
    },
    #[error("invalid colormap: {0}")]
    Colormap(String),
    #[error("malformed field file: {0}")]
    FieldFormat(String),
    #[error("image codec error: {0}")]
    Codec(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rgb(pub [u8; 3]);

impl Rgb {
    fn as_f64(self) -> [f64; 3] {
        [self.0[0] as f64, self.0[1] as f64, self.0[2] as f64]
    }

    pub fn distance(self, other: Rgb) -> f64 {
        let a = self.as_f64();
        let b = other.as_f64();
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
    }
}

impl fmt::Display for Rgb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.0[0], self.0[1], self.0[2])
    }
}

/// Seven named anchor colors spread uniformly over a Celsius range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColormapSpec {
    anchor_colors: [Rgb; 7],
    anchor_names: [String; 7],
    t_min: f64,
    t_max: f64,
}

impl Default for ColormapSpec {
    fn default() -> Self {
        Self {
            anchor_colors: [
                Rgb([0, 0, 0]),
                Rgb([0, 0, 255]),
                Rgb([0, 255, 255]),
                Rgb([255, 255, 0]),
                Rgb([255, 165, 0]),
                Rgb([255, 0, 0]),
                Rgb([255, 255, 255]),
            ],
            anchor_names: ["black", "blue", "cyan", "yellow", "orange", "red", "white"]
                .map(String::from),
            t_min: 25.0,
            t_max: 60.0,
        }
    }
}

impl ColormapSpec {
    pub fn new(
        anchor_colors: [Rgb; 7],
        anchor_names: [String; 7],
        t_min: f64,
        t_max: f64,
    ) -> Result<Self, ThermalError> {
        if !(t_min.is_finite() && t_max.is_finite() && t_min < t_max) {
            return Err(ThermalError::Colormap(format!(
                "range [{t_min}, {t_max}] must satisfy t_min < t_max"
            )));
        }
        Ok(Self {
            anchor_colors,
            anchor_names,
            t_min,
            t_max,
        })
    }

    /// Default anchors over a different temperature range.
    pub fn with_range(t_min: f64, t_max: f64) -> Result<Self, ThermalError> {
        let d = Self::default();
        Self::new(d.anchor_colors, d.anchor_names, t_min, t_max)
    }

    pub fn anchor_colors(&self) -> &[Rgb; 7] {
        &self.anchor_colors
    }

    pub fn anchor_names(&self) -> &[String; 7] {
        &self.anchor_names
    }

    pub fn t_min(&self) -> f64 {
        self.t_min
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.t_min && t <= self.t_max
    }

    /// Temperature of anchor `k` (0..=6).
    pub fn anchor_temperature(&self, k: usize) -> f64 {
        self.t_min + (self.t_max - self.t_min) * k as f64 / 6.0
    }

    /// Curve parameter in `[0, 6]` for a temperature; integer values are anchors.
    pub fn curve_param(&self, t: f64) -> f64 {
        ((t - self.t_min) / (self.t_max - self.t_min) * 6.0).clamp(0.0, 6.0)
    }

    pub fn param_to_temperature(&self, s: f64) -> f64 {
        self.t_min + (self.t_max - self.t_min) * s / 6.0
    }

    /// Unrounded point on the curve at parameter `s`.
    pub fn curve_point(&self, s: f64) -> [f64; 3] {
        let s = s.clamp(0.0, 6.0);
        let seg = (s.floor() as usize).min(5);
        let frac = s - seg as f64;
        let a = self.anchor_colors[seg].as_f64();
        let b = self.anchor_colors[seg + 1].as_f64();
        [
            a[0] + frac * (b[0] - a[0]),
            a[1] + frac * (b[1] - a[1]),
            a[2] + frac * (b[2] - a[2]),
        ]
    }

    /// Color for a single temperature; values outside the range are clamped.
    pub fn color_of(&self, t: f64) -> Rgb {
        let p = self.curve_point(self.curve_param(t));
        Rgb(p.map(|c| c.round().clamp(0.0, 255.0) as u8))
    }

    /// Nearest point on the curve to `color`: returns (temperature, curve parameter, residual).
    pub fn project(&self, color: Rgb) -> Projection {
        let p = color.as_f64();
        let mut best = Projection {
            temperature: self.t_min,
            param: 0.0,
            residual: f64::INFINITY,
        };
        for seg in 0..6 {
            let a = self.anchor_colors[seg].as_f64();
            let b = self.anchor_colors[seg + 1].as_f64();
            let d = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
            let len2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
            let frac = if len2 == 0.0 {
                0.0
            } else {
                (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1] + (p[2] - a[2]) * d[2]) / len2)
                    .clamp(0.0, 1.0)
            };
            let q = [a[0] + frac * d[0], a[1] + frac * d[1], a[2] + frac * d[2]];
            let dist =
                ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
            // Strict comparison keeps the lower segment on ties at shared anchors.
            if dist < best.residual {
                let param = seg as f64 + frac;
                best = Projection {
                    temperature: self.param_to_temperature(param),
                    param,
                    residual: dist,
                };
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub temperature: f64,
    pub param: f64,
    pub residual: f64,
}

/// Per-pixel Celsius values with a foreground mask marking battery pixels.
///
/// Background values are carried but never interpreted.
#[derive(Debug, Clone, PartialEq)]
pub struct TemperatureField {
    width: usize,
    height: usize,
    values: Vec<f64>,
    mask: Vec<bool>,
}

impl TemperatureField {
    pub fn new(
        width: usize,
        height: usize,
        values: Vec<f64>,
        mask: Vec<bool>,
    ) -> Result<Self, ThermalError> {
        if width == 0 || height == 0 || values.len() != width * height || mask.len() != values.len()
        {
            return Err(ThermalError::Dimensions {
                width,
                height,
                len: values.len(),
            });
        }
        Ok(Self {
            width,
            height,
            values,
            mask,
        })
    }

    /// Every pixel is foreground at the same temperature.
    pub fn uniform(width: usize, height: usize, t: f64) -> Result<Self, ThermalError> {
        Self::new(width, height, vec![t; width * height], vec![true; width * height])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> Option<f64>,
    ) -> Result<Self, ThermalError> {
        let mut values = Vec::with_capacity(width * height);
        let mut mask = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                match f(x, y) {
                    Some(t) => {
                        values.push(t);
                        mask.push(true);
                    }
                    None => {
                        values.push(0.0);
                        mask.push(false);
                    }
                }
            }
        }
        Self::new(width, height, values, mask)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let i = self.index(x, y);
        self.mask[i].then(|| self.values[i])
    }

    pub fn is_foreground(&self, x: usize, y: usize) -> bool {
        self.mask[self.index(x, y)]
    }

    pub fn foreground_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn foreground_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values
            .iter()
            .zip(&self.mask)
            .filter_map(|(&v, &m)| m.then_some(v))
    }

    pub fn max_foreground(&self) -> Option<f64> {
        self.foreground_values().fold(None, |acc, v| match acc {
            Some(m) if m >= v => Some(m),
            _ => Some(v),
        })
    }

    pub fn min_foreground(&self) -> Option<f64> {
        self.foreground_values().fold(None, |acc, v| match acc {
            Some(m) if m <= v => Some(m),
            _ => Some(v),
        })
    }

    /// Same values, with the mask replaced.
    pub fn with_mask(&self, mask: Vec<bool>) -> Result<Self, ThermalError> {
        Self::new(self.width, self.height, self.values.clone(), mask)
    }

    /// Writes the CSV grid form: a `width,height,t_min,t_max` header line,
    /// its values, then one row per image line; background cells are `nan`.
    pub fn write_csv<W: Write>(
        &self,
        mut w: W,
        cmap: &ColormapSpec,
    ) -> Result<(), ThermalError> {
        writeln!(w, "width,height,t_min,t_max")?;
        writeln!(w, "{},{},{},{}", self.width, self.height, cmap.t_min, cmap.t_max)?;
        let mut line = String::new();
        for y in 0..self.height {
            line.clear();
            for x in 0..self.width {
                if x > 0 {
                    line.push(',');
                }
                match self.get(x, y) {
                    Some(v) => line.push_str(&format!("{v:.4}")),
                    None => line.push_str("nan"),
                }
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    /// Reads the CSV grid form; returns the field plus the header's `(t_min, t_max)`.
    pub fn read_csv<R: BufRead>(r: R) -> Result<(Self, (f64, f64)), ThermalError> {
        let bad = |m: &str| ThermalError::FieldFormat(m.to_string());
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| bad("missing header"))??;
        if header.trim() != "width,height,t_min,t_max" {
            return Err(bad("unexpected header"));
        }
        let dims = lines.next().ok_or_else(|| bad("missing dimensions"))??;
        let parts: Vec<&str> = dims.trim().split(',').collect();
        if parts.len() != 4 {
            return Err(bad("dimension line needs 4 fields"));
        }
        let width: usize = parts[0].parse().map_err(|_| bad("width"))?;
        let height: usize = parts[1].parse().map_err(|_| bad("height"))?;
        let t_min: f64 = parts[2].parse().map_err(|_| bad("t_min"))?;
        let t_max: f64 = parts[3].parse().map_err(|_| bad("t_max"))?;
        let mut values = Vec::with_capacity(width * height);
        let mut mask = Vec::with_capacity(width * height);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            for cell in line.trim().split(',') {
                if cell.eq_ignore_ascii_case("nan") {
                    values.push(0.0);
                    mask.push(false);
                } else {
                    values.push(cell.parse().map_err(|_| bad("cell value"))?);
                    mask.push(true);
                }
            }
        }
        Ok((Self::new(width, height, values, mask)?, (t_min, t_max)))
    }
}

/// 8-bit RGB raster.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ThermalImage {
    width: usize,
    height: usize,
    pixels: Vec<Rgb>,
}

impl ThermalImage {
    pub fn new(width: usize, height: usize, pixels: Vec<Rgb>) -> Result<Self, ThermalError> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(ThermalError::Dimensions {
                width,
                height,
                len: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, color: Rgb) -> Result<Self, ThermalError> {
        Self::new(width, height, vec![color; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[Rgb] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> Rgb {
        self.pixels[y * self.width + x]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, c: Rgb) {
        self.pixels[y * self.width + x] = c;
    }

    pub fn to_png_bytes(&self) -> Result<Vec<u8>, ThermalError> {
        let buf = self.to_rgb_image();
        let mut out = std::io::Cursor::new(Vec::new());
        buf.write_to(&mut out, image::ImageFormat::Png)?;
        Ok(out.into_inner())
    }

    pub fn from_png_bytes(bytes: &[u8]) -> Result<Self, ThermalError> {
        let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?;
        Ok(Self::from_rgb_image(&img.to_rgb8()))
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), ThermalError> {
        std::fs::write(path, self.to_png_bytes()?)?;
        Ok(())
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self, ThermalError> {
        Self::from_png_bytes(&std::fs::read(path)?)
    }

    fn to_rgb_image(&self) -> image::RgbImage {
        let raw: Vec<u8> = self.pixels.iter().flat_map(|p| p.0).collect();
        image::RgbImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("pixel buffer matches dimensions")
    }

    fn from_rgb_image(img: &image::RgbImage) -> Self {
        let pixels = img.pixels().map(|p| Rgb(p.0)).collect();
        Self {
            width: img.width() as usize,
            height: img.height() as usize,
            pixels,
        }
    }
}

/// Encodes a field, painting background pixels with [`DEFAULT_BACKGROUND`].
pub fn encode(field: &TemperatureField, cmap: &ColormapSpec) -> Result<ThermalImage, ThermalError> {
    encode_with_background(field, cmap, |_, _| DEFAULT_BACKGROUND)
}

/// Encodes a field; `background(x, y)` supplies the color of each non-foreground pixel.
pub fn encode_with_background(
    field: &TemperatureField,
    cmap: &ColormapSpec,
    mut background: impl FnMut(usize, usize) -> Rgb,
) -> Result<ThermalImage, ThermalError> {
    let mut pixels = Vec::with_capacity(field.width * field.height);
    for y in 0..field.height {
        for x in 0..field.width {
            let pixel = match field.get(x, y) {
                Some(t) if cmap.contains(t) => cmap.color_of(t),
                Some(t) => {
                    return Err(ThermalError::OutOfRange {
                        x,
                        y,
                        value: t,
                        t_min: cmap.t_min,
                        t_max: cmap.t_max,
                    })
                }
                None => background(x, y),
            };
            pixels.push(pixel);
        }
    }
    ThermalImage::new(field.width, field.height, pixels)
}

/// Result of inverting the colormap over an image.
#[derive(Debug, Clone)]
pub struct DecodedImage {
    /// Foreground = pixels whose residual is below the decode threshold.
    pub field: TemperatureField,
    pub residuals: Vec<f64>,
    pub params: Vec<f64>,
}

impl DecodedImage {
    pub fn decodable_fraction(&self) -> f64 {
        self.field.foreground_count() as f64 / self.residuals.len() as f64
    }
}

pub fn decode(image: &ThermalImage, cmap: &ColormapSpec) -> DecodedImage {
    decode_with_threshold(image, cmap, DEFAULT_DECODE_THRESHOLD)
}

pub fn decode_with_threshold(
    image: &ThermalImage,
    cmap: &ColormapSpec,
    threshold: f64,
) -> DecodedImage {
    let n = image.pixels.len();
    let mut values = Vec::with_capacity(n);
    let mut mask = Vec::with_capacity(n);
    let mut residuals = Vec::with_capacity(n);
    let mut params = Vec::with_capacity(n);
    // Real images repeat colors heavily; memoize per distinct color.
    let mut memo: std::collections::HashMap<Rgb, Projection> = std::collections::HashMap::new();
    for &px in &image.pixels {
        let proj = *memo.entry(px).or_insert_with(|| cmap.project(px));
        values.push(proj.temperature);
        mask.push(proj.residual < threshold);
        residuals.push(proj.residual);
        params.push(proj.param);
    }
    DecodedImage {
        field: TemperatureField {
            width: image.width,
            height: image.height,
            values,
            mask,
        },
        residuals,
        params,
    }
}

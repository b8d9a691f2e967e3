//! Background removal: find the battery as the largest blob of decodable
//! colormap pixels, then resample its oriented bounding box into an
//! axis-aligned image.

use thiserror::Error;

use crate::geometry::{connected_components, min_area_rect, OrientedRect};
use crate::thermal::{decode, ColormapSpec, Rgb, ThermalError, ThermalImage};

pub const DEFAULT_INSET_FRACTION: f64 = 0.05;

/// Minimum share of decodable pixels for detection to proceed.
pub const MIN_FOREGROUND_FRACTION: f64 = 0.01;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("no battery found: {decodable} of {total} pixels decodable")]
    NoForeground { decodable: usize, total: usize },
    #[error("degenerate crop rectangle {0:?}")]
    DegenerateRect(OrientedRect),
    #[error("crop rectangle {0:?} extends outside the frame")]
    OutsideFrame(OrientedRect),
    #[error(transparent)]
    Thermal(#[from] ThermalError),
}

pub fn detect_battery_region(
    image: &ThermalImage,
    cmap: &ColormapSpec,
) -> Result<OrientedRect, PreprocessError> {
    let (w, h) = (image.width(), image.height());
    let decoded = decode(image, cmap);
    let mask = decoded.field.mask();
    let decodable = decoded.field.foreground_count();
    let total = w * h;
    if (decodable as f64) < MIN_FOREGROUND_FRACTION * total as f64 {
        return Err(PreprocessError::NoForeground { decodable, total });
    }
    let (labels, areas) = connected_components(mask, w, h);
    let (best, _) = areas
        .iter()
        .enumerate()
        .max_by_key(|&(_, &a)| a)
        .ok_or(PreprocessError::NoForeground { decodable, total })?;
    let target = best as u32 + 1;
    // Only pixels on the blob boundary can contribute hull corners.
    let mut corners = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if labels[y * w + x] != target {
                continue;
            }
            let inner = x > 0
                && y > 0
                && x + 1 < w
                && y + 1 < h
                && [(x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)]
                    .iter()
                    .all(|&(nx, ny)| labels[ny * w + nx] == target);
            if !inner {
                let (fx, fy) = (x as f64, y as f64);
                corners.extend_from_slice(&[(fx, fy), (fx + 1.0, fy), (fx, fy + 1.0), (fx + 1.0, fy + 1.0)]);
            }
        }
    }
    min_area_rect(&corners).ok_or(PreprocessError::NoForeground { decodable, total })
}

fn bilinear(image: &ThermalImage, x: f64, y: f64) -> Rgb {
    // Sample positions are pixel-center based: pixel i spans [i, i+1).
    let fx = (x - 0.5).clamp(0.0, (image.width() - 1) as f64);
    let fy = (y - 0.5).clamp(0.0, (image.height() - 1) as f64);
    let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(image.width() - 1), (y0 + 1).min(image.height() - 1));
    let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
    let (p00, p10, p01, p11) = (
        image.pixel(x0, y0).0,
        image.pixel(x1, y0).0,
        image.pixel(x0, y1).0,
        image.pixel(x1, y1).0,
    );
    let mut out = [0u8; 3];
    for c in 0..3 {
        let top = p00[c] as f64 * (1.0 - tx) + p10[c] as f64 * tx;
        let bottom = p01[c] as f64 * (1.0 - tx) + p11[c] as f64 * tx;
        out[c] = (top * (1.0 - ty) + bottom * ty).round().clamp(0.0, 255.0) as u8;
    }
    Rgb(out)
}

/// Resamples the interior of `rect`, shrunk by `inset_fraction` per side, into
/// an axis-aligned image with bilinear interpolation.
pub fn crop_rotate(
    image: &ThermalImage,
    rect: &OrientedRect,
    inset_fraction: f64,
) -> Result<ThermalImage, PreprocessError> {
    if rect.is_degenerate() || !(0.0..0.5).contains(&inset_fraction) {
        return Err(PreprocessError::DegenerateRect(*rect));
    }
    let inner = rect.shrunk(inset_fraction);
    let out_w = inner.width.round() as usize;
    let out_h = inner.height.round() as usize;
    if out_w == 0 || out_h == 0 {
        return Err(PreprocessError::DegenerateRect(*rect));
    }
    if !inner.fits_in(image.width(), image.height(), 1.0) {
        return Err(PreprocessError::OutsideFrame(*rect));
    }
    let mut pixels = Vec::with_capacity(out_w * out_h);
    for j in 0..out_h {
        for i in 0..out_w {
            let u = i as f64 + 0.5 - out_w as f64 / 2.0;
            let v = j as f64 + 0.5 - out_h as f64 / 2.0;
            let (x, y) = inner.to_frame(u, v);
            pixels.push(bilinear(image, x, y));
        }
    }
    Ok(ThermalImage::new(out_w, out_h, pixels)?)
}

/// Detection followed by crop with the given inset.
pub fn preprocess(
    image: &ThermalImage,
    cmap: &ColormapSpec,
    inset_fraction: f64,
) -> Result<(OrientedRect, ThermalImage), PreprocessError> {
    let rect = detect_battery_region(image, cmap)?;
    let out = crop_rotate(image, &rect, inset_fraction)?;
    Ok((rect, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::thermal::{encode, TemperatureField};

    #[test]
    fn full_frame_identity() {
        let cmap = ColormapSpec::default();
        let f = TemperatureField::from_fn(31, 17, |x, y| Some(30.0 + (x + 2 * y) as f64 * 0.3)).unwrap();
        let img = encode(&f, &cmap).unwrap();
        let rect = detect_battery_region(&img, &cmap).unwrap();
        assert!((rect.width - 31.0).abs() < 1e-9 && (rect.height - 17.0).abs() < 1e-9);
        assert_eq!(rect.angle_deg, 0.0);
        let out = crop_rotate(&img, &rect, 0.0).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn background_only_fails_detection() {
        let cmap = ColormapSpec::default();
        let img = ThermalImage::filled(40, 30, Rgb([100, 100, 100])).unwrap();
        assert!(matches!(
            detect_battery_region(&img, &cmap),
            Err(PreprocessError::NoForeground { decodable: 0, .. })
        ));
    }

    #[test]
    fn degenerate_and_outside_rects() {
        let img = ThermalImage::filled(40, 30, Rgb([0, 0, 0])).unwrap();
        let flat = OrientedRect::new((20.0, 15.0), 0.5, 10.0, 0.0);
        assert!(matches!(
            crop_rotate(&img, &flat, 0.05),
            Err(PreprocessError::DegenerateRect(_))
        ));
        let off = OrientedRect::new((35.0, 15.0), 30.0, 10.0, 0.0);
        assert!(matches!(
            crop_rotate(&img, &off, 0.0),
            Err(PreprocessError::OutsideFrame(_))
        ));
    }
}

//! Rule-based checker for the two normality conditions of a battery thermal
//! image: peak temperature below a threshold, and no localized hot or cold
//! spots.
//!
//! A spot is a connected blob of pixels whose temperature deviates from the
//! median of their foreground neighborhood by more than `spot_deviation`.
//! Neighborhoods are disks of radius `neighborhood_radius` clipped to the
//! foreground mask, so the battery outline itself never reads as a spot.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::connected_components;
use crate::parser::Verdict;
use crate::thermal::TemperatureField;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("field has no foreground pixels")]
    EmptyForeground,
    #[error("foreground area {area} does not exceed minimum blob area {min_blob_area}")]
    ForegroundTooSmall { area: usize, min_blob_area: usize },
    #[error("invalid oracle parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleParams {
    pub temp_threshold: f64,
    pub spot_deviation: f64,
    pub neighborhood_radius: usize,
    pub min_blob_area: usize,
}

impl Default for OracleParams {
    fn default() -> Self {
        Self {
            temp_threshold: 50.0,
            spot_deviation: 4.0,
            neighborhood_radius: 9,
            min_blob_area: 25,
        }
    }
}

impl OracleParams {
    /// Checks positivity, and that spots are narrower than the colormap span.
    pub fn validate(&self, colormap_span: f64) -> Result<(), OracleError> {
        if !(self.temp_threshold > 0.0
            && self.spot_deviation > 0.0
            && self.neighborhood_radius > 0
            && self.min_blob_area > 0)
        {
            return Err(OracleError::InvalidParams("all parameters must be positive".into()));
        }
        if self.spot_deviation >= colormap_span {
            return Err(OracleError::InvalidParams(format!(
                "spot_deviation {} must be below colormap span {colormap_span}",
                self.spot_deviation
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub verdict: Verdict,
    pub max_temp: f64,
    pub temp_ok: bool,
    pub smooth_ok: bool,
    pub spot_mask: Vec<bool>,
    /// Largest connected blob of deviating pixels.
    pub largest_spot_area: usize,
}

pub fn check_temperature(
    field: &TemperatureField,
    params: &OracleParams,
) -> Result<(bool, f64), OracleError> {
    let max = field.max_foreground().ok_or(OracleError::EmptyForeground)?;
    Ok((max < params.temp_threshold, max))
}

/// Per-pixel deviation from the foreground-neighborhood median; background is 0.
pub fn median_deviation(field: &TemperatureField, radius: usize) -> Vec<f64> {
    let (w, h) = (field.width(), field.height());
    let r = radius as isize;
    let offsets: Vec<(isize, isize)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .filter(|(dx, dy)| dx * dx + dy * dy <= r * r)
        .collect();
    let values = field.values();
    let mask = field.mask();
    let mut out = vec![0.0; w * h];
    let mut buf = Vec::with_capacity(offsets.len());
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !mask[i] {
                continue;
            }
            buf.clear();
            for &(dx, dy) in &offsets {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if mask[j] {
                    buf.push(values[j]);
                }
            }
            out[i] = values[i] - median(&mut buf);
        }
    }
    out
}

fn median(buf: &mut [f64]) -> f64 {
    let n = buf.len();
    let mid = n / 2;
    let (lower, m, _) = buf.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    let upper = *m;
    if n % 2 == 1 {
        upper
    } else {
        let below = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (below + upper) / 2.0
    }
}

pub fn check_smoothness(
    field: &TemperatureField,
    params: &OracleParams,
) -> Result<(bool, Vec<bool>), OracleError> {
    smoothness_detail(field, params).map(|(ok, mask, _)| (ok, mask))
}

fn smoothness_detail(
    field: &TemperatureField,
    params: &OracleParams,
) -> Result<(bool, Vec<bool>, usize), OracleError> {
    let area = field.foreground_count();
    if area == 0 {
        return Err(OracleError::EmptyForeground);
    }
    if area <= params.min_blob_area {
        return Err(OracleError::ForegroundTooSmall {
            area,
            min_blob_area: params.min_blob_area,
        });
    }
    let dev = median_deviation(field, params.neighborhood_radius);
    let marked: Vec<bool> = dev
        .iter()
        .zip(field.mask())
        .map(|(&d, &m)| m && d.abs() > params.spot_deviation)
        .collect();
    let (labels, areas) = connected_components(&marked, field.width(), field.height());
    let largest = areas.iter().copied().max().unwrap_or(0);
    // Only blobs large enough to count are reported in the mask.
    let spot_mask = labels
        .iter()
        .map(|&l| l != 0 && areas[l as usize - 1] >= params.min_blob_area)
        .collect();
    Ok((largest < params.min_blob_area, spot_mask, largest))
}

pub fn classify(field: &TemperatureField, params: &OracleParams) -> Result<OracleReport, OracleError> {
    let (temp_ok, max_temp) = check_temperature(field, params)?;
    let (smooth_ok, spot_mask, largest_spot_area) = smoothness_detail(field, params)?;
    let verdict = if temp_ok && smooth_ok {
        Verdict::Normal
    } else {
        Verdict::Anomaly
    };
    Ok(OracleReport {
        verdict,
        max_temp,
        temp_ok,
        smooth_ok,
        spot_mask,
        largest_spot_area,
    })
}

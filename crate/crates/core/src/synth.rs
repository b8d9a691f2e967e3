//! Seeded synthetic battery thermal scenes for the four test classes.
//!
//! A scene is a rotated battery rectangle on a background. Its temperature is
//! a [`ThermalProfile`] evaluated in battery-local coordinates: a base level
//! with a linear gradient, plus Gaussian hot spots and flat cold patches.
//! Each class samples a profile whose magnitudes keep it on the right side of
//! the default [`OracleParams`](crate::oracle::OracleParams):
//!
//! | class        | peak temperature | spots                    |
//! |--------------|------------------|--------------------------|
//! | normal       | <= 48            | none, gradient <= 3      |
//! | overheating  | (50, 58], min > 50 | none, gradient <= 3    |
//! | reflection   | > 50             | 1-4 hot spots            |
//! | spatial tape | < 48             | 1-3 cold patches, 5-10 below |
//!
//! Cold patch edges ramp linearly over [`PATCH_EDGE_RAMP`] pixels, the way
//! heat conduction blurs a tape boundary; a hard step between distant colormap
//! colors would not survive resampling.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::OrientedRect;
use crate::thermal::{encode_with_background, ColormapSpec, Rgb, TemperatureField, ThermalError, ThermalImage};

pub const DEFAULT_WIDTH: usize = 160;
pub const DEFAULT_HEIGHT: usize = 120;
pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("battery rectangle does not fit inside a {width}x{height} frame")]
    RectOutsideFrame { width: usize, height: usize },
    #[error("generator for {expected} called with a {actual} scene spec")]
    WrongClass { expected: SceneClass, actual: SceneClass },
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error(transparent)]
    Thermal(#[from] ThermalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneClass {
    Normal,
    Overheating,
    Reflection,
    SpatialTape,
}

impl SceneClass {
    pub const ALL: [SceneClass; 4] = [
        SceneClass::Normal,
        SceneClass::Overheating,
        SceneClass::Reflection,
        SceneClass::SpatialTape,
    ];

    pub fn is_anomaly(self) -> bool {
        self != SceneClass::Normal
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SceneClass::Normal => "normal",
            SceneClass::Overheating => "overheating",
            SceneClass::Reflection => "reflection",
            SceneClass::SpatialTape => "spatial_tape",
        }
    }

    fn stream_tag(self) -> u64 {
        match self {
            SceneClass::Normal => 1,
            SceneClass::Overheating => 2,
            SceneClass::Reflection => 3,
            SceneClass::SpatialTape => 4,
        }
    }
}

impl fmt::Display for SceneClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SceneClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SceneClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s.trim())
            .ok_or_else(|| format!("unknown scene class '{s}'"))
    }
}

/// Binary ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Normal,
    Anomaly,
}

impl From<SceneClass> for Label {
    fn from(c: SceneClass) -> Self {
        if c.is_anomaly() {
            Label::Anomaly
        } else {
            Label::Normal
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Background {
    Solid(Rgb),
    /// Gray with independent per-channel uniform noise of this amplitude.
    Noisy { amplitude: u8 },
}

impl Default for Background {
    fn default() -> Self {
        Background::Noisy { amplitude: 20 }
    }
}

const NOISE_GRAY: i32 = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub class_label: SceneClass,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub battery_rect: OrientedRect,
    pub background: Background,
}

impl SceneSpec {
    /// Default frame with a battery of seeded size and placement, rotated
    /// 10-30 degrees either way.
    pub fn sample(class_label: SceneClass, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ce0_e5ec_0000_0001);
        let w = rng.random_range(88.0..=100.0);
        let h = rng.random_range(40.0..=50.0);
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let angle = sign * rng.random_range(10.0..=30.0);
        let cx = DEFAULT_WIDTH as f64 / 2.0 + rng.random_range(-6.0..=6.0);
        let cy = DEFAULT_HEIGHT as f64 / 2.0 + rng.random_range(-5.0..=5.0);
        Self {
            class_label,
            seed,
            width: DEFAULT_WIDTH,
            height: DEFAULT_HEIGHT,
            battery_rect: OrientedRect::new((cx, cy), w, h, angle),
            background: Background::default(),
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.battery_rect.is_degenerate() || !self.battery_rect.fits_in(self.width, self.height, 0.0)
        {
            return Err(SynthError::RectOutsideFrame {
                width: self.width,
                height: self.height,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HotSpot {
    /// Battery-local center in pixels.
    pub center: (f64, f64),
    pub sigma: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchShape {
    Rect { half_width: f64, half_height: f64 },
    Ellipse { semi_u: f64, semi_v: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColdPatch {
    pub center: (f64, f64),
    pub shape: PatchShape,
    pub depth: f64,
}

/// Width in pixels of the linear ramp at a cold patch boundary.
pub const PATCH_EDGE_RAMP: f64 = 1.5;

impl ColdPatch {
    /// Approximate signed distance to the boundary, negative inside.
    fn signed_distance(&self, u: f64, v: f64) -> f64 {
        let (du, dv) = (u - self.center.0, v - self.center.1);
        match self.shape {
            PatchShape::Rect {
                half_width,
                half_height,
            } => (du.abs() - half_width).max(dv.abs() - half_height),
            PatchShape::Ellipse { semi_u, semi_v } => {
                let r = ((du / semi_u).powi(2) + (dv / semi_v).powi(2)).sqrt();
                (r - 1.0) * semi_u.min(semi_v)
            }
        }
    }

    /// Fraction of `depth` applied at a point: 1 well inside, 0 outside,
    /// linear across the edge ramp.
    pub fn weight(&self, u: f64, v: f64) -> f64 {
        (0.5 - self.signed_distance(u, v) / PATCH_EDGE_RAMP).clamp(0.0, 1.0)
    }

    fn extent(&self) -> f64 {
        match self.shape {
            PatchShape::Rect {
                half_width,
                half_height,
            } => half_width.max(half_height),
            PatchShape::Ellipse { semi_u, semi_v } => semi_u.max(semi_v),
        }
    }
}

/// Temperature over the battery in local coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermalProfile {
    pub base: f64,
    /// Total rise of the linear gradient across the battery.
    pub gradient_amplitude: f64,
    /// Direction of increasing temperature, degrees in the battery frame.
    pub gradient_direction_deg: f64,
    pub spots: Vec<HotSpot>,
    pub patches: Vec<ColdPatch>,
}

impl ThermalProfile {
    pub fn uniform(t: f64) -> Self {
        Self {
            base: t,
            gradient_amplitude: 0.0,
            gradient_direction_deg: 0.0,
            spots: Vec::new(),
            patches: Vec::new(),
        }
    }

    /// Base plus gradient, before spots and patches.
    pub fn background_level(&self, rect: &OrientedRect, u: f64, v: f64) -> f64 {
        if self.gradient_amplitude == 0.0 {
            return self.base;
        }
        let (s, c) = self.gradient_direction_deg.to_radians().sin_cos();
        let reach = rect.width / 2.0 * c.abs() + rect.height / 2.0 * s.abs();
        let t = ((u * c + v * s) / reach + 1.0) / 2.0;
        self.base + self.gradient_amplitude * t.clamp(0.0, 1.0)
    }

    pub fn temperature(&self, rect: &OrientedRect, u: f64, v: f64) -> f64 {
        let mut t = self.background_level(rect, u, v);
        for s in &self.spots {
            let d2 = (u - s.center.0).powi(2) + (v - s.center.1).powi(2);
            t += s.amplitude * (-d2 / (2.0 * s.sigma * s.sigma)).exp();
        }
        for p in &self.patches {
            t -= p.depth * p.weight(u, v);
        }
        t
    }
}

#[derive(Debug, Clone)]
pub struct LabeledScene {
    pub id: String,
    pub spec: SceneSpec,
    pub profile: ThermalProfile,
    pub field: TemperatureField,
    pub image: ThermalImage,
    pub label: Label,
}

/// Rasterizes `profile` over the spec's battery and paints the background.
pub fn render_scene(
    spec: &SceneSpec,
    profile: &ThermalProfile,
    cmap: &ColormapSpec,
) -> Result<(TemperatureField, ThermalImage), SynthError> {
    spec.validate()?;
    let rect = spec.battery_rect;
    let field = TemperatureField::from_fn(spec.width, spec.height, |x, y| {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        rect.contains(px, py).then(|| {
            let (u, v) = rect.to_local(px, py);
            profile
                .temperature(&rect, u, v)
                .clamp(cmap.t_min(), cmap.t_max())
        })
    })?;
    let mut noise = ChaCha8Rng::seed_from_u64(spec.seed ^ 0xbac6_0000_0000_0003);
    let background = spec.background;
    let image = encode_with_background(&field, cmap, |_, _| match background {
        Background::Solid(c) => c,
        Background::Noisy { amplitude } => {
            let a = amplitude as i32;
            let mut ch = || (NOISE_GRAY + noise.random_range(-a..=a)).clamp(0, 255) as u8;
            Rgb([ch(), ch(), ch()])
        }
    })?;
    Ok((field, image))
}

fn profile_rng(spec: &SceneSpec) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e37_79b9_7f4a_7c15)
}

fn check_class(spec: &SceneSpec, expected: SceneClass) -> Result<(), SynthError> {
    if spec.class_label != expected {
        return Err(SynthError::WrongClass {
            expected,
            actual: spec.class_label,
        });
    }
    Ok(())
}

fn smooth_profile(rng: &mut ChaCha8Rng, base: f64, amplitude: f64) -> ThermalProfile {
    ThermalProfile {
        base,
        gradient_amplitude: amplitude,
        gradient_direction_deg: rng.random_range(0.0..360.0),
        spots: Vec::new(),
        patches: Vec::new(),
    }
}

pub fn sample_normal_profile(spec: &SceneSpec) -> ThermalProfile {
    let mut rng = profile_rng(spec);
    let base = rng.random_range(30.0..=45.0);
    let amplitude = rng.random_range(0.0..=(48.0f64 - base).min(3.0));
    smooth_profile(&mut rng, base, amplitude)
}

pub fn sample_overheating_profile(spec: &SceneSpec) -> ThermalProfile {
    let mut rng = profile_rng(spec);
    let base = rng.random_range(50.5..=55.0);
    let amplitude = rng.random_range(0.5..=3.0);
    smooth_profile(&mut rng, base, amplitude)
}

/// Keeps spots and patches clear of the border strip that cropping discards.
fn interior_point(rng: &mut ChaCha8Rng, rect: &OrientedRect, margin: f64) -> (f64, f64) {
    let hu = (rect.width / 2.0 - margin).max(0.0);
    let hv = (rect.height / 2.0 - margin).max(0.0);
    (rng.random_range(-hu..=hu), rng.random_range(-hv..=hv))
}

pub fn sample_reflection_profile(spec: &SceneSpec) -> ThermalProfile {
    let mut rng = profile_rng(spec);
    let rect = spec.battery_rect;
    let base = rng.random_range(34.0..=39.0);
    let amplitude = rng.random_range(0.0..=2.5);
    let mut profile = smooth_profile(&mut rng, base, amplitude);
    let border = 0.05 * rect.width + 2.0;

    // The first spot is compact and strong enough to be both a detectable
    // blob and a peak above 50.
    let sigma = rng.random_range(0.03..=0.045) * rect.width;
    let center = interior_point(&mut rng, &rect, border + 2.0 * sigma);
    let local = profile.background_level(&rect, center.0, center.1);
    let amp = rng.random_range((52.0 - local).max(14.0)..=(59.0 - local).min(20.0));
    profile.spots.push(HotSpot {
        center,
        sigma,
        amplitude: amp,
    });

    let extra = rng.random_range(0..=3);
    for _ in 0..extra {
        let sigma = rng.random_range(0.03..=0.10) * rect.width;
        for _attempt in 0..50 {
            let center = interior_point(&mut rng, &rect, border + sigma);
            let clear = profile.spots.iter().all(|s| {
                let d = ((s.center.0 - center.0).powi(2) + (s.center.1 - center.1).powi(2)).sqrt();
                d >= 3.0 * (s.sigma + sigma)
            });
            if clear {
                let local = profile.background_level(&rect, center.0, center.1);
                let amp = rng.random_range(8.0..=(59.0 - local).min(20.0));
                profile.spots.push(HotSpot {
                    center,
                    sigma,
                    amplitude: amp,
                });
                break;
            }
        }
    }
    profile
}

pub fn sample_spatial_tape_profile(spec: &SceneSpec) -> ThermalProfile {
    let mut rng = profile_rng(spec);
    let rect = spec.battery_rect;
    let base = rng.random_range(36.0..=45.0);
    let amplitude = rng.random_range(0.0..=(48.0f64 - base).min(3.0));
    let mut profile = smooth_profile(&mut rng, base, amplitude);
    let border = 0.05 * rect.width + 2.0;
    let wanted = rng.random_range(1..=3);
    // Patches stay small relative to the median neighborhood and apart from
    // each other, or the median would follow them.
    let min_gap = 2.0 * 9.0;
    for _ in 0..wanted {
        let shape = if rng.random_bool(0.5) {
            PatchShape::Rect {
                half_width: rng.random_range(3.5..=4.5),
                half_height: rng.random_range(3.5..=4.5),
            }
        } else {
            PatchShape::Ellipse {
                semi_u: rng.random_range(4.0..=5.0),
                semi_v: rng.random_range(4.0..=5.0),
            }
        };
        let depth = rng.random_range(5.0..=10.0);
        for _attempt in 0..50 {
            let candidate = ColdPatch {
                center: (0.0, 0.0),
                shape,
                depth,
            };
            let center = interior_point(&mut rng, &rect, border + candidate.extent() + 5.0);
            let clear = profile.patches.iter().all(|p| {
                let d = ((p.center.0 - center.0).powi(2) + (p.center.1 - center.1).powi(2)).sqrt();
                d >= min_gap + p.extent() + candidate.extent()
            });
            if clear {
                profile.patches.push(ColdPatch { center, ..candidate });
                break;
            }
        }
    }
    profile
}

pub fn sample_profile(spec: &SceneSpec) -> ThermalProfile {
    match spec.class_label {
        SceneClass::Normal => sample_normal_profile(spec),
        SceneClass::Overheating => sample_overheating_profile(spec),
        SceneClass::Reflection => sample_reflection_profile(spec),
        SceneClass::SpatialTape => sample_spatial_tape_profile(spec),
    }
}

fn build(spec: &SceneSpec, profile: ThermalProfile) -> Result<LabeledScene, SynthError> {
    let cmap = ColormapSpec::default();
    let (field, image) = render_scene(spec, &profile, &cmap)?;
    Ok(LabeledScene {
        id: format!("{}_{:016x}", spec.class_label, spec.seed),
        label: spec.class_label.into(),
        spec: spec.clone(),
        profile,
        field,
        image,
    })
}

pub fn generate_normal(spec: &SceneSpec) -> Result<LabeledScene, SynthError> {
    check_class(spec, SceneClass::Normal)?;
    build(spec, sample_normal_profile(spec))
}

pub fn generate_overheating(spec: &SceneSpec) -> Result<LabeledScene, SynthError> {
    check_class(spec, SceneClass::Overheating)?;
    build(spec, sample_overheating_profile(spec))
}

pub fn generate_reflection(spec: &SceneSpec) -> Result<LabeledScene, SynthError> {
    check_class(spec, SceneClass::Reflection)?;
    build(spec, sample_reflection_profile(spec))
}

pub fn generate_spatial_tape(spec: &SceneSpec) -> Result<LabeledScene, SynthError> {
    check_class(spec, SceneClass::SpatialTape)?;
    build(spec, sample_spatial_tape_profile(spec))
}

pub fn generate(spec: &SceneSpec) -> Result<LabeledScene, SynthError> {
    build(spec, sample_profile(spec))
}

/// Scene with an explicit profile, labeled by the spec's class.
pub fn generate_with_profile(
    spec: &SceneSpec,
    profile: ThermalProfile,
) -> Result<LabeledScene, SynthError> {
    build(spec, profile)
}

/// Scenes per class, in normal / overheating / reflection / spatial-tape order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub normal: usize,
    pub overheating: usize,
    pub reflection: usize,
    pub spatial_tape: usize,
}

impl Default for ClassCounts {
    fn default() -> Self {
        Self {
            normal: 27,
            overheating: 13,
            reflection: 12,
            spatial_tape: 8,
        }
    }
}

impl ClassCounts {
    pub fn get(&self, class: SceneClass) -> usize {
        match class {
            SceneClass::Normal => self.normal,
            SceneClass::Overheating => self.overheating,
            SceneClass::Reflection => self.reflection,
            SceneClass::SpatialTape => self.spatial_tape,
        }
    }

    pub fn total(&self) -> usize {
        self.normal + self.overheating + self.reflection + self.spatial_tape
    }
}

impl FromStr for ClassCounts {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse::<usize>().map_err(|e| format!("'{p}': {e}")))
            .collect::<Result<_, _>>()?;
        match parts[..] {
            [normal, overheating, reflection, spatial_tape] => Ok(Self {
                normal,
                overheating,
                reflection,
                spatial_tape,
            }),
            _ => Err(format!("expected 4 comma-separated counts, got {}", parts.len())),
        }
    }
}

/// Stateless 64-bit mixer (splitmix64 finalizer).
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the `index`-th scene of `class`; independent of the other counts.
pub fn scene_seed(master_seed: u64, class: SceneClass, index: usize) -> u64 {
    mix64(mix64(master_seed ^ (class.stream_tag() << 56)) ^ index as u64)
}

pub fn generate_dataset(master_seed: u64, counts: ClassCounts) -> Result<Vec<LabeledScene>, SynthError> {
    let mut scenes = Vec::with_capacity(counts.total());
    for class in SceneClass::ALL {
        for i in 0..counts.get(class) {
            let spec = SceneSpec::sample(class, scene_seed(master_seed, class, i));
            let mut scene = generate(&spec)?;
            scene.id = format!("{}_{:03}", class, i);
            scenes.push(scene);
        }
    }
    Ok(scenes)
}

/// One line of the dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_id: String,
    /// Relative to the manifest's directory unless absolute.
    pub path: String,
    pub label: Label,
    pub class: SceneClass,
    pub seed: u64,
}

/// Writes `<id>.png` for every scene plus `manifest.jsonl`; optionally the
/// temperature fields as `<id>.csv`. Returns the manifest path.
pub fn write_dataset(
    dir: &Path,
    scenes: &[LabeledScene],
    with_fields: bool,
) -> Result<PathBuf, SynthError> {
    fs::create_dir_all(dir)?;
    let cmap = ColormapSpec::default();
    let entries: Vec<ManifestEntry> = scenes
        .iter()
        .map(|s| {
            let file = format!("{}.png", s.id);
            s.image.save_png(dir.join(&file))?;
            if with_fields {
                let f = fs::File::create(dir.join(format!("{}.csv", s.id)))?;
                s.field.write_csv(std::io::BufWriter::new(f), &cmap)?;
            }
            Ok(ManifestEntry {
                image_id: s.id.clone(),
                path: file,
                label: s.label,
                class: s.spec.class_label,
                seed: s.spec.seed,
            })
        })
        .collect::<Result<_, SynthError>>()?;
    let path = dir.join(MANIFEST_FILE);
    write_manifest(&path, &entries)?;
    Ok(path)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<(), SynthError> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for e in entries {
        serde_json::to_writer(&mut out, e).map_err(std::io::Error::other)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, SynthError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut entries = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = serde_json::from_str(&line).map_err(|e| SynthError::Manifest {
            line: i + 1,
            message: e.to_string(),
        })?;
        entries.push(entry);
    }
    Ok(entries)
}

/// Absolute location of an entry's image.
pub fn resolve_image_path(manifest: &Path, entry: &ManifestEntry) -> PathBuf {
    let p = Path::new(&entry.path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest.parent().unwrap_or(Path::new(".")).join(p)
    }
}

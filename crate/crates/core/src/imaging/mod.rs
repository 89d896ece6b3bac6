//! Gray images, the background-difference soft trigger and gray-mean
//! normalization.

mod pgm;

pub use pgm::{decode_pgm, encode_pgm, read_pgm, write_pgm};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ImagingError {
    #[error("no frames")]
    NoFrames,
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("pixel buffer has {got} values, expected {expected}")]
    BadLength { expected: usize, got: usize },
    #[error("pixel value {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("patch {patch:?} does not fit a {width}x{height} image")]
    PatchOutOfBounds { patch: Patch, width: usize, height: usize },
    #[error("degenerate frame: zero total intensity")]
    DegenerateFrame,
    #[error("invalid trigger config: {0}")]
    InvalidTrigger(String),
    #[error("invalid normalization factor {0}")]
    InvalidLambda(f64),
    #[error("pgm: {0}")]
    Pgm(String),
    #[error("io: {0}")]
    Io(String),
}

/// Single-channel raster with intensities in `[0, 1]`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self, ImagingError> {
        if data.len() != width * height {
            return Err(ImagingError::BadLength {
                expected: width * height,
                got: data.len(),
            });
        }
        if let Some(&v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(ImagingError::OutOfRange(v));
        }
        Ok(Image {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!((0.0..=1.0).contains(&value), "fill value {value} outside [0, 1]");
        Image {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    /// Builds an image from a per-pixel function; results are clamped to `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(clamp_unit(f(x, y)));
            }
        }
        Image {
            width,
            height,
            data,
        }
    }

    /// Maps 8-bit gray levels to `b / 255`.
    pub fn from_gray8(width: usize, height: usize, bytes: &[u8]) -> Result<Self, ImagingError> {
        if bytes.len() != width * height {
            return Err(ImagingError::BadLength {
                expected: width * height,
                got: bytes.len(),
            });
        }
        Ok(Image {
            width,
            height,
            data: bytes.iter().map(|&b| f64::from(b) / 255.0).collect(),
        })
    }

    /// Quantizes to 8 bits with `round(v * 255)`.
    pub fn to_gray8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize8(v)).collect()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    /// Multiplies every pixel by `factor`, clamping into `[0, 1]`.
    pub fn scaled(&self, factor: f64) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| clamp_unit(v * factor)).collect(),
        }
    }

    pub fn full_patch(&self) -> Patch {
        Patch::new(0, 0, self.width, self.height)
    }

    fn same_dims(&self, other: &Image) -> Result<(), ImagingError> {
        if self.width != other.width || self.height != other.height {
            return Err(ImagingError::DimensionMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn clamp_unit(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

#[inline]
pub(crate) fn quantize8(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Axis-aligned rectangle in pixel coordinates, top-left anchored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Patch {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Patch {
    pub const fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        Patch { x, y, w, h }
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.w >= 1 && self.h >= 1 && self.x + self.w <= width && self.y + self.h <= height
    }

    pub fn check(&self, img: &Image) -> Result<(), ImagingError> {
        if self.fits(img.width, img.height) {
            Ok(())
        } else {
            Err(ImagingError::PatchOutOfBounds {
                patch: *self,
                width: img.width,
                height: img.height,
            })
        }
    }

    /// Smallest patch covering both.
    pub fn union(&self, other: &Patch) -> Patch {
        let x0 = self.x.min(other.x);
        let y0 = self.y.min(other.y);
        let x1 = (self.x + self.w).max(other.x + other.w);
        let y1 = (self.y + self.h).max(other.y + other.h);
        Patch::new(x0, y0, x1 - x0, y1 - y0)
    }

    /// This patch expressed relative to the origin of `window`.
    pub fn relative_to(&self, window: &Patch) -> Option<Patch> {
        if self.x < window.x
            || self.y < window.y
            || self.x + self.w > window.x + window.w
            || self.y + self.h > window.y + window.h
        {
            return None;
        }
        Some(Patch::new(self.x - window.x, self.y - window.y, self.w, self.h))
    }
}

/// Default ROI on a 752x480 frame.
pub const DEFAULT_ROI: Patch = Patch::new(405, 39, 150, 356);

/// Default difference regions along the bottom of the bottle.
pub const DEFAULT_TRIGGER_PATCHES: [Patch; 3] = [
    Patch::new(430, 320, 26, 30),
    Patch::new(460, 320, 26, 30),
    Patch::new(490, 320, 26, 30),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TriggerConfig {
    pub patches: Vec<Patch>,
    /// Energy threshold applied to every patch (sum of absolute differences).
    pub theta_thres: f64,
    pub n_background_frames: usize,
}

impl Default for TriggerConfig {
    fn default() -> Self {
        let patches = DEFAULT_TRIGGER_PATCHES.to_vec();
        // 15% mean absolute deviation over a 26x30 patch.
        let theta_thres = 0.15 * patches[0].area() as f64;
        TriggerConfig {
            patches,
            theta_thres,
            n_background_frames: 30,
        }
    }
}

impl TriggerConfig {
    pub fn validate(&self) -> Result<(), ImagingError> {
        if self.patches.is_empty() {
            return Err(ImagingError::InvalidTrigger("no patches".into()));
        }
        if !(self.theta_thres >= 0.0) || !self.theta_thres.is_finite() {
            return Err(ImagingError::InvalidTrigger(format!(
                "theta_thres {} must be a finite non-negative number",
                self.theta_thres
            )));
        }
        if self.n_background_frames == 0 {
            return Err(ImagingError::InvalidTrigger(
                "n_background_frames must be at least 1".into(),
            ));
        }
        if let Some(p) = self.patches.iter().find(|p| p.area() == 0) {
            return Err(ImagingError::InvalidTrigger(format!("empty patch {p:?}")));
        }
        Ok(())
    }

    /// Bounding box of all difference patches.
    pub fn window(&self) -> Patch {
        let mut it = self.patches.iter();
        let first = *it.next().expect("validated config has patches");
        it.fold(first, |acc, p| acc.union(p))
    }

    /// The same config with every patch re-expressed relative to `window`.
    pub fn relative_to(&self, window: &Patch) -> Option<TriggerConfig> {
        let patches = self
            .patches
            .iter()
            .map(|p| p.relative_to(window))
            .collect::<Option<Vec<_>>>()?;
        Some(TriggerConfig {
            patches,
            ..self.clone()
        })
    }
}

/// Last presence decision, for rising-edge detection.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TriggerState {
    pub prev: bool,
}

impl TriggerState {
    /// Feeds one presence decision; returns true only on a 0 → 1 transition.
    pub fn step(&mut self, present: bool) -> bool {
        let fire = !self.prev && present;
        self.prev = present;
        fire
    }
}

/// Functional form of [`TriggerState::step`].
pub fn trigger_edge(state: TriggerState, present: bool) -> (TriggerState, bool) {
    let mut next = state;
    let fire = next.step(present);
    (next, fire)
}

/// Per-pixel mean of a stack of frames.
pub fn mean_background(frames: &[Image]) -> Result<Image, ImagingError> {
    let first = frames.first().ok_or(ImagingError::NoFrames)?;
    let mut acc = vec![0.0; first.data.len()];
    for f in frames {
        first.same_dims(f)?;
        for (a, v) in acc.iter_mut().zip(&f.data) {
            *a += v;
        }
    }
    let n = frames.len() as f64;
    Ok(Image {
        width: first.width,
        height: first.height,
        data: acc.into_iter().map(|s| clamp_unit(s / n)).collect(),
    })
}

/// Sum of absolute differences between `bg` and `cur` inside `p`.
pub fn patch_energy(bg: &Image, cur: &Image, p: &Patch) -> Result<f64, ImagingError> {
    bg.same_dims(cur)?;
    p.check(bg)?;
    let mut energy = 0.0;
    for y in p.y..p.y + p.h {
        let row = y * bg.width;
        let a = &bg.data[row + p.x..row + p.x + p.w];
        let b = &cur.data[row + p.x..row + p.x + p.w];
        energy += a.iter().zip(b).map(|(u, v)| (u - v).abs()).sum::<f64>();
    }
    Ok(energy)
}

/// True iff every patch's energy strictly exceeds the threshold.
pub fn bottle_present(bg: &Image, cur: &Image, cfg: &TriggerConfig) -> Result<bool, ImagingError> {
    cfg.validate()?;
    let mut present = true;
    for p in &cfg.patches {
        // Evaluate all patches so out-of-bounds configs always surface.
        if patch_energy(bg, cur, p)? <= cfg.theta_thres {
            present = false;
        }
    }
    Ok(present)
}

/// Factor `lambda * N / sum(I)` that brings the image mean to `lambda`.
pub fn gray_mean_factor(img: &Image, lambda_avg: f64) -> Result<f64, ImagingError> {
    if !(lambda_avg > 0.0 && lambda_avg < 1.0) {
        return Err(ImagingError::InvalidLambda(lambda_avg));
    }
    let sum = img.sum();
    if sum <= 0.0 {
        return Err(ImagingError::DegenerateFrame);
    }
    Ok(lambda_avg * img.data.len() as f64 / sum)
}

/// Rescales the image so its mean intensity equals `lambda_avg`, then clamps to `[0, 1]`.
pub fn normalize_gray_mean(img: &Image, lambda_avg: f64) -> Result<Image, ImagingError> {
    let factor = gray_mean_factor(img, lambda_avg)?;
    Ok(img.scaled(factor))
}

pub fn crop_roi(img: &Image, p: &Patch) -> Result<Image, ImagingError> {
    p.check(img)?;
    let mut data = Vec::with_capacity(p.area());
    for y in p.y..p.y + p.h {
        let row = y * img.width;
        data.extend_from_slice(&img.data[row + p.x..row + p.x + p.w]);
    }
    Ok(Image {
        width: p.w,
        height: p.h,
        data,
    })
}

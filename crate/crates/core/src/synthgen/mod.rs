//! Deterministic synthetic backlit bottle frames, labeled datasets and
//! conveyor streams.
//!
//! Every output is a pure function of `(SceneSpec, seed)`. Per-pixel sensor
//! noise is a hash of the frame seed and absolute frame coordinates, so a
//! window render is exactly the crop of the full-frame render.

mod dataset;
mod render;
mod stream;

pub use dataset::{gen_dataset, inject_label_noise, inject_label_noise_at, DatasetItem, LabeledDataset, ManifestRecord, MANIFEST_FILE};
pub use render::Defect;
pub use stream::{conveyor_schedule, gen_stream, FrameStream, Slot, StreamBottle};

use rand::Rng;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{Image, ImagingError, Patch, DEFAULT_ROI};
use crate::label::Label;
use crate::seed;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DefectKind {
    None,
    Crack,
    Fragment,
    Deform,
    Stain,
    Impurity,
}

impl DefectKind {
    pub const DEFECTS: [DefectKind; 5] = [
        DefectKind::Crack,
        DefectKind::Fragment,
        DefectKind::Deform,
        DefectKind::Stain,
        DefectKind::Impurity,
    ];

    pub fn label(self) -> Label {
        if self == DefectKind::None {
            Label::Qualified
        } else {
            Label::Defective
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DefectKind::None => "none",
            DefectKind::Crack => "crack",
            DefectKind::Fragment => "fragment",
            DefectKind::Deform => "deform",
            DefectKind::Stain => "stain",
            DefectKind::Impurity => "impurity",
        }
    }
}

/// Probability of each defect class; must sum to one. Classes left out of
/// a config document get zero weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefectMix {
    #[serde(default)]
    pub none: f64,
    #[serde(default)]
    pub crack: f64,
    #[serde(default)]
    pub fragment: f64,
    #[serde(default)]
    pub deform: f64,
    #[serde(default)]
    pub stain: f64,
    #[serde(default)]
    pub impurity: f64,
}

impl Default for DefectMix {
    fn default() -> Self {
        DefectMix {
            none: 0.5,
            crack: 0.1,
            fragment: 0.1,
            deform: 0.1,
            stain: 0.1,
            impurity: 0.1,
        }
    }
}

impl DefectMix {
    pub fn only(kind: DefectKind) -> Self {
        let mut m = DefectMix {
            none: 0.0,
            crack: 0.0,
            fragment: 0.0,
            deform: 0.0,
            stain: 0.0,
            impurity: 0.0,
        };
        *m.weight_mut(kind) = 1.0;
        m
    }

    pub fn weight(&self, kind: DefectKind) -> f64 {
        match kind {
            DefectKind::None => self.none,
            DefectKind::Crack => self.crack,
            DefectKind::Fragment => self.fragment,
            DefectKind::Deform => self.deform,
            DefectKind::Stain => self.stain,
            DefectKind::Impurity => self.impurity,
        }
    }

    fn weight_mut(&mut self, kind: DefectKind) -> &mut f64 {
        match kind {
            DefectKind::None => &mut self.none,
            DefectKind::Crack => &mut self.crack,
            DefectKind::Fragment => &mut self.fragment,
            DefectKind::Deform => &mut self.deform,
            DefectKind::Stain => &mut self.stain,
            DefectKind::Impurity => &mut self.impurity,
        }
    }

    pub fn defect_mass(&self) -> f64 {
        DefectKind::DEFECTS.iter().map(|&k| self.weight(k)).sum()
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let all = [DefectKind::None].into_iter().chain(DefectKind::DEFECTS);
        let mut total = 0.0;
        for k in all {
            let w = self.weight(k);
            if !(w >= 0.0 && w.is_finite()) {
                return Err(SynthError::InvalidSpec(format!("weight of {} is {w}", k.name())));
            }
            total += w;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(SynthError::InvalidSpec(format!("defect mix sums to {total}")));
        }
        Ok(())
    }

    /// Inverse-CDF draw over all classes.
    pub fn sample(&self, u: f64) -> DefectKind {
        pick(u, [DefectKind::None].into_iter().chain(DefectKind::DEFECTS), |k| self.weight(k))
    }

    /// Draw conditioned on the frame being defective.
    pub fn sample_defect(&self, u: f64) -> Option<DefectKind> {
        let mass = self.defect_mass();
        if mass <= 0.0 {
            return None;
        }
        Some(pick(u * mass, DefectKind::DEFECTS.into_iter(), |k| self.weight(k)))
    }
}

fn pick(u: f64, kinds: impl Iterator<Item = DefectKind>, w: impl Fn(DefectKind) -> f64) -> DefectKind {
    let mut acc = 0.0;
    let mut last = DefectKind::None;
    for k in kinds {
        if w(k) <= 0.0 {
            continue;
        }
        acc += w(k);
        last = k;
        if u < acc {
            return k;
        }
    }
    last
}

/// Nominal bottle outline in frame pixels, plus per-bottle jitter ranges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BottleGeometry {
    pub center_x: f64,
    pub center_jitter: f64,
    pub bottom_y: f64,
    pub height: f64,
    pub height_jitter: f64,
    pub body_half_width: f64,
    pub neck_half_width: f64,
    pub rim_half_width: f64,
    pub rim_height: f64,
    pub neck_length: f64,
    pub shoulder_length: f64,
    pub wall_thickness: f64,
    /// Distance from the top of the bottle to the liquid surface.
    pub fill_depth: f64,
    pub fill_jitter: f64,
}

impl Default for BottleGeometry {
    fn default() -> Self {
        BottleGeometry {
            center_x: 480.0,
            center_jitter: 1.0,
            bottom_y: 389.0,
            height: 330.0,
            height_jitter: 1.5,
            body_half_width: 55.0,
            neck_half_width: 22.0,
            rim_half_width: 26.0,
            rim_height: 8.0,
            neck_length: 80.0,
            shoulder_length: 50.0,
            wall_thickness: 5.0,
            fill_depth: 130.0,
            fill_jitter: 3.0,
        }
    }
}

/// Size and contrast of each defect class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DefectStyle {
    /// Multiplier applied along the crack line.
    pub crack_gain: f64,
    pub crack_width: f64,
    pub crack_segments: (usize, usize),
    pub crack_segment_length: (f64, f64),
    /// Largest heading change between crack segments, radians.
    pub crack_wander: f64,
    pub fragment_radius: (f64, f64),
    /// Outward wall bulge in pixels.
    pub deform_amplitude: (f64, f64),
    pub deform_length: (f64, f64),
    /// Multiplier at the stain core.
    pub stain_gain: f64,
    pub stain_radius: (f64, f64),
    pub impurity_level: f64,
    pub impurity_radius: (f64, f64),
    /// Vertical placement bands as fractions of the usable body span,
    /// 0 at the shoulder and 1 at the base.
    pub crack_zone: (f64, f64),
    pub stain_zone: (f64, f64),
    pub impurity_zone: (f64, f64),
    /// Horizontal freedom in [0, 1]: cracks start this far in from a wall,
    /// stains and impurities sit this far off the axis, as fractions of the
    /// available half-width.
    pub crack_spread: f64,
    pub stain_spread: f64,
    pub impurity_spread: f64,
}

impl Default for DefectStyle {
    fn default() -> Self {
        DefectStyle {
            crack_gain: 0.25,
            crack_width: 3.0,
            crack_segments: (5, 7),
            crack_segment_length: (20.0, 30.0),
            crack_wander: 0.12,
            fragment_radius: (8.0, 12.0),
            deform_amplitude: (7.0, 12.0),
            deform_length: (80.0, 140.0),
            stain_gain: 0.5,
            stain_radius: (18.0, 28.0),
            impurity_level: 0.03,
            impurity_radius: (4.0, 8.0),
            crack_zone: (0.4, 0.9),
            stain_zone: (0.0, 0.3),
            impurity_zone: (0.9, 1.0),
            crack_spread: 0.1,
            stain_spread: 0.3,
            impurity_spread: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub frame_w: usize,
    pub frame_h: usize,
    pub roi: Patch,
    pub bottle: BottleGeometry,
    pub backlight: f64,
    pub glass_level: f64,
    pub liquid_level: f64,
    pub air_level: f64,
    /// Per-bottle uniform jitter added to the glass, liquid and air levels.
    pub level_jitter: f64,
    /// Largest brightness added by the vertical specular stripe.
    pub highlight_max: f64,
    /// Per-frame multiplicative illumination factor range.
    pub illumination_drift: (f64, f64),
    pub noise_sigma: f64,
    pub defect_mix: DefectMix,
    pub defects: DefectStyle,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            frame_w: 752,
            frame_h: 480,
            roi: DEFAULT_ROI,
            bottle: BottleGeometry::default(),
            backlight: 0.75,
            glass_level: 0.22,
            liquid_level: 0.40,
            air_level: 0.62,
            level_jitter: 0.015,
            highlight_max: 0.04,
            illumination_drift: (0.85, 1.15),
            noise_sigma: 0.02,
            defect_mix: DefectMix::default(),
            defects: DefectStyle::default(),
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        self.defect_mix.validate()?;
        if !self.roi.fits(self.frame_w, self.frame_h) {
            return bad(format!("roi {:?} outside {}x{} frame", self.roi, self.frame_w, self.frame_h));
        }
        for (name, v) in [
            ("backlight", self.backlight),
            ("glass_level", self.glass_level),
            ("liquid_level", self.liquid_level),
            ("air_level", self.air_level),
            ("impurity_level", self.defects.impurity_level),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} {v} outside [0, 1]"));
            }
        }
        let (lo, hi) = self.illumination_drift;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad(format!("illumination drift ({lo}, {hi}) must satisfy 0 < lo <= hi"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma {}", self.noise_sigma));
        }
        if !(self.level_jitter >= 0.0 && self.highlight_max >= 0.0) {
            return bad("level_jitter and highlight_max must be non-negative".into());
        }
        let ranges = [
            ("crack_segment_length", self.defects.crack_segment_length),
            ("fragment_radius", self.defects.fragment_radius),
            ("deform_amplitude", self.defects.deform_amplitude),
            ("deform_length", self.defects.deform_length),
            ("stain_radius", self.defects.stain_radius),
            ("impurity_radius", self.defects.impurity_radius),
        ];
        for (name, (lo, hi)) in ranges {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return bad(format!("{name} range ({lo}, {hi})"));
            }
        }
        for (name, (lo, hi)) in [
            ("crack_zone", self.defects.crack_zone),
            ("stain_zone", self.defects.stain_zone),
            ("impurity_zone", self.defects.impurity_zone),
        ] {
            if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
                return bad(format!("{name} ({lo}, {hi}) must satisfy 0 <= lo <= hi <= 1"));
            }
        }
        if !(self.defects.crack_wander >= 0.0 && self.defects.crack_wander <= PI) {
            return bad(format!("crack_wander {} outside [0, pi]", self.defects.crack_wander));
        }
        for (name, v) in [
            ("crack_spread", self.defects.crack_spread),
            ("stain_spread", self.defects.stain_spread),
            ("impurity_spread", self.defects.impurity_spread),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} {v} outside [0, 1]"));
            }
        }
        let (s0, s1) = self.defects.crack_segments;
        if s0 == 0 || s0 > s1 {
            return bad(format!("crack_segments ({s0}, {s1})"));
        }
        if !(self.defects.crack_gain >= 0.0 && self.defects.stain_gain >= 0.0 && self.defects.crack_width > 0.0) {
            return bad("crack and stain gains must be non-negative, crack width positive".into());
        }

        let g = &self.bottle;
        let positive = [
            g.height,
            g.body_half_width,
            g.neck_half_width,
            g.rim_half_width,
            g.rim_height,
            g.wall_thickness,
        ];
        if positive.iter().any(|&v| !(v > 0.0)) || g.center_jitter < 0.0 || g.height_jitter < 0.0 || g.fill_jitter < 0.0 {
            return bad("bottle dimensions must be positive and jitters non-negative".into());
        }
        if g.neck_half_width <= g.wall_thickness || g.rim_height + g.neck_length + g.shoulder_length >= g.height - g.height_jitter - 2.0 * g.wall_thickness {
            return bad("bottle profile leaves no body".into());
        }
        // the whole bottle, at any jitter and bulge, must stay inside the ROI
        let reach = g.body_half_width.max(g.rim_half_width) + g.center_jitter + self.defects.deform_amplitude.1;
        let (rx0, rx1) = (self.roi.x as f64, (self.roi.x + self.roi.w) as f64);
        let (ry0, ry1) = (self.roi.y as f64, (self.roi.y + self.roi.h) as f64);
        let top = g.bottom_y - g.height - g.height_jitter;
        if g.center_x - reach < rx0 || g.center_x + reach > rx1 || top < ry0 || g.bottom_y > ry1 {
            return bad("bottle geometry does not fit the roi".into());
        }
        if g.fill_depth - g.fill_jitter <= g.rim_height || g.fill_depth + g.fill_jitter >= g.height - g.height_jitter - g.wall_thickness {
            return bad("fill level outside the bottle".into());
        }
        Ok(())
    }
}

/// What was drawn for one rendered frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameInfo {
    pub label: Label,
    pub kind: DefectKind,
    pub defect: Option<Defect>,
    pub illumination: f64,
    pub bottle_center_x: f64,
}

/// Renders a full frame. The defect class is drawn from the scene's defect mix.
pub fn gen_frame(spec: &SceneSpec, rng_seed: u64) -> Result<(Image, Label, DefectKind), SynthError> {
    let full = Patch::new(0, 0, spec.frame_w, spec.frame_h);
    let (img, info) = render_window(spec, rng_seed, None, &full)?;
    Ok((img, info.label, info.kind))
}

/// The defect class `gen_frame` would draw for this seed.
pub fn drawn_kind(spec: &SceneSpec, rng_seed: u64) -> DefectKind {
    let u: f64 = seed::rng(seed::derive(rng_seed, "defect-kind")).random();
    spec.defect_mix.sample(u)
}

/// Renders `window` of the frame for `rng_seed`. With `kind = Some(k)` the
/// defect class is forced; everything else (geometry, illumination, noise,
/// defect placement) depends only on the seed, so `Some(DefectKind::None)`
/// yields the defect-free twin of any frame.
pub fn render_window(
    spec: &SceneSpec,
    rng_seed: u64,
    kind: Option<DefectKind>,
    window: &Patch,
) -> Result<(Image, FrameInfo), SynthError> {
    spec.validate()?;
    if !window.fits(spec.frame_w, spec.frame_h) {
        return Err(SynthError::InvalidRequest(format!("window {window:?} outside the frame")));
    }
    let kind = kind.unwrap_or_else(|| drawn_kind(spec, rng_seed));
    let bottle = render::draw_bottle(spec, seed::derive(rng_seed, "geometry"));
    let defect = render::draw_defect(spec, &bottle, kind, seed::derive(rng_seed, "defect"));
    let illumination = draw_illumination(spec, rng_seed);
    let data = render::paint(
        spec,
        Some((&bottle, defect.as_ref())),
        illumination,
        seed::derive(rng_seed, "noise"),
        window,
    );
    let img = Image::new(window.w, window.h, data)?;
    Ok((
        img,
        FrameInfo {
            label: kind.label(),
            kind,
            defect,
            illumination,
            bottle_center_x: bottle.cx,
        },
    ))
}

/// Renders the ROI crop of the frame for `rng_seed`.
pub fn render_roi(spec: &SceneSpec, rng_seed: u64, kind: Option<DefectKind>) -> Result<(Image, FrameInfo), SynthError> {
    render_window(spec, rng_seed, kind, &spec.roi)
}

pub(crate) fn draw_illumination(spec: &SceneSpec, frame_seed: u64) -> f64 {
    let (lo, hi) = spec.illumination_drift;
    if lo == hi {
        return lo;
    }
    seed::rng(seed::derive(frame_seed, "illumination")).random_range(lo..=hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::crop_roi;

    #[test]
    fn forced_qualified() {
        let spec = SceneSpec {
            defect_mix: DefectMix::only(DefectKind::None),
            ..SceneSpec::default()
        };
        for s in 0..5 {
            let (img, label, kind) = gen_frame(&spec, s).unwrap();
            assert_eq!((label, kind), (Label::Qualified, DefectKind::None));
            assert_eq!((img.width(), img.height()), (752, 480));
        }
    }

    #[test]
    fn same_seed_same_frame() {
        let spec = SceneSpec::default();
        assert_eq!(gen_frame(&spec, 42).unwrap(), gen_frame(&spec, 42).unwrap());
        assert_ne!(gen_frame(&spec, 42).unwrap().0, gen_frame(&spec, 43).unwrap().0);
    }

    #[test]
    fn window_is_crop_of_frame() {
        let spec = SceneSpec::default();
        let (full, _) = render_window(&spec, 9, None, &Patch::new(0, 0, 752, 480)).unwrap();
        let (roi, _) = render_roi(&spec, 9, None).unwrap();
        assert_eq!(crop_roi(&full, &spec.roi).unwrap(), roi);
    }

    #[test]
    fn crack_is_localized() {
        let spec = SceneSpec::default();
        for s in 0..10 {
            let (with, info) = render_roi(&spec, s, Some(DefectKind::Crack)).unwrap();
            let (twin, _) = render_roi(&spec, s, Some(DefectKind::None)).unwrap();
            let (x0, y0, x1, y1) = info.defect.as_ref().unwrap().bounds();
            let mut total = 0.0;
            for y in 0..with.height() {
                for x in 0..with.width() {
                    let d = (with.get(x, y) - twin.get(x, y)).abs();
                    total += d;
                    let (fx, fy) = ((x + spec.roi.x) as f64 + 0.5, (y + spec.roi.y) as f64 + 0.5);
                    if d > 0.0 {
                        assert!(fx >= x0 && fx <= x1 && fy >= y0 && fy <= y1, "seed {s}: change at ({fx}, {fy})");
                    }
                }
            }
            assert!(total > 0.0);
        }
    }

    #[test]
    fn defects_stand_out_of_noise() {
        // mean change over the pixels a defect touches
        let spec = SceneSpec::default();
        for kind in DefectKind::DEFECTS {
            for s in 0..20 {
                let (with, _) = render_roi(&spec, s, Some(kind)).unwrap();
                let (twin, _) = render_roi(&spec, s, Some(DefectKind::None)).unwrap();
                let diffs: Vec<f64> = with
                    .data()
                    .iter()
                    .zip(twin.data())
                    .map(|(a, b)| (a - b).abs())
                    .filter(|&d| d > 0.0)
                    .collect();
                assert!(!diffs.is_empty(), "{kind:?} seed {s} left no trace");
                let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
                assert!(mean > 5.0 * spec.noise_sigma, "{kind:?} seed {s}: {mean}");
            }
        }
    }

    #[test]
    fn twin_shares_everything_but_the_defect() {
        let spec = SceneSpec::default();
        let (_, a) = render_roi(&spec, 5, Some(DefectKind::Stain)).unwrap();
        let (_, b) = render_roi(&spec, 5, Some(DefectKind::None)).unwrap();
        assert_eq!(a.illumination, b.illumination);
        assert_eq!(a.bottle_center_x, b.bottle_center_x);
        assert!(b.defect.is_none());
    }

    #[test]
    fn mix_sampling() {
        let mix = DefectMix::default();
        assert_eq!(mix.sample(0.0), DefectKind::None);
        assert_eq!(mix.sample(0.55), DefectKind::Crack);
        assert_eq!(mix.sample(0.999_999), DefectKind::Impurity);
        assert_eq!(mix.sample_defect(0.0), Some(DefectKind::Crack));
        assert_eq!(mix.sample_defect(0.95), Some(DefectKind::Impurity));
        assert_eq!(DefectMix::only(DefectKind::None).sample_defect(0.5), None);
        assert_eq!(DefectMix::only(DefectKind::Stain).sample(0.3), DefectKind::Stain);
    }

    #[test]
    fn spec_validation() {
        assert!(SceneSpec::default().validate().is_ok());
        let mut s = SceneSpec::default();
        s.defect_mix.none = 0.6;
        assert!(s.validate().is_err());
        let mut s = SceneSpec::default();
        s.bottle.body_half_width = 90.0;
        assert!(s.validate().is_err());
        let mut s = SceneSpec::default();
        s.roi = Patch::new(700, 0, 100, 100);
        assert!(s.validate().is_err());
        let json = serde_json::to_string(&SceneSpec::default()).unwrap();
        let back: SceneSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, SceneSpec::default());
    }

    #[test]
    fn drift_scales_background() {
        let spec = SceneSpec {
            noise_sigma: 0.0,
            ..SceneSpec::default()
        };
        let (img, info) = render_window(&spec, 3, None, &Patch::new(0, 0, 10, 10)).unwrap();
        let expect = spec.backlight * info.illumination;
        assert!(img.data().iter().all(|&v| (v - expect).abs() < 1e-12));
        assert!((0.85..=1.15).contains(&info.illumination));
    }
}

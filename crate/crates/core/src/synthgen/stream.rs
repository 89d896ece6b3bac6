use rand::Rng;
use serde::{Deserialize, Serialize};

use super::render::{draw_bottle, draw_defect, paint};
use super::{draw_illumination, drawn_kind, DefectKind, SceneSpec, SynthError};
use crate::imaging::{Image, Patch};
use crate::label::Label;
use crate::seed;

/// What one stream frame shows. `dx` shifts the bottle horizontally from
/// its nominal centre. Only `Centered` frames count as bottle present.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "slot", rename_all = "lowercase")]
pub enum Slot {
    Background,
    Partial { bottle: usize, dx: f64 },
    Centered { bottle: usize, dx: f64 },
}

impl Slot {
    pub fn bottle(&self) -> Option<(usize, f64)> {
        match *self {
            Slot::Background => None,
            Slot::Partial { bottle, dx } | Slot::Centered { bottle, dx } => Some((bottle, dx)),
        }
    }

    pub fn present(&self) -> bool {
        matches!(self, Slot::Centered { .. })
    }
}

/// Identity of one bottle passing through a stream; it keeps its shape and
/// defect across frames while noise and illumination change per frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamBottle {
    pub seed: u64,
    pub kind: DefectKind,
    pub label: Label,
}

/// A lazily rendered frame sequence with ground truth.
#[derive(Debug, Clone)]
pub struct FrameStream {
    spec: SceneSpec,
    slots: Vec<Slot>,
    frame_master: u64,
    bottles: Vec<StreamBottle>,
}

impl FrameStream {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn spec(&self) -> &SceneSpec {
        &self.spec
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn bottles(&self) -> &[StreamBottle] {
        &self.bottles
    }

    /// Ground truth: true where a bottle is centered in front of the camera.
    pub fn presence_mask(&self) -> Vec<bool> {
        self.slots.iter().map(Slot::present).collect()
    }

    /// Number of maximal runs of present frames.
    pub fn presence_runs(&self) -> usize {
        let mask = self.presence_mask();
        mask.iter()
            .enumerate()
            .filter(|&(i, &p)| p && (i == 0 || !mask[i - 1]))
            .count()
    }

    /// Bottle shown centered at frame `i`, if any.
    pub fn centered_bottle(&self, i: usize) -> Option<&StreamBottle> {
        match self.slots.get(i)? {
            Slot::Centered { bottle, .. } => self.bottles.get(*bottle),
            _ => None,
        }
    }

    pub fn frame(&self, i: usize) -> Result<Image, SynthError> {
        let full = Patch::new(0, 0, self.spec.frame_w, self.spec.frame_h);
        self.render_window(i, &full)
    }

    /// Renders `window` of frame `i`; equal to cropping [`FrameStream::frame`].
    pub fn render_window(&self, i: usize, window: &Patch) -> Result<Image, SynthError> {
        let slot = self
            .slots
            .get(i)
            .ok_or_else(|| SynthError::InvalidRequest(format!("frame {i} outside stream of {}", self.len())))?;
        if !window.fits(self.spec.frame_w, self.spec.frame_h) {
            return Err(SynthError::InvalidRequest(format!("window {window:?} outside the frame")));
        }
        let frame_seed = seed::derive_index(self.frame_master, i as u64);
        let illumination = draw_illumination(&self.spec, frame_seed);
        let noise = seed::derive(frame_seed, "noise");
        let data = match slot.bottle() {
            None => paint(&self.spec, None, illumination, noise, window),
            Some((id, dx)) => {
                let b = &self.bottles[id];
                let base = draw_bottle(&self.spec, seed::derive(b.seed, "geometry"));
                let defect = draw_defect(&self.spec, &base, b.kind, seed::derive(b.seed, "defect")).map(|d| d.shifted(dx));
                let bottle = base.shifted(dx);
                paint(&self.spec, Some((&bottle, defect.as_ref())), illumination, noise, window)
            }
        };
        Ok(Image::new(window.w, window.h, data)?)
    }
}

/// Builds a stream of `n_frames`; a shorter schedule is padded with background.
pub fn gen_stream(spec: &SceneSpec, n_frames: usize, schedule: &[Slot], rng_seed: u64) -> Result<FrameStream, SynthError> {
    spec.validate()?;
    if schedule.len() > n_frames {
        return Err(SynthError::InvalidRequest(format!(
            "schedule has {} slots for {n_frames} frames",
            schedule.len()
        )));
    }
    let mut slots = schedule.to_vec();
    slots.resize(n_frames, Slot::Background);
    let n_bottles = slots.iter().filter_map(|s| s.bottle()).map(|(id, _)| id + 1).max().unwrap_or(0);
    let bottle_master = seed::derive(rng_seed, "bottles");
    let bottles = (0..n_bottles)
        .map(|id| {
            let s = seed::derive_index(bottle_master, id as u64);
            let kind = drawn_kind(spec, s);
            StreamBottle {
                seed: s,
                kind,
                label: kind.label(),
            }
        })
        .collect();
    Ok(FrameStream {
        spec: spec.clone(),
        slots,
        frame_master: seed::derive(rng_seed, "frames"),
        bottles,
    })
}

/// Offsets of a bottle entering from the right and leaving to the left.
/// The near ones overlap a difference patch but never all of them.
const ENTERING: [f64; 2] = [300.0, 75.0];
const LEAVING: [f64; 2] = [-90.0, -300.0];
/// Centered offsets keep every default difference patch covered.
const CENTERED_DX: (f64, f64) = (-4.0, 2.0);

/// Conveyor schedule: `leading_background` empty frames, then `n_bottles`
/// equal segments. Each bottle enters (two partial frames), sits centered
/// for 3 to 5 frames while drifting left, and leaves (two partial frames).
pub fn conveyor_schedule(
    n_frames: usize,
    n_bottles: usize,
    leading_background: usize,
    rng_seed: u64,
) -> Result<Vec<Slot>, SynthError> {
    let mut slots = vec![Slot::Background; leading_background.min(n_frames)];
    if n_bottles == 0 {
        slots.resize(n_frames, Slot::Background);
        return Ok(slots);
    }
    let available = n_frames.saturating_sub(leading_background);
    let seg = available / n_bottles;
    let min_seg = ENTERING.len() + LEAVING.len() + 1;
    if seg < min_seg {
        return Err(SynthError::InvalidRequest(format!(
            "{n_bottles} bottles need at least {} frames after the leading background, have {available}",
            n_bottles * min_seg
        )));
    }
    let mut rng = seed::rng(seed::derive(rng_seed, "conveyor"));
    for bottle in 0..n_bottles {
        let start = slots.len();
        let k_max = 5.min(seg - ENTERING.len() - LEAVING.len());
        let k = rng.random_range(k_max.min(3)..=k_max);
        let busy = ENTERING.len() + k + LEAVING.len();
        let gap = rng.random_range(0..=seg - busy);
        slots.resize(start + gap, Slot::Background);
        slots.extend(ENTERING.iter().map(|&dx| Slot::Partial { bottle, dx }));
        let mut dxs: Vec<f64> = (0..k).map(|_| rng.random_range(CENTERED_DX.0..=CENTERED_DX.1)).collect();
        dxs.sort_by(|a, b| b.total_cmp(a));
        slots.extend(dxs.into_iter().map(|dx| Slot::Centered { bottle, dx }));
        slots.extend(LEAVING.iter().map(|&dx| Slot::Partial { bottle, dx }));
        slots.resize(start + seg, Slot::Background);
    }
    slots.resize(n_frames, Slot::Background);
    Ok(slots)
}

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{PipelineConfig, PipelineError};
use crate::ensemble::{vote, EnsembleError, EnsembleModel};
use crate::imaging::{bottle_present, crop_roi, mean_background, read_pgm, Image, ImagingError, Patch, TriggerState};
use crate::label::Label;
use crate::synthgen::FrameStream;

/// An ordered sequence of camera frames.
pub trait FrameSource {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn frame(&self, i: usize) -> Result<Image, PipelineError>;

    /// The `window` part of frame `i`.
    fn window(&self, i: usize, window: &Patch) -> Result<Image, PipelineError> {
        Ok(crop_roi(&self.frame(i)?, window)?)
    }
}

impl FrameSource for FrameStream {
    fn len(&self) -> usize {
        FrameStream::len(self)
    }

    fn frame(&self, i: usize) -> Result<Image, PipelineError> {
        Ok(FrameStream::frame(self, i)?)
    }

    fn window(&self, i: usize, window: &Patch) -> Result<Image, PipelineError> {
        Ok(self.render_window(i, window)?)
    }
}

impl FrameSource for [Image] {
    fn len(&self) -> usize {
        <[Image]>::len(self)
    }

    fn frame(&self, i: usize) -> Result<Image, PipelineError> {
        self.get(i)
            .cloned()
            .ok_or_else(|| PipelineError::Config(format!("frame {i} outside a stream of {}", <[Image]>::len(self))))
    }
}

/// `frame_*.pgm` files of a directory in name order.
pub struct DirFrames {
    paths: Vec<PathBuf>,
}

impl DirFrames {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let dir = dir.as_ref();
        let mut paths = Vec::new();
        for entry in fs::read_dir(dir).map_err(|e| PipelineError::Io(format!("{}: {e}", dir.display())))? {
            let path = entry?.path();
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            if name.starts_with("frame_") && name.ends_with(".pgm") {
                paths.push(path);
            }
        }
        paths.sort();
        Ok(DirFrames { paths })
    }
}

impl FrameSource for DirFrames {
    fn len(&self) -> usize {
        self.paths.len()
    }

    fn frame(&self, i: usize) -> Result<Image, PipelineError> {
        let path = self
            .paths
            .get(i)
            .ok_or_else(|| PipelineError::Config(format!("frame {i} outside a stream of {}", self.paths.len())))?;
        Ok(read_pgm(path)?)
    }
}

/// Mean of the first `n` frames, cropped to `window`.
pub fn capture_background<S: FrameSource + ?Sized>(src: &S, n: usize, window: &Patch) -> Result<Image, PipelineError> {
    if n > src.len() {
        return Err(PipelineError::Config(format!(
            "{n} background frames requested from a stream of {}",
            src.len()
        )));
    }
    let frames = (0..n).map(|i| src.window(i, window)).collect::<Result<Vec<_>, _>>()?;
    Ok(mean_background(&frames)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    /// Stands in for firing the reject jet.
    Reject,
}

impl Verdict {
    pub fn label(self) -> Label {
        match self {
            Verdict::Pass => Label::Qualified,
            Verdict::Reject => Label::Defective,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum InspectionEvent {
    Verdict {
        frame: usize,
        verdict: Verdict,
        /// Member votes, −1 or +1, in member order.
        votes: Vec<i8>,
        vote_sum: i32,
    },
    Skip {
        frame: usize,
        reason: String,
    },
}

impl InspectionEvent {
    pub fn frame(&self) -> usize {
        match self {
            InspectionEvent::Verdict { frame, .. } | InspectionEvent::Skip { frame, .. } => *frame,
        }
    }
}

/// Runs the soft trigger over `src` and classifies the ROI of every frame
/// where presence rises. `bg` covers the union of the trigger patches and
/// the ROI; see [`inspection_window`].
pub fn run_inspection<S: FrameSource + ?Sized>(
    src: &S,
    bg: &Image,
    model: &EnsembleModel,
    cfg: &PipelineConfig,
) -> Result<Vec<InspectionEvent>, PipelineError> {
    let window = inspection_window(cfg);
    if (bg.width(), bg.height()) != (window.w, window.h) {
        return Err(PipelineError::Config(format!(
            "background is {}x{}, the inspection window {}x{}",
            bg.width(),
            bg.height(),
            window.w,
            window.h
        )));
    }
    let trigger = cfg
        .trigger
        .relative_to(&window)
        .expect("window covers every trigger patch");
    let roi = cfg.roi.relative_to(&window).expect("window covers the roi");
    let mut state = TriggerState::default();
    let mut events = Vec::new();
    for i in 0..src.len() {
        let frame = src.window(i, &window)?;
        if !state.step(bottle_present(bg, &frame, &trigger)?) {
            continue;
        }
        let crop = crop_roi(&frame, &roi)?;
        match model.classify_votes(&crop) {
            Ok(votes) => {
                let verdict = if vote(&votes)? == Label::Defective {
                    Verdict::Reject
                } else {
                    Verdict::Pass
                };
                events.push(InspectionEvent::Verdict {
                    frame: i,
                    verdict,
                    vote_sum: votes.iter().map(|v| v.sign()).sum(),
                    votes: votes.iter().map(|v| v.sign() as i8).collect(),
                });
            }
            Err(EnsembleError::Imaging(ImagingError::DegenerateFrame)) => events.push(InspectionEvent::Skip {
                frame: i,
                reason: ImagingError::DegenerateFrame.to_string(),
            }),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(events)
}

/// Smallest frame region holding the trigger patches and the ROI.
pub fn inspection_window(cfg: &PipelineConfig) -> Patch {
    cfg.trigger.window().union(&cfg.roi)
}

/// One JSON object per line.
pub fn write_events(events: &[InspectionEvent], mut out: impl Write) -> Result<(), PipelineError> {
    for e in events {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_events(input: impl std::io::Read) -> Result<Vec<InspectionEvent>, PipelineError> {
    let mut out = Vec::new();
    for line in BufReader::new(input).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::{fit_rows, ClassifierConfig};
    use crate::ensemble::SubClassifier;
    use crate::features::FeatureSpec;
    use crate::imaging::DEFAULT_ROI;
    use crate::synthgen::{conveyor_schedule, gen_stream, DefectKind, DefectMix};

    fn constant_model(label: Label) -> EnsembleModel {
        let spec = FeatureSpec::Raw { scale: 0.01 };
        let dim = spec.dim(DEFAULT_ROI.w, DEFAULT_ROI.h);
        // normalized pixels lie in [0, 1], so `near` is always the nearest point
        let near = vec![-1.0; dim];
        let far = vec![1e9; dim];
        let model = fit_rows(
            &ClassifierConfig::Knn { k: 1 },
            &[near.as_slice(), far.as_slice()],
            &[label, label.flipped()],
        )
        .unwrap();
        let sub = SubClassifier::new(model, spec, 0.1).unwrap();
        EnsembleModel::new(vec![sub.clone(), sub.clone(), sub], 0.5).unwrap()
    }

    fn stream(n_bottles: usize, seed: u64) -> (PipelineConfig, FrameStream) {
        let cfg = PipelineConfig::default();
        let schedule = conveyor_schedule(120, n_bottles, 30, seed).unwrap();
        (cfg.clone(), gen_stream(&cfg.scene(), 120, &schedule, seed).unwrap())
    }

    #[test]
    fn no_bottles_no_events() {
        let (cfg, s) = stream(0, 1);
        let window = inspection_window(&cfg);
        let bg = capture_background(&s, cfg.trigger.n_background_frames, &window).unwrap();
        let events = run_inspection(&s, &bg, &constant_model(Label::Qualified), &cfg).unwrap();
        assert!(events.is_empty());
    }

    #[test]
    fn one_verdict_per_bottle_with_consistent_votes() {
        let (cfg, s) = stream(3, 2);
        let window = inspection_window(&cfg);
        let bg = capture_background(&s, cfg.trigger.n_background_frames, &window).unwrap();
        let model = constant_model(Label::Defective);
        let events = run_inspection(&s, &bg, &model, &cfg).unwrap();
        assert_eq!(events.len(), 3);
        let mut last = None;
        for e in &events {
            assert!(last < Some(e.frame()));
            last = Some(e.frame());
            assert!(s.slots()[e.frame()].present());
            match e {
                InspectionEvent::Verdict { verdict, votes, vote_sum, .. } => {
                    assert_eq!(*vote_sum, votes.iter().map(|&v| i32::from(v)).sum::<i32>());
                    assert_eq!(vote_sum.rem_euclid(2), 1);
                    assert_eq!(*verdict == Verdict::Reject, *vote_sum < 0);
                }
                InspectionEvent::Skip { .. } => panic!("unexpected skip"),
            }
        }
    }

    #[test]
    fn perfect_model_matches_ground_truth() {
        // single-class streams make a constant model perfect
        for (kind, label) in [(DefectKind::Crack, Label::Defective), (DefectKind::None, Label::Qualified)] {
            let mut cfg = PipelineConfig::default();
            cfg.scene.defect_mix = DefectMix::only(kind);
            let schedule = conveyor_schedule(120, 3, 30, 4).unwrap();
            let s = gen_stream(&cfg.scene(), 120, &schedule, 4).unwrap();
            let window = inspection_window(&cfg);
            let bg = capture_background(&s, cfg.trigger.n_background_frames, &window).unwrap();
            let events = run_inspection(&s, &bg, &constant_model(label), &cfg).unwrap();
            assert_eq!(events.len(), 3);
            for e in &events {
                let truth = s.centered_bottle(e.frame()).expect("fires on a centered bottle").label;
                match e {
                    InspectionEvent::Verdict { verdict, .. } => assert_eq!(verdict.label(), truth),
                    InspectionEvent::Skip { .. } => panic!("unexpected skip"),
                }
            }
        }
    }

    #[test]
    fn degenerate_frames_are_skipped() {
        let cfg = PipelineConfig::default();
        let window = inspection_window(&cfg);
        let bright = Image::filled(cfg.scene.frame_w, cfg.scene.frame_h, 0.8);
        let black = Image::filled(cfg.scene.frame_w, cfg.scene.frame_h, 0.0);
        let frames = vec![bright.clone(), black, bright];
        let bg = capture_background(frames.as_slice(), 1, &window).unwrap();
        let events = run_inspection(frames.as_slice(), &bg, &constant_model(Label::Qualified), &cfg).unwrap();
        assert_eq!(events.len(), 1);
        assert!(matches!(events[0], InspectionEvent::Skip { frame: 1, .. }));
    }

    #[test]
    fn events_round_trip_as_json_lines() {
        let events = vec![
            InspectionEvent::Verdict {
                frame: 3,
                verdict: Verdict::Reject,
                votes: vec![-1, -1, 1],
                vote_sum: -1,
            },
            InspectionEvent::Skip {
                frame: 9,
                reason: "x".into(),
            },
        ];
        let mut buf = Vec::new();
        write_events(&events, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap().lines().count(), 2);
        assert_eq!(read_events(buf.as_slice()).unwrap(), events);
    }
}

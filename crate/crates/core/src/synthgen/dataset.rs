use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{render_roi, DefectKind, SceneSpec, SynthError};
use crate::imaging::{decode_pgm, Image};
use crate::label::Label;
use crate::seed;

pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// One manifest line. `label` is the signed class, -1 defective or +1 qualified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub path: String,
    pub label: i8,
    pub defect_kind: DefectKind,
    pub noise_flipped: bool,
}

/// An 8-bit ROI sample and its annotations. Pixels are shared, so clones
/// (label-noise variants, subsets) do not copy image data.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetItem {
    pub path: String,
    pub label: Label,
    pub defect_kind: DefectKind,
    pub noise_flipped: bool,
    pixels: Arc<[u8]>,
}

impl DatasetItem {
    pub fn new(path: String, label: Label, defect_kind: DefectKind, pixels: Vec<u8>) -> Self {
        DatasetItem {
            path,
            label,
            defect_kind,
            noise_flipped: false,
            pixels: pixels.into(),
        }
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    /// The label before any injected flip.
    pub fn true_label(&self) -> Label {
        if self.noise_flipped {
            self.label.flipped()
        } else {
            self.label
        }
    }

    pub fn record(&self) -> ManifestRecord {
        ManifestRecord {
            path: self.path.clone(),
            label: self.label.sign() as i8,
            defect_kind: self.defect_kind,
            noise_flipped: self.noise_flipped,
        }
    }
}

/// Equally sized gray samples with labels; the manifest is the label authority.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    width: usize,
    height: usize,
    items: Vec<DatasetItem>,
    manifest_path: Option<PathBuf>,
}

impl LabeledDataset {
    pub fn from_items(width: usize, height: usize, items: Vec<DatasetItem>) -> Result<Self, SynthError> {
        if let Some(it) = items.iter().find(|it| it.pixels.len() != width * height) {
            return Err(SynthError::InvalidRequest(format!(
                "{} has {} pixels, expected {}x{}",
                it.path,
                it.pixels.len(),
                width,
                height
            )));
        }
        Ok(LabeledDataset {
            width,
            height,
            items,
            manifest_path: None,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn items(&self) -> &[DatasetItem] {
        &self.items
    }

    pub fn item(&self, i: usize) -> &DatasetItem {
        &self.items[i]
    }

    pub fn labels(&self) -> Vec<Label> {
        self.items.iter().map(|it| it.label).collect()
    }

    pub fn count(&self, label: Label) -> usize {
        self.items.iter().filter(|it| it.label == label).count()
    }

    /// Sample `i` as an image with intensities `b / 255`.
    pub fn image(&self, i: usize) -> Image {
        Image::from_gray8(self.width, self.height, &self.items[i].pixels).expect("lengths checked on construction")
    }

    pub fn manifest_path(&self) -> Option<&Path> {
        self.manifest_path.as_deref()
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            width: self.width,
            height: self.height,
            items: indices.iter().map(|&i| self.items[i].clone()).collect(),
            manifest_path: None,
        }
    }

    /// Writes one PGM per item plus the manifest into `dir`.
    pub fn write(&mut self, dir: impl AsRef<Path>) -> Result<PathBuf, SynthError> {
        let dir = dir.as_ref();
        let io = |e: std::io::Error| SynthError::Io(e.to_string());
        fs::create_dir_all(dir).map_err(io)?;
        let header = format!("P5\n{} {}\n255\n", self.width, self.height);
        let manifest = dir.join(MANIFEST_FILE);
        let mut out = BufWriter::new(fs::File::create(&manifest).map_err(io)?);
        for it in &self.items {
            let mut bytes = Vec::with_capacity(header.len() + it.pixels.len());
            bytes.extend_from_slice(header.as_bytes());
            bytes.extend_from_slice(&it.pixels);
            fs::write(dir.join(&it.path), bytes).map_err(io)?;
            let line = serde_json::to_string(&it.record()).map_err(|e| SynthError::Manifest(e.to_string()))?;
            writeln!(out, "{line}").map_err(io)?;
        }
        out.flush().map_err(io)?;
        self.manifest_path = Some(manifest.clone());
        Ok(manifest)
    }

    /// Reads a dataset from a manifest file or a directory containing one.
    pub fn read(path: impl AsRef<Path>) -> Result<Self, SynthError> {
        let path = path.as_ref();
        let manifest = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let base = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
        let file = fs::File::open(&manifest).map_err(|e| SynthError::Io(format!("{}: {e}", manifest.display())))?;
        let mut items = Vec::new();
        let mut dims = None;
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| SynthError::Io(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ManifestRecord =
                serde_json::from_str(&line).map_err(|e| SynthError::Manifest(format!("line {}: {e}", n + 1)))?;
            let label = match rec.label {
                -1 => Label::Defective,
                1 => Label::Qualified,
                other => return Err(SynthError::Manifest(format!("line {}: label {other} is not -1 or 1", n + 1))),
            };
            let bytes = fs::read(base.join(&rec.path)).map_err(|e| SynthError::Io(format!("{}: {e}", rec.path)))?;
            let img = decode_pgm(&bytes)?;
            let d = (img.width(), img.height());
            if *dims.get_or_insert(d) != d {
                return Err(SynthError::Manifest(format!("{} is {}x{}, other samples differ", rec.path, d.0, d.1)));
            }
            items.push(DatasetItem {
                path: rec.path,
                label,
                defect_kind: rec.defect_kind,
                noise_flipped: rec.noise_flipped,
                pixels: img.to_gray8().into(),
            });
        }
        let (width, height) = dims.ok_or_else(|| SynthError::Manifest("empty manifest".into()))?;
        let mut ds = LabeledDataset::from_items(width, height, items)?;
        ds.manifest_path = Some(manifest);
        Ok(ds)
    }
}

/// Renders `n` ROI samples, exactly `round(defective_fraction * n)` of them
/// defective (classes drawn from the scene's defect mix), in a seeded random order.
pub fn gen_dataset(spec: &SceneSpec, n: usize, defective_fraction: f64, rng_seed: u64) -> Result<LabeledDataset, SynthError> {
    spec.validate()?;
    if n < 2 {
        return Err(SynthError::InvalidRequest(format!("dataset needs at least 2 samples, got {n}")));
    }
    if !(0.0..=1.0).contains(&defective_fraction) {
        return Err(SynthError::InvalidRequest(format!("defective fraction {defective_fraction} outside [0, 1]")));
    }
    let n_defective = (defective_fraction * n as f64).round() as usize;
    if n_defective > 0 && spec.defect_mix.defect_mass() <= 0.0 {
        return Err(SynthError::InvalidRequest("defects requested but the mix has no defect classes".into()));
    }
    let mut defective = vec![false; n];
    defective[..n_defective].fill(true);
    defective.shuffle(&mut seed::rng(seed::derive(rng_seed, "labels")));

    let item_master = seed::derive(rng_seed, "items");
    let mut items = Vec::with_capacity(n);
    for (i, &bad) in defective.iter().enumerate() {
        let item_seed = seed::derive_index(item_master, i as u64);
        let kind = if bad {
            let u: f64 = seed::rng(seed::derive(item_seed, "defect-kind")).random();
            spec.defect_mix.sample_defect(u).expect("mix has defect mass")
        } else {
            DefectKind::None
        };
        let (img, info) = render_roi(spec, item_seed, Some(kind))?;
        items.push(DatasetItem::new(format!("{i:05}.pgm"), info.label, kind, img.to_gray8()));
    }
    LabeledDataset::from_items(spec.roi.w, spec.roi.h, items)
}

fn flip_count(ratio: f64, n: usize) -> Result<usize, SynthError> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(SynthError::InvalidRequest(format!("noise ratio {ratio} outside [0, 1]")));
    }
    // the epsilon keeps products like 0.29 * 100 from flooring one short
    Ok(((ratio * n as f64 + 1e-9).floor() as usize).min(n))
}

/// Flips `floor(ratio * n)` labels chosen uniformly without replacement and
/// toggles their `noise_flipped` marks. The input is left untouched.
pub fn inject_label_noise(d: &LabeledDataset, ratio: f64, rng_seed: u64) -> Result<LabeledDataset, SynthError> {
    let all: Vec<usize> = (0..d.len()).collect();
    inject_label_noise_at(d, &all, ratio, rng_seed)
}

/// Like [`inject_label_noise`], restricted to the items at `indices`:
/// flips `floor(ratio * indices.len())` of them.
pub fn inject_label_noise_at(
    d: &LabeledDataset,
    indices: &[usize],
    ratio: f64,
    rng_seed: u64,
) -> Result<LabeledDataset, SynthError> {
    let k = flip_count(ratio, indices.len())?;
    if let Some(&bad) = indices.iter().find(|&&i| i >= d.len()) {
        return Err(SynthError::InvalidRequest(format!("index {bad} outside dataset of {}", d.len())));
    }
    let mut out = d.clone();
    out.manifest_path = None;
    for pick in sample(&mut seed::rng(rng_seed), indices.len(), k) {
        let it = &mut out.items[indices[pick]];
        it.label = it.label.flipped();
        it.noise_flipped = !it.noise_flipped;
    }
    Ok(out)
}

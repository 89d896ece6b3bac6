//! Feature extractors over a normalized ROI.
//!
//! Three families share one declarative [`FeatureSpec`]:
//!
//! * **BHoG**: the image is cut into a `rows x cols` grid of blocks and each
//!   block contributes a gradient-orientation histogram weighted by gradient
//!   magnitude.
//! * **BGH**: per-block gray-level occupancy counts over 8-bit levels, with
//!   bin lookup through a precomputed [`HistogramLut`].
//! * **RAW**: an area-averaged downsample flattened row-major.
//!
//! Block vectors are concatenated in row-major block order. When the image
//! size is not a multiple of the grid, blocks are `floor(H/rows) x
//! floor(W/cols)` and the last block row and column absorb the remainder.

mod gradient;
mod histogram;
mod raw;

pub use gradient::{gradient_polar, sobel_gradients, GradientField, Raster};
pub use histogram::{bgh, bhog, build_lut, HistogramLut};
pub use raw::raw_feature;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::Image;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("invalid feature spec: {0}")]
    InvalidSpec(String),
    #[error("{rows}x{cols} grid does not fit a {width}x{height} image")]
    GridTooLarge {
        rows: usize,
        cols: usize,
        width: usize,
        height: usize,
    },
    #[error("image {width}x{height} is smaller than the 3x3 gradient kernel")]
    ImageTooSmall { width: usize, height: usize },
    #[error("lookup table has {lut} bins but the feature asks for {spec}")]
    LutMismatch { lut: usize, spec: usize },
    #[error("histogram bin count {0} outside [2, 256]")]
    BinCount(usize),
    #[error("raster sizes differ")]
    RasterMismatch,
    #[error("extractor called with a {0} spec")]
    WrongKind(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum FeatureSpec {
    Bhog { rows: usize, cols: usize, n_bins: usize },
    Bgh { rows: usize, cols: usize, n_bins: usize },
    Raw { scale: f64 },
}

impl FeatureSpec {
    /// 11x11 blocks, 9 orientation bins.
    pub const DEFAULT_BHOG: FeatureSpec = FeatureSpec::Bhog {
        rows: 11,
        cols: 11,
        n_bins: 9,
    };
    /// 10x10 blocks, 16 gray bins.
    pub const DEFAULT_BGH: FeatureSpec = FeatureSpec::Bgh {
        rows: 10,
        cols: 10,
        n_bins: 16,
    };
    pub const DEFAULT_RAW: FeatureSpec = FeatureSpec::Raw { scale: 0.6 };

    pub fn kind_name(&self) -> &'static str {
        match self {
            FeatureSpec::Bhog { .. } => "bhog",
            FeatureSpec::Bgh { .. } => "bgh",
            FeatureSpec::Raw { .. } => "raw",
        }
    }

    /// Short human-readable tag, e.g. `bhog-11x11x9`.
    pub fn tag(&self) -> String {
        match *self {
            FeatureSpec::Bhog { rows, cols, n_bins } => format!("bhog-{rows}x{cols}x{n_bins}"),
            FeatureSpec::Bgh { rows, cols, n_bins } => format!("bgh-{rows}x{cols}x{n_bins}"),
            FeatureSpec::Raw { scale } => format!("raw-{scale}"),
        }
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        match *self {
            FeatureSpec::Bhog { rows, cols, n_bins } | FeatureSpec::Bgh { rows, cols, n_bins } => {
                if rows == 0 || cols == 0 {
                    return Err(FeatureError::InvalidSpec(format!(
                        "block grid {rows}x{cols} is empty"
                    )));
                }
                if n_bins < 2 {
                    return Err(FeatureError::InvalidSpec(format!(
                        "n_bins {n_bins} must be at least 2"
                    )));
                }
                if matches!(self, FeatureSpec::Bgh { .. }) && n_bins > 256 {
                    return Err(FeatureError::BinCount(n_bins));
                }
                Ok(())
            }
            FeatureSpec::Raw { scale } => {
                if scale > 0.0 && scale <= 1.0 {
                    Ok(())
                } else {
                    Err(FeatureError::InvalidSpec(format!(
                        "scale {scale} outside (0, 1]"
                    )))
                }
            }
        }
    }

    /// Output length for a `width x height` input.
    pub fn dim(&self, width: usize, height: usize) -> usize {
        match *self {
            FeatureSpec::Bhog { rows, cols, n_bins } | FeatureSpec::Bgh { rows, cols, n_bins } => {
                rows * cols * n_bins
            }
            FeatureSpec::Raw { scale } => {
                let (m, n) = raw::target_dims(scale, width, height);
                m * n
            }
        }
    }
}

/// Flat real-valued feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Self {
        FeatureVector(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    /// Comma-separated values, for debugging dumps.
    pub fn to_csv_row(&self) -> String {
        self.0
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }
}

impl From<Vec<f64>> for FeatureVector {
    fn from(v: Vec<f64>) -> Self {
        FeatureVector(v)
    }
}

/// Splits `len` into `parts` contiguous ranges of `len / parts` elements,
/// the last range absorbing the remainder. Returns the `parts + 1` boundaries.
pub fn block_bounds(len: usize, parts: usize) -> Vec<usize> {
    debug_assert!(parts >= 1 && parts <= len);
    let step = len / parts;
    let mut b: Vec<usize> = (0..parts).map(|i| i * step).collect();
    b.push(len);
    b
}

/// Maps each coordinate to the index of the block containing it.
pub(crate) fn block_index_map(len: usize, parts: usize) -> Vec<usize> {
    let bounds = block_bounds(len, parts);
    let mut map = Vec::with_capacity(len);
    for (i, w) in bounds.windows(2).enumerate() {
        map.extend(std::iter::repeat_n(i, w[1] - w[0]));
    }
    map
}

pub(crate) fn check_grid(img: &Image, rows: usize, cols: usize) -> Result<(), FeatureError> {
    if rows > img.height() || cols > img.width() {
        return Err(FeatureError::GridTooLarge {
            rows,
            cols,
            width: img.width(),
            height: img.height(),
        });
    }
    Ok(())
}

/// Dispatches to the extractor named by `spec`.
pub fn extract(img: &Image, spec: &FeatureSpec) -> Result<FeatureVector, FeatureError> {
    spec.validate()?;
    match *spec {
        FeatureSpec::Bhog { .. } => bhog(img, spec),
        FeatureSpec::Bgh { n_bins, .. } => bgh(img, spec, &build_lut(n_bins)?),
        FeatureSpec::Raw { .. } => raw_feature(img, spec),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn spec_json_shape() {
        let s = serde_json::to_string(&FeatureSpec::DEFAULT_BHOG).unwrap();
        assert_eq!(s, r#"{"kind":"bhog","rows":11,"cols":11,"n_bins":9}"#);
        let r: FeatureSpec = serde_json::from_str(r#"{"kind":"raw","scale":0.6}"#).unwrap();
        assert_eq!(r, FeatureSpec::DEFAULT_RAW);
        assert!(serde_json::from_str::<FeatureSpec>(r#"{"kind":"raw","scale":0.6,"x":1}"#).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(FeatureSpec::Bhog { rows: 0, cols: 3, n_bins: 9 }.validate().is_err());
        assert!(FeatureSpec::Bgh { rows: 3, cols: 3, n_bins: 1 }.validate().is_err());
        assert!(FeatureSpec::Bgh { rows: 3, cols: 3, n_bins: 300 }.validate().is_err());
        assert!(FeatureSpec::Raw { scale: 0.0 }.validate().is_err());
        assert!(FeatureSpec::Raw { scale: 1.2 }.validate().is_err());
        FeatureSpec::DEFAULT_RAW.validate().unwrap();
    }

    #[test]
    fn bounds_absorb_remainder() {
        assert_eq!(block_bounds(10, 3), vec![0, 3, 6, 10]);
        assert_eq!(block_bounds(5, 5), vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(block_index_map(7, 2), vec![0, 0, 0, 1, 1, 1, 1]);
    }

    #[test]
    fn default_dims_on_roi() {
        assert_eq!(FeatureSpec::DEFAULT_BHOG.dim(150, 356), 1089);
        assert_eq!(FeatureSpec::DEFAULT_BGH.dim(150, 356), 1600);
        assert_eq!(FeatureSpec::DEFAULT_RAW.dim(150, 356), 90 * 213);
    }

    #[test]
    fn extract_dispatches() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let img = Image::from_fn(30, 40, |_, _| rng.random::<f64>());
        let specs = [
            FeatureSpec::Bhog { rows: 3, cols: 2, n_bins: 8 },
            FeatureSpec::Bgh { rows: 2, cols: 2, n_bins: 16 },
            FeatureSpec::Raw { scale: 0.5 },
        ];
        for spec in specs {
            let v = extract(&img, &spec).unwrap();
            assert_eq!(v.dim(), spec.dim(30, 40));
            let direct = match spec {
                FeatureSpec::Bhog { .. } => bhog(&img, &spec).unwrap(),
                FeatureSpec::Bgh { n_bins, .. } => bgh(&img, &spec, &build_lut(n_bins).unwrap()).unwrap(),
                FeatureSpec::Raw { .. } => raw_feature(&img, &spec).unwrap(),
            };
            assert_eq!(v, direct);
        }
    }

    #[test]
    fn extractors_are_deterministic() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let img = Image::from_fn(33, 21, |_, _| rng.random::<f64>());
        for spec in [FeatureSpec::DEFAULT_BHOG, FeatureSpec::DEFAULT_BGH, FeatureSpec::DEFAULT_RAW] {
            let a = extract(&img, &spec).unwrap();
            let b = extract(&img, &spec).unwrap();
            assert!(a.values().iter().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}

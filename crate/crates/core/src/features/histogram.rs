use std::f64::consts::TAU;

use super::gradient::orientation;
use super::{block_index_map, check_grid, sobel_gradients, FeatureError, FeatureSpec, FeatureVector};
use crate::imaging::{quantize8, Image};

/// Blocked histogram of gradients.
///
/// Each pixel adds its gradient magnitude to bin `floor(θ / (2π / n_bins))`
/// of the block it falls in.
pub fn bhog(img: &Image, spec: &FeatureSpec) -> Result<FeatureVector, FeatureError> {
    let FeatureSpec::Bhog { rows, cols, n_bins } = *spec else {
        return Err(FeatureError::WrongKind(spec.kind_name()));
    };
    spec.validate()?;
    check_grid(img, rows, cols)?;
    let (gx, gy) = sobel_gradients(img)?;
    let (w, h) = (img.width(), img.height());
    let row_block = block_index_map(h, rows);
    let col_block = block_index_map(w, cols);
    let bin_width = TAU / n_bins as f64;

    let mut hist = vec![0.0; rows * cols * n_bins];
    for y in 0..h {
        let block_row = row_block[y] * cols;
        for x in 0..w {
            let i = y * w + x;
            let (dx, dy) = (gx.data[i], gy.data[i]);
            let mag = dx.hypot(dy);
            if mag == 0.0 {
                continue;
            }
            let bin = ((orientation(dx, dy) / bin_width) as usize).min(n_bins - 1);
            hist[(block_row + col_block[x]) * n_bins + bin] += mag;
        }
    }
    Ok(FeatureVector::new(hist))
}

/// Precomputed gray-level → bin index table over 8-bit levels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistogramLut {
    n_bins: usize,
    table: [u16; 256],
}

impl HistogramLut {
    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    #[inline]
    pub fn bin(&self, level: u8) -> usize {
        usize::from(self.table[usize::from(level)])
    }

    pub fn table(&self) -> &[u16; 256] {
        &self.table
    }
}

/// `table[v] = floor(v * n_bins / 256)`.
pub fn build_lut(n_bins: usize) -> Result<HistogramLut, FeatureError> {
    if !(2..=256).contains(&n_bins) {
        return Err(FeatureError::BinCount(n_bins));
    }
    let mut table = [0u16; 256];
    for (v, slot) in table.iter_mut().enumerate() {
        *slot = (v * n_bins / 256) as u16;
    }
    Ok(HistogramLut { n_bins, table })
}

/// Blocked gray histogram: per-block pixel counts per LUT bin on the
/// 8-bit quantized image (`round(v * 255)`).
pub fn bgh(img: &Image, spec: &FeatureSpec, lut: &HistogramLut) -> Result<FeatureVector, FeatureError> {
    let FeatureSpec::Bgh { rows, cols, n_bins } = *spec else {
        return Err(FeatureError::WrongKind(spec.kind_name()));
    };
    spec.validate()?;
    if lut.n_bins != n_bins {
        return Err(FeatureError::LutMismatch {
            lut: lut.n_bins,
            spec: n_bins,
        });
    }
    check_grid(img, rows, cols)?;
    let (w, h) = (img.width(), img.height());
    let row_block = block_index_map(h, rows);
    let col_block = block_index_map(w, cols);
    let mut counts = vec![0u32; rows * cols * n_bins];
    let px = img.data();
    for y in 0..h {
        let block_row = row_block[y] * cols;
        for x in 0..w {
            let bin = lut.bin(quantize8(px[y * w + x]));
            counts[(block_row + col_block[x]) * n_bins + bin] += 1;
        }
    }
    Ok(FeatureVector::new(counts.into_iter().map(f64::from).collect()))
}

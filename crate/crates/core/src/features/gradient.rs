use std::f64::consts::TAU;

use super::FeatureError;
use crate::imaging::Image;

/// Real-valued raster (gradients may be negative).
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Raster {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub gx: Raster,
    pub gy: Raster,
    pub magnitude: Raster,
    /// Angle of `(gx, gy)` in `[0, 2π)`.
    pub orientation: Raster,
}

/// Horizontal and vertical Sobel responses with replicated borders.
///
/// The kernels are applied as correlation, so a left-to-right brightening
/// ramp gives a positive `gx`.
pub fn sobel_gradients(img: &Image) -> Result<(Raster, Raster), FeatureError> {
    let (w, h) = (img.width(), img.height());
    if w < 3 || h < 3 {
        return Err(FeatureError::ImageTooSmall {
            width: w,
            height: h,
        });
    }
    let px = img.data();
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h {
        let up = y.saturating_sub(1) * w;
        let mid = y * w;
        let down = (y + 1).min(h - 1) * w;
        for x in 0..w {
            let l = x.saturating_sub(1);
            let r = (x + 1).min(w - 1);
            let (a, b, c) = (px[up + l], px[up + x], px[up + r]);
            let (d, f) = (px[mid + l], px[mid + r]);
            let (g, k, m) = (px[down + l], px[down + x], px[down + r]);
            gx[mid + x] = (c + 2.0 * f + m) - (a + 2.0 * d + g);
            gy[mid + x] = (g + 2.0 * k + m) - (a + 2.0 * b + c);
        }
    }
    Ok((
        Raster {
            width: w,
            height: h,
            data: gx,
        },
        Raster {
            width: w,
            height: h,
            data: gy,
        },
    ))
}

/// Largest double strictly below 2π.
const BELOW_TAU: f64 = f64::from_bits(TAU.to_bits() - 1);

#[inline]
pub(crate) fn orientation(gx: f64, gy: f64) -> f64 {
    // + 0.0 turns -0.0 into 0.0
    let mut theta = gy.atan2(gx) + 0.0;
    if theta < 0.0 {
        theta += TAU;
    }
    if theta >= TAU {
        theta = BELOW_TAU;
    }
    theta
}

pub fn gradient_polar(gx: &Raster, gy: &Raster) -> Result<GradientField, FeatureError> {
    if gx.width != gy.width || gx.height != gy.height || gx.data.len() != gy.data.len() {
        return Err(FeatureError::RasterMismatch);
    }
    let mut magnitude = Vec::with_capacity(gx.data.len());
    let mut orient = Vec::with_capacity(gx.data.len());
    for (&x, &y) in gx.data.iter().zip(&gy.data) {
        magnitude.push(x.hypot(y));
        orient.push(orientation(x, y));
    }
    let shape = |data| Raster {
        width: gx.width,
        height: gx.height,
        data,
    };
    Ok(GradientField {
        gx: gx.clone(),
        gy: gy.clone(),
        magnitude: shape(magnitude),
        orientation: shape(orient),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::FRAC_PI_2;

    const KX: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
    const KY: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

    fn oracle(img: &Image, k: &[[f64; 3]; 3]) -> Vec<f64> {
        let (w, h) = (img.width() as isize, img.height() as isize);
        let mut out = vec![];
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0;
                for j in -1..=1isize {
                    for i in -1..=1isize {
                        let xx = (x + i).clamp(0, w - 1) as usize;
                        let yy = (y + j).clamp(0, h - 1) as usize;
                        s += k[(j + 1) as usize][(i + 1) as usize] * img.get(xx, yy);
                    }
                }
                out.push(s);
            }
        }
        out
    }

    #[test]
    fn matches_scalar_convolution() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let img = Image::from_fn(9, 9, |_, _| rng.random::<f64>());
        let (gx, gy) = sobel_gradients(&img).unwrap();
        for (a, b) in gx.data.iter().zip(oracle(&img, &KX)) {
            assert!((a - b).abs() < 1e-9);
        }
        for (a, b) in gy.data.iter().zip(oracle(&img, &KY)) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn flat_and_ramp() {
        let (gx, gy) = sobel_gradients(&Image::filled(5, 4, 0.7)).unwrap();
        assert!(gx.data.iter().chain(&gy.data).all(|&v| v == 0.0));

        let w = 11;
        let ramp = Image::from_fn(w, 6, |x, _| x as f64 / (w - 1) as f64);
        let (gx, gy) = sobel_gradients(&ramp).unwrap();
        for y in 1..5 {
            for x in 1..w - 1 {
                assert!((gx.get(x, y) - 8.0 / (w - 1) as f64).abs() < 1e-12);
                assert!(gy.get(x, y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn too_small() {
        assert!(sobel_gradients(&Image::filled(2, 5, 0.1)).is_err());
    }

    #[test]
    fn polar_examples() {
        let r = |v: f64| Raster {
            width: 1,
            height: 1,
            data: vec![v],
        };
        let f = gradient_polar(&r(3.0), &r(4.0)).unwrap();
        assert!((f.magnitude.data[0] - 5.0).abs() < 1e-12);
        assert_eq!(gradient_polar(&r(1.0), &r(0.0)).unwrap().orientation.data[0], 0.0);
        let up = gradient_polar(&r(0.0), &r(1.0)).unwrap().orientation.data[0];
        assert!((up - FRAC_PI_2).abs() < 1e-12);
        assert_eq!(gradient_polar(&r(0.0), &r(0.0)).unwrap().orientation.data[0], 0.0);
        assert_eq!(orientation(1.0, -0.0), 0.0);
        let tiny = orientation(1.0, -1e-300);
        assert!((0.0..TAU).contains(&tiny));
    }

    #[test]
    fn polar_invariants() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let n = 500;
        let gx = Raster { width: n, height: 1, data: (0..n).map(|_| rng.random_range(-4.0..4.0)).collect() };
        let gy = Raster { width: n, height: 1, data: (0..n).map(|_| rng.random_range(-4.0..4.0)).collect() };
        let f = gradient_polar(&gx, &gy).unwrap();
        for i in 0..n {
            let m2 = gx.data[i].powi(2) + gy.data[i].powi(2);
            assert!((f.magnitude.data[i].powi(2) - m2).abs() < 1e-6);
            assert!((0.0..TAU).contains(&f.orientation.data[i]));
        }
    }
}

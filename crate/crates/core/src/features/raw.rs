use super::{FeatureError, FeatureSpec, FeatureVector};
use crate::imaging::Image;

/// `(floor(scale * H), floor(scale * W))`, tolerant to representation error
/// in products like `0.6 * 150`.
pub(crate) fn target_dims(scale: f64, width: usize, height: usize) -> (usize, usize) {
    let f = |len: usize| (scale * len as f64 + 1e-9).floor() as usize;
    (f(height), f(width))
}

/// Area-average downsample to `floor(scale * H) x floor(scale * W)`,
/// flattened row-major. Output pixel `(i, j)` averages source rows
/// `[i * H / m, (i + 1) * H / m)` and the analogous column span.
pub fn raw_feature(img: &Image, spec: &FeatureSpec) -> Result<FeatureVector, FeatureError> {
    let FeatureSpec::Raw { scale } = *spec else {
        return Err(FeatureError::WrongKind(spec.kind_name()));
    };
    spec.validate()?;
    let (w, h) = (img.width(), img.height());
    let (m, n) = target_dims(scale, w, h);
    if m == 0 || n == 0 {
        return Err(FeatureError::InvalidSpec(format!(
            "scale {scale} collapses a {w}x{h} image"
        )));
    }
    if m == h && n == w {
        return Ok(FeatureVector::new(img.data().to_vec()));
    }
    let col_span: Vec<(usize, usize)> = (0..n).map(|j| (j * w / n, (j + 1) * w / n)).collect();
    let px = img.data();
    let mut out = Vec::with_capacity(m * n);
    let mut acc = vec![0.0; n];
    for i in 0..m {
        let (y0, y1) = (i * h / m, (i + 1) * h / m);
        acc.iter_mut().for_each(|a| *a = 0.0);
        for y in y0..y1 {
            let row = &px[y * w..(y + 1) * w];
            for (a, &(x0, x1)) in acc.iter_mut().zip(&col_span) {
                *a += row[x0..x1].iter().sum::<f64>();
            }
        }
        for (a, &(x0, x1)) in acc.iter().zip(&col_span) {
            out.push(a / ((y1 - y0) * (x1 - x0)) as f64);
        }
    }
    Ok(FeatureVector::new(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn identity_at_full_scale() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let img = Image::from_fn(7, 5, |_, _| rng.random::<f64>());
        let v = raw_feature(&img, &FeatureSpec::Raw { scale: 1.0 }).unwrap();
        assert_eq!(v.values(), img.data());
    }

    #[test]
    fn roi_dims_at_default_scale() {
        assert_eq!(target_dims(0.6, 150, 356), (213, 90));
        let img = Image::filled(150, 356, 0.42);
        let v = raw_feature(&img, &FeatureSpec::DEFAULT_RAW).unwrap();
        assert_eq!(v.dim(), 19170);
        assert!(v.values().iter().all(|&x| (x - 0.42).abs() < 1e-12));
    }

    #[test]
    fn cell_means() {
        // 4x2 image halved horizontally and vertically
        let img = Image::new(4, 2, vec![0.0, 0.2, 0.4, 0.6, 0.2, 0.4, 0.6, 0.8]).unwrap();
        let v = raw_feature(&img, &FeatureSpec::Raw { scale: 0.5 }).unwrap();
        assert_eq!(v.dim(), 2);
        assert!((v.values()[0] - 0.2).abs() < 1e-12);
        assert!((v.values()[1] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn degenerate_target() {
        let img = Image::filled(3, 3, 0.5);
        assert!(raw_feature(&img, &FeatureSpec::Raw { scale: 0.2 }).is_err());
    }
}

use super::dtw::{dtw_align, euclidean};
use super::{MetricsError, Result};
use crate::dsp::{FeatureKind, FeatureMatrix};

/// `10 / ln 10`, the dB factor of mel cepstral distortion.
pub const MCD_SCALE: f64 = 10.0 / std::f64::consts::LN_10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McdOptions {
    pub exclude_c0: bool,
    /// Equal-length inputs are compared frame by frame when false.
    pub use_dtw: bool,
}

impl Default for McdOptions {
    fn default() -> Self {
        Self {
            exclude_c0: true,
            use_dtw: true,
        }
    }
}

/// Distortion in dB between two cepstral frames over all coefficients given.
pub fn frame_mcd(a: &[f32], b: &[f32]) -> f64 {
    MCD_SCALE * std::f64::consts::SQRT_2 * euclidean(a, b)
}

/// Mean frame distortion in dB over the aligned frame pairs.
pub fn mcd(x: &FeatureMatrix, y: &FeatureMatrix, options: McdOptions) -> Result<f64> {
    for m in [x, y] {
        if m.kind == FeatureKind::LogMel {
            return Err(MetricsError::WrongKind(m.kind));
        }
    }
    if x.dim() != y.dim() {
        return Err(MetricsError::DimensionMismatch(x.dim(), y.dim()));
    }
    if x.rows() == 0 || y.rows() == 0 {
        return Err(MetricsError::EmptyInput);
    }
    let first = usize::from(options.exclude_c0);
    if x.dim() <= first {
        return Err(MetricsError::DimensionMismatch(x.dim(), first + 1));
    }
    let (xs, ys) = if first == 0 {
        (x.clone(), y.clone())
    } else {
        (x.columns(first..x.dim())?, y.columns(first..y.dim())?)
    };

    if !options.use_dtw && xs.rows() == ys.rows() {
        let total: f64 = xs
            .iter_rows()
            .zip(ys.iter_rows())
            .map(|(a, b)| frame_mcd(a, b))
            .sum();
        return Ok(total / xs.rows() as f64);
    }
    let aligned = dtw_align(&xs, &ys)?;
    Ok(MCD_SCALE * std::f64::consts::SQRT_2 * aligned.cost / aligned.path.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cep(rows: &[Vec<f32>]) -> FeatureMatrix {
        FeatureMatrix::from_rows(rows, FeatureKind::Mfcc, 0.01, 0.025).unwrap()
    }

    fn utterance(seed: u64, t: usize, d: usize) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f32>> = (0..t)
            .map(|i| {
                (0..d)
                    .map(|k| ((i as f32 * 0.3 + k as f32).sin() * 4.0 / (k as f32 + 1.0)) + rng.random_range(-0.1..0.1))
                    .collect()
            })
            .collect();
        cep(&rows)
    }

    #[test]
    fn identical_is_zero() {
        let x = utterance(1, 40, 13);
        assert_eq!(mcd(&x, &x, McdOptions::default()).unwrap(), 0.0);
        let plain = McdOptions { use_dtw: false, ..McdOptions::default() };
        assert_eq!(mcd(&x, &x, plain).unwrap(), 0.0);
    }

    #[test]
    fn unit_difference_frame() {
        let x = cep(&[vec![5.0, 0.0, 0.0, 0.0]]);
        let y = cep(&[vec![-3.0, 0.6, 0.0, 0.8]]);
        let v = mcd(&x, &y, McdOptions::default()).unwrap();
        assert!((v - 6.1418).abs() < 1e-4, "{v}");
        let exact = mcd(&cep(&[vec![5.0, 0.0, 0.0]]), &cep(&[vec![-3.0, 0.0, 1.0]]), McdOptions::default()).unwrap();
        assert!((exact - 10.0 / 10f64.ln() * 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn monotone_in_noise() {
        let x = utterance(2, 60, 20);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let noise: Vec<f32> = (0..x.as_slice().len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let values: Vec<f64> = [0.01f32, 0.1, 1.0]
            .iter()
            .map(|&eps| {
                let data = x.as_slice().iter().zip(&noise).map(|(v, n)| v + eps * n).collect();
                let y = FeatureMatrix::new(data, x.dim(), FeatureKind::Mfcc, 0.01, 0.025).unwrap();
                mcd(&x, &y, McdOptions::default()).unwrap()
            })
            .collect();
        assert!(values[0] < values[1] && values[1] < values[2], "{values:?}");
    }

    #[test]
    fn symmetric_without_dtw() {
        let x = utterance(3, 30, 10);
        let y = utterance(4, 30, 10);
        let plain = McdOptions { use_dtw: false, ..McdOptions::default() };
        assert_eq!(mcd(&x, &y, plain).unwrap(), mcd(&y, &x, plain).unwrap());
        assert!(mcd(&x, &y, plain).unwrap() > 0.0);
    }

    #[test]
    fn errors() {
        let x = utterance(3, 5, 10);
        let y = utterance(3, 5, 8);
        assert!(matches!(mcd(&x, &y, McdOptions::default()), Err(MetricsError::DimensionMismatch(10, 8))));
        let mel = FeatureMatrix::new(vec![0.0; 10], 10, FeatureKind::LogMel, 0.01, 0.025).unwrap();
        assert!(matches!(mcd(&mel, &mel, McdOptions::default()), Err(MetricsError::WrongKind(_))));
    }
}

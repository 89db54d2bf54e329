//! Baseline denoiser: packet transform, hard thresholding of the deepest layer, inverse transform.

use serde::{Deserialize, Serialize};

use crate::dsp::{wpt_forward, wpt_inverse, Wavelet};
use crate::error::{Error, Result};
use crate::signal::squared_distance;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HtConfig {
    pub lambda: f64,
    pub layers: usize,
    pub wavelet: Wavelet,
}

impl HtConfig {
    pub fn new(lambda: f64, layers: usize, wavelet: Wavelet) -> Result<Self> {
        check_lambda(lambda)?;
        if layers == 0 {
            return Err(Error::Parameter("layer count must be >= 1".into()));
        }
        Ok(Self {
            lambda,
            layers,
            wavelet,
        })
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Parameter(format!(
            "threshold must be finite and non-negative, got {lambda}"
        )));
    }
    Ok(())
}

/// Keeps `c[t]` when `|c[t]| > lambda`, zero otherwise.
pub fn hard_threshold(c: &[f64], lambda: f64) -> Result<Vec<f64>> {
    check_lambda(lambda)?;
    Ok(c.iter()
        .map(|&v| if v.abs() > lambda { v } else { 0.0 })
        .collect())
}

pub fn denoise_ht(x: &[f64], cfg: &HtConfig) -> Result<Vec<f64>> {
    check_lambda(cfg.lambda)?;
    let h = cfg.wavelet.kernel()?;
    let mut tree = wpt_forward(x, &h, cfg.layers)?;
    for node in tree.leaves_mut() {
        for v in node.iter_mut() {
            if v.abs() <= cfg.lambda {
                *v = 0.0;
            }
        }
    }
    wpt_inverse(&tree, &h)
}

/// Noise scale from the median absolute deviation of the first-layer high band.
pub fn estimate_noise_scale(noisy: &[&[f64]], wavelet: Wavelet) -> Result<f64> {
    if noisy.is_empty() {
        return Err(Error::Parameter("no signals to estimate noise from".into()));
    }
    let h = wavelet.kernel()?;
    let mut detail: Vec<f64> = Vec::new();
    for x in noisy {
        let tree = wpt_forward(x, &h, 1)?;
        detail.extend(tree.layer(1)[1].iter().map(|v| v.abs()));
    }
    detail.sort_by(f64::total_cmp);
    let mid = detail.len() / 2;
    let median = if detail.len().is_multiple_of(2) {
        0.5 * (detail[mid - 1] + detail[mid])
    } else {
        detail[mid]
    };
    Ok(median / 0.6745)
}

/// 50 log-spaced thresholds over `[1e-3, 10] * scale`.
pub fn default_lambda_grid(noise_scale: f64) -> Vec<f64> {
    let scale = if noise_scale > 0.0 && noise_scale.is_finite() {
        noise_scale
    } else {
        1.0
    };
    let (lo, hi) = (1e-3f64.ln(), 10f64.ln());
    (0..50)
        .map(|i| (lo + (hi - lo) * i as f64 / 49.0).exp() * scale)
        .collect()
}

/// Mean squared reconstruction error of `cfg` over `(noisy, clean)` pairs.
pub fn ht_mse<N: AsRef<[f64]>, C: AsRef<[f64]>>(pairs: &[(N, C)], cfg: &HtConfig) -> Result<f64> {
    let mut total = 0.0;
    for (noisy, clean) in pairs {
        let out = denoise_ht(noisy.as_ref(), cfg)?;
        total += squared_distance(&out, clean.as_ref());
    }
    Ok(total / pairs.len() as f64)
}

/// Grid search for the threshold minimizing the training MSE; ties go to the smaller value.
pub fn fit_lambda<N: AsRef<[f64]>, C: AsRef<[f64]>>(
    train: &[(N, C)],
    layers: usize,
    wavelet: Wavelet,
    grid: &[f64],
) -> Result<HtConfig> {
    if train.is_empty() {
        return Err(Error::Parameter("fit_lambda needs at least one training pair".into()));
    }
    if grid.is_empty() {
        return Err(Error::Parameter("threshold grid is empty".into()));
    }
    let mut candidates = grid.to_vec();
    for &l in &candidates {
        check_lambda(l)?;
    }
    candidates.sort_by(f64::total_cmp);
    let mut best: Option<(f64, f64)> = None;
    for lambda in candidates {
        let cfg = HtConfig::new(lambda, layers, wavelet)?;
        let mse = ht_mse(train, &cfg)?;
        if best.is_none_or(|(_, m)| mse < m) {
            best = Some((lambda, mse));
        }
    }
    let (lambda, _) = best.expect("non-empty grid");
    HtConfig::new(lambda, layers, wavelet)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::energy;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gauss<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
        StandardNormal.sample(rng)
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(hard_threshold(&[0.5, -2.0, 1.0], 1.0).unwrap(), vec![0.0, -2.0, 0.0]);
        assert_eq!(hard_threshold(&[3.0, -0.1], 1.0).unwrap(), vec![3.0, 0.0]);
        let c = [0.0, 1e-300, -4.0];
        assert_eq!(hard_threshold(&c, 0.0).unwrap(), c.to_vec());
        assert!(matches!(hard_threshold(&c, -0.5), Err(Error::Parameter(_))));
    }

    proptest! {
        #[test]
        fn threshold_is_idempotent(c in proptest::collection::vec(-5.0f64..5.0, 0..40), l in 0.0f64..3.0) {
            let once = hard_threshold(&c, l).unwrap();
            prop_assert_eq!(hard_threshold(&once, l).unwrap(), once);
        }
    }

    #[test]
    fn small_signal_is_removed_entirely() {
        let x: Vec<f64> = (0..64).map(|i| 0.01 * (i as f64).sin()).collect();
        let cfg = HtConfig::new(1.0, 3, Wavelet::Db2).unwrap();
        assert!(denoise_ht(&x, &cfg).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn zero_threshold_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f64> = (0..512).map(|_| gauss(&mut rng)).collect();
        let cfg = HtConfig::new(0.0, 4, Wavelet::Db4).unwrap();
        let y = denoise_ht(&x, &cfg).unwrap();
        assert!(squared_distance(&x, &y).sqrt() <= 1e-8 * energy(&x).sqrt());
    }

    #[test]
    fn cosine_gain_depends_on_amplitude() {
        let cfg = HtConfig::new(1.0, 5, Wavelet::Db4).unwrap();
        let gain = |a: f64| {
            let x: Vec<f64> = (0..8192)
                .map(|t| a * (2.0 * std::f64::consts::PI * 1000.0 * t as f64 / 8192.0).cos())
                .collect();
            let y = denoise_ht(&x, &cfg).unwrap();
            (energy(&y) / energy(&x)).sqrt()
        };
        assert!((gain(1.5) - 1.0).abs() <= 0.1);
        assert!(gain(0.1) <= 0.1);
    }

    #[test]
    fn noiseless_pairs_pick_smallest_threshold() {
        let x: Vec<f64> = (0..64).map(|i| ((i as f64) / 5.0).sin()).collect();
        let pairs = vec![(x.clone(), x)];
        let cfg = fit_lambda(&pairs, 3, Wavelet::Haar, &[0.5, 0.01, 2.0]).unwrap();
        assert_eq!(cfg.lambda, 0.01);
    }

    #[test]
    fn pure_noise_picks_the_zeroing_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let noisy: Vec<f64> = (0..128).map(|_| 0.3 * gauss(&mut rng)).collect();
        let pairs = vec![(noisy.clone(), vec![0.0; 128])];
        let grid = [0.01, 0.1, 0.2, 50.0, 100.0];
        // Exhaustive oracle: only grid values above the largest coefficient give zero MSE.
        let h = Wavelet::Db2.kernel().unwrap();
        let max_coef = wpt_forward(&noisy, &h, 3)
            .unwrap()
            .leaves()
            .iter()
            .flatten()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let oracle = grid.iter().copied().find(|&g| g >= max_coef).unwrap();
        let cfg = fit_lambda(&pairs, 3, Wavelet::Db2, &grid).unwrap();
        assert_eq!(cfg.lambda, oracle);
        assert_eq!(cfg.lambda, 50.0);
    }

    #[test]
    fn fitted_threshold_beats_every_grid_candidate() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let clean: Vec<f64> = (0..256).map(|i| if i < 100 { 2.0 } else { -1.0 }).collect();
        let noisy: Vec<f64> = clean
            .iter()
            .map(|c| c + 0.3 * gauss(&mut rng))
            .collect();
        let pairs = vec![(noisy, clean)];
        let grid = [0.0, 1.0];
        let cfg = fit_lambda(&pairs, 4, Wavelet::Haar, &grid).unwrap();
        let mse = |l| ht_mse(&pairs, &HtConfig::new(l, 4, Wavelet::Haar).unwrap()).unwrap();
        let expected = if mse(1.0) < mse(0.0) { 1.0 } else { 0.0 };
        assert_eq!(cfg.lambda, expected);
        let full = default_lambda_grid(0.3);
        let best = fit_lambda(&pairs, 4, Wavelet::Haar, &full).unwrap();
        for g in full {
            assert!(mse(best.lambda) <= mse(g));
        }
    }

    #[test]
    fn fit_lambda_errors() {
        let empty: Vec<(Vec<f64>, Vec<f64>)> = vec![];
        assert!(fit_lambda(&empty, 1, Wavelet::Haar, &[1.0]).is_err());
        let pairs = vec![(vec![0.0; 4], vec![0.0; 4])];
        assert!(fit_lambda(&pairs, 1, Wavelet::Haar, &[]).is_err());
    }

    #[test]
    fn default_grid_spans_range() {
        let g = default_lambda_grid(2.0);
        assert_eq!(g.len(), 50);
        assert!((g[0] - 2e-3).abs() < 1e-15);
        assert!((g[49] - 20.0).abs() < 1e-12);
    }

    #[test]
    fn mad_noise_estimate_is_close() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x: Vec<f64> = (0..8192).map(|_| 0.5 * gauss(&mut rng)).collect();
        let s = estimate_noise_scale(&[&x], Wavelet::Db4).unwrap();
        assert!((s - 0.5).abs() < 0.03, "{s}");
    }
}

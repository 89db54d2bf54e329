//! Specialisation and robustness scores, cosine gain maps and entropy layer selection.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dsp::{wpt_forward, Wavelet};
use crate::error::{Error, Result};
use crate::model::LwptModel;
use crate::shrinkage::{denoise_ht, HtConfig};
use crate::signal::{energy, squared_distance};

pub trait Denoiser {
    fn denoise(&self, x: &[f64]) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

impl Denoiser for Identity {
    fn denoise(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(x.to_vec())
    }
}

impl Denoiser for HtConfig {
    fn denoise(&self, x: &[f64]) -> Result<Vec<f64>> {
        denoise_ht(x, self)
    }
}

impl Denoiser for LwptModel {
    fn denoise(&self, x: &[f64]) -> Result<Vec<f64>> {
        LwptModel::denoise(self, x)
    }
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn denoise(&self, x: &[f64]) -> Result<Vec<f64>> {
        (**self).denoise(x)
    }
}

impl<D: Denoiser + ?Sized> Denoiser for Box<D> {
    fn denoise(&self, x: &[f64]) -> Result<Vec<f64>> {
        (**self).denoise(x)
    }
}

pub const SCORE_SCALE: f64 = 1e5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub s_p: f64,
    pub s_r: f64,
    pub s_bar: f64,
    /// Mean squared error per sample, by class.
    pub per_class_mse: BTreeMap<String, f64>,
    pub n_test: usize,
}

impl ScoreReport {
    /// Builds a report from per-class residual energies; `totals[c] = (sum ||e||^2, pairs)`.
    pub fn from_totals(
        totals: &BTreeMap<String, (f64, usize)>,
        trained: &BTreeSet<String>,
        length: usize,
    ) -> Result<Self> {
        if totals.is_empty() {
            return Err(Error::Parameter("no test classes to score".into()));
        }
        if length == 0 {
            return Err(Error::Length("signals must be non-empty".into()));
        }
        let t = length as f64;
        let (mut in_sum, mut in_n, mut out_sum, mut out_n) = (0.0, 0usize, 0.0, 0usize);
        let mut per_class_mse = BTreeMap::new();
        for (class, &(sum, n)) in totals {
            if n == 0 {
                return Err(Error::Parameter(format!("class '{class}' has no test pairs")));
            }
            per_class_mse.insert(class.clone(), sum / (t * n as f64));
            if trained.contains(class) {
                in_sum += sum;
                in_n += n;
            } else {
                out_sum += sum;
                out_n += n;
            }
        }
        let side = |sum: f64, n: usize| if n == 0 { 0.0 } else { SCORE_SCALE / (t * n as f64) * sum };
        let s_p = side(in_sum, in_n);
        let s_r = side(out_sum, out_n);
        Ok(Self {
            s_p,
            s_r,
            s_bar: (s_p + 3.0 * s_r) / 4.0,
            per_class_mse,
            n_test: in_n + out_n,
        })
    }

    pub fn to_csv(&self, per_class: bool) -> String {
        let mut header = String::from("s_p,s_r,s_bar,n_test");
        let mut row = format!("{},{},{},{}", self.s_p, self.s_r, self.s_bar, self.n_test);
        if per_class {
            for (class, mse) in &self.per_class_mse {
                let _ = write!(header, ",mse_{class}");
                let _ = write!(row, ",{mse}");
            }
        }
        format!("{header}\n{row}\n")
    }

    pub fn to_table(&self, per_class: bool) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<12} {:>14}", "score", "value");
        let _ = writeln!(out, "{:<12} {:>14.4}", "S_p", self.s_p);
        let _ = writeln!(out, "{:<12} {:>14.4}", "S_r", self.s_r);
        let _ = writeln!(out, "{:<12} {:>14.4}", "S_bar", self.s_bar);
        let _ = writeln!(out, "{:<12} {:>14}", "test pairs", self.n_test);
        if per_class {
            let _ = writeln!(out);
            let _ = writeln!(out, "{:<12} {:>14}", "class", "mse");
            for (class, mse) in &self.per_class_mse {
                let _ = writeln!(out, "{class:<12} {mse:>14.6e}");
            }
        }
        out
    }
}

fn common_length<'a, I: IntoIterator<Item = &'a [f64]>>(signals: I) -> Result<usize> {
    let mut len = None;
    for s in signals {
        match len {
            None => len = Some(s.len()),
            Some(l) if l != s.len() => {
                return Err(Error::Shape(format!(
                    "test signals differ in length ({l} and {})",
                    s.len()
                )))
            }
            _ => {}
        }
    }
    len.ok_or_else(|| Error::Parameter("no test pairs to score".into()))
}

/// Scores precomputed `(prediction, clean)` pairs grouped by class.
pub fn score_predictions<P: AsRef<[f64]>, C: AsRef<[f64]>>(
    sets: &BTreeMap<String, Vec<(P, C)>>,
    trained: &BTreeSet<String>,
) -> Result<ScoreReport> {
    let length = common_length(
        sets.values()
            .flatten()
            .flat_map(|(p, c)| [p.as_ref(), c.as_ref()]),
    )?;
    let totals = sets
        .iter()
        .map(|(class, pairs)| {
            let sum = pairs
                .iter()
                .map(|(p, c)| squared_distance(p.as_ref(), c.as_ref()))
                .sum();
            (class.clone(), (sum, pairs.len()))
        })
        .collect();
    ScoreReport::from_totals(&totals, trained, length)
}

/// Runs `denoiser` over `(noisy, clean)` test pairs grouped by class and scores the output.
pub fn score<D: Denoiser + ?Sized, N: AsRef<[f64]>, C: AsRef<[f64]>>(
    denoiser: &D,
    sets: &BTreeMap<String, Vec<(N, C)>>,
    trained: &BTreeSet<String>,
) -> Result<ScoreReport> {
    if sets.is_empty() {
        return Err(Error::Parameter("no test classes to score".into()));
    }
    let mut predictions: BTreeMap<String, Vec<(Vec<f64>, &[f64])>> = BTreeMap::new();
    for (class, pairs) in sets {
        let out = pairs
            .iter()
            .map(|(n, c)| Ok((denoiser.denoise(n.as_ref())?, c.as_ref())))
            .collect::<Result<Vec<_>>>()?;
        predictions.insert(class.clone(), out);
    }
    score_predictions(&predictions, trained)
}

/// Gains indexed `gains[amplitude][frequency]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainMap {
    pub amplitudes: Vec<f64>,
    pub frequencies: Vec<f64>,
    pub gains: Vec<Vec<f64>>,
}

impl GainMap {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("amplitude");
        for f in &self.frequencies {
            let _ = write!(out, ",{f}");
        }
        out.push('\n');
        for (a, row) in self.amplitudes.iter().zip(&self.gains) {
            let _ = write!(out, "{a}");
            for g in row {
                let _ = write!(out, ",{g}");
            }
            out.push('\n');
        }
        out
    }
}

/// `count` evenly spaced values over `[lo, hi]`.
pub fn linear_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..count)
            .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
            .collect(),
    }
}

/// `||D(x)|| / ||x||` for cosine probes `x(t) = a cos(2 pi f t / fs)`.
pub fn gain_map<D: Denoiser + ?Sized>(
    denoiser: &D,
    amplitudes: &[f64],
    frequencies: &[f64],
    length: usize,
    sample_rate: f64,
) -> Result<GainMap> {
    if !(sample_rate > 0.0 && sample_rate.is_finite()) {
        return Err(Error::Parameter(format!("sample rate must be positive, got {sample_rate}")));
    }
    let nyquist = sample_rate / 2.0;
    if let Some(f) = frequencies.iter().find(|&&f| !(0.0..=nyquist).contains(&f)) {
        return Err(Error::Parameter(format!(
            "probe frequency {f} Hz is outside [0, {nyquist}] Hz"
        )));
    }
    if let Some(a) = amplitudes.iter().find(|&&a| !(a >= 0.0 && a.is_finite())) {
        return Err(Error::Parameter(format!("probe amplitude {a} must be non-negative")));
    }
    let mut gains = Vec::with_capacity(amplitudes.len());
    for &a in amplitudes {
        let mut row = Vec::with_capacity(frequencies.len());
        for &f in frequencies {
            let x: Vec<f64> = (0..length)
                .map(|t| a * (2.0 * std::f64::consts::PI * f * t as f64 / sample_rate).cos())
                .collect();
            let ex = energy(&x);
            row.push(if a == 0.0 || ex == 0.0 {
                0.0
            } else {
                (energy(&denoiser.denoise(&x)?) / ex).sqrt()
            });
        }
        gains.push(row);
    }
    Ok(GainMap {
        amplitudes: amplitudes.to_vec(),
        frequencies: frequencies.to_vec(),
        gains,
    })
}

/// Shannon entropy of the energy distribution over all layer-`layers` coefficients.
pub fn layer_entropy(x: &[f64], wavelet: Wavelet, layers: usize) -> Result<f64> {
    let tree = wpt_forward(x, &wavelet.kernel()?, layers)?;
    let total = tree.layer_energy(layers);
    if total == 0.0 {
        return Err(Error::Degenerate("cannot take the entropy of an all-zero signal".into()));
    }
    Ok(-tree
        .leaves()
        .iter()
        .flatten()
        .map(|c| c * c / total)
        .filter(|&p| p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>())
}

/// Candidate depth with the smallest mean entropy; ties go to the smaller depth.
pub fn select_layers_entropy<S: AsRef<[f64]>>(
    signals: &[S],
    wavelet: Wavelet,
    candidates: &[usize],
) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::Parameter("no candidate layer counts".into()));
    }
    if signals.is_empty() {
        return Err(Error::Parameter("no signals to select layers from".into()));
    }
    let mut sorted = candidates.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut best: Option<(usize, f64)> = None;
    for l in sorted {
        let mut sum = 0.0;
        for s in signals {
            sum += layer_entropy(s.as_ref(), wavelet, l)?;
        }
        let mean = sum / signals.len() as f64;
        if best.is_none_or(|(_, e)| mean < e) {
            best = Some((l, mean));
        }
    }
    Ok(best.expect("non-empty candidates").0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gauss<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
        StandardNormal.sample(rng)
    }

    type Sets = BTreeMap<String, Vec<(Vec<f64>, Vec<f64>)>>;

    fn set(items: &[(&str, Vec<(Vec<f64>, Vec<f64>)>)]) -> Sets {
        items.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    fn trained(names: &[&str]) -> BTreeSet<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn perfect_denoiser_scores_zero() {
        let sets = set(&[
            ("a", vec![(vec![1.0, 2.0], vec![1.0, 2.0])]),
            ("b", vec![(vec![0.0, -1.0], vec![0.0, -1.0])]),
        ]);
        let r = score_predictions(&sets, &trained(&["a"])).unwrap();
        assert_eq!((r.s_p, r.s_r, r.s_bar), (0.0, 0.0, 0.0));
    }

    #[test]
    fn hand_arithmetic() {
        // T = 4; class a (trained): residual energies 1 and 4; classes b and c: 9 and 0.5.
        let sets = set(&[
            ("a", vec![
                (vec![1.0, 0.0, 0.0, 0.0], vec![0.0; 4]),
                (vec![0.0, 2.0, 0.0, 0.0], vec![0.0; 4]),
            ]),
            ("b", vec![(vec![0.0, 0.0, 3.0, 0.0], vec![0.0; 4])]),
            ("c", vec![(vec![0.5, 0.5, 0.0, 0.0], vec![0.0; 4])]),
        ]);
        let r = score_predictions(&sets, &trained(&["a"])).unwrap();
        let s_p = 1e5 / (4.0 * 2.0) * 5.0;
        let s_r = 1e5 / (4.0 * 2.0) * 9.5;
        assert!((r.s_p - s_p).abs() <= 1e-12 * s_p);
        assert!((r.s_r - s_r).abs() <= 1e-12 * s_r);
        assert_eq!(r.s_bar, (r.s_p + 3.0 * r.s_r) / 4.0);
        assert_eq!(r.n_test, 4);
        assert_eq!(r.per_class_mse["a"], 5.0 / 8.0);
        assert_eq!(r.per_class_mse["b"], 9.0 / 4.0);
    }

    #[test]
    fn identity_on_noise_matches_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sigma = 0.3;
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..50)
            .map(|_| {
                let clean = vec![1.0; 1024];
                let noisy = clean.iter().map(|c| c + sigma * gauss(&mut rng)).collect();
                (noisy, clean)
            })
            .collect();
        let sets = set(&[("a", pairs)]);
        let r = score(&Identity, &sets, &trained(&["a"])).unwrap();
        let expected = 1e5 * sigma * sigma;
        // 51200 chi-square terms: relative spread ~ sqrt(2 / 51200).
        assert!((r.s_p / expected - 1.0).abs() < 0.03, "{}", r.s_p);
        assert_eq!(r.s_r, 0.0);
    }

    #[test]
    fn score_is_order_invariant_and_quadratic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..6)
            .map(|_| {
                let p: Vec<f64> = (0..8).map(|_| gauss(&mut rng)).collect();
                (p, vec![0.0; 8])
            })
            .collect();
        let a = score_predictions(&set(&[("x", pairs.clone()), ("y", pairs.clone())]), &trained(&["x"])).unwrap();
        pairs.reverse();
        let b = score_predictions(&set(&[("x", pairs.clone()), ("y", pairs.clone())]), &trained(&["x"])).unwrap();
        assert!((a.s_p - b.s_p).abs() <= 1e-12 * a.s_p);
        let scaled: Vec<(Vec<f64>, Vec<f64>)> = pairs
            .iter()
            .map(|(p, c)| (p.iter().map(|v| 3.0 * v).collect(), c.clone()))
            .collect();
        let c = score_predictions(&set(&[("x", scaled.clone()), ("y", scaled)]), &trained(&["x"])).unwrap();
        assert!((c.s_p - 9.0 * a.s_p).abs() <= 1e-12 * c.s_p);
        assert!((c.s_r - 9.0 * a.s_r).abs() <= 1e-12 * c.s_r);
    }

    #[test]
    fn score_errors() {
        let empty: Sets = BTreeMap::new();
        assert!(score_predictions(&empty, &trained(&[])).is_err());
        let ragged = set(&[("a", vec![(vec![0.0; 4], vec![0.0; 4]), (vec![0.0; 2], vec![0.0; 2])])]);
        assert!(matches!(score_predictions(&ragged, &trained(&[])), Err(Error::Shape(_))));
    }

    #[test]
    fn csv_and_table() {
        let sets = set(&[("a", vec![(vec![1.0, 0.0], vec![0.0, 0.0])])]);
        let r = score_predictions(&sets, &trained(&["a"])).unwrap();
        let csv = r.to_csv(true);
        assert!(csv.starts_with("s_p,s_r,s_bar,n_test,mse_a\n"));
        assert!(r.to_table(true).contains("S_bar"));
    }

    #[test]
    fn identity_gain_is_one() {
        let amps = linear_grid(0.0, 1.5, 7);
        let freqs = linear_grid(0.0, 4096.0, 9);
        let g = gain_map(&Identity, &amps, &freqs, 256, 8192.0).unwrap();
        assert_eq!(g.gains.len(), 7);
        assert!(g.gains.iter().all(|r| r.len() == 9));
        assert!(g.gains[0].iter().all(|v| *v == 0.0));
        for row in &g.gains[1..] {
            for (f, v) in freqs.iter().zip(row) {
                // cos(pi t) at Nyquist is +-1 and cos(0) is 1, so every probe is non-zero.
                assert!((v - 1.0).abs() <= 1e-12, "f {f}: {v}");
            }
        }
        let csv = g.to_csv();
        assert_eq!(csv.lines().count(), 8);
        assert!(gain_map(&Identity, &amps, &[5000.0], 256, 8192.0).is_err());
    }

    #[test]
    fn baseline_gain_extremes() {
        let cfg = HtConfig::new(1.0, 5, Wavelet::Db4).unwrap();
        let g = gain_map(&cfg, &[0.05, 1.5], &[1024.0, 2000.0], 8192, 8192.0).unwrap();
        assert!(g.gains[0].iter().all(|v| *v <= 0.1));
        assert!(g.gains[1].iter().all(|v| (0.9..=1.0 + 1e-9).contains(v)), "{:?}", g.gains[1]);
    }

    #[test]
    fn entropy_prefers_the_band_isolating_depth() {
        let x: Vec<f64> = (0..1024)
            .map(|t| (2.0 * std::f64::consts::PI * 96.5 * t as f64 / 1024.0).cos())
            .collect();
        let candidates = [1, 2, 3, 4, 5, 6];
        let picked = select_layers_entropy(std::slice::from_ref(&x), Wavelet::Db4, &candidates).unwrap();
        let oracle = candidates
            .iter()
            .copied()
            .min_by(|&a, &b| {
                let ea = layer_entropy(&x, Wavelet::Db4, a).unwrap();
                let eb = layer_entropy(&x, Wavelet::Db4, b).unwrap();
                ea.total_cmp(&eb).then(a.cmp(&b))
            })
            .unwrap();
        assert_eq!(picked, oracle);
        assert!(picked > 1);
    }

    #[test]
    fn white_noise_entropy_is_flat() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let signals: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..2048).map(|_| gauss(&mut rng)).collect())
            .collect();
        let means: Vec<f64> = (1..=5)
            .map(|l| signals.iter().map(|s| layer_entropy(s, Wavelet::Haar, l).unwrap()).sum::<f64>() / 20.0)
            .collect();
        let spread = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - means.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(spread < 0.01, "{means:?}");
    }

    #[test]
    fn entropy_selection_edge_cases() {
        let x: Vec<f64> = (0..64).map(|i| (i as f64).sin()).collect();
        assert_eq!(select_layers_entropy(std::slice::from_ref(&x), Wavelet::Haar, &[3]).unwrap(), 3);
        // Duplicated candidates are exact ties and resolve to the same depth.
        let a = select_layers_entropy(std::slice::from_ref(&x), Wavelet::Haar, &[2, 2, 4]).unwrap();
        let b = select_layers_entropy(std::slice::from_ref(&x), Wavelet::Haar, &[4, 2]).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            select_layers_entropy(&[vec![0.0; 64]], Wavelet::Haar, &[1]),
            Err(Error::Degenerate(_))
        ));
        assert!(select_layers_entropy(&[x], Wavelet::Haar, &[]).is_err());
    }

    #[test]
    fn haar_delta_entropy() {
        // A unit impulse spreads evenly over 2^l coefficients at depth l.
        let mut x = vec![0.0; 64];
        x[0] = 1.0;
        for l in 1..=4 {
            let e = layer_entropy(&x, Wavelet::Haar, l).unwrap();
            assert!((e - (l as f64) * 2f64.ln()).abs() < 1e-12, "l {l}: {e}");
        }
        assert_eq!(select_layers_entropy(&[x], Wavelet::Haar, &[3, 1, 2]).unwrap(), 1);
    }
}

//! Audio background-removal plumbing: WAV ingestion, resampling, foreground and
//! background mixing, delta estimation and class folds.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::signal::{energy, write_atomic, Signal};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavEncoding {
    Pcm16,
    Float32,
}

/// Reads a PCM or IEEE-float WAV file, averaging channels and scaling integers into `[-1, 1]`.
pub fn ingest_wav(path: &Path) -> Result<Signal> {
    let ingest_err = |reason: String| Error::Ingestion {
        path: path.into(),
        reason,
    };
    let mut reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => ingest_err(other.to_string()),
    })?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(ingest_err("zero channels".into()));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| ingest_err(e.to_string()))?,
        (hound::SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let scale = (1u64 << (bits - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| f64::from(v) / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| ingest_err(e.to_string()))?
        }
        (fmt, bits) => {
            return Err(ingest_err(format!("unsupported encoding {fmt:?} with {bits} bits")))
        }
    };
    if !interleaved.len().is_multiple_of(channels) {
        return Err(ingest_err("truncated sample frame".into()));
    }
    let samples: Vec<f64> = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    if samples.is_empty() {
        return Err(ingest_err("no samples".into()));
    }
    Signal::with_rate(samples, f64::from(spec.sample_rate)).map_err(|e| ingest_err(e.to_string()))
}

/// Writes a mono WAV; the sample rate defaults to 8 kHz when the signal carries none.
pub fn write_wav(path: &Path, signal: &Signal, encoding: WavEncoding) -> Result<()> {
    let rate = signal.sample_rate_hz().unwrap_or(8000.0);
    if rate.fract() != 0.0 || rate < 1.0 || rate > f64::from(u32::MAX) {
        return Err(Error::Parameter(format!("WAV needs an integer sample rate, got {rate}")));
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: rate as u32,
        bits_per_sample: match encoding {
            WavEncoding::Pcm16 => 16,
            WavEncoding::Float32 => 32,
        },
        sample_format: match encoding {
            WavEncoding::Pcm16 => hound::SampleFormat::Int,
            WavEncoding::Float32 => hound::SampleFormat::Float,
        },
    };
    let mut buf = std::io::Cursor::new(Vec::new());
    {
        let mut writer =
            hound::WavWriter::new(&mut buf, spec).map_err(|e| Error::format(path, e.to_string()))?;
        for &v in signal.samples() {
            let res = match encoding {
                WavEncoding::Pcm16 => {
                    writer.write_sample((v.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) as i16)
                }
                WavEncoding::Float32 => writer.write_sample(v as f32),
            };
            res.map_err(|e| Error::format(path, e.to_string()))?;
        }
        writer.finalize().map_err(|e| Error::format(path, e.to_string()))?;
    }
    write_atomic(path, &buf.into_inner())
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Kaiser-windowed sinc low-pass of `2 * half + 1` taps with cutoff `cutoff` (cycles/sample).
fn lowpass_taps(half: usize, cutoff: f64, beta: f64) -> Vec<f64> {
    let len = 2 * half + 1;
    let norm = bessel_i0(beta);
    (0..len)
        .map(|i| {
            let t = i as f64 - half as f64;
            let sinc = if t == 0.0 {
                2.0 * cutoff
            } else {
                (2.0 * std::f64::consts::PI * cutoff * t).sin() / (std::f64::consts::PI * t)
            };
            let r = t / half as f64;
            let w = bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / norm;
            sinc * w
        })
        .collect()
}

/// Rational polyphase resampling to `rate` with a Kaiser-windowed sinc anti-alias filter.
///
/// Integer sample rates are required. The input is extended with its edge
/// values so constant signals stay constant up to the ends.
pub fn resample_to(x: &Signal, rate: f64) -> Result<Signal> {
    let src = x
        .sample_rate_hz()
        .ok_or_else(|| Error::Parameter("signal has no sample rate to resample from".into()))?;
    if !(rate.is_finite() && rate > 0.0) {
        return Err(Error::Parameter(format!("target rate must be positive, got {rate}")));
    }
    if rate > src {
        return Err(Error::Unsupported(format!(
            "upsampling from {src} Hz to {rate} Hz is not supported"
        )));
    }
    if rate == src {
        return Ok(x.clone());
    }
    if src.fract() != 0.0 || rate.fract() != 0.0 {
        return Err(Error::Parameter("resampling needs integer sample rates".into()));
    }
    let g = gcd(src as u64, rate as u64);
    let up = (rate as u64 / g) as usize;
    let down = (src as u64 / g) as usize;
    let factor = up.max(down);
    let half = 10 * factor;
    // Filter runs at the up-sampled rate; pass band ends at the output Nyquist.
    let mut taps = lowpass_taps(half, 0.5 / factor as f64, 8.0);
    // Each polyphase branch sums to one so DC passes exactly.
    for phase in 0..up {
        let s: f64 = taps.iter().skip(phase).step_by(up).sum();
        if s != 0.0 {
            taps.iter_mut().skip(phase).step_by(up).for_each(|t| *t /= s);
        }
    }
    let input = x.samples();
    let n_in = input.len() as i64;
    let n_out = (input.len() * up).div_ceil(down);
    let at = |i: i64| input[i.clamp(0, n_in - 1) as usize];
    let out: Vec<f64> = (0..n_out)
        .map(|m| {
            // Up-sampled index of the output sample; the filter is centered on it.
            let center = (m * down) as i64;
            let mut acc = 0.0;
            let first = center - half as i64;
            // Only up-sampled positions divisible by `up` carry input samples.
            let start = first.div_euclid(up as i64) * up as i64;
            let mut j = if start < first { start + up as i64 } else { start };
            while j <= center + half as i64 {
                let tap = taps[(j - first) as usize];
                acc += tap * at(j / up as i64);
                j += up as i64;
            }
            acc
        })
        .collect();
    Signal::with_rate(out, rate)
}

/// Mixing parameters for one noisy/clean audio pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixSpec {
    pub target_length: usize,
    pub target_rate: f64,
    /// Foreground-to-background power ratio in dB over the foreground support;
    /// `None` leaves the background level untouched.
    pub snr_db: Option<f64>,
    /// Multiplies the background after any SNR scaling.
    pub background_gain: f64,
    /// Peak-normalize the background crop before scaling.
    pub normalize_background: bool,
    /// Number of leading samples that contain background only.
    pub leading_background_samples: usize,
}

impl Default for MixSpec {
    fn default() -> Self {
        Self {
            target_length: 1 << 13,
            target_rate: 8000.0,
            snr_db: Some(0.0),
            background_gain: 1.0,
            normalize_background: true,
            leading_background_samples: 0,
        }
    }
}

impl MixSpec {
    /// Raw-background regime: unnormalized backgrounds times `gain`, no SNR control.
    pub fn raw_background(gain: f64, leading: usize) -> Self {
        Self {
            snr_db: None,
            background_gain: gain,
            normalize_background: false,
            leading_background_samples: leading,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.target_length.is_power_of_two() {
            return Err(Error::Parameter(format!(
                "target length must be a power of two, got {}",
                self.target_length
            )));
        }
        if !(self.target_rate.is_finite() && self.target_rate > 0.0) {
            return Err(Error::Parameter("target rate must be positive".into()));
        }
        if self.leading_background_samples >= self.target_length {
            return Err(Error::Parameter(
                "leading background samples must be shorter than the target length".into(),
            ));
        }
        if !self.background_gain.is_finite() || self.snr_db.is_some_and(|s| !s.is_finite()) {
            return Err(Error::Parameter("gain and SNR must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixedPair {
    pub noisy: Signal,
    pub clean: Signal,
    /// The background exactly as added: `noisy - clean`.
    pub background: Vec<f64>,
}

const CROP_RETRIES: usize = 100;

fn peak_normalize(x: &mut [f64]) {
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        x.iter_mut().for_each(|v| *v /= peak);
    }
}

fn check_rate(s: &Signal, spec: &MixSpec, role: &str) -> Result<()> {
    match s.sample_rate_hz() {
        Some(r) if r != spec.target_rate => Err(Error::Parameter(format!(
            "{role} is at {r} Hz, expected {} Hz",
            spec.target_rate
        ))),
        _ => Ok(()),
    }
}

/// Mixes a foreground event with a background recording.
pub fn mix<R: Rng>(fg: &Signal, bg: &Signal, spec: &MixSpec, rng: &mut R) -> Result<MixedPair> {
    spec.validate()?;
    check_rate(fg, spec, "foreground")?;
    check_rate(bg, spec, "background")?;
    let t = spec.target_length;
    if bg.len() < t {
        return Err(Error::Length(format!(
            "background has {} samples, needs at least {t}",
            bg.len()
        )));
    }

    let mut background = None;
    for _ in 0..CROP_RETRIES {
        let start = rng.random_range(0..=bg.len() - t);
        let crop = &bg.samples()[start..start + t];
        if crop.iter().any(|v| *v != 0.0) {
            background = Some(crop.to_vec());
            break;
        }
    }
    let mut background = background
        .ok_or_else(|| Error::Degenerate("background crops are silent".into()))?;
    if spec.normalize_background {
        peak_normalize(&mut background);
    }

    // Zero padding on both sides lets events start or end inside the window.
    let avail = t - spec.leading_background_samples;
    let pad = avail / 2;
    let fg_len = fg.len();
    let padded_len = fg_len + 2 * pad;
    let window = avail.min(padded_len);
    let mut event = None;
    for _ in 0..CROP_RETRIES {
        let start = rng.random_range(0..=padded_len - window);
        let lo = start.max(pad);
        let hi = (start + window).min(pad + fg_len);
        if lo >= hi {
            continue;
        }
        let seg = &fg.samples()[lo - pad..hi - pad];
        if seg.iter().any(|v| *v != 0.0) {
            event = Some((start, lo, hi));
            break;
        }
    }
    let (start, lo, hi) =
        event.ok_or_else(|| Error::Degenerate("foreground recording is silent".into()))?;
    let offset = spec.leading_background_samples;
    let mut clean = vec![0.0; t];
    for p in lo..hi {
        clean[offset + p - start] = fg.samples()[p - pad];
    }
    peak_normalize(&mut clean);
    let support = (offset + lo - start)..(offset + hi - start);

    if let Some(snr_db) = spec.snr_db {
        let p_fg = energy(&clean[support.clone()]);
        let p_bg = energy(&background[support.clone()]);
        if p_bg > 0.0 {
            let scale = (p_fg / (p_bg * 10f64.powf(snr_db / 10.0))).sqrt();
            background.iter_mut().for_each(|v| *v *= scale);
        }
    }
    if spec.background_gain != 1.0 {
        background.iter_mut().for_each(|v| *v *= spec.background_gain);
    }
    let noisy: Vec<f64> = clean.iter().zip(&background).map(|(c, b)| c + b).collect();
    Ok(MixedPair {
        noisy: Signal::with_rate(noisy, spec.target_rate)?,
        clean: Signal::with_rate(clean, spec.target_rate)?,
        background,
    })
}

/// `norm(noisy[..leading]) / reference`.
pub fn estimate_delta(noisy: &[f64], leading: usize, reference_norm: f64) -> Result<f64> {
    if !(reference_norm > 0.0 && reference_norm.is_finite()) {
        return Err(Error::Parameter(format!(
            "reference norm must be positive, got {reference_norm}"
        )));
    }
    if leading == 0 || leading > noisy.len() {
        return Err(Error::Parameter(format!(
            "leading window {leading} does not fit a {}-sample signal",
            noisy.len()
        )));
    }
    Ok(energy(&noisy[..leading]).sqrt() / reference_norm)
}

pub const REFERENCE_WINDOWS: usize = 1000;

/// Mean norm of `windows` random `window`-sample excerpts drawn from `backgrounds`.
pub fn background_reference_norm<B: AsRef<[f64]>, R: Rng>(
    backgrounds: &[B],
    window: usize,
    windows: usize,
    rng: &mut R,
) -> Result<f64> {
    let usable: Vec<&[f64]> = backgrounds
        .iter()
        .map(AsRef::as_ref)
        .filter(|b| b.len() >= window)
        .collect();
    if usable.is_empty() || window == 0 || windows == 0 {
        return Err(Error::Parameter(format!(
            "no background of at least {window} samples to draw reference windows from"
        )));
    }
    let mut total = 0.0;
    for _ in 0..windows {
        let b = usable[rng.random_range(0..usable.len())];
        let start = rng.random_range(0..=b.len() - window);
        total += energy(&b[start..start + window]).sqrt();
    }
    Ok(total / windows as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: usize,
    pub seed: u64,
}

impl Default for FoldPlan {
    fn default() -> Self {
        Self { folds: 8, seed: 0 }
    }
}

/// Deterministic shuffled partition of `labels` into equal folds.
pub fn make_folds<S: AsRef<str>>(labels: &[S], plan: &FoldPlan) -> Result<Vec<Vec<String>>> {
    if plan.folds == 0 {
        return Err(Error::Parameter("fold count must be >= 1".into()));
    }
    let mut unique: Vec<String> = labels.iter().map(|s| s.as_ref().to_string()).collect();
    unique.sort();
    unique.dedup();
    if unique.len() != labels.len() {
        return Err(Error::Parameter("class labels must be distinct".into()));
    }
    if unique.is_empty() || !unique.len().is_multiple_of(plan.folds) {
        return Err(Error::Parameter(format!(
            "{} labels cannot be split into {} equal folds; drop {} class(es) first",
            unique.len(),
            plan.folds,
            unique.len() % plan.folds
        )));
    }
    let mut rng = seed::rng(plan.seed, seed::stream::FOLDS, 0);
    unique.shuffle(&mut rng);
    let size = unique.len() / plan.folds;
    Ok(unique.chunks(size).map(<[String]>::to_vec).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Foreground,
    Background,
}

/// One row of an audio corpus manifest: `path,role,class`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub path: PathBuf,
    pub role: Role,
    pub class: String,
}

/// Reads a corpus manifest; relative paths resolve against the manifest's directory.
pub fn read_corpus_manifest(path: &Path) -> Result<Vec<CorpusEntry>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for row in reader.deserialize::<CorpusEntry>() {
        let mut entry = row.map_err(|e| Error::format(path, e.to_string()))?;
        if entry.path.is_relative() {
            entry.path = base.join(&entry.path);
        }
        out.push(entry);
    }
    Ok(out)
}

/// Ingested recordings, all at one sample rate.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub foreground: Vec<(String, Signal)>,
    pub background: Vec<Signal>,
}

impl Corpus {
    /// Loads and resamples every entry; `classes` (when non-empty) restricts the foregrounds.
    pub fn load(entries: &[CorpusEntry], rate: f64, classes: &[String]) -> Result<Self> {
        let mut foreground = Vec::new();
        let mut background = Vec::new();
        for e in entries {
            if e.role == Role::Foreground && !classes.is_empty() && !classes.contains(&e.class) {
                continue;
            }
            let s = resample_to(&ingest_wav(&e.path)?, rate)?;
            match e.role {
                Role::Foreground => foreground.push((e.class.clone(), s)),
                Role::Background => background.push(s),
            }
        }
        if foreground.is_empty() || background.is_empty() {
            return Err(Error::Parameter(
                "corpus needs at least one foreground and one background recording".into(),
            ));
        }
        Ok(Self { foreground, background })
    }

    /// Pair `index`: picks a foreground and a background, then mixes them, all from
    /// one stream derived from `seed`.
    pub fn mix_pair(&self, spec: &MixSpec, seed: u64, index: u64) -> Result<(String, MixedPair)> {
        let mut rng = seed::rng(seed, seed::stream::MIX, index);
        let (class, fg) = &self.foreground[rng.random_range(0..self.foreground.len())];
        let bg = &self.background[rng.random_range(0..self.background.len())];
        Ok((class.clone(), mix(fg, bg, spec, &mut rng)?))
    }
}

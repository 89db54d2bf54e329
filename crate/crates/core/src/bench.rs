//! Randomized Block, Bumps, HeaviSine and Doppler classes plus noise corruption.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Gain applied to the normalized clean signal before noise is added.
pub const SIGNAL_GAIN: f64 = 3.0;

pub const BLOCK_COUNT: usize = 10;
pub const HEAVISINE_BLOCK_COUNT: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassId {
    Block,
    Bumps,
    HeaviSine,
    Doppler,
}

impl ClassId {
    pub const ALL: [ClassId; 4] = [ClassId::Block, ClassId::Bumps, ClassId::HeaviSine, ClassId::Doppler];

    pub fn name(self) -> &'static str {
        match self {
            ClassId::Block => "block",
            ClassId::Bumps => "bumps",
            ClassId::HeaviSine => "heavisine",
            ClassId::Doppler => "doppler",
        }
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClassId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "block" | "blocks" => Ok(ClassId::Block),
            "bumps" | "bump" => Ok(ClassId::Bumps),
            "heavisine" => Ok(ClassId::HeaviSine),
            "doppler" => Ok(ClassId::Doppler),
            other => Err(Error::Parameter(format!(
                "unknown signal class '{other}' (expected block, bumps, heavisine or doppler)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub class: ClassId,
    pub length: usize,
    pub seed: u64,
}

impl ClassSpec {
    pub fn new(class: ClassId, length: usize, seed: u64) -> Result<Self> {
        if !length.is_power_of_two() || length < 16 {
            return Err(Error::Parameter(format!(
                "signal length must be a power of two >= 16, got {length}"
            )));
        }
        Ok(Self { class, length, seed })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseFamily {
    Gaussian,
    Uniform,
    Laplace,
}

impl NoiseFamily {
    pub fn name(self) -> &'static str {
        match self {
            NoiseFamily::Gaussian => "gaussian",
            NoiseFamily::Uniform => "uniform",
            NoiseFamily::Laplace => "laplace",
        }
    }

    /// One unit-variance draw.
    pub fn sample<R: Rng>(self, rng: &mut R) -> f64 {
        match self {
            NoiseFamily::Gaussian => StandardNormal.sample(rng),
            NoiseFamily::Uniform => {
                let half = 3f64.sqrt();
                rng.random_range(-half..half)
            }
            NoiseFamily::Laplace => loop {
                let u: f64 = rng.random::<f64>() - 0.5;
                let tail = 1.0 - 2.0 * u.abs();
                if tail > 0.0 {
                    break -std::f64::consts::FRAC_1_SQRT_2 * u.signum() * tail.ln();
                }
            },
        }
    }
}

impl fmt::Display for NoiseFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NoiseFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(NoiseFamily::Gaussian),
            "uniform" => Ok(NoiseFamily::Uniform),
            "laplace" | "laplacian" => Ok(NoiseFamily::Laplace),
            other => Err(Error::UnsupportedFamily(format!(
                "unknown noise family '{other}' (expected gaussian, uniform or laplace)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub family: NoiseFamily,
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(family: NoiseFamily, sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::Parameter(format!(
                "noise level must be finite and non-negative, got {sigma}"
            )));
        }
        Ok(Self { family, sigma, seed })
    }
}

/// Contiguous blocks partitioning `[0, T)`: `cuts[0] = 0`, `cuts[N] = T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Blocks {
    pub cuts: Vec<usize>,
    pub amplitudes: Vec<f64>,
}

impl Blocks {
    pub fn draw<R: Rng>(rng: &mut R, length: usize, count: usize) -> Self {
        let mut cuts: Vec<usize> = index::sample(rng, length - 1, count - 1)
            .into_iter()
            .map(|c| c + 1)
            .collect();
        cuts.sort_unstable();
        cuts.insert(0, 0);
        cuts.push(length);
        let amplitudes = (0..count).map(|_| StandardNormal.sample(rng)).collect();
        Self { cuts, amplitudes }
    }

    pub fn len(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitudes.is_empty()
    }

    pub fn width(&self, i: usize) -> f64 {
        (self.cuts[i + 1] - self.cuts[i]) as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        self.cuts[i] as f64 + self.width(i) / 2.0
    }

    fn block_of(&self, t: usize) -> usize {
        self.cuts.partition_point(|&c| c <= t) - 1
    }
}

pub fn block_signal(blocks: &Blocks, length: usize) -> Vec<f64> {
    (0..length).map(|t| blocks.amplitudes[blocks.block_of(t)]).collect()
}

pub fn bumps_signal(blocks: &Blocks, length: usize) -> Vec<f64> {
    (0..length)
        .map(|t| {
            (0..blocks.len())
                .map(|i| {
                    let d = (5.0 / blocks.width(i)) * (t as f64 - blocks.center(i)).abs();
                    blocks.amplitudes[i].abs() / (1.0 + d).powi(4)
                })
                .sum()
        })
        .collect()
}

pub fn heavisine_signal(blocks: &Blocks, freqs: &[f64], phases: &[f64], length: usize) -> Vec<f64> {
    (0..length)
        .map(|t| {
            let i = blocks.block_of(t);
            blocks.amplitudes[i].abs() * (freqs[i] * t as f64 / 200.0 + phases[i]).sin()
        })
        .collect()
}

/// Doppler base function on `u in (0, 1]`, then pad, optional reversal and crop.
pub fn doppler_signal(length: usize, z: f64, pad: usize, reverse: bool) -> Vec<f64> {
    let base = (0..length).map(|j| {
        let u = (j + 1) as f64 / length as f64;
        (u * (1.0 - u)).powf(1.0 / z) * (16.0 * std::f64::consts::PI * 1.2 / (20.0 * u + 0.2)).sin()
    });
    let mut padded: Vec<f64> = std::iter::repeat_n(0.0, pad).chain(base).collect();
    if reverse {
        padded.reverse();
    }
    padded.truncate(length);
    padded
}

/// Raw (unnormalized) realization of a class.
pub fn generate(spec: &ClassSpec) -> Result<Vec<f64>> {
    let spec = ClassSpec::new(spec.class, spec.length, spec.seed)?;
    let t = spec.length;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok(match spec.class {
        ClassId::Block => block_signal(&Blocks::draw(&mut rng, t, BLOCK_COUNT), t),
        ClassId::Bumps => bumps_signal(&Blocks::draw(&mut rng, t, BLOCK_COUNT), t),
        ClassId::HeaviSine => {
            let blocks = Blocks::draw(&mut rng, t, HEAVISINE_BLOCK_COUNT);
            let freqs: Vec<f64> = (0..HEAVISINE_BLOCK_COUNT).map(|_| StandardNormal.sample(&mut rng)).collect();
            let phases: Vec<f64> = (0..HEAVISINE_BLOCK_COUNT).map(|_| StandardNormal.sample(&mut rng)).collect();
            heavisine_signal(&blocks, &freqs, &phases, t)
        }
        ClassId::Doppler => {
            // Uniform on (0, 10]: 1 - U with U in [0, 1).
            let z = 10.0 * (1.0 - rng.random::<f64>());
            let pad = rng.random_range(0..=t / 2);
            let reverse = rng.random_bool(0.5);
            doppler_signal(t, z, pad, reverse)
        }
    })
}

/// Affine map onto `[0, 1]`.
pub fn normalize01(x: &[f64]) -> Result<Vec<f64>> {
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if x.is_empty() || !(hi > lo) || !(hi - lo).is_finite() {
        return Err(Error::Degenerate("cannot normalize a constant signal".into()));
    }
    let range = hi - lo;
    Ok(x.iter()
        .map(|&v| if v == hi { 1.0 } else { (v - lo) / range })
        .collect())
}

/// `3 s + sigma b` with unit-variance noise `b`.
pub fn corrupt(s: &[f64], noise: &NoiseSpec) -> Result<Vec<f64>> {
    let noise = NoiseSpec::new(noise.family, noise.sigma, noise.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    Ok(s.iter()
        .map(|&v| {
            let b = noise.family.sample(&mut rng);
            SIGNAL_GAIN * v + noise.sigma * b
        })
        .collect())
}

/// Offset and scale changes applied to the clean signal before corruption.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modification {
    Plus,
    Minus,
    Double,
    Half,
}

impl Modification {
    pub fn apply(self, s: &[f64]) -> Vec<f64> {
        s.iter()
            .map(|&v| match self {
                Modification::Plus => v + 1.5,
                Modification::Minus => v - 1.5,
                Modification::Double => 2.0 * v,
                Modification::Half => 0.5 * v,
            })
            .collect()
    }

    pub fn name(self) -> &'static str {
        match self {
            Modification::Plus => "plus",
            Modification::Minus => "minus",
            Modification::Double => "double",
            Modification::Half => "half",
        }
    }
}

impl FromStr for Modification {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plus" | "+1.5" => Ok(Modification::Plus),
            "minus" | "-1.5" => Ok(Modification::Minus),
            "double" | "x2" => Ok(Modification::Double),
            "half" | "x0.5" => Ok(Modification::Half),
            other => Err(Error::Parameter(format!(
                "unknown modification '{other}' (expected plus, minus, double or half)"
            ))),
        }
    }
}

const MAX_REDRAWS: u64 = 64;

/// Normalized clean realization number `index` of a dataset seeded with `seed`.
pub fn clean_realization(class: ClassId, length: usize, seed: u64, index: u64) -> Result<Vec<f64>> {
    let base = seed::derive(seed, seed::stream::CLEAN, index);
    for attempt in 0..MAX_REDRAWS {
        let spec = ClassSpec::new(class, length, seed::derive(base, seed::stream::CLEAN, attempt))?;
        match normalize01(&generate(&spec)?) {
            Err(Error::Degenerate(_)) => continue,
            other => return other,
        }
    }
    Err(Error::Degenerate(format!("{class} realization {index} stayed constant")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairRealization {
    /// `3 * M(s)`, the denoising target.
    pub clean: Vec<f64>,
    pub noisy: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairRecipe {
    pub class: ClassId,
    pub length: usize,
    pub family: NoiseFamily,
    pub sigma: f64,
    pub modification: Option<Modification>,
}

impl PairRecipe {
    pub fn realize(&self, seed: u64, index: u64) -> Result<PairRealization> {
        let s = clean_realization(self.class, self.length, seed, index)?;
        let s = match self.modification {
            Some(m) => m.apply(&s),
            None => s,
        };
        let noise = NoiseSpec::new(
            self.family,
            self.sigma,
            seed::derive(seed, seed::stream::NOISE, index),
        )?;
        let noisy = corrupt(&s, &noise)?;
        let clean = s.iter().map(|v| SIGNAL_GAIN * v).collect();
        Ok(PairRealization { clean, noisy })
    }

    pub fn realize_many(&self, seed: u64, count: usize) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
        (0..count as u64)
            .map(|i| self.realize(seed, i).map(|p| (p.noisy, p.clean)))
            .collect()
    }
}

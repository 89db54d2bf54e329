//! Signals and their on-disk encodings.
//!
//! Two native encodings are supported, selected by file extension:
//!
//! * `.csv`: one sample per line, `.` as decimal separator.
//! * `.bin`: the 8-byte magic `LWPTSIG1`, the sample count as a little-endian
//!   `u64`, then the samples as little-endian IEEE-754 `f64`.
//!
//! `.wav` paths are routed through [`crate::audio`]; writes use 32-bit float
//! samples so values outside `[-1, 1]` survive.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const BINARY_MAGIC: &[u8; 8] = b"LWPTSIG1";

/// A finite, non-empty sequence of real samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    samples: Vec<f64>,
    sample_rate_hz: Option<f64>,
}

impl Signal {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Length("signal must contain at least one sample".into()));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::Parameter(format!(
                "signal sample {i} is not finite ({})",
                samples[i]
            )));
        }
        Ok(Self {
            samples,
            sample_rate_hz: None,
        })
    }

    pub fn with_rate(samples: Vec<f64>, sample_rate_hz: f64) -> Result<Self> {
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::Parameter(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        let mut s = Self::new(samples)?;
        s.sample_rate_hz = Some(sample_rate_hz);
        Ok(s)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate_hz(&self) -> Option<f64> {
        self.sample_rate_hz
    }

    pub fn set_sample_rate(&mut self, rate: Option<f64>) {
        self.sample_rate_hz = rate;
    }

    pub fn energy(&self) -> f64 {
        energy(&self.samples)
    }

    pub fn norm(&self) -> f64 {
        self.energy().sqrt()
    }
}

impl AsRef<[f64]> for Signal {
    fn as_ref(&self) -> &[f64] {
        &self.samples
    }
}

pub fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Write `bytes` to a sibling temp file and rename it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Parameter(format!("{} has no file name", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalFormat {
    Csv,
    Binary,
    Wav,
}

impl SignalFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref()
        {
            Some("csv") => Ok(SignalFormat::Csv),
            Some("bin") => Ok(SignalFormat::Binary),
            Some("wav") => Ok(SignalFormat::Wav),
            _ => Err(Error::Parameter(format!(
                "cannot infer signal format of {} (expected .csv, .bin or .wav)",
                path.display()
            ))),
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            SignalFormat::Csv => "csv",
            SignalFormat::Binary => "bin",
            SignalFormat::Wav => "wav",
        }
    }
}

pub fn encode_csv(signal: &Signal) -> Vec<u8> {
    let mut out = String::with_capacity(signal.len() * 20);
    for v in signal.samples() {
        // `{}` on f64 prints the shortest representation that parses back exactly.
        out.push_str(&format!("{v}\n"));
    }
    out.into_bytes()
}

pub fn decode_csv(path: &Path, text: &str) -> Result<Signal> {
    let mut samples = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v: f64 = line
            .parse()
            .map_err(|e| Error::format(path, format!("line {}: {e}", lineno + 1)))?;
        samples.push(v);
    }
    Signal::new(samples).map_err(|e| Error::format(path, e.to_string()))
}

pub fn encode_binary(signal: &Signal) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * signal.len());
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&(signal.len() as u64).to_le_bytes());
    for v in signal.samples() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_binary(path: &Path, bytes: &[u8]) -> Result<Signal> {
    if bytes.len() < 16 {
        return Err(Error::format(path, "file shorter than the 16-byte header"));
    }
    if &bytes[..8] != BINARY_MAGIC {
        return Err(Error::Version {
            path: path.into(),
            expected: String::from_utf8_lossy(BINARY_MAGIC).into_owned(),
            found: String::from_utf8_lossy(&bytes[..8]).into_owned(),
        });
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().expect("8-byte slice")) as usize;
    let body = &bytes[16..];
    if body.len() != n.saturating_mul(8) {
        return Err(Error::format(
            path,
            format!("header announces {n} samples but body holds {} bytes", body.len()),
        ));
    }
    let samples = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Signal::new(samples).map_err(|e| Error::format(path, e.to_string()))
}

pub fn read_signal(path: &Path) -> Result<Signal> {
    match SignalFormat::from_path(path)? {
        SignalFormat::Csv => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            decode_csv(path, &text)
        }
        SignalFormat::Binary => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            decode_binary(path, &bytes)
        }
        SignalFormat::Wav => crate::audio::ingest_wav(path),
    }
}

pub fn write_signal(path: &Path, signal: &Signal) -> Result<()> {
    match SignalFormat::from_path(path)? {
        SignalFormat::Csv => write_atomic(path, &encode_csv(signal)),
        SignalFormat::Binary => write_atomic(path, &encode_binary(signal)),
        SignalFormat::Wav => crate::audio::write_wav(path, signal, crate::audio::WavEncoding::Float32),
    }
}

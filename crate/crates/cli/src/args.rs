use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "lwpt", version, about = "Learnable wavelet packet transform denoising")]
pub struct Cli {
    /// TOML file with one table per sub-command; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a benchmark dataset of clean/noisy pairs.
    Generate(GenerateArgs),
    /// Train a model on a dataset or on freshly generated pairs.
    Train(TrainArgs),
    /// Denoise a signal file or every noisy signal of a dataset.
    Denoise(DenoiseArgs),
    /// Score a denoiser (or stored predictions) on a test dataset.
    Evaluate(EvaluateArgs),
    /// Cosine-probe gain map of a denoiser.
    Gainmap(GainmapArgs),
    /// Mix foreground and background recordings into a dataset.
    Mix(MixArgs),
    /// Split corpus classes into folds.
    Folds(FoldsArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Generate(_) => "generate",
            Command::Train(_) => "train",
            Command::Denoise(_) => "denoise",
            Command::Evaluate(_) => "evaluate",
            Command::Gainmap(_) => "gainmap",
            Command::Mix(_) => "mix",
            Command::Folds(_) => "folds",
        }
    }
}

/// Fills every `None` field of `$cli` from `$file`.
macro_rules! overlay {
    ($ty:ident { $($field:ident),* $(,)? }) => {
        impl $ty {
            pub fn overlay(mut self, file: $ty) -> $ty {
                $(
                    if self.$field.is_none() {
                        self.$field = file.$field;
                    }
                )*
                self
            }
        }
    };
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateArgs {
    /// block, bumps, heavisine or doppler.
    #[arg(long)]
    pub class: Option<String>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub sigma: Option<f64>,
    /// gaussian, uniform or laplace.
    #[arg(long)]
    pub family: Option<String>,
    /// Samples per signal (power of two).
    #[arg(long)]
    pub length: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// plus, minus, double or half, applied to the clean signal before corruption.
    #[arg(long)]
    pub modification: Option<String>,
    /// bin, csv or wav.
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

overlay!(GenerateArgs { class, count, sigma, family, length, seed, modification, format, out });

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainArgs {
    /// Dataset directory; without it pairs are generated on the fly.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub class: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long)]
    pub length: Option<usize>,
    #[arg(long)]
    pub samples_per_epoch: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub wavelet: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Epochs after which the learning rate drops tenfold; pass the flag with no values for none.
    #[arg(long, num_args = 0.., value_delimiter = ',')]
    pub lr_drops: Option<Vec<usize>>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write `model.epoch-<n>.lwpt` every this many epochs.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Continue from the newest checkpoint in the output directory.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub resume: Option<bool>,
    /// Store the mean norm of background windows of this length for automatic delta.
    #[arg(long)]
    pub reference_window: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

overlay!(TrainArgs {
    data,
    class,
    sigma,
    family,
    length,
    samples_per_epoch,
    layers,
    wavelet,
    learning_rate,
    batch_size,
    epochs,
    lr_drops,
    seed,
    checkpoint_every,
    resume,
    reference_window,
    out,
});

/// Which denoiser to run: a trained model, or the thresholding baseline.
#[derive(Debug, Default, Clone, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Use the hard-thresholding baseline instead of a model.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub baseline: Option<bool>,
    /// Pass signals through unchanged (a reference point for scores and gain maps).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub identity: Option<bool>,
    #[arg(long, allow_negative_numbers = true)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub wavelet: Option<String>,
    /// Multiply every model bias by this factor.
    #[arg(long, allow_negative_numbers = true)]
    pub delta: Option<f64>,
    /// Estimate delta from the leading background-only samples of each input.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub auto_delta: Option<bool>,
    #[arg(long)]
    pub leading: Option<usize>,
}

overlay!(MethodArgs { model, baseline, identity, lambda, layers, wavelet, delta, auto_delta, leading });

impl MethodArgs {
    pub fn is_unset(&self) -> bool {
        self.model.is_none()
            && self.baseline.is_none()
            && self.identity.is_none()
            && self.lambda.is_none()
            && self.layers.is_none()
            && self.wavelet.is_none()
            && self.delta.is_none()
            && self.auto_delta.is_none()
            && self.leading.is_none()
    }
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiseArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub method: MethodArgs,
    /// Signal file, or a dataset directory.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Signal file, or a directory receiving `<id>_denoised` files.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

impl DenoiseArgs {
    pub fn overlay(self, file: DenoiseArgs) -> DenoiseArgs {
        DenoiseArgs {
            method: self.method.overlay(file.method),
            input: self.input.or(file.input),
            output: self.output.or(file.output),
        }
    }
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub method: MethodArgs,
    /// Test dataset directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Score `<id>_denoised` files from this directory instead of running a denoiser.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Classes counted in S_p; defaults to the model's training classes.
    #[arg(long, value_delimiter = ',')]
    pub train_classes: Option<Vec<String>>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub per_class: Option<bool>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl EvaluateArgs {
    pub fn overlay(self, file: EvaluateArgs) -> EvaluateArgs {
        EvaluateArgs {
            method: self.method.overlay(file.method),
            data: self.data.or(file.data),
            predictions: self.predictions.or(file.predictions),
            train_classes: self.train_classes.or(file.train_classes),
            per_class: self.per_class.or(file.per_class),
            out: self.out.or(file.out),
        }
    }
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GainmapArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub method: MethodArgs,
    /// Number of amplitudes over [0, max_amplitude].
    #[arg(long)]
    pub amplitudes: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub max_amplitude: Option<f64>,
    /// Number of frequencies over [0, sample_rate / 2].
    #[arg(long)]
    pub frequencies: Option<usize>,
    #[arg(long)]
    pub length: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub sample_rate: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl GainmapArgs {
    pub fn overlay(self, file: GainmapArgs) -> GainmapArgs {
        GainmapArgs {
            method: self.method.overlay(file.method),
            amplitudes: self.amplitudes.or(file.amplitudes),
            max_amplitude: self.max_amplitude.or(file.max_amplitude),
            frequencies: self.frequencies.or(file.frequencies),
            length: self.length.or(file.length),
            sample_rate: self.sample_rate.or(file.sample_rate),
            out: self.out.or(file.out),
        }
    }
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixArgs {
    /// Corpus manifest CSV with columns path, role, class.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, allow_negative_numbers = true)]
    pub snr_db: Option<f64>,
    /// Use unnormalized backgrounds scaled by `background_gain`, with no SNR control.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub raw: Option<bool>,
    #[arg(long, allow_negative_numbers = true)]
    pub background_gain: Option<f64>,
    /// Background-only samples at the start of every mixture.
    #[arg(long)]
    pub leading: Option<usize>,
    /// Restrict foregrounds to these classes.
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<String>>,
    #[arg(long)]
    pub length: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub rate: Option<f64>,
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

overlay!(MixArgs {
    manifest,
    count,
    seed,
    snr_db,
    raw,
    background_gain,
    leading,
    classes,
    length,
    rate,
    format,
    out,
});

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FoldsArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Foreground classes to leave out before splitting.
    #[arg(long, value_delimiter = ',')]
    pub exclude: Option<Vec<String>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

overlay!(FoldsArgs { manifest, folds, seed, exclude, out });

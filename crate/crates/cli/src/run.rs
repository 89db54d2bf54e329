//! Sub-command implementations. Each fills unset options with their defaults
//! before running so the provenance record holds the fully resolved config.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use log::{info, warn};
use lwpt_core::audio::{self, Corpus, FoldPlan, MixSpec, Role};
use lwpt_core::bench::{ClassId, ClassSpec, Modification, NoiseFamily, NoiseSpec, PairRecipe};
use lwpt_core::dataset::{self, ManifestRow};
use lwpt_core::dsp::Wavelet;
use lwpt_core::eval::{self, Denoiser};
use lwpt_core::model::{self, LwptModel, ModelMeta};
use lwpt_core::seed;
use lwpt_core::shrinkage::HtConfig;
use lwpt_core::signal::{read_signal, write_atomic, write_signal, Signal, SignalFormat};
use lwpt_core::train::{self, FixedPairs, Pair, PairSource, StreamingPairs, TrainConfig, TrainState};

use crate::args::{
    DenoiseArgs, EvaluateArgs, FoldsArgs, GainmapArgs, GenerateArgs, MethodArgs, MixArgs, TrainArgs,
};
use crate::config::{write_provenance, PROVENANCE};
use crate::error::{required, CliError, Result};

const DEFAULT_LENGTH: usize = 8192;
const DEFAULT_LAYERS: usize = 5;
const DEFAULT_WAVELET: &str = "db4";
const DEFAULT_FAMILY: &str = "gaussian";
const DEFAULT_FORMAT: &str = "bin";
const DEFAULT_LEADING: usize = 2000;
const DEFAULT_CHECKPOINT_EVERY: usize = 50;
const TRAIN_CLASSES_KEY: &str = "train_classes";
const MODEL_FILE: &str = "model.lwpt";
const HISTORY_FILE: &str = "loss_history.csv";

fn parse_format(s: &str) -> Result<SignalFormat> {
    match s.to_ascii_lowercase().as_str() {
        "bin" | "binary" => Ok(SignalFormat::Binary),
        "csv" => Ok(SignalFormat::Csv),
        "wav" => Ok(SignalFormat::Wav),
        other => Err(CliError::Usage(format!("unknown signal format `{other}` (bin, csv or wav)"))),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub fn generate(mut a: GenerateArgs) -> Result<()> {
    let class: ClassId = required(a.class.as_deref(), "--class")?.parse()?;
    let count = required(a.count, "--count")?;
    let sigma = required(a.sigma, "--sigma")?;
    let seed = required(a.seed, "--seed")?;
    let family: NoiseFamily = a.family.get_or_insert_with(|| DEFAULT_FAMILY.into()).parse()?;
    let length = *a.length.get_or_insert(DEFAULT_LENGTH);
    let format = parse_format(a.format.get_or_insert_with(|| DEFAULT_FORMAT.into()))?;
    let out = a.out.get_or_insert_with(|| "dataset".into()).clone();
    let modification = a
        .modification
        .as_deref()
        .map(str::parse::<Modification>)
        .transpose()?;
    if count == 0 {
        return Err(usage("--count must be >= 1"));
    }
    // Reject bad specs before anything touches the disk.
    NoiseSpec::new(family, sigma, seed)?;
    ClassSpec::new(class, length, seed)?;

    let recipe = PairRecipe {
        class,
        length,
        family,
        sigma,
        modification,
    };
    let rows = dataset::generate_dataset(&out, &recipe, count, seed, format)?;
    write_provenance(&out.join(PROVENANCE), "generate", &a)?;
    info!("wrote {} {class} pairs to {}", rows.len(), out.display());
    Ok(())
}

fn checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("model.epoch-{epoch}.lwpt"))
}

/// Newest `model.epoch-<n>.lwpt` in `dir`.
fn latest_checkpoint(dir: &Path) -> Result<Option<PathBuf>> {
    let entries = match std::fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(CliError::io(dir, e)),
    };
    let mut best: Option<(usize, PathBuf)> = None;
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        let epoch = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("model.epoch-"))
            .and_then(|n| n.strip_suffix(".lwpt"))
            .and_then(|n| n.parse::<usize>().ok());
        if let Some(e) = epoch {
            if best.as_ref().is_none_or(|(b, _)| e > *b) {
                best = Some((e, path));
            }
        }
    }
    Ok(best.map(|(_, p)| p))
}

fn backgrounds(pairs: &[Pair]) -> Vec<Vec<f64>> {
    pairs
        .iter()
        .map(|(n, c)| n.iter().zip(c).map(|(a, b)| a - b).collect())
        .collect()
}

pub fn train(mut a: TrainArgs) -> Result<()> {
    let seed = required(a.seed, "--seed")?;
    let out = a.out.get_or_insert_with(|| "model".into()).clone();
    let layers = *a.layers.get_or_insert(DEFAULT_LAYERS);
    let wavelet: Wavelet = a.wavelet.get_or_insert_with(|| DEFAULT_WAVELET.into()).parse()?;
    let defaults = TrainConfig::default();
    let epochs = *a.epochs.get_or_insert(defaults.epochs);
    let learning_rate = *a.learning_rate.get_or_insert(defaults.learning_rate);
    let batch_size = *a.batch_size.get_or_insert(defaults.batch_size);
    let lr_drop_epochs = match &a.lr_drops {
        Some(d) => d.clone(),
        None => {
            let kept: Vec<usize> = defaults
                .lr_drop_epochs
                .iter()
                .copied()
                .filter(|&d| d <= epochs)
                .collect();
            if kept.len() != defaults.lr_drop_epochs.len() {
                info!(
                    "default learning-rate drops {:?} trimmed to {kept:?} for {epochs} epochs",
                    defaults.lr_drop_epochs
                );
            }
            a.lr_drops = Some(kept.clone());
            kept
        }
    };
    let checkpoint_every = *a.checkpoint_every.get_or_insert(DEFAULT_CHECKPOINT_EVERY);
    let resume = *a.resume.get_or_insert(false);
    let cfg = TrainConfig {
        learning_rate,
        batch_size,
        epochs,
        lr_drop_epochs,
        seed,
        samples_per_epoch: a.samples_per_epoch,
    };
    cfg.validate()?;

    let mut meta = ModelMeta {
        wavelet: Some(wavelet),
        ..ModelMeta::default()
    };
    let classes: BTreeSet<String>;
    let source: Box<dyn PairSource> = if let Some(dir) = &a.data {
        if a.class.is_some() || a.sigma.is_some() || a.family.is_some() || a.length.is_some() {
            return Err(usage("--data cannot be combined with --class, --sigma, --family or --length"));
        }
        let pairs = dataset::load_dataset(dir)?;
        classes = pairs.iter().map(|p| p.row.class.clone()).collect();
        let sigmas: BTreeSet<&str> = pairs.iter().map(|p| p.row.sigma.as_str()).collect();
        if let [only] = sigmas.into_iter().collect::<Vec<_>>()[..] {
            meta.train_sigma = only.parse().ok();
        }
        Box::new(FixedPairs::new(
            pairs
                .into_iter()
                .map(|p| (p.noisy.into_samples(), p.clean.into_samples()))
                .collect(),
        )?)
    } else {
        let class: ClassId = required(a.class.as_deref(), "--class (or --data)")?.parse()?;
        let sigma = required(a.sigma, "--sigma")?;
        let family: NoiseFamily = a.family.get_or_insert_with(|| DEFAULT_FAMILY.into()).parse()?;
        let length = *a.length.get_or_insert(DEFAULT_LENGTH);
        required(a.samples_per_epoch, "--samples-per-epoch (when pairs are generated on the fly)")?;
        NoiseSpec::new(family, sigma, seed)?;
        ClassSpec::new(class, length, seed)?;
        let recipe = PairRecipe {
            class,
            length,
            family,
            sigma,
            modification: None,
        };
        classes = BTreeSet::from([class.to_string()]);
        meta.train_sigma = Some(sigma);
        Box::new(StreamingPairs::new(move |s| {
            recipe.realize(s, 0).map(|p| (p.noisy, p.clean))
        }))
    };
    meta.extra.insert(
        TRAIN_CLASSES_KEY.into(),
        classes.into_iter().collect::<Vec<_>>().join(","),
    );

    if let Some(window) = a.reference_window {
        // Epoch 0 is never trained on; its draw is a fresh sample of the training distribution.
        let pairs = source.epoch_pairs(seed, 0, cfg.samples_per_epoch)?;
        let mut rng = seed::rng(seed, seed::stream::REFERENCE, 0);
        let norm = audio::background_reference_norm(
            &backgrounds(&pairs),
            window,
            audio::REFERENCE_WINDOWS,
            &mut rng,
        )?;
        info!("background reference norm over {window}-sample windows: {norm:.6}");
        meta.background_reference_norm = Some(norm);
        meta.background_reference_window = Some(window);
    }

    create_dir(&out)?;
    write_provenance(&out.join(PROVENANCE), "train", &a)?;

    let fresh = LwptModel::init_from_wavelet(layers, wavelet)?;
    let mut start = None;
    if resume {
        match latest_checkpoint(&out)? {
            Some(path) => {
                let (m, _, state) = train::load_checkpoint(&path)?;
                if m.layers() != fresh.layers() || m.kernel_len() != fresh.kernel_len() {
                    return Err(usage(format!(
                        "checkpoint {} has {} layers and kernel length {}, run asks for {} and {}",
                        path.display(),
                        m.layers(),
                        m.kernel_len(),
                        fresh.layers(),
                        fresh.kernel_len()
                    )));
                }
                info!("resuming from {} after epoch {}", path.display(), state.epoch);
                start = Some((m, state));
            }
            None => warn!("no checkpoint in {}; starting from scratch", out.display()),
        }
    }
    let (model, state) = start.unwrap_or_else(|| {
        let state = TrainState::fresh(&fresh);
        (fresh, state)
    });
    info!("training {} parameters for {epochs} epochs", model.param_count());

    let history_path = out.join(HISTORY_FILE);
    let outcome = train::train_from(model, state, &*source, &cfg, |m, st| {
        if let Some(rec) = st.history.last() {
            info!(
                "epoch {} loss {:.6} lr {}",
                rec.epoch, rec.mean_loss, rec.learning_rate
            );
        }
        if checkpoint_every > 0 && st.epoch % checkpoint_every == 0 {
            let meta = ModelMeta {
                epoch: Some(st.epoch),
                ..meta.clone()
            };
            train::save_checkpoint(&checkpoint_path(&out, st.epoch), m, &meta, st)?;
            train::write_history(&history_path, &st.history)?;
        }
        Ok(())
    })?;

    train::write_history(&history_path, &outcome.state.history)?;
    meta.epoch = Some(outcome.state.epoch);
    if let Some(reason) = outcome.diverged {
        let path = checkpoint_path(&out, outcome.state.epoch);
        train::save_checkpoint(&path, &outcome.model, &meta, &outcome.state)?;
        return Err(CliError::Runtime(format!(
            "training diverged ({reason}); last finite state saved to {}",
            path.display()
        )));
    }
    let model_path = out.join(MODEL_FILE);
    model::save_model(&model_path, &outcome.model, &meta)?;
    info!(
        "saved {} ({} parameters)",
        model_path.display(),
        outcome.model.param_count()
    );
    Ok(())
}

enum Kind {
    Identity,
    Baseline(HtConfig),
    Model(LwptModel),
}

/// A resolved denoiser plus its delta policy.
struct Method {
    kind: Kind,
    meta: ModelMeta,
    delta: Option<f64>,
    /// Leading window for automatic delta, with the model's reference norm.
    auto: Option<(usize, f64)>,
}

impl Denoiser for Method {
    fn denoise(&self, x: &[f64]) -> lwpt_core::Result<Vec<f64>> {
        match &self.kind {
            Kind::Identity => Ok(x.to_vec()),
            Kind::Baseline(cfg) => cfg.denoise(x),
            Kind::Model(m) => {
                let delta = match self.auto {
                    Some((leading, reference)) => {
                        let d = audio::estimate_delta(x, leading, reference)?;
                        info!("estimated delta {d:.6}");
                        Some(d)
                    }
                    None => self.delta,
                };
                match delta {
                    Some(d) => m.delta_modify(d)?.denoise(x),
                    None => m.denoise(x),
                }
            }
        }
    }
}

fn resolve_method(a: &mut MethodArgs, allow_auto: bool) -> Result<Method> {
    let baseline = a.baseline.unwrap_or(false);
    let identity = a.identity.unwrap_or(false);
    let chosen = [a.model.is_some(), baseline, identity].iter().filter(|b| **b).count();
    if chosen != 1 {
        return Err(usage("choose exactly one of --model, --baseline or --identity"));
    }
    let auto = a.auto_delta.unwrap_or(false);
    if auto && a.delta.is_some() {
        return Err(usage("--delta and --auto-delta are mutually exclusive"));
    }
    if auto && !allow_auto {
        return Err(usage("--auto-delta is not available for this command"));
    }
    if a.leading.is_some() && !auto {
        return Err(usage("--leading only applies with --auto-delta"));
    }
    let mut meta = ModelMeta::default();
    let kind = if let Some(path) = &a.model {
        if a.lambda.is_some() || a.layers.is_some() || a.wavelet.is_some() {
            return Err(usage("--lambda, --layers and --wavelet only apply to --baseline"));
        }
        let (m, m_meta) = model::load_model(path)?;
        meta = m_meta;
        Kind::Model(m)
    } else {
        if a.delta.is_some() || auto {
            return Err(usage("delta scaling needs a trained --model"));
        }
        if baseline {
            let lambda = required(a.lambda, "--lambda")?;
            let layers = *a.layers.get_or_insert(DEFAULT_LAYERS);
            let wavelet: Wavelet = a.wavelet.get_or_insert_with(|| DEFAULT_WAVELET.into()).parse()?;
            Kind::Baseline(HtConfig::new(lambda, layers, wavelet)?)
        } else {
            if a.lambda.is_some() || a.layers.is_some() || a.wavelet.is_some() {
                return Err(usage("--lambda, --layers and --wavelet only apply to --baseline"));
            }
            Kind::Identity
        }
    };
    let auto = if auto {
        let leading = *a.leading.get_or_insert(DEFAULT_LEADING);
        let reference = meta.background_reference_norm.ok_or_else(|| {
            usage("model has no background reference norm; train it with --reference-window")
        })?;
        if let Some(w) = meta.background_reference_window {
            if w != leading {
                warn!("reference norm was measured over {w}-sample windows, estimating over {leading}");
            }
        }
        Some((leading, reference))
    } else {
        None
    };
    Ok(Method {
        kind,
        meta,
        delta: a.delta,
        auto,
    })
}

fn denoise_signal(method: &Method, x: &Signal) -> Result<Signal> {
    let mut y = Signal::new(method.denoise(x.samples())?)?;
    y.set_sample_rate(x.sample_rate_hz());
    Ok(y)
}

pub fn denoise(mut a: DenoiseArgs) -> Result<()> {
    let input = required(a.input.clone(), "--input")?;
    let output = required(a.output.clone(), "--output")?;
    let method = resolve_method(&mut a.method, true)?;
    if input.is_dir() {
        let rows = dataset::read_manifest(&input)?;
        create_dir(&output)?;
        for row in &rows {
            let path = dataset::find_signal(&input, &row.id, "noisy")?;
            let ext = SignalFormat::from_path(&path)?.extension();
            let y = denoise_signal(&method, &read_signal(&path)?)?;
            write_signal(&output.join(format!("{}_denoised.{ext}", row.id)), &y)?;
        }
        write_provenance(&output.join(PROVENANCE), "denoise", &a)?;
        info!("denoised {} signals into {}", rows.len(), output.display());
    } else {
        SignalFormat::from_path(&output)?;
        let y = denoise_signal(&method, &read_signal(&input)?)?;
        write_signal(&output, &y)?;
        let record = PathBuf::from(format!("{}.{PROVENANCE}", output.display()));
        write_provenance(&record, "denoise", &a)?;
        info!("wrote {}", output.display());
    }
    Ok(())
}

/// Classes counted as in-distribution: explicit flag, else the model's record, else all.
fn resolve_trained<V>(
    flag: &mut Option<Vec<String>>,
    meta: &ModelMeta,
    sets: &BTreeMap<String, V>,
) -> BTreeSet<String> {
    if flag.is_none() {
        let from_meta = meta
            .extra
            .get(TRAIN_CLASSES_KEY)
            .map(|s| s.split(',').filter(|c| !c.is_empty()).map(String::from).collect());
        *flag = Some(from_meta.unwrap_or_else(|| {
            warn!("no training classes known; scoring every class as in-distribution");
            sets.keys().cloned().collect()
        }));
    }
    flag.iter().flatten().cloned().collect()
}

pub fn evaluate(mut a: EvaluateArgs) -> Result<()> {
    let data = required(a.data.clone(), "--data")?;
    let out = a.out.get_or_insert_with(|| ".".into()).clone();
    let per_class = *a.per_class.get_or_insert(false);
    let pairs = dataset::load_dataset(&data)?;
    let report = if let Some(pred) = a.predictions.clone() {
        if !a.method.is_unset() {
            return Err(usage("--predictions cannot be combined with a denoiser"));
        }
        let mut sets: BTreeMap<String, Vec<(Vec<f64>, Vec<f64>)>> = BTreeMap::new();
        for p in pairs {
            let y = read_signal(&dataset::find_signal(&pred, &p.row.id, "denoised")?)?;
            sets.entry(p.row.class)
                .or_default()
                .push((y.into_samples(), p.clean.into_samples()));
        }
        let trained = resolve_trained(&mut a.train_classes, &ModelMeta::default(), &sets);
        eval::score_predictions(&sets, &trained)?
    } else {
        let method = resolve_method(&mut a.method, true)?;
        let mut sets: BTreeMap<String, Vec<(Vec<f64>, Vec<f64>)>> = BTreeMap::new();
        for p in pairs {
            sets.entry(p.row.class)
                .or_default()
                .push((p.noisy.into_samples(), p.clean.into_samples()));
        }
        let trained = resolve_trained(&mut a.train_classes, &method.meta, &sets);
        eval::score(&method, &sets, &trained)?
    };
    let expected = (report.s_p + 3.0 * report.s_r) / 4.0;
    if (report.s_bar - expected).abs() > 1e-12 * expected.abs().max(1.0) {
        return Err(CliError::Runtime(format!(
            "inconsistent mean score {} (expected {expected})",
            report.s_bar
        )));
    }
    create_dir(&out)?;
    write_atomic(&out.join("scores.csv"), report.to_csv(per_class).as_bytes())?;
    write_provenance(&out.join(PROVENANCE), "evaluate", &a)?;
    print!("{}", report.to_table(per_class));
    Ok(())
}

pub fn gainmap(mut a: GainmapArgs) -> Result<()> {
    let method = resolve_method(&mut a.method, false)?;
    let n_amp = *a.amplitudes.get_or_insert(16);
    let max_amp = *a.max_amplitude.get_or_insert(1.5);
    let n_freq = *a.frequencies.get_or_insert(65);
    let length = *a.length.get_or_insert(DEFAULT_LENGTH);
    let fs = *a.sample_rate.get_or_insert(8192.0);
    let out = a.out.get_or_insert_with(|| ".".into()).clone();
    if n_amp == 0 || n_freq == 0 {
        return Err(usage("--amplitudes and --frequencies must be >= 1"));
    }
    if !(max_amp.is_finite() && max_amp >= 0.0) {
        return Err(usage("--max-amplitude must be finite and non-negative"));
    }
    let amps = eval::linear_grid(0.0, max_amp, n_amp);
    let freqs = eval::linear_grid(0.0, fs / 2.0, n_freq);
    let map = eval::gain_map(&method, &amps, &freqs, length, fs)?;
    create_dir(&out)?;
    write_atomic(&out.join("gainmap.csv"), map.to_csv().as_bytes())?;
    write_provenance(&out.join(PROVENANCE), "gainmap", &a)?;
    info!("wrote {n_amp} x {n_freq} gain map to {}", out.display());
    Ok(())
}

pub fn mix(mut a: MixArgs) -> Result<()> {
    let manifest = required(a.manifest.clone(), "--manifest")?;
    let count = required(a.count, "--count")?;
    let seed = required(a.seed, "--seed")?;
    let raw = *a.raw.get_or_insert(false);
    let gain = *a.background_gain.get_or_insert(1.0);
    let leading = *a.leading.get_or_insert(0);
    let length = *a.length.get_or_insert(DEFAULT_LENGTH);
    let rate = *a.rate.get_or_insert(8000.0);
    let format = parse_format(a.format.get_or_insert_with(|| DEFAULT_FORMAT.into()))?;
    let classes = a.classes.get_or_insert_with(Vec::new).clone();
    let out = a.out.get_or_insert_with(|| "mixture".into()).clone();
    if count == 0 {
        return Err(usage("--count must be >= 1"));
    }
    let spec = if raw {
        if a.snr_db.is_some() {
            return Err(usage("--snr-db has no effect with --raw"));
        }
        MixSpec {
            target_length: length,
            target_rate: rate,
            ..MixSpec::raw_background(gain, leading)
        }
    } else {
        MixSpec {
            target_length: length,
            target_rate: rate,
            snr_db: Some(*a.snr_db.get_or_insert(0.0)),
            background_gain: gain,
            leading_background_samples: leading,
            ..MixSpec::default()
        }
    };
    spec.validate()?;

    let entries = audio::read_corpus_manifest(&manifest)?;
    let corpus = Corpus::load(&entries, rate, &classes)?;
    create_dir(&out)?;
    let level = spec.snr_db.map_or_else(|| "raw".to_string(), |s| s.to_string());
    let mut rows = Vec::with_capacity(count);
    for i in 0..count {
        let (class, pair) = corpus.mix_pair(&spec, seed, i as u64)?;
        let id = dataset::pair_id(i);
        dataset::write_pair(&out, &id, &pair.noisy, &pair.clean, format)?;
        rows.push(ManifestRow {
            id,
            class,
            sigma: level.clone(),
            family: "background".into(),
            seed,
        });
    }
    dataset::write_manifest(&out, &rows)?;
    write_provenance(&out.join(PROVENANCE), "mix", &a)?;
    info!("wrote {count} mixtures to {}", out.display());
    Ok(())
}

pub fn folds(mut a: FoldsArgs) -> Result<()> {
    let manifest = required(a.manifest.clone(), "--manifest")?;
    let seed = required(a.seed, "--seed")?;
    let n = *a.folds.get_or_insert(FoldPlan::default().folds);
    let exclude = a.exclude.get_or_insert_with(Vec::new).clone();
    let out = a.out.get_or_insert_with(|| ".".into()).clone();
    let labels: BTreeSet<String> = audio::read_corpus_manifest(&manifest)?
        .into_iter()
        .filter(|e| e.role == Role::Foreground && !exclude.contains(&e.class))
        .map(|e| e.class)
        .collect();
    let labels: Vec<String> = labels.into_iter().collect();
    let folds = audio::make_folds(&labels, &FoldPlan { folds: n, seed })?;
    let mut text = String::from("fold,class\n");
    for (i, fold) in folds.iter().enumerate() {
        for class in fold {
            text.push_str(&format!("{i},{class}\n"));
        }
    }
    create_dir(&out)?;
    write_atomic(&out.join("folds.csv"), text.as_bytes())?;
    write_provenance(&out.join(PROVENANCE), "folds", &a)?;
    info!("split {} classes into {n} folds", labels.len());
    Ok(())
}

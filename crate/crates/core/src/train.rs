//! Loss, reverse-mode gradients, Adam and the epoch loop.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{decode_model, encode_model, eta_with_partials, LwptModel, ModelMeta};
use crate::seed;
use crate::signal::{squared_distance, write_atomic};

pub type Pair = (Vec<f64>, Vec<f64>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs after which the rate is divided by 10 (1-based).
    pub lr_drop_epochs: Vec<usize>,
    pub seed: u64,
    /// Pairs drawn per epoch; `None` means one pass over a fixed dataset.
    pub samples_per_epoch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.0005,
            batch_size: 8,
            epochs: 500,
            lr_drop_epochs: vec![350, 450],
            seed: 0,
            samples_per_epoch: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Parameter(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch size must be >= 1".into()));
        }
        if self.samples_per_epoch == Some(0) {
            return Err(Error::Parameter("samples per epoch must be >= 1".into()));
        }
        if let Some(&d) = self
            .lr_drop_epochs
            .iter()
            .find(|&&d| d == 0 || d > self.epochs)
        {
            return Err(Error::Parameter(format!(
                "learning-rate drop at epoch {d} is outside 1..={}",
                self.epochs
            )));
        }
        Ok(())
    }

    /// Rate in force during 1-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = self.lr_drop_epochs.iter().filter(|&&d| epoch > d).count();
        self.learning_rate / 10f64.powi(drops as i32)
    }
}

/// Partials with the model's `theta[l - 1][i][k]`, `beta[l - 1][i][k]`, `gamma[l - 1][i]` layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub theta: Vec<Vec<Vec<f64>>>,
    pub beta: Vec<Vec<Vec<f64>>>,
    pub gamma: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(m: &LwptModel) -> Self {
        let zeros = |g: &[Vec<Vec<f64>>]| -> Vec<Vec<Vec<f64>>> {
            g.iter()
                .map(|layer| layer.iter().map(|k| vec![0.0; k.len()]).collect())
                .collect()
        };
        Self {
            theta: zeros(m.theta_layers()),
            beta: zeros(m.beta_layers()),
            gamma: m.gamma_layers().iter().map(|l| vec![0.0; l.len()]).collect(),
        }
    }

    /// Same order as [`LwptModel::flatten`].
    pub fn flatten(&self) -> Vec<f64> {
        self.theta
            .iter()
            .flatten()
            .flatten()
            .chain(self.beta.iter().flatten().flatten())
            .chain(self.gamma.iter().flatten())
            .copied()
            .collect()
    }

    fn check_finite(&self) -> Result<()> {
        for (name, group) in [("theta", &self.theta), ("beta", &self.beta)] {
            for (l, layer) in group.iter().enumerate() {
                for (i, k) in layer.iter().enumerate() {
                    if let Some(t) = k.iter().position(|v| !v.is_finite()) {
                        return Err(Error::Numerical(format!(
                            "gradient of {name} layer {} node {i} tap {t} is {}",
                            l + 1,
                            k[t]
                        )));
                    }
                }
            }
        }
        for (l, layer) in self.gamma.iter().enumerate() {
            if let Some(i) = layer.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!(
                    "gradient of gamma layer {} node {i} is {}",
                    l + 1,
                    layer[i]
                )));
            }
        }
        Ok(())
    }
}

fn check_pair(noisy: &[f64], clean: &[f64]) -> Result<()> {
    if noisy.len() != clean.len() {
        return Err(Error::Shape(format!(
            "noisy input has {} samples, target has {}",
            noisy.len(),
            clean.len()
        )));
    }
    Ok(())
}

/// `sum_n ||decode(encode(noisy_n)) - clean_n||^2`.
pub fn loss<N: AsRef<[f64]>, C: AsRef<[f64]>>(m: &LwptModel, batch: &[(N, C)]) -> Result<f64> {
    let mut total = 0.0;
    for (noisy, clean) in batch {
        check_pair(noisy.as_ref(), clean.as_ref())?;
        total += squared_distance(&m.denoise(noisy.as_ref())?, clean.as_ref());
    }
    Ok(total)
}

/// Loss and its exact partials with respect to every kernel tap and bias.
pub fn backward<N: AsRef<[f64]>, C: AsRef<[f64]>>(
    m: &LwptModel,
    batch: &[(N, C)],
) -> Result<(f64, Gradients)> {
    let mut grads = Gradients::zeros_like(m);
    let mut total = 0.0;
    for (noisy, clean) in batch {
        total += accumulate_sample(m, noisy.as_ref(), clean.as_ref(), &mut grads)?;
    }
    if !total.is_finite() {
        return Err(Error::Numerical(format!("loss is {total}")));
    }
    grads.check_finite()?;
    Ok((total, grads))
}

fn accumulate_sample(m: &LwptModel, x: &[f64], s: &[f64], grads: &mut Gradients) -> Result<f64> {
    check_pair(x, s)?;
    let layers = m.layers();
    let kernel_len = m.kernel_len();
    let acts = m.encode(x)?;
    let trace = m.decode_trace(&acts)?;
    let out = &trace[0][0];
    let sample_loss = squared_distance(out, s);

    // Decoder: out[(2n + K' + k) mod len] += beta[k] y[n] with K' = -K mod len.
    let mut g_nodes: Vec<Vec<f64>> = vec![out.iter().zip(s).map(|(o, t)| 2.0 * (o - t)).collect()];
    for l in 0..layers {
        let children = &trace[l + 1];
        let child_len = children[0].len();
        let n_out = 2 * child_len;
        let base = n_out * ((kernel_len - 1) / n_out + 1) - (kernel_len - 1);
        let mut g_children = vec![vec![0.0; child_len]; children.len()];
        for (i, g_out) in g_nodes.iter().enumerate() {
            for c in [2 * i, 2 * i + 1] {
                let beta = m.beta(l + 1, c);
                let y = &children[c];
                let g_beta = &mut grads.beta[l][c];
                let g_y = &mut g_children[c];
                for n in 0..child_len {
                    let mut acc = 0.0;
                    for (k, &bk) in beta.iter().enumerate() {
                        let g = g_out[(2 * n + base + k) % n_out];
                        acc += bk * g;
                        g_beta[k] += y[n] * g;
                    }
                    g_y[n] += acc;
                }
            }
        }
        g_nodes = g_children;
    }

    // Encoder, deepest layer first; g_nodes now holds d loss / d post[L - 1].
    for l in (1..=layers).rev() {
        let parent_len = if l == 1 { x.len() } else { acts.post[l - 2][0].len() };
        let mut g_parents = vec![vec![0.0; parent_len]; if l == 1 { 0 } else { 1 << (l - 1) }];
        for (i, g_post) in g_nodes.iter().enumerate() {
            let gamma = m.gamma(l, i);
            let pre = &acts.pre[l - 1][i];
            let mut g_pre = vec![0.0; pre.len()];
            let mut g_gamma = 0.0;
            for n in 0..pre.len() {
                let (_, dx, dg) = eta_with_partials(pre[n], gamma);
                g_pre[n] = g_post[n] * dx;
                g_gamma += g_post[n] * dg;
            }
            grads.gamma[l - 1][i] += g_gamma;
            let parent: &[f64] = if l == 1 { x } else { &acts.post[l - 2][i / 2] };
            let theta = m.theta(l, i);
            let g_theta = &mut grads.theta[l - 1][i];
            for (n, &gp) in g_pre.iter().enumerate() {
                if gp == 0.0 {
                    continue;
                }
                for (k, &tk) in theta.iter().enumerate() {
                    let idx = (2 * n + parent_len * (k / parent_len + 1) - k) % parent_len;
                    g_theta[k] += gp * parent[idx];
                    if l > 1 {
                        g_parents[i / 2][idx] += tk * gp;
                    }
                }
            }
        }
        g_nodes = g_parents;
    }
    Ok(sample_loss)
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates in flattened parameter order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(param_count: usize) -> Self {
        Self {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            t: 0,
        }
    }
}

pub fn adam_step(state: &mut AdamState, model: &mut LwptModel, g: &Gradients, lr: f64) -> Result<()> {
    let flat = g.flatten();
    if flat.len() != state.m.len() || flat.len() != model.param_count() {
        return Err(Error::Shape(format!(
            "optimizer holds {} moments, gradient has {}, model has {}",
            state.m.len(),
            flat.len(),
            model.param_count()
        )));
    }
    state.t += 1;
    let c1 = 1.0 - ADAM_BETA1.powf(state.t as f64);
    let c2 = 1.0 - ADAM_BETA2.powf(state.t as f64);
    for (((p, gi), m), v) in model
        .params_mut()
        .zip(&flat)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * gi;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * gi * gi;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
    Ok(())
}

/// Supplies the training pairs of one epoch, deterministically given seed and epoch.
pub trait PairSource {
    fn epoch_pairs(&self, seed: u64, epoch: usize, samples_per_epoch: Option<usize>) -> Result<Vec<Pair>>;
}

/// A fixed dataset visited in a fresh seeded order each epoch.
#[derive(Debug, Clone)]
pub struct FixedPairs {
    pairs: Vec<Pair>,
}

impl FixedPairs {
    pub fn new(pairs: Vec<Pair>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Parameter("training set is empty".into()));
        }
        for (n, c) in &pairs {
            check_pair(n, c)?;
        }
        Ok(Self { pairs })
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }
}

impl PairSource for FixedPairs {
    fn epoch_pairs(&self, seed: u64, epoch: usize, samples_per_epoch: Option<usize>) -> Result<Vec<Pair>> {
        let mut rng = seed::rng(seed, seed::stream::EPOCH, epoch as u64);
        let want = samples_per_epoch.unwrap_or(self.pairs.len());
        let mut out = Vec::with_capacity(want);
        let mut order: Vec<usize> = (0..self.pairs.len()).collect();
        while out.len() < want {
            order.shuffle(&mut rng);
            out.extend(order.iter().take(want - out.len()).map(|&i| self.pairs[i].clone()));
        }
        Ok(out)
    }
}

/// Fresh pairs every epoch from a generator indexed by a derived seed.
pub struct StreamingPairs<F> {
    generate: F,
}

impl<F: Fn(u64) -> Result<Pair>> StreamingPairs<F> {
    pub fn new(generate: F) -> Self {
        Self { generate }
    }
}

impl<F: Fn(u64) -> Result<Pair>> PairSource for StreamingPairs<F> {
    fn epoch_pairs(&self, seed: u64, epoch: usize, samples_per_epoch: Option<usize>) -> Result<Vec<Pair>> {
        let count = samples_per_epoch
            .ok_or_else(|| Error::Parameter("streaming sources need samples_per_epoch".into()))?;
        let epoch_seed = seed::derive(seed, seed::stream::EPOCH, epoch as u64);
        (0..count)
            .map(|j| (self.generate)(seed::derive(epoch_seed, seed::stream::CLEAN, j as u64)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub learning_rate: f64,
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub epoch: usize,
    pub adam: AdamState,
    pub history: Vec<EpochRecord>,
}

impl TrainState {
    pub fn fresh(m: &LwptModel) -> Self {
        Self {
            epoch: 0,
            adam: AdamState::new(m.param_count()),
            history: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// The final model, or the last finite one when training diverged.
    pub model: LwptModel,
    pub state: TrainState,
    pub diverged: Option<String>,
}

/// Runs epochs `state.epoch + 1 ..= cfg.epochs`, calling `on_epoch` after each.
pub fn train_from<S, F>(
    model: LwptModel,
    mut state: TrainState,
    source: &S,
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainOutcome>
where
    S: PairSource + ?Sized,
    F: FnMut(&LwptModel, &TrainState) -> Result<()>,
{
    cfg.validate()?;
    if state.adam.m.len() != model.param_count() {
        return Err(Error::Shape("optimizer state does not match the model".into()));
    }
    let mut model = model;
    while state.epoch < cfg.epochs {
        let epoch = state.epoch + 1;
        let lr = cfg.lr_at(epoch);
        let pairs = source.epoch_pairs(cfg.seed, epoch, cfg.samples_per_epoch)?;
        if pairs.is_empty() {
            return Err(Error::Parameter("data source produced no pairs".into()));
        }
        let snapshot = (model.clone(), state.clone());
        let mut epoch_loss = 0.0;
        for batch in pairs.chunks(cfg.batch_size) {
            let step = backward(&model, batch)
                .and_then(|(l, g)| adam_step(&mut state.adam, &mut model, &g, lr).map(|_| l));
            match step {
                Ok(l) if model.flatten().iter().all(|v| v.is_finite()) => epoch_loss += l,
                Ok(_) | Err(Error::Numerical(_)) => {
                    let reason = match step {
                        Err(e) => e.to_string(),
                        _ => format!("parameters became non-finite at epoch {epoch}"),
                    };
                    return Ok(TrainOutcome {
                        model: snapshot.0,
                        state: snapshot.1,
                        diverged: Some(reason),
                    });
                }
                Err(e) => return Err(e),
            }
        }
        state.epoch = epoch;
        state.history.push(EpochRecord {
            epoch,
            mean_loss: epoch_loss / pairs.len() as f64,
            learning_rate: lr,
        });
        on_epoch(&model, &state)?;
    }
    Ok(TrainOutcome {
        model,
        state,
        diverged: None,
    })
}

pub fn train<S: PairSource + ?Sized>(
    m0: LwptModel,
    source: &S,
    cfg: &TrainConfig,
) -> Result<(LwptModel, Vec<EpochRecord>)> {
    let state = TrainState::fresh(&m0);
    let out = train_from(m0, state, source, cfg, |_, _| Ok(()))?;
    if let Some(reason) = out.diverged {
        return Err(Error::Numerical(format!("training diverged: {reason}")));
    }
    Ok((out.model, out.state.history))
}

/// Checkpoint file: the model format with the optimizer state attached.
pub fn save_checkpoint(path: &Path, m: &LwptModel, meta: &ModelMeta, state: &TrainState) -> Result<()> {
    write_atomic(path, encode_model(m, meta, Some(state)).as_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<(LwptModel, ModelMeta, TrainState)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (m, meta, state) = decode_model::<TrainState>(path, &text)?;
    let state = state.ok_or_else(|| Error::format(path, "file holds no training state"))?;
    if state.adam.m.len() != m.param_count() || state.adam.v.len() != m.param_count() {
        return Err(Error::format(path, "optimizer state does not match the model"));
    }
    Ok((m, meta, state))
}

pub fn encode_history(history: &[EpochRecord]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in history {
        w.serialize(r).expect("in-memory CSV write");
    }
    w.into_inner().expect("in-memory CSV flush")
}

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    write_atomic(path, &encode_history(history))
}

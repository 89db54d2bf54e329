//! The learnable packet-transform autoencoder.
//!
//! The encoder mirrors the analysis tree: node `i` of layer `l` convolves its
//! parent `floor(i / 2)` with its own kernel `theta[l][i]` (stride 2) and
//! passes the result through the double sharp sigmoid [`eta`] with its own
//! bias `gamma[l][i]`. The decoder mirrors the synthesis tree with its own
//! kernels `beta[l][i]` and no activation. Only the deepest encoder layer is
//! read by the decoder.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dsp::{
    alternating_flip, check_layer_divisibility, conv_stride2, paraconjugate, upsample_conv_add,
    FilterKernel, Wavelet, WptTree,
};
use crate::error::{Error, Result};
use crate::signal::write_atomic;

/// Exponent arguments of the logistic terms are clamped to this magnitude.
pub const EXPONENT_CLAMP: f64 = 500.0;

/// Steepness of the logistic transitions in [`eta`].
pub const SHARPNESS: f64 = 10.0;

pub const MODEL_MAGIC: &str = "LWPT-MODEL-v1";

fn logistic(z: f64) -> f64 {
    let z = z.clamp(-EXPONENT_CLAMP, EXPONENT_CLAMP);
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Double sharp sigmoid: `x * [1/(1+e^{10(x+g)}) + 1/(1+e^{-10(x-g)})]`.
pub fn eta(x: f64, gamma: f64) -> f64 {
    if gamma == 0.0 {
        // The two logistic terms are complementary.
        return x;
    }
    x * (logistic(-SHARPNESS * (x + gamma)) + logistic(SHARPNESS * (x - gamma)))
}

/// Value of [`eta`] and its partials with respect to `x` and `gamma`.
pub fn eta_with_partials(x: f64, gamma: f64) -> (f64, f64, f64) {
    let lo = logistic(-SHARPNESS * (x + gamma));
    let hi = logistic(SHARPNESS * (x - gamma));
    let d_lo = lo * (1.0 - lo);
    let d_hi = hi * (1.0 - hi);
    let value = if gamma == 0.0 { x } else { x * (lo + hi) };
    let dx = (lo + hi) + x * SHARPNESS * (d_hi - d_lo);
    let dgamma = -x * SHARPNESS * (d_lo + d_hi);
    (value, dx, dgamma)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LwptModel {
    layers: usize,
    kernel_len: usize,
    theta: Vec<Vec<Vec<f64>>>,
    beta: Vec<Vec<Vec<f64>>>,
    gamma: Vec<Vec<f64>>,
}

/// Number of trainable parameters for `layers` layers of `kernel_len`-tap kernels.
pub fn param_count_for(layers: usize, kernel_len: usize) -> usize {
    let nodes: usize = (1..=layers).map(|l| 1usize << l).sum();
    2 * nodes * kernel_len + nodes
}

impl LwptModel {
    /// Assembles a model from per-layer parameter arrays, `theta[l - 1][i]` etc.
    pub fn from_parts(
        theta: Vec<Vec<Vec<f64>>>,
        beta: Vec<Vec<Vec<f64>>>,
        gamma: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let layers = theta.len();
        if layers == 0 {
            return Err(Error::Shape("model needs at least one layer".into()));
        }
        if beta.len() != layers || gamma.len() != layers {
            return Err(Error::Shape(format!(
                "layer counts disagree: theta {layers}, beta {}, gamma {}",
                beta.len(),
                gamma.len()
            )));
        }
        let kernel_len = theta[0].first().map_or(0, Vec::len);
        if kernel_len < 2 || !kernel_len.is_multiple_of(2) {
            return Err(Error::Shape(format!(
                "kernel length must be even and >= 2, got {kernel_len}"
            )));
        }
        for l in 1..=layers {
            let nodes = 1usize << l;
            for (name, group) in [("theta", &theta[l - 1]), ("beta", &beta[l - 1])] {
                if group.len() != nodes {
                    return Err(Error::Shape(format!(
                        "{name} layer {l} has {} kernels, expected {nodes}",
                        group.len()
                    )));
                }
                for (i, k) in group.iter().enumerate() {
                    if k.len() != kernel_len {
                        return Err(Error::Shape(format!(
                            "{name} layer {l} node {i} has {} taps, expected {kernel_len}",
                            k.len()
                        )));
                    }
                    if k.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Parameter(format!(
                            "{name} layer {l} node {i} has non-finite taps"
                        )));
                    }
                }
            }
            if gamma[l - 1].len() != nodes {
                return Err(Error::Shape(format!(
                    "gamma layer {l} has {} biases, expected {nodes}",
                    gamma[l - 1].len()
                )));
            }
            if gamma[l - 1].iter().any(|v| !v.is_finite()) {
                return Err(Error::Parameter(format!("gamma layer {l} has non-finite biases")));
            }
        }
        Ok(Self {
            layers,
            kernel_len,
            theta,
            beta,
            gamma,
        })
    }

    /// Initialization that reproduces the standard packet transform.
    ///
    /// Encoder kernels are `h` (even nodes) and `flip(h)` (odd nodes); decoder
    /// kernels are their paraconjugates `reverse(h)` and `reverse(flip(h))`;
    /// every bias is zero.
    pub fn init_wpt(layers: usize, kernel_len: usize, h_pr: &FilterKernel) -> Result<Self> {
        if !h_pr.is_conjugate_mirror() {
            return Err(Error::Parameter(
                "initialization kernel must be a conjugate mirror filter".into(),
            ));
        }
        if h_pr.len() != kernel_len {
            return Err(Error::Parameter(format!(
                "kernel length {kernel_len} does not match the {}-tap initialization kernel",
                h_pr.len()
            )));
        }
        if layers == 0 {
            return Err(Error::Parameter("layer count must be >= 1".into()));
        }
        let enc_even = h_pr.taps().to_vec();
        let enc_odd = alternating_flip(&enc_even);
        let dec_even = paraconjugate(&enc_even);
        let dec_odd = paraconjugate(&enc_odd);
        let pick = |even: &Vec<f64>, odd: &Vec<f64>, i: usize| {
            if i.is_multiple_of(2) {
                even.clone()
            } else {
                odd.clone()
            }
        };
        let theta = (1..=layers)
            .map(|l| (0..1usize << l).map(|i| pick(&enc_even, &enc_odd, i)).collect())
            .collect();
        let beta = (1..=layers)
            .map(|l| (0..1usize << l).map(|i| pick(&dec_even, &dec_odd, i)).collect())
            .collect();
        let gamma = (1..=layers).map(|l| vec![0.0; 1 << l]).collect();
        Self::from_parts(theta, beta, gamma)
    }

    pub fn init_from_wavelet(layers: usize, wavelet: Wavelet) -> Result<Self> {
        let h = wavelet.kernel()?;
        Self::init_wpt(layers, h.len(), &h)
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn kernel_len(&self) -> usize {
        self.kernel_len
    }

    /// Encoder kernel of node `i` at layer `l` (1-based).
    pub fn theta(&self, l: usize, i: usize) -> &[f64] {
        &self.theta[l - 1][i]
    }

    pub fn beta(&self, l: usize, i: usize) -> &[f64] {
        &self.beta[l - 1][i]
    }

    pub fn gamma(&self, l: usize, i: usize) -> f64 {
        self.gamma[l - 1][i]
    }

    pub fn theta_layers(&self) -> &[Vec<Vec<f64>>] {
        &self.theta
    }

    pub fn beta_layers(&self) -> &[Vec<Vec<f64>>] {
        &self.beta
    }

    pub fn gamma_layers(&self) -> &[Vec<f64>] {
        &self.gamma
    }

    pub fn param_count(&self) -> usize {
        param_count_for(self.layers, self.kernel_len)
    }

    /// All parameters in a fixed order: encoder taps, decoder taps, biases.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        out.extend(self.theta.iter().flatten().flatten());
        out.extend(self.beta.iter().flatten().flatten());
        out.extend(self.gamma.iter().flatten());
        out
    }

    /// Mutable references to all parameters in [`flatten`](Self::flatten) order.
    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.theta
            .iter_mut()
            .flatten()
            .flatten()
            .chain(self.beta.iter_mut().flatten().flatten())
            .chain(self.gamma.iter_mut().flatten())
    }

    /// Copy with every bias multiplied by `delta`; kernels are untouched.
    pub fn delta_modify(&self, delta: f64) -> Result<Self> {
        if !delta.is_finite() {
            return Err(Error::Parameter(format!("delta must be finite, got {delta}")));
        }
        let mut out = self.clone();
        for g in out.gamma.iter_mut().flatten() {
            *g *= delta;
        }
        Ok(out)
    }

    pub fn encode(&self, x: &[f64]) -> Result<LwptActivations> {
        check_layer_divisibility(x.len(), self.layers)?;
        let mut pre: Vec<Vec<Vec<f64>>> = Vec::with_capacity(self.layers);
        let mut post: Vec<Vec<Vec<f64>>> = Vec::with_capacity(self.layers);
        for l in 1..=self.layers {
            let mut pre_l = Vec::with_capacity(1 << l);
            let mut post_l = Vec::with_capacity(1 << l);
            for i in 0..(1usize << l) {
                let parent: &[f64] = if l == 1 { x } else { &post[l - 2][i / 2] };
                let z = conv_stride2(parent, &self.theta[l - 1][i])?;
                let g = self.gamma[l - 1][i];
                post_l.push(z.iter().map(|&v| eta(v, g)).collect());
                pre_l.push(z);
            }
            pre.push(pre_l);
            post.push(post_l);
        }
        Ok(LwptActivations { pre, post })
    }

    /// Decoder outputs for every layer, `out[l][i]` for `l = 0..=L`; `out[0][0]` is the signal.
    pub fn decode_trace(&self, acts: &LwptActivations) -> Result<Vec<Vec<Vec<f64>>>> {
        if acts.post.len() != self.layers {
            return Err(Error::Shape(format!(
                "activations have {} layers, model has {}",
                acts.post.len(),
                self.layers
            )));
        }
        let leaves = &acts.post[self.layers - 1];
        if leaves.len() != 1 << self.layers {
            return Err(Error::Shape(format!(
                "deepest layer has {} nodes, expected {}",
                leaves.len(),
                1usize << self.layers
            )));
        }
        let leaf_len = leaves[0].len();
        if leaf_len == 0 || leaves.iter().any(|n| n.len() != leaf_len) {
            return Err(Error::Shape("deepest-layer nodes must share a non-zero length".into()));
        }
        let mut trace: Vec<Vec<Vec<f64>>> = vec![Vec::new(); self.layers + 1];
        trace[self.layers] = leaves.clone();
        for l in (0..self.layers).rev() {
            let children = &trace[l + 1];
            let nodes: Vec<Vec<f64>> = (0..(1usize << l))
                .map(|i| {
                    let mut out = vec![0.0; 2 * children[2 * i].len()];
                    upsample_conv_add(&children[2 * i], &self.beta[l][2 * i], &mut out);
                    upsample_conv_add(&children[2 * i + 1], &self.beta[l][2 * i + 1], &mut out);
                    out
                })
                .collect();
            trace[l] = nodes;
        }
        Ok(trace)
    }

    pub fn decode(&self, acts: &LwptActivations) -> Result<Vec<f64>> {
        let mut trace = self.decode_trace(acts)?;
        Ok(trace.swap_remove(0).swap_remove(0))
    }

    /// `decode(encode(x))`.
    pub fn denoise(&self, x: &[f64]) -> Result<Vec<f64>> {
        let acts = self.encode(x)?;
        self.decode(&acts)
    }
}

/// Forward-pass record of the encoder, `pre[l - 1][i]` and `post[l - 1][i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LwptActivations {
    pub pre: Vec<Vec<Vec<f64>>>,
    pub post: Vec<Vec<Vec<f64>>>,
}

impl LwptActivations {
    /// Post-activation tree in [`WptTree`] form.
    pub fn tree(&self) -> Result<WptTree> {
        WptTree::from_layers(self.post.clone())
    }

    /// Activations whose deepest layer is `tree`'s deepest layer, for driving the decoder directly.
    pub fn from_leaves(leaves: Vec<Vec<f64>>) -> Result<Self> {
        let tree = WptTree::from_leaves(leaves)?;
        let post: Vec<Vec<Vec<f64>>> = (1..=tree.depth()).map(|l| tree.layer(l).to_vec()).collect();
        Ok(Self {
            pre: post.clone(),
            post,
        })
    }
}

/// Metadata persisted alongside a model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wavelet: Option<Wavelet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_sigma: Option<f64>,
    /// Mean norm of random background windows seen in training, used to estimate delta.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background_reference_norm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background_reference_window: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch: Option<usize>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct ModelDocument<S> {
    layers: usize,
    kernel_len: usize,
    param_count: usize,
    meta: ModelMeta,
    theta: Vec<Vec<Vec<f64>>>,
    beta: Vec<Vec<Vec<f64>>>,
    gamma: Vec<Vec<f64>>,
    #[serde(default = "Option::default", skip_serializing_if = "Option::is_none")]
    state: Option<S>,
}

/// Serializes a model, its metadata and an optional extra state section.
pub fn encode_model<S: Serialize>(m: &LwptModel, meta: &ModelMeta, state: Option<&S>) -> String {
    let doc = ModelDocument {
        layers: m.layers,
        kernel_len: m.kernel_len,
        param_count: m.param_count(),
        meta: meta.clone(),
        theta: m.theta.clone(),
        beta: m.beta.clone(),
        gamma: m.gamma.clone(),
        state,
    };
    let body = serde_json::to_string_pretty(&doc).expect("model document serializes");
    format!("{MODEL_MAGIC}\n{body}\n")
}

pub fn decode_model<S: for<'de> Deserialize<'de>>(
    path: &Path,
    text: &str,
) -> Result<(LwptModel, ModelMeta, Option<S>)> {
    let (magic, body) = text.split_once('\n').unwrap_or((text, ""));
    let magic = magic.trim_end_matches('\r');
    if magic != MODEL_MAGIC {
        return Err(Error::Version {
            path: path.into(),
            expected: MODEL_MAGIC.into(),
            found: magic.chars().take(32).collect(),
        });
    }
    let doc: ModelDocument<S> =
        serde_json::from_str(body).map_err(|e| Error::format(path, e.to_string()))?;
    let model = LwptModel::from_parts(doc.theta, doc.beta, doc.gamma)
        .map_err(|e| Error::format(path, e.to_string()))?;
    if model.layers != doc.layers || model.kernel_len != doc.kernel_len {
        return Err(Error::format(path, "declared shape does not match parameter arrays"));
    }
    if model.param_count() != doc.param_count {
        return Err(Error::format(
            path,
            format!(
                "declared parameter count {} but arrays hold {}",
                doc.param_count,
                model.param_count()
            ),
        ));
    }
    Ok((model, doc.meta, doc.state))
}

pub fn save_model(path: &Path, m: &LwptModel, meta: &ModelMeta) -> Result<()> {
    write_atomic(path, encode_model::<()>(m, meta, None).as_bytes())
}

pub fn load_model(path: &Path) -> Result<(LwptModel, ModelMeta)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (m, meta, _) = decode_model::<serde::de::IgnoredAny>(path, &text)?;
    Ok((m, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{wpt_forward, wpt_inverse};
    use crate::signal::{energy, squared_distance};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_signal(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
    }

    fn random_model(seed: u64, layers: usize, kernel_len: usize) -> LwptModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut k = || (0..kernel_len).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>();
        let theta = (1..=layers).map(|l| (0..1 << l).map(|_| k()).collect()).collect();
        let beta = (1..=layers).map(|l| (0..1 << l).map(|_| k()).collect()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xff);
        let gamma = (1..=layers)
            .map(|l| (0..1 << l).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        LwptModel::from_parts(theta, beta, gamma).unwrap()
    }

    #[test]
    fn eta_identity_at_zero_bias() {
        for x in [-1e6, -3.0, -0.2, 0.0, 1e-9, 0.7, 42.0, 1e6] {
            assert_eq!(eta(x, 0.0), x);
        }
        for g in [-2.0, 0.0, 0.5, 1e6] {
            assert_eq!(eta(0.0, g), 0.0);
        }
    }

    #[test]
    fn eta_reference_values() {
        // Direct evaluation of the formula with the unclamped exponentials.
        let direct = |x: f64, g: f64| {
            x * (1.0 / (1.0 + (10.0 * (x + g)).exp()) + 1.0 / (1.0 + (-10.0 * (x - g)).exp()))
        };
        for (x, g) in [(5.0, 1.0), (0.5, 1.0), (1.0, 1.0), (-1.2, 0.3), (0.05, 0.01)] {
            assert!((eta(x, g) - direct(x, g)).abs() < 1e-14, "({x}, {g})");
        }
        assert!((eta(5.0, 1.0) - 5.0).abs() < 1e-15);
        assert!(eta(0.5, 1.0).abs() < 0.004);
    }

    #[test]
    fn eta_survives_huge_arguments() {
        for x in [1e6, -1e6, 1e300] {
            for g in [0.3, 1e6, -1e6] {
                let (v, dx, dg) = eta_with_partials(x, g);
                assert!(v.is_finite() && dx.is_finite() && dg.is_finite());
            }
        }
    }

    proptest! {
        #[test]
        fn eta_is_odd(x in -50.0f64..50.0, g in -3.0f64..3.0) {
            prop_assert_eq!(eta(-x, g), -eta(x, g));
        }

        #[test]
        fn eta_partials_match_differences(x in -3.0f64..3.0, g in 0.0f64..2.0) {
            let h = 1e-6;
            let (_, dx, dg) = eta_with_partials(x, g);
            let ndx = (eta(x + h, g) - eta(x - h, g)) / (2.0 * h);
            let ndg = (eta(x, g + h) - eta(x, g - h)) / (2.0 * h);
            prop_assert!((dx - ndx).abs() <= 1e-5 * (1.0 + ndx.abs()));
            prop_assert!((dg - ndg).abs() <= 1e-5 * (1.0 + ndg.abs()));
        }
    }

    #[test]
    fn param_counts() {
        assert_eq!(param_count_for(5, 8), 1054);
        assert_eq!(param_count_for(8, 8), 8670);
        assert_eq!(param_count_for(1, 2), 10);
        let m = LwptModel::init_from_wavelet(5, Wavelet::Db4).unwrap();
        assert_eq!(m.param_count(), 1054);
        assert_eq!(m.flatten().len(), 1054);
        assert_eq!(m.clone().params_mut().count(), 1054);
        let m = LwptModel::init_from_wavelet(8, Wavelet::Db4).unwrap();
        assert_eq!(m.flatten().len(), 8670);
    }

    #[test]
    fn init_biases_are_exactly_zero() {
        let m = LwptModel::init_from_wavelet(5, Wavelet::Db4).unwrap();
        assert!(m.gamma_layers().iter().flatten().all(|g| *g == 0.0));
    }

    #[test]
    fn init_rejects_length_mismatch() {
        let h = Wavelet::Db4.kernel().unwrap();
        assert!(matches!(LwptModel::init_wpt(3, 6, &h), Err(Error::Parameter(_))));
    }

    #[test]
    fn printed_odd_decoder_kernel_is_the_negated_adjoint() {
        // flip(reverse(h)) = -reverse(flip(h)) for every odd K; the initializer uses the latter.
        let h = Wavelet::Db4.kernel().unwrap();
        let printed = alternating_flip(&paraconjugate(h.taps()));
        let used = paraconjugate(&alternating_flip(h.taps()));
        for (a, b) in printed.iter().zip(&used) {
            assert_eq!(*a, -*b);
        }
    }

    #[test]
    fn init_model_matches_packet_transform() {
        let h = Wavelet::Db4.kernel().unwrap();
        let m = LwptModel::init_wpt(4, 8, &h).unwrap();
        let x = random_signal(1, 256);
        let acts = m.encode(&x).unwrap();
        let tree = wpt_forward(&x, &h, 4).unwrap();
        for l in 1..=4 {
            for (a, b) in acts.post[l - 1].iter().zip(tree.layer(l)) {
                assert!(squared_distance(a, b).sqrt() < 1e-10);
            }
        }
        let y = m.decode(&acts).unwrap();
        assert!(squared_distance(&y, &x).sqrt() <= 1e-8 * energy(&x).sqrt());
        let z = wpt_inverse(&tree, &h).unwrap();
        assert!(squared_distance(&y, &z).sqrt() < 1e-10);
    }

    #[test]
    fn zero_input_gives_zero_tree_and_output() {
        let m = random_model(3, 3, 4);
        let acts = m.encode(&[0.0; 32]).unwrap();
        assert!(acts.post.iter().flatten().flatten().all(|v| *v == 0.0));
        assert_eq!(m.decode(&acts).unwrap(), vec![0.0; 32]);
    }

    #[test]
    fn huge_bias_silences_node() {
        let h = Wavelet::Db2.kernel().unwrap();
        let mut m = LwptModel::init_wpt(2, 4, &h).unwrap();
        m.gamma[1][2] = 1e6;
        let x = random_signal(4, 64);
        let acts = m.encode(&x).unwrap();
        let out_norm = energy(&acts.post[1][2]).sqrt();
        assert!(out_norm <= 1e-3 * energy(&x).sqrt());
    }

    #[test]
    fn decoder_is_linear() {
        let m = random_model(5, 3, 6);
        let leaves_a: Vec<Vec<f64>> = (0..8).map(|i| random_signal(10 + i, 4)).collect();
        let leaves_b: Vec<Vec<f64>> = (0..8).map(|i| random_signal(20 + i, 4)).collect();
        let dec = |leaves: Vec<Vec<f64>>| {
            m.decode(&LwptActivations::from_leaves(leaves).unwrap()).unwrap()
        };
        let sum: Vec<Vec<f64>> = leaves_a
            .iter()
            .zip(&leaves_b)
            .map(|(a, b)| a.iter().zip(b).map(|(u, v)| 2.5 * u - v).collect())
            .collect();
        let ya = dec(leaves_a);
        let yb = dec(leaves_b);
        let ys = dec(sum);
        for i in 0..32 {
            assert!((ys[i] - (2.5 * ya[i] - yb[i])).abs() < 1e-12);
        }
        let zero = dec(vec![vec![0.0; 4]; 8]);
        assert!(zero.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn decode_rejects_mismatched_activations() {
        let m = random_model(6, 3, 4);
        let acts = LwptActivations::from_leaves(vec![vec![0.0; 4]; 4]).unwrap();
        assert!(matches!(m.decode(&acts), Err(Error::Shape(_))));
    }

    #[test]
    fn delta_modification() {
        let m = random_model(7, 3, 4);
        assert_eq!(m.delta_modify(1.0).unwrap(), m);
        let zeroed = m.delta_modify(0.0).unwrap();
        assert!(zeroed.gamma_layers().iter().flatten().all(|g| *g == 0.0));
        assert_eq!(zeroed.theta_layers(), m.theta_layers());
        let five = m.delta_modify(5.0).unwrap();
        for (a, b) in five.gamma_layers().iter().flatten().zip(m.gamma_layers().iter().flatten()) {
            assert_eq!(*a, 5.0 * b);
        }
        assert!(m.delta_modify(f64::NAN).is_err());
    }

    #[test]
    fn delta_modification_composes() {
        // Powers of two keep the products exact.
        let m = random_model(8, 2, 2);
        let (a, b) = (0.5, 4.0);
        assert_eq!(
            m.delta_modify(a).unwrap().delta_modify(b).unwrap(),
            m.delta_modify(a * b).unwrap()
        );
    }

    #[test]
    fn model_file_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.lwpt");
        let m = random_model(9, 3, 8);
        let meta = ModelMeta {
            wavelet: Some(Wavelet::Db4),
            background_reference_norm: Some(0.123456789012345),
            ..Default::default()
        };
        save_model(&path, &m, &meta).unwrap();
        let (back, back_meta) = load_model(&path).unwrap();
        assert_eq!(back_meta, meta);
        let bits = |v: Vec<f64>| v.into_iter().map(f64::to_bits).collect::<Vec<_>>();
        assert_eq!(bits(back.flatten()), bits(m.flatten()));
    }

    #[test]
    fn model_file_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.lwpt");
        let m = random_model(10, 2, 4);
        let text = encode_model::<()>(&m, &ModelMeta::default(), None);
        fs::write(&path, &text[..text.len() / 2]).unwrap();
        assert!(matches!(load_model(&path), Err(Error::Format { .. })));
        fs::write(&path, text.replacen(MODEL_MAGIC, "LWPT-MODEL-v0", 1)).unwrap();
        assert!(matches!(load_model(&path), Err(Error::Version { .. })));
        let declared = format!("\"param_count\": {}", m.param_count());
        assert!(text.contains(&declared));
        fs::write(&path, text.replacen(&declared, "\"param_count\": 1", 1)).unwrap();
        assert!(matches!(load_model(&path), Err(Error::Format { .. })));
    }
}

//! Two-channel filter banks and the wavelet packet tree.
//!
//! All convolutions are circular. Analysis keeps the even phase of the
//! filtered signal, `y[n] = sum_k h[k] x[(2n - k) mod N]`, and synthesis is
//! its exact adjoint: the up-sampled sequence is convolved with the
//! synthesis kernel and advanced by `K = len(h) - 1` samples, so a
//! paraconjugate synthesis kernel undoes an orthogonal analysis kernel.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when checking the conjugate-mirror conditions.
pub const CMF_TOLERANCE: f64 = 1e-12;

/// A finite impulse response with an even number of taps.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterKernel {
    taps: Vec<f64>,
    conjugate_mirror: bool,
}

impl FilterKernel {
    pub fn new(taps: Vec<f64>) -> Result<Self> {
        if taps.len() < 2 || !taps.len().is_multiple_of(2) {
            return Err(Error::Length(format!(
                "kernel length must be even and >= 2, got {}",
                taps.len()
            )));
        }
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::Parameter("kernel taps must be finite".into()));
        }
        Ok(Self {
            taps,
            conjugate_mirror: false,
        })
    }

    /// Builds a kernel and verifies unit norm and double-shift orthogonality.
    pub fn conjugate_mirror(taps: Vec<f64>) -> Result<Self> {
        let mut k = Self::new(taps)?;
        if let Some(violation) = cmf_violation(&k.taps) {
            return Err(Error::Parameter(format!(
                "kernel is not a conjugate mirror filter: {violation}"
            )));
        }
        k.conjugate_mirror = true;
        Ok(k)
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn is_conjugate_mirror(&self) -> bool {
        self.conjugate_mirror
    }

    /// `out[k] = (-1)^k h[K - k]`.
    pub fn alternating_flip(&self) -> FilterKernel {
        FilterKernel {
            taps: alternating_flip(&self.taps),
            conjugate_mirror: self.conjugate_mirror,
        }
    }

    /// `out[k] = h[K - k]`.
    pub fn paraconjugate(&self) -> FilterKernel {
        FilterKernel {
            taps: paraconjugate(&self.taps),
            conjugate_mirror: self.conjugate_mirror,
        }
    }
}

fn check_even_kernel(h: &[f64]) -> Result<()> {
    if h.len() < 2 || !h.len().is_multiple_of(2) {
        return Err(Error::Length(format!(
            "kernel length must be even and >= 2, got {}",
            h.len()
        )));
    }
    Ok(())
}

/// Alternating flip of raw taps. Panics on odd length; see [`try_alternating_flip`].
pub fn alternating_flip(h: &[f64]) -> Vec<f64> {
    try_alternating_flip(h).expect("alternating flip needs an even-length kernel")
}

pub fn try_alternating_flip(h: &[f64]) -> Result<Vec<f64>> {
    check_even_kernel(h)?;
    let k_max = h.len() - 1;
    Ok((0..h.len())
        .map(|k| {
            let v = h[k_max - k];
            if k % 2 == 0 {
                v
            } else {
                -v
            }
        })
        .collect())
}

pub fn paraconjugate(h: &[f64]) -> Vec<f64> {
    h.iter().rev().copied().collect()
}

pub fn try_paraconjugate(h: &[f64]) -> Result<Vec<f64>> {
    check_even_kernel(h)?;
    Ok(paraconjugate(h))
}

fn cmf_violation(h: &[f64]) -> Option<String> {
    let norm2: f64 = h.iter().map(|v| v * v).sum();
    if (norm2 - 1.0).abs() > CMF_TOLERANCE {
        return Some(format!("squared norm {norm2} != 1"));
    }
    for shift in (2..h.len()).step_by(2) {
        let dot: f64 = h[shift..].iter().zip(h).map(|(a, b)| a * b).sum();
        if dot.abs() > CMF_TOLERANCE {
            return Some(format!("inner product at shift {shift} is {dot}"));
        }
    }
    None
}

/// Wavelet families with embedded low-pass taps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Wavelet {
    Haar,
    Db2,
    Db3,
    Db4,
}

impl Wavelet {
    pub const ALL: [Wavelet; 4] = [Wavelet::Haar, Wavelet::Db2, Wavelet::Db3, Wavelet::Db4];

    pub fn name(self) -> &'static str {
        match self {
            Wavelet::Haar => "haar",
            Wavelet::Db2 => "db2",
            Wavelet::Db3 => "db3",
            Wavelet::Db4 => "db4",
        }
    }

    fn raw_taps(self) -> &'static [f64] {
        match self {
            Wavelet::Haar => &[std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2],
            Wavelet::Db2 => &[
                0.482_962_913_144_534_143_37,
                0.836_516_303_737_807_905_58,
                0.224_143_868_042_013_381_03,
                -0.129_409_522_551_260_381_17,
            ],
            Wavelet::Db3 => &[
                0.332_670_552_950_082_616,
                0.806_891_509_311_092_576_49,
                0.459_877_502_118_491_570_1,
                -0.135_011_020_010_254_588_7,
                -0.085_441_273_882_026_661_693,
                0.035_226_291_885_709_536_603,
            ],
            Wavelet::Db4 => &[
                0.230_377_813_308_896_500_86,
                0.714_846_570_552_915_647_09,
                0.630_880_767_929_858_907_88,
                -0.027_983_769_416_859_854_211,
                -0.187_034_811_719_093_084_08,
                0.030_841_381_835_560_763_627,
                0.032_883_011_666_885_199_735,
                -0.010_597_401_785_069_032_105,
            ],
        }
    }

    /// Low-pass taps, validated against the conjugate-mirror conditions.
    pub fn kernel(self) -> Result<FilterKernel> {
        FilterKernel::conjugate_mirror(self.raw_taps().to_vec())
    }
}

impl fmt::Display for Wavelet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Wavelet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "haar" | "db1" => Ok(Wavelet::Haar),
            "db2" => Ok(Wavelet::Db2),
            "db3" => Ok(Wavelet::Db3),
            "db4" => Ok(Wavelet::Db4),
            _ => Err(Error::UnsupportedFamily(s.to_string())),
        }
    }
}

pub fn standard_kernel(name: &str) -> Result<FilterKernel> {
    name.parse::<Wavelet>()?.kernel()
}

/// `out[n] = sum_k h[k] x[(2n - k) mod len(x)]`.
pub fn conv_stride2(x: &[f64], h: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() || !x.len().is_multiple_of(2) {
        return Err(Error::Length(format!(
            "strided convolution needs an even, non-empty input, got length {}",
            x.len()
        )));
    }
    let n_in = x.len();
    let mut out = vec![0.0; n_in / 2];
    for (n, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (k, &hk) in h.iter().enumerate() {
            let idx = (2 * n + n_in * (k / n_in + 1) - k) % n_in;
            acc += hk * x[idx];
        }
        *o = acc;
    }
    Ok(out)
}

/// `up[x]_(2n) = x_(n)`, `up[x]_(2n+1) = 0`.
pub fn upsample2(x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; 2 * x.len()];
    for (n, &v) in x.iter().enumerate() {
        out[2 * n] = v;
    }
    out
}

/// Transposed strided convolution: `out[m] = sum_k g[k] up[y][(m + K - k) mod 2len(y)]`.
///
/// With `g` the paraconjugate of an analysis kernel `h`, this is the adjoint
/// of `conv_stride2(., h)`.
pub fn upsample_conv(y: &[f64], g: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; 2 * y.len()];
    upsample_conv_add(y, g, &mut out);
    out
}

/// Accumulating form of [`upsample_conv`]; `out.len()` must be `2 * y.len()`.
pub fn upsample_conv_add(y: &[f64], g: &[f64], out: &mut [f64]) {
    let n_out = out.len();
    debug_assert_eq!(n_out, 2 * y.len());
    if g.is_empty() {
        return;
    }
    let k_max = g.len() - 1;
    // Nonzero up-sampled entries sit at 2n; they land at m = 2n - K + k.
    let base = n_out * (k_max / n_out + 1) - k_max;
    for (n, &v) in y.iter().enumerate() {
        if v == 0.0 {
            continue;
        }
        for (k, &gk) in g.iter().enumerate() {
            let m = (2 * n + base + k) % n_out;
            out[m] += gk * v;
        }
    }
}

/// Coefficients of a packet decomposition, `layers[l - 1][i]` holding node `i` of layer `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct WptTree {
    layers: Vec<Vec<Vec<f64>>>,
}

impl WptTree {
    /// Validates that layer `l` holds `2^l` nodes of equal length `T / 2^l`.
    pub fn from_layers(layers: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("tree needs at least one layer".into()));
        }
        let t = 2 * layers[0].first().map_or(0, Vec::len);
        if t == 0 {
            return Err(Error::Shape("layer 1 has empty nodes".into()));
        }
        for (idx, layer) in layers.iter().enumerate() {
            let l = idx + 1;
            if layer.len() != 1 << l {
                return Err(Error::Shape(format!(
                    "layer {l} holds {} nodes, expected {}",
                    layer.len(),
                    1usize << l
                )));
            }
            let expected = t >> l;
            if expected == 0 || !t.is_multiple_of(1 << l) {
                return Err(Error::Shape(format!(
                    "signal length {t} not divisible by 2^{l}"
                )));
            }
            if let Some((i, node)) = layer.iter().enumerate().find(|(_, n)| n.len() != expected) {
                return Err(Error::Shape(format!(
                    "layer {l} node {i} has length {}, expected {expected}",
                    node.len()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// A tree of depth `layers` built only from its deepest layer; shallower layers are zero-filled.
    pub fn from_leaves(leaves: Vec<Vec<f64>>) -> Result<Self> {
        let count = leaves.len();
        if count < 2 || !count.is_power_of_two() {
            return Err(Error::Shape(format!(
                "leaf count must be a power of two >= 2, got {count}"
            )));
        }
        let depth = count.trailing_zeros() as usize;
        let leaf_len = leaves[0].len();
        let t = leaf_len << depth;
        let mut layers: Vec<Vec<Vec<f64>>> = (1..depth)
            .map(|l| vec![vec![0.0; t >> l]; 1 << l])
            .collect();
        layers.push(leaves);
        Self::from_layers(layers)
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn signal_len(&self) -> usize {
        2 * self.layers[0][0].len()
    }

    /// Nodes of layer `l` (1-based).
    pub fn layer(&self, l: usize) -> &[Vec<f64>] {
        &self.layers[l - 1]
    }

    pub fn layer_mut(&mut self, l: usize) -> &mut [Vec<f64>] {
        &mut self.layers[l - 1]
    }

    pub fn leaves(&self) -> &[Vec<f64>] {
        self.layers.last().expect("non-empty tree")
    }

    pub fn leaves_mut(&mut self) -> &mut [Vec<f64>] {
        self.layers.last_mut().expect("non-empty tree")
    }

    pub fn layer_energy(&self, l: usize) -> f64 {
        self.layer(l).iter().map(|n| crate::signal::energy(n)).sum()
    }
}

pub(crate) fn check_layer_divisibility(len: usize, layers: usize) -> Result<()> {
    if layers == 0 {
        return Err(Error::Parameter("layer count must be >= 1".into()));
    }
    if layers >= usize::BITS as usize || !len.is_multiple_of(1usize << layers) || len == 0 {
        return Err(Error::Length(format!(
            "signal length {len} is not divisible by 2^{layers}"
        )));
    }
    Ok(())
}

/// Packet decomposition of `x` into `layers` layers with low-pass `h_lp` and its alternating flip.
pub fn wpt_forward(x: &[f64], h_lp: &FilterKernel, layers: usize) -> Result<WptTree> {
    if !h_lp.is_conjugate_mirror() {
        return Err(Error::Parameter(
            "wpt_forward needs a conjugate mirror kernel".into(),
        ));
    }
    check_layer_divisibility(x.len(), layers)?;
    let lo = h_lp.taps();
    let hi = alternating_flip(lo);
    let mut out: Vec<Vec<Vec<f64>>> = Vec::with_capacity(layers);
    for l in 1..=layers {
        let mut layer = Vec::with_capacity(1 << l);
        for i in 0..(1usize << l) {
            let parent: &[f64] = if l == 1 { x } else { &out[l - 2][i / 2] };
            let kernel = if i % 2 == 0 { lo } else { &hi[..] };
            layer.push(conv_stride2(parent, kernel)?);
        }
        out.push(layer);
    }
    WptTree::from_layers(out)
}

/// Inverse of [`wpt_forward`] from the deepest layer of `tree`.
///
/// Synthesis kernels are the paraconjugates of the analysis pair:
/// `reverse(h)` for even children and `reverse(flip(h))` for odd ones.
pub fn wpt_inverse(tree: &WptTree, h_lp: &FilterKernel) -> Result<Vec<f64>> {
    if !h_lp.is_conjugate_mirror() {
        return Err(Error::Parameter(
            "wpt_inverse needs a conjugate mirror kernel".into(),
        ));
    }
    let lo = paraconjugate(h_lp.taps());
    let hi = paraconjugate(&alternating_flip(h_lp.taps()));
    let mut current: Vec<Vec<f64>> = tree.leaves().to_vec();
    while current.len() > 1 {
        let next = current
            .chunks_exact(2)
            .map(|pair| {
                let mut parent = vec![0.0; 2 * pair[0].len()];
                upsample_conv_add(&pair[0], &lo, &mut parent);
                upsample_conv_add(&pair[1], &hi, &mut parent);
                parent
            })
            .collect();
        current = next;
    }
    Ok(current.pop().expect("root node"))
}

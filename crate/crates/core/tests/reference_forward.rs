mod support;

use lwpt_core::dsp::Wavelet;
use lwpt_core::model::LwptModel;
use lwpt_core::train::loss;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::dd::{Dd, DdModel};

#[test]
fn exp_matches_f64() {
    for x in [-30.0, -1.0, -1e-3, 0.0, 0.5, 2.0, 40.0] {
        let e = Dd::from(x).exp().to_f64();
        assert!((e - f64::exp(x)).abs() <= 4.0 * f64::EPSILON * f64::exp(x), "{x}");
    }
}

#[test]
fn division_round_trips() {
    let a = Dd::from(1.0) / Dd::from(3.0);
    let back = a * Dd::from(3.0) - Dd::ONE;
    assert!(back.to_f64().abs() < 1e-31);
}

#[test]
fn reference_forward_agrees_with_model() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for (layers, wavelet) in [(1, Wavelet::Haar), (2, Wavelet::Db2), (3, Wavelet::Db4)] {
        let mut m = LwptModel::init_from_wavelet(layers, wavelet).unwrap();
        for p in m.params_mut() {
            *p += rng.random_range(-0.3..0.3);
        }
        let batch: Vec<(Vec<f64>, Vec<f64>)> = (0..3)
            .map(|_| {
                let n = (0..64).map(|_| rng.random_range(-2.0..2.0)).collect();
                let c = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
                (n, c)
            })
            .collect();
        let flat: Vec<Dd> = m.flatten().into_iter().map(Dd::from).collect();
        let reference = DdModel::from_flat(layers, m.kernel_len(), &flat).loss(&batch).to_f64();
        let got = loss(&m, &batch).unwrap();
        assert!((got - reference).abs() <= 1e-12 * reference, "{got} vs {reference}");
    }
}

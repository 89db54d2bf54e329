//! Double-double arithmetic and a reference model forward pass built on it.
//!
//! About 32 significant digits, enough for central differences whose f64
//! rounding noise would otherwise swamp small partials.

use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };
    const LN2: Dd = Dd {
        hi: 6.931_471_805_599_453e-1,
        lo: 2.319_046_813_846_299_6e-17,
    };

    pub fn from(v: f64) -> Dd {
        Dd { hi: v, lo: 0.0 }
    }

    fn norm(hi: f64, lo: f64) -> Dd {
        let (hi, lo) = quick_two_sum(hi, lo);
        Dd { hi, lo }
    }

    fn scale(self, factor: f64) -> Dd {
        // Exact for powers of two away from the subnormal range.
        Dd {
            hi: self.hi * factor,
            lo: self.lo * factor,
        }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    pub fn exp(self) -> Dd {
        let k = (self.hi / Self::LN2.hi).round();
        let r = (self - Self::LN2 * Dd::from(k)).scale(1.0 / 1024.0);
        // expm1(r) by Taylor series; |r| < 4e-4 so nine terms reach ~1e-33.
        let mut term = r;
        let mut sum = r;
        for n in 2..=10 {
            term = term * r / Dd::from(n as f64);
            sum = sum + term;
        }
        // expm1(2r) = 2 expm1(r) + expm1(r)^2, ten times.
        for _ in 0..10 {
            sum = sum.scale(2.0) + sum * sum;
        }
        (sum + Dd::ONE).scale(2f64.powi(k as i32))
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, b: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, b.hi);
        let (t, f) = two_sum(self.lo, b.lo);
        let (s, e) = quick_two_sum(s, e + t);
        Dd::norm(s, e + f)
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, b: Dd) -> Dd {
        self + (-b)
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, b: Dd) -> Dd {
        let p = self.hi * b.hi;
        let e = self.hi.mul_add(b.hi, -p);
        Dd::norm(p, e + (self.hi * b.lo + self.lo * b.hi))
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, b: Dd) -> Dd {
        let q1 = self.hi / b.hi;
        let r = self - b * Dd::from(q1);
        let q2 = r.hi / b.hi;
        let r = r - b * Dd::from(q2);
        let q3 = r.hi / b.hi;
        let (q, e) = quick_two_sum(q1, q2);
        Dd { hi: q, lo: e } + Dd::from(q3)
    }
}

fn logistic(z: Dd) -> Dd {
    let z = if z.hi > 500.0 {
        Dd::from(500.0)
    } else if z.hi < -500.0 {
        Dd::from(-500.0)
    } else {
        z
    };
    Dd::ONE / (Dd::ONE + (-z).exp())
}

fn eta(x: Dd, gamma: Dd) -> Dd {
    if gamma == Dd::ZERO {
        return x;
    }
    let ten = Dd::from(10.0);
    x * (logistic(-(ten * (x + gamma))) + logistic(ten * (x - gamma)))
}

/// `theta[l][i][k]`, `beta[l][i][k]`, `gamma[l][i]` with `l` zero-based.
pub struct DdModel {
    pub theta: Vec<Vec<Vec<Dd>>>,
    pub beta: Vec<Vec<Vec<Dd>>>,
    pub gamma: Vec<Vec<Dd>>,
}

impl DdModel {
    /// Builds from a flat parameter vector in theta, beta, gamma order.
    pub fn from_flat(layers: usize, kernel_len: usize, flat: &[Dd]) -> DdModel {
        let mut it = flat.iter().copied();
        let kernels = |it: &mut dyn Iterator<Item = Dd>| -> Vec<Vec<Vec<Dd>>> {
            (1..=layers)
                .map(|l| {
                    (0..1usize << l)
                        .map(|_| (0..kernel_len).map(|_| it.next().expect("enough params")).collect())
                        .collect()
                })
                .collect()
        };
        let theta = kernels(&mut it);
        let beta = kernels(&mut it);
        let gamma = (1..=layers)
            .map(|l| (0..1usize << l).map(|_| it.next().expect("enough params")).collect())
            .collect();
        assert!(it.next().is_none(), "too many params");
        DdModel { theta, beta, gamma }
    }

    pub fn denoise(&self, x: &[f64]) -> Vec<Dd> {
        let layers = self.theta.len();
        let k_max = self.theta[0][0].len() - 1;
        let input: Vec<Dd> = x.iter().map(|&v| Dd::from(v)).collect();
        let mut post: Vec<Vec<Vec<Dd>>> = Vec::new();
        for l in 0..layers {
            let nodes = (0..1usize << (l + 1))
                .map(|i| {
                    let parent = if l == 0 { &input } else { &post[l - 1][i / 2] };
                    let n_in = parent.len();
                    (0..n_in / 2)
                        .map(|n| {
                            let mut z = Dd::ZERO;
                            for (k, &t) in self.theta[l][i].iter().enumerate() {
                                let idx = (2 * n as i64 - k as i64).rem_euclid(n_in as i64) as usize;
                                z = z + t * parent[idx];
                            }
                            eta(z, self.gamma[l][i])
                        })
                        .collect()
                })
                .collect();
            post.push(nodes);
        }
        let mut current = post.pop().expect("at least one layer");
        for l in (0..layers).rev() {
            current = (0..1usize << l)
                .map(|i| {
                    let n_out = 2 * current[2 * i].len();
                    let mut out = vec![Dd::ZERO; n_out];
                    for c in [2 * i, 2 * i + 1] {
                        for (n, &y) in current[c].iter().enumerate() {
                            for (k, &b) in self.beta[l][c].iter().enumerate() {
                                let m = (2 * n as i64 + k as i64 - k_max as i64).rem_euclid(n_out as i64) as usize;
                                out[m] = out[m] + b * y;
                            }
                        }
                    }
                    out
                })
                .collect();
        }
        current.pop().expect("root node")
    }

    pub fn loss(&self, batch: &[(Vec<f64>, Vec<f64>)]) -> Dd {
        let mut total = Dd::ZERO;
        for (noisy, clean) in batch {
            for (o, &s) in self.denoise(noisy).into_iter().zip(clean) {
                let d = o - Dd::from(s);
                total = total + d * d;
            }
        }
        total
    }
}

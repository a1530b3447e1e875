//! Naive reference implementations used as test oracles.
#![allow(dead_code)]

use mmff::numerics::Tensor;
use mmff::params::ParamStore;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Mat = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Mat {
    (0..r).map(|_| (0..c).map(|_| rng.gen_range(-scale..scale)).collect()).collect()
}

pub fn tensor(m: &Mat) -> Tensor {
    Tensor::from_rows(m).unwrap()
}

pub fn mat(t: &Tensor) -> Mat {
    let (r, c) = t.dims2().unwrap();
    (0..r).map(|i| t.data()[i * c..(i + 1) * c].to_vec()).collect()
}

pub fn param_mat(store: &ParamStore, name: &str) -> Mat {
    mat(store.get(store.id(name).unwrap()))
}

pub fn param_vec(store: &ParamStore, name: &str) -> Vec<f64> {
    store.get(store.id(name).unwrap()).data().to_vec()
}

pub fn mm(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            for t in 0..k {
                out[i][j] += a[i][t] * b[t][j];
            }
        }
    }
    out
}

pub fn tr(a: &Mat) -> Mat {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

pub fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect()
}

pub fn add_bias(a: &Mat, b: &[f64]) -> Mat {
    a.iter().map(|r| r.iter().zip(b).map(|(x, y)| x + y).collect()).collect()
}

pub fn softmax_row(r: &[f64]) -> Vec<f64> {
    let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = r.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

pub fn ln_row(r: &[f64], eps: f64) -> Vec<f64> {
    let n = r.len() as f64;
    let mean = r.iter().sum::<f64>() / n;
    let var = r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    r.iter().map(|x| (x - mean) / (var + eps).sqrt()).collect()
}

pub fn ln(a: &Mat) -> Mat {
    a.iter().map(|r| ln_row(r, 1e-5)).collect()
}

pub fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
}

pub fn map(a: &Mat, f: impl Fn(f64) -> f64) -> Mat {
    a.iter().map(|r| r.iter().map(|&x| f(x)).collect()).collect()
}

/// Single-head `softmax(q kᵀ/√d) v`.
pub fn attend(q: &Mat, k: &Mat, v: &Mat) -> Mat {
    let d = q[0].len() as f64;
    let s = mm(q, &tr(k));
    let p: Mat = s.iter().map(|r| softmax_row(&r.iter().map(|x| x / d.sqrt()).collect::<Vec<_>>())).collect();
    mm(&p, v)
}

/// Mean over `floor(i·n/t) .. ceil((i+1)·n/t)` for each output `i`.
pub fn pool_1d(x: &[f64], t: usize) -> Vec<f64> {
    let n = x.len();
    (0..t)
        .map(|i| {
            let s = i * n / t;
            let e = ((i + 1) * n + t - 1) / t;
            x[s..e].iter().sum::<f64>() / (e - s) as f64
        })
        .collect()
}

pub fn max_abs(a: &Mat, b: &Mat) -> f64 {
    assert_eq!(a.len(), b.len(), "row count");
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            assert_eq!(x.len(), y.len(), "column count");
            x.iter().zip(y).map(|(p, q)| (p - q).abs())
        })
        .fold(0.0, f64::max)
}

pub fn zero_param(store: &mut ParamStore, name: &str) {
    let id = store.id(name).unwrap_or_else(|| panic!("no parameter {name}"));
    let shape = store.get(id).shape().to_vec();
    store.set(name, Tensor::zeros(&shape)).unwrap();
}

/// Zeroes every parameter whose name starts with `prefix`.
pub fn zero_prefix(store: &mut ParamStore, prefix: &str) {
    let names: Vec<String> = store.iter().map(|(n, _)| n.to_string()).filter(|n| n.starts_with(prefix)).collect();
    assert!(!names.is_empty(), "nothing matches {prefix}");
    for n in names {
        zero_param(store, &n);
    }
}

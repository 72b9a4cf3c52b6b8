#![allow(dead_code)]

use std::f64::consts::PI;

use fcu_core::nn::{Activation, Architecture, LayerSpec, NetworkModel};
use fcu_core::{ParameterSet, Tensor};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, shape: Vec<usize>, scale: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::new(shape, data).unwrap()
}

pub fn random_vec(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

/// Textbook O(n^2 m^2) 2-D DFT.
pub fn naive_dft2(rows: usize, cols: usize, data: &[f64]) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); rows * cols];
    for k1 in 0..rows {
        for k2 in 0..cols {
            let mut acc = Complex64::new(0.0, 0.0);
            for u in 0..rows {
                for v in 0..cols {
                    let theta = -2.0 * PI * ((k1 * u) as f64 / rows as f64 + (k2 * v) as f64 / cols as f64);
                    acc += data[u * cols + v] * Complex64::from_polar(1.0, theta);
                }
            }
            out[k1 * cols + k2] = acc;
        }
    }
    out
}

/// Central-difference gradient of `f` with respect to every scalar of `p`.
pub fn fd_params(p: &ParameterSet, h: f64, mut f: impl FnMut(&ParameterSet) -> f64) -> Vec<f64> {
    let mut work = p.clone();
    let names: Vec<String> = p.iter().map(|(n, _)| n.clone()).collect();
    let mut out = Vec::with_capacity(p.num_scalars());
    for name in &names {
        let len = p.get(name).unwrap().tensor.len();
        for i in 0..len {
            let orig = work.get(name).unwrap().tensor.data()[i];
            work.get_mut(name).unwrap().tensor.data_mut()[i] = orig + h;
            let plus = f(&work);
            work.get_mut(name).unwrap().tensor.data_mut()[i] = orig - h;
            let minus = f(&work);
            work.get_mut(name).unwrap().tensor.data_mut()[i] = orig;
            out.push((plus - minus) / (2.0 * h));
        }
    }
    out
}

pub fn fd_vec(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut w = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = w[i];
            w[i] = orig + h;
            let plus = f(&w);
            w[i] = orig - h;
            let minus = f(&w);
            w[i] = orig;
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// Largest violation of `|a - n| <= max(rel * max(|a|, |n|), abs)`, as a
/// ratio; values `<= 1` pass.
pub fn grad_violation(analytic: &[f64], numeric: &[f64], rel: f64, abs: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| {
            let tol = (rel * a.abs().max(n.abs())).max(abs);
            (a - n).abs() / tol
        })
        .fold(0.0, f64::max)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Random smooth architecture: optional conv stem, 0 to 2 dense hidden
/// layers, tanh or identity activations.
pub fn random_arch(rng: &mut impl Rng) -> Architecture {
    let act = |rng: &mut dyn rand::RngCore| {
        if rng.random_bool(0.8) {
            Activation::Tanh
        } else {
            Activation::Identity
        }
    };
    let mut layers = Vec::new();
    let input_dim;
    let mut width;
    if rng.random_bool(0.4) {
        let c = rng.random_range(1..=2);
        let hw = [rng.random_range(3..=5), rng.random_range(3..=5)];
        let kernel = [rng.random_range(1..=hw[0].min(3)), rng.random_range(1..=hw[1].min(3))];
        let layer = LayerSpec::Conv2d {
            in_channels: c,
            out_channels: rng.random_range(1..=3),
            kernel,
            input_hw: hw,
            activation: act(rng),
        };
        input_dim = layer.input_len();
        width = layer.output_len();
        layers.push(layer);
    } else {
        input_dim = rng.random_range(1..=6);
        width = input_dim;
    }
    for _ in 0..rng.random_range(if layers.is_empty() { 1 } else { 0 }..=2) {
        let out = rng.random_range(1..=6);
        layers.push(LayerSpec::Dense {
            inputs: width,
            outputs: out,
            activation: act(rng),
        });
        width = out;
    }
    layers.push(LayerSpec::Dense {
        inputs: width,
        outputs: rng.random_range(2..=4),
        activation: Activation::Identity,
    });
    let arch = Architecture { input_dim, layers };
    arch.validate().unwrap();
    arch
}

/// Weighted mean of flattened parameter sets, accumulated one client at a
/// time with independently computed weights.
pub fn brute_force_mean(sets: &[&ParameterSet], sizes: &[usize], exclude: Option<usize>) -> Vec<f64> {
    let total: usize = sizes
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != exclude)
        .map(|(_, &s)| s)
        .sum();
    let n = sets[0].num_scalars();
    let mut out = vec![0.0; n];
    for (k, set) in sets.iter().enumerate() {
        if Some(k) == exclude {
            continue;
        }
        let w = sizes[k] as f64 / total as f64;
        for (o, v) in out.iter_mut().zip(set.flatten()) {
            *o += w * v;
        }
    }
    out
}

pub fn eval_loss(model: &NetworkModel, x: &Tensor, g_logits: &Tensor, g_feat: Option<&Tensor>) -> f64 {
    let out = model.forward(x).unwrap();
    let mut l = dot(out.logits.data(), g_logits.data());
    if let Some(g) = g_feat {
        l += dot(out.features.data(), g.data());
    }
    l
}

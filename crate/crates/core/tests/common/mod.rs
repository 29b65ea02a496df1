//! Shared test oracles.
#![allow(dead_code)]

pub mod grad_suite;

use std::path::{Path, PathBuf};

use iscm_core::models::ModelConfig;
use iscm_core::nn::Parameters;
use iscm_core::Config;
use ndarray::{Array, Dimension};
use rand::Rng;
use rand_distr::StandardNormal;

/// Central-difference step.
pub const H: f64 = 1e-5;
/// Largest accepted relative error between analytic and numeric gradients.
pub const TOL: f64 = 1e-4;
/// Magnitude below which errors are measured in absolute terms.
const FLOOR: f64 = 1e-5;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GradCheck {
    pub worst: f64,
    pub checked: usize,
}

impl GradCheck {
    pub fn merge(self, other: GradCheck) -> GradCheck {
        GradCheck {
            worst: self.worst.max(other.worst),
            checked: self.checked + other.checked,
        }
    }

    pub fn passed(&self) -> bool {
        self.checked > 0 && self.worst < TOL
    }
}

pub fn compare<'a>(analytic: impl IntoIterator<Item = &'a f64>, numeric: impl IntoIterator<Item = &'a f64>) -> GradCheck {
    let mut c = GradCheck::default();
    for (a, n) in analytic.into_iter().zip(numeric) {
        c.worst = c.worst.max(rel_err(*a, *n));
        c.checked += 1;
    }
    c
}

/// Numeric gradient of `f` w.r.t. every entry of `x`.
pub fn numeric_grad<D: Dimension>(x: &Array<f64, D>, f: impl Fn(&Array<f64, D>) -> f64) -> Array<f64, D> {
    let mut probe = x.clone();
    let mut out = Array::zeros(x.raw_dim());
    for i in 0..x.len() {
        let orig = probe.as_slice_mut().expect("standard layout")[i];
        probe.as_slice_mut().unwrap()[i] = orig + H;
        let plus = f(&probe);
        probe.as_slice_mut().unwrap()[i] = orig - H;
        let minus = f(&probe);
        probe.as_slice_mut().unwrap()[i] = orig;
        out.as_slice_mut().unwrap()[i] = (plus - minus) / (2.0 * H);
    }
    out
}

/// Compares the accumulated `grad` of every parameter of `model` with a
/// central difference of `f`. The caller fills the gradients beforehand.
pub fn check_params<M: Parameters<f64>>(model: &mut M, f: impl Fn(&M) -> f64) -> GradCheck {
    let analytic: Vec<Vec<f64>> = model.params().iter().map(|p| p.grad.iter().copied().collect()).collect();
    let mut report = GradCheck::default();
    for (pi, grads) in analytic.iter().enumerate() {
        for (i, &a) in grads.iter().enumerate() {
            let orig = entry(model, pi, i);
            set_entry(model, pi, i, orig + H);
            let plus = f(model);
            set_entry(model, pi, i, orig - H);
            let minus = f(model);
            set_entry(model, pi, i, orig);
            let n = (plus - minus) / (2.0 * H);
            report = report.merge(compare([&a], [&n]));
        }
    }
    report
}

fn entry<M: Parameters<f64>>(m: &M, p: usize, i: usize) -> f64 {
    m.params()[p].value.as_slice().expect("standard layout")[i]
}

fn set_entry<M: Parameters<f64>>(m: &mut M, p: usize, i: usize, v: f64) {
    m.params_mut()[p].value.as_slice_mut().expect("standard layout")[i] = v;
}

pub fn normal<D: Dimension, Sh: ndarray::ShapeBuilder<Dim = D>, R: Rng>(shape: Sh, rng: &mut R) -> Array<f64, D> {
    Array::from_shape_simple_fn(shape, || rng.sample(StandardNormal))
}

pub fn uniform<D: Dimension, Sh: ndarray::ShapeBuilder<Dim = D>, R: Rng>(shape: Sh, lo: f64, hi: f64, rng: &mut R) -> Array<f64, D> {
    Array::from_shape_simple_fn(shape, || rng.random_range(lo..hi))
}

/// Small networks whose gradients can be checked entry by entry.
pub fn tiny_model() -> ModelConfig {
    ModelConfig {
        latent_dim: 6,
        conv_channels: 3,
        kernel: 3,
        conv_strides: vec![2, 1],
        hidden_width: 8,
        input_size: 9,
    }
}

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn smoke_config() -> Config {
    let text = std::fs::read_to_string(repo_root().join("configs/smoke.toml")).expect("smoke preset exists");
    Config::from_toml_str(&text).expect("smoke preset parses")
}

//! Finite-difference checks for every differentiable operation, each on
//! several random instances.

use iscm_core::curiosity::{
    crossmodal_discrimination_grad, crossmodal_discrimination_loss, objective, CrossmodalTargets, CuriosityBatch,
    CuriosityModels, Objective,
};
use iscm_core::models::{
    Actor, Critic, CrossmodalHead, CrossmodalMode, ForwardModel, InverseModel, VisualEncoder, ACTION_DIM, VISUAL_CHANNELS,
};
use iscm_core::nn::{Activation, Conv2d, Linear, Mlp, Parameters};
use ndarray::{Array1, Array2, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_params, compare, normal, numeric_grad, tiny_model, uniform, GradCheck};

pub const INSTANCES: u64 = 5;

fn project2(y: &Array2<f64>, w: &Array2<f64>) -> f64 {
    (y * w).sum()
}

fn rng(op: u64, instance: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(op * 1000 + instance)
}

pub fn linear() -> GradCheck {
    (0..INSTANCES).fold(GradCheck::default(), |acc, k| {
        let mut r = rng(1, k);
        let mut lin = Linear::<f64>::new("l", 4, 3, &mut r);
        let x: Array2<f64> = normal((5, 4), &mut r);
        let w: Array2<f64> = normal((5, 3), &mut r);
        lin.zero_grad();
        let dx = lin.backward(x.view(), w.view(), true).unwrap();
        let c = check_params(&mut lin, |m| project2(&m.forward(x.view()), &w));
        let n = numeric_grad(&x, |x| project2(&lin.forward(x.view()), &w));
        acc.merge(c).merge(compare(dx.iter(), n.iter()))
    })
}

pub fn conv2d() -> GradCheck {
    (0..INSTANCES).fold(GradCheck::default(), |acc, k| {
        let mut r = rng(2, k);
        let stride = 1 + (k as usize % 2);
        let mut conv = Conv2d::<f64>::new("c", 2, 3, 3, stride, &mut r);
        let x: Array4<f64> = normal((2, 2, 7, 7), &mut r);
        let (ho, wo) = conv.output_hw(7, 7).unwrap();
        let w: Array4<f64> = normal((2, 3, ho, wo), &mut r);
        conv.zero_grad();
        let dx = conv.backward(x.view(), w.view(), true).unwrap();
        let c = check_params(&mut conv, |m| (&m.forward(x.view()) * &w).sum());
        let n = numeric_grad(&x, |x| (&conv.forward(x.view()) * &w).sum());
        acc.merge(c).merge(compare(dx.iter(), n.iter()))
    })
}

pub fn mlp() -> GradCheck {
    let acts = [Activation::Identity, Activation::Tanh, Activation::Sigmoid];
    (0..INSTANCES).fold(GradCheck::default(), |acc, k| {
        let mut r = rng(3, k);
        let act = acts[k as usize % acts.len()];
        let mut net = Mlp::<f64>::new("m", &[4, 6, 5, 3], act, &mut r);
        let x: Array2<f64> = normal((4, 4), &mut r);
        let w: Array2<f64> = normal((4, 3), &mut r);
        net.zero_grad();
        let tape = net.forward_tape(x.clone());
        let dx = net.backward(&tape, w.clone());
        let c = check_params(&mut net, |m| project2(&m.forward(x.view()), &w));
        let n = numeric_grad(&x, |x| project2(&net.forward(x.view()), &w));
        acc.merge(c).merge(compare(dx.iter(), n.iter()))
    })
}

fn pixels(n: usize, r: &mut ChaCha8Rng) -> Array4<f64> {
    let s = tiny_model().input_size;
    uniform((n, VISUAL_CHANNELS, s, s), 0.0, 1.0, r)
}

pub fn encoder() -> GradCheck {
    (0..INSTANCES).fold(GradCheck::default(), |acc, k| {
        let mut r = rng(4, k);
        let cfg = tiny_model();
        let mut enc = VisualEncoder::<f64>::new(&cfg, &mut r);
        let x = pixels(2, &mut r);
        let w: Array2<f64> = normal((2, cfg.latent_dim), &mut r);
        enc.zero_grad();
        let tape = enc.forward_tape(x.clone()).unwrap();
        let dx = enc.backward(&tape, w.view(), true).unwrap();
        let c = check_params(&mut enc, |m| project2(&m.encode(x.view()).unwrap(), &w));
        let n = numeric_grad(&x, |x| project2(&enc.encode(x.view()).unwrap(), &w));
        acc.merge(c).merge(compare(dx.iter(), n.iter()))
    })
}

pub fn forward_model() -> GradCheck {
    (0..INSTANCES).fold(GradCheck::default(), |acc, k| {
        let mut r = rng(5, k);
        let cfg = tiny_model();
        let mut net = ForwardModel::<f64>::new(&cfg, &mut r);
        let s: Array2<f64> = normal((3, cfg.latent_dim), &mut r);
        let a: Array2<f64> = uniform((3, ACTION_DIM), -1.0, 1.0, &mut r);
        let w: Array2<f64> = normal((3, cfg.latent_dim), &mut r);
        net.zero_grad();
        let tape = net.forward_tape(s.view(), a.view()).unwrap();
        let (ds, da) = net.backward(&tape, w.clone());
        let c = check_params(&mut net, |m| project2(&m.predict(s.view(), a.view()).unwrap(), &w));
        let ns = numeric_grad(&s, |s| project2(&net.predict(s.view(), a.view()).unwrap(), &w));
        let na = numeric_grad(&a, |a| project2(&net.predict(s.view(), a.view()).unwrap(), &w));
        acc.merge(c).merge(compare(ds.iter(), ns.iter())).merge(compare(da.iter(), na.iter()))
    })
}

pub fn inverse_model() -> GradCheck {
    (0..INSTANCES).fold(GradCheck::default(), |acc, k| {
        let mut r = rng(6, k);
        let cfg = tiny_model();
        let mut net = InverseModel::<f64>::new(&cfg, &mut r);
        let s: Array2<f64> = normal((3, cfg.latent_dim), &mut r);
        let s2: Array2<f64> = normal((3, cfg.latent_dim), &mut r);
        let w: Array2<f64> = normal((3, ACTION_DIM), &mut r);
        net.zero_grad();
        let tape = net.forward_tape(s.view(), s2.view()).unwrap();
        let (ds, ds2) = net.backward(&tape, w.clone());
        let c = check_params(&mut net, |m| project2(&m.predict(s.view(), s2.view()).unwrap(), &w));
        let ns = numeric_grad(&s, |s| project2(&net.predict(s.view(), s2.view()).unwrap(), &w));
        let ns2 = numeric_grad(&s2, |s2| project2(&net.predict(s.view(), s2.view()).unwrap(), &w));
        acc.merge(c).merge(compare(ds.iter(), ns.iter())).merge(compare(ds2.iter(), ns2.iter()))
    })
}

pub fn crossmodal_head(mode: CrossmodalMode) -> GradCheck {
    (0..INSTANCES).fold(GradCheck::default(), |acc, k| {
        let mut r = rng(7 + mode.output_dim() as u64, k);
        let cfg = tiny_model();
        let mut head = CrossmodalHead::<f64>::new(&cfg, mode, &mut r);
        let s: Array2<f64> = normal((3, cfg.latent_dim), &mut r);
        let w: Array2<f64> = normal((3, mode.output_dim()), &mut r);
        head.zero_grad();
        let tape = head.forward_tape(s.view()).unwrap();
        let ds = head.backward(&tape, w.clone());
        let c = check_params(&mut head, |m| project2(&m.predict(s.view()).unwrap(), &w));
        let ns = numeric_grad(&s, |s| project2(&head.predict(s.view()).unwrap(), &w));
        acc.merge(c).merge(compare(ds.iter(), ns.iter()))
    })
}

pub fn actor() -> GradCheck {
    (0..INSTANCES).fold(GradCheck::default(), |acc, k| {
        let mut r = rng(60, k);
        let cfg = tiny_model();
        let mut net = Actor::<f64>::new(&cfg, &mut r);
        let s: Array2<f64> = normal((3, cfg.latent_dim), &mut r);
        let w: Array2<f64> = normal((3, ACTION_DIM), &mut r);
        net.zero_grad();
        let tape = net.forward_tape(s.view()).unwrap();
        let ds = net.backward(&tape, w.clone());
        let c = check_params(&mut net, |m| project2(&m.act(s.view()).unwrap(), &w));
        let ns = numeric_grad(&s, |s| project2(&net.act(s.view()).unwrap(), &w));
        acc.merge(c).merge(compare(ds.iter(), ns.iter()))
    })
}

pub fn critic() -> GradCheck {
    (0..INSTANCES).fold(GradCheck::default(), |acc, k| {
        let mut r = rng(70, k);
        let cfg = tiny_model();
        let mut net = Critic::<f64>::new(&cfg, &mut r);
        let s: Array2<f64> = normal((3, cfg.latent_dim), &mut r);
        let a: Array2<f64> = uniform((3, ACTION_DIM), -1.0, 1.0, &mut r);
        let w: Array2<f64> = normal((3, 1), &mut r);
        net.zero_grad();
        let tape = net.forward_tape(s.view(), a.view()).unwrap();
        let (ds, da) = net.backward(&tape, w.clone());
        let c = check_params(&mut net, |m| project2(&m.value(s.view(), a.view()).unwrap(), &w));
        let ns = numeric_grad(&s, |s| project2(&net.value(s.view(), a.view()).unwrap(), &w));
        let na = numeric_grad(&a, |a| project2(&net.value(s.view(), a.view()).unwrap(), &w));
        acc.merge(c).merge(compare(ds.iter(), ns.iter())).merge(compare(da.iter(), na.iter()))
    })
}

/// Derivative of the weighted discrimination loss w.r.t. the probability.
pub fn discrimination_loss() -> GradCheck {
    (0..INSTANCES).fold(GradCheck::default(), |acc, k| {
        let mut r = rng(80, k);
        let p: f64 = r.random_range(0.05..0.95);
        let omega: f64 = r.random_range(1.0..200.0);
        (0..=1u8).fold(acc, |acc, label| {
            let a = crossmodal_discrimination_grad(p, label, omega).unwrap();
            let x = Array1::from_elem(1, p);
            let n = numeric_grad(&x, |x| crossmodal_discrimination_loss(x[0], label, omega).unwrap());
            acc.merge(compare([&a], n.iter()))
        })
    })
}

pub fn curiosity_models(mode: Option<CrossmodalMode>, r: &mut ChaCha8Rng) -> CuriosityModels<f64> {
    let cfg = tiny_model();
    CuriosityModels {
        encoder: VisualEncoder::new(&cfg, r),
        forward: ForwardModel::new(&cfg, r),
        inverse: InverseModel::new(&cfg, r),
        crossmodal: mode.map(|m| CrossmodalHead::new(&cfg, m, r)),
    }
}

pub fn curiosity_batch(mode: Option<CrossmodalMode>, n: usize, r: &mut ChaCha8Rng) -> CuriosityBatch<f64> {
    let cfg = tiny_model();
    let crossmodal = mode.map(|m| match m {
        CrossmodalMode::Discriminator => CrossmodalTargets::Labels(Array1::from_shape_fn(n, |i| (i % 2) as f64)),
        CrossmodalMode::Regressor => CrossmodalTargets::Features(normal((n, m.output_dim()), r)),
    });
    CuriosityBatch {
        frames: pixels(n, r),
        actions: uniform((n, ACTION_DIM), -1.0, 1.0, r),
        target_latents: normal((n, cfg.latent_dim), r),
        crossmodal,
    }
}

pub fn objective_check(mode: Option<CrossmodalMode>) -> GradCheck {
    (0..INSTANCES).fold(GradCheck::default(), |acc, k| {
        let mut r = rng(90 + mode.map_or(0, |m| m.output_dim() as u64), k);
        let mut models = curiosity_models(mode, &mut r);
        let batch = curiosity_batch(mode, 4, &mut r);
        let obj = match mode {
            None => Objective::Icm { forward_weight: 0.3 },
            Some(_) => Objective::Iscm {
                forward_weight: 0.3,
                crossmodal_weight: 0.25,
                positive_weight: 5.0,
            },
        };
        models.zero_grad();
        objective(&mut models, &batch, obj).unwrap();
        acc.merge(check_params(&mut models, |m| objective(&mut m.clone(), &batch, obj).unwrap().value))
    })
}

/// Every operation with its check result.
pub fn all() -> Vec<(&'static str, GradCheck)> {
    vec![
        ("linear", linear()),
        ("conv2d", conv2d()),
        ("mlp", mlp()),
        ("visual encoder", encoder()),
        ("forward model", forward_model()),
        ("inverse model", inverse_model()),
        ("crossmodal discriminator", crossmodal_head(CrossmodalMode::Discriminator)),
        ("crossmodal regressor", crossmodal_head(CrossmodalMode::Regressor)),
        ("actor", actor()),
        ("critic", critic()),
        ("discrimination loss", discrimination_loss()),
        ("vision-only objective", objective_check(None)),
        ("discriminator objective", objective_check(Some(CrossmodalMode::Discriminator))),
        ("regressor objective", objective_check(Some(CrossmodalMode::Regressor))),
    ]
}

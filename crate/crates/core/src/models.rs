//! Networks: the pixel encoder, the dynamics and crossmodal heads that shape
//! it, and the actor/critic pair acting on its latents.

use ndarray::{concatenate, s, Array2, Array4, ArrayView2, ArrayView4, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Observation, VisualStack, FRAME_CHANNELS, FRAME_SIZE, FRAME_STACK};
use crate::error::{Error, Result};
use crate::nn::{impl_parameters_for_fields, relu_inplace, Activation, Conv2d, Linear, Mlp, MlpTape, Param, Parameters, Scalar};
use crate::sound::AUDIO_FEATURE_DIM;

/// Dimensionality of an action.
pub const ACTION_DIM: usize = 2;
/// Channels of a stacked visual observation.
pub const VISUAL_CHANNELS: usize = FRAME_STACK * FRAME_CHANNELS;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub latent_dim: usize,
    pub conv_channels: usize,
    pub kernel: usize,
    /// One entry per conv layer.
    pub conv_strides: Vec<usize>,
    pub hidden_width: usize,
    /// Side of the square input image.
    pub input_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_dim: 50,
            conv_channels: 32,
            kernel: 3,
            conv_strides: vec![2, 1, 1, 1],
            hidden_width: 256,
            input_size: FRAME_SIZE,
        }
    }
}

impl ModelConfig {
    /// Side length of every conv output, in order.
    pub fn conv_sizes(&self) -> Option<Vec<usize>> {
        let mut side = self.input_size;
        let mut out = Vec::with_capacity(self.conv_strides.len());
        for &stride in &self.conv_strides {
            if stride == 0 || side < self.kernel {
                return None;
            }
            side = (side - self.kernel) / stride + 1;
            out.push(side);
        }
        Some(out)
    }

    pub fn flat_dim(&self) -> usize {
        let side = self.conv_sizes().and_then(|v| v.last().copied()).unwrap_or(0);
        self.conv_channels * side * side
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.conv_channels == 0 || self.hidden_width == 0 || self.kernel == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.conv_strides.is_empty() {
            return Err(Error::Config("model.conv_strides must list at least one layer".into()));
        }
        match self.conv_sizes() {
            Some(sizes) if sizes.iter().all(|&s| s > 0) => Ok(()),
            _ => Err(Error::Config(format!(
                "conv stack (kernel {}, strides {:?}) does not fit a {}x{} input",
                self.kernel, self.conv_strides, self.input_size, self.input_size
            ))),
        }
    }
}

/// Which auditory target the crossmodal head predicts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CrossmodalMode {
    /// Probability that the step made a sound.
    Discriminator,
    /// Random audio features.
    Regressor,
}

impl CrossmodalMode {
    pub fn output_dim(self) -> usize {
        match self {
            CrossmodalMode::Discriminator => 1,
            CrossmodalMode::Regressor => AUDIO_FEATURE_DIM,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CrossmodalMode::Discriminator => "discriminator",
            CrossmodalMode::Regressor => "regressor",
        }
    }
}

impl std::str::FromStr for CrossmodalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "discriminator" => Ok(CrossmodalMode::Discriminator),
            "regressor" => Ok(CrossmodalMode::Regressor),
            other => Err(Error::Usage(format!("unknown mode `{other}` (expected discriminator or regressor)"))),
        }
    }
}

/// Packs visual stacks into a `(batch, 9, 84, 84)` array scaled to `[0, 1]`.
/// Channels are ordered oldest frame first, RGB within a frame.
pub fn visual_batch<T: Scalar>(stacks: &[&VisualStack]) -> Array4<T> {
    let n = FRAME_SIZE;
    let mut out = Array4::zeros((stacks.len(), VISUAL_CHANNELS, n, n));
    let max = T::from_u8(255).expect("u8");
    let lut: Vec<T> = (0..=255u8).map(|v| T::from_u8(v).expect("u8") / max).collect();
    for (b, stack) in stacks.iter().enumerate() {
        for (f, frame) in stack.iter().enumerate() {
            for (i, px) in frame.pixels.chunks_exact(FRAME_CHANNELS).enumerate() {
                let (row, col) = (i / n, i % n);
                for (c, &v) in px.iter().enumerate() {
                    out[[b, f * FRAME_CHANNELS + c, row, col]] = lut[v as usize];
                }
            }
        }
    }
    out
}

pub fn observation_batch<T: Scalar>(obs: &[&Observation]) -> Array4<T> {
    let stacks: Vec<&VisualStack> = obs.iter().map(|o| &o.visual).collect();
    visual_batch(&stacks)
}

/// Conv stack with ReLU after every conv, then a linear map to the latent.
#[derive(Clone, Debug)]
pub struct VisualEncoder<T> {
    convs: Vec<Conv2d<T>>,
    proj: Linear<T>,
    input_size: usize,
}

/// Activations recorded by [`VisualEncoder::forward_tape`].
#[derive(Clone, Debug)]
pub struct EncoderTape<T> {
    conv_inputs: Vec<Array4<T>>,
    flat: Array2<T>,
    pub latent: Array2<T>,
}

impl<T: Scalar> VisualEncoder<T> {
    /// Panics if `config` does not pass [`ModelConfig::validate`].
    pub fn new<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Self {
        if let Err(e) = config.validate() {
            panic!("invalid encoder config: {e}");
        }
        let mut convs = Vec::with_capacity(config.conv_strides.len());
        let mut in_ch = VISUAL_CHANNELS;
        for (i, &stride) in config.conv_strides.iter().enumerate() {
            convs.push(Conv2d::new(&format!("encoder.conv{i}"), in_ch, config.conv_channels, config.kernel, stride, rng));
            in_ch = config.conv_channels;
        }
        let proj = Linear::new("encoder.proj", config.flat_dim(), config.latent_dim, rng);
        Self {
            convs,
            proj,
            input_size: config.input_size,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.proj.outputs()
    }

    fn check(&self, x: &ArrayView4<T>) -> Result<()> {
        let (_, c, h, w) = x.dim();
        if (c, h, w) != (VISUAL_CHANNELS, self.input_size, self.input_size) {
            return Err(Error::shape(
                "encode",
                format!("(N, {VISUAL_CHANNELS}, {0}, {0})", self.input_size),
                format!("{:?}", x.dim()),
            ));
        }
        Ok(())
    }

    pub fn encode(&self, x: ArrayView4<T>) -> Result<Array2<T>> {
        self.check(&x)?;
        let mut h = self.convs[0].forward(x);
        relu_inplace(&mut h);
        for conv in &self.convs[1..] {
            h = conv.forward(h.view());
            relu_inplace(&mut h);
        }
        let n = h.dim().0;
        let flat = h.into_shape_with_order((n, self.proj.inputs())).expect("contiguous");
        Ok(self.proj.forward(flat.view()))
    }

    pub fn forward_tape(&self, x: Array4<T>) -> Result<EncoderTape<T>> {
        self.check(&x.view())?;
        let mut conv_inputs = Vec::with_capacity(self.convs.len());
        let mut h = x;
        for conv in &self.convs {
            let mut y = conv.forward(h.view());
            relu_inplace(&mut y);
            conv_inputs.push(h);
            h = y;
        }
        let n = h.dim().0;
        let flat = h.into_shape_with_order((n, self.proj.inputs())).expect("contiguous");
        let latent = self.proj.forward(flat.view());
        Ok(EncoderTape {
            conv_inputs,
            flat,
            latent,
        })
    }

    /// Accumulates parameter gradients for `dlatent`; returns the pixel
    /// gradient when `need_input_grad` is set.
    pub fn backward(&mut self, tape: &EncoderTape<T>, dlatent: ArrayView2<T>, need_input_grad: bool) -> Option<Array4<T>> {
        let dflat = self.proj.backward(tape.flat.view(), dlatent, true).expect("requested");
        let last = self.convs.len() - 1;
        let out_shape = {
            let x = &tape.conv_inputs[last];
            let (n, _, h, w) = x.dim();
            let (ho, wo) = self.convs[last].output_hw(h, w).expect("fits");
            (n, self.convs[last].out_channels(), ho, wo)
        };
        let mut d = dflat.into_shape_with_order(out_shape).expect("contiguous");
        // The flattened activation is post-ReLU, so its sign is the mask.
        let post = tape.flat.view().into_shape_with_order(out_shape).expect("contiguous");
        mask_relu(&mut d, post);
        for i in (0..self.convs.len()).rev() {
            let need = i > 0 || need_input_grad;
            let dx = self.convs[i].backward(tape.conv_inputs[i].view(), d.view(), need);
            match dx {
                Some(mut dx) if i > 0 => {
                    mask_relu(&mut dx, tape.conv_inputs[i].view());
                    d = dx;
                }
                other => return other,
            }
        }
        None
    }
}

fn mask_relu<T: Scalar>(grad: &mut Array4<T>, post: ArrayView4<T>) {
    ndarray::Zip::from(grad).and(post).for_each(|g, &a| {
        if a <= T::zero() {
            *g = T::zero();
        }
    });
}

impl<T: Scalar> Parameters<T> for VisualEncoder<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut v: Vec<&Param<T>> = self.convs.iter().flat_map(|c| c.params()).collect();
        v.extend(self.proj.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v: Vec<&mut Param<T>> = self.convs.iter_mut().flat_map(|c| c.params_mut()).collect();
        v.extend(self.proj.params_mut());
        v
    }
}

fn concat_cols<T: Scalar>(a: ArrayView2<T>, b: ArrayView2<T>) -> Array2<T> {
    concatenate(Axis(1), &[a, b]).expect("equal row counts")
}

fn check_cols<T>(context: &'static str, x: &ArrayView2<T>, cols: usize) -> Result<()> {
    if x.ncols() != cols {
        return Err(Error::shape(context, format!("(N, {cols})"), format!("{:?}", x.dim())));
    }
    Ok(())
}

fn check_rows<T, U>(context: &'static str, a: &ArrayView2<T>, b: &ArrayView2<U>) -> Result<()> {
    if a.nrows() != b.nrows() {
        return Err(Error::shape(context, a.nrows(), b.nrows()));
    }
    Ok(())
}

/// Predicts the latent `horizon` steps ahead from the current latent and action.
#[derive(Clone, Debug)]
pub struct ForwardModel<T> {
    net: Mlp<T>,
    latent_dim: usize,
}

impl<T: Scalar> ForwardModel<T> {
    pub fn new<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Self {
        let (l, h) = (config.latent_dim, config.hidden_width);
        Self {
            net: Mlp::new("forward", &[l + ACTION_DIM, h, h, l], Activation::Identity, rng),
            latent_dim: l,
        }
    }

    fn input(&self, s: ArrayView2<T>, a: ArrayView2<T>) -> Result<Array2<T>> {
        check_cols("forward_predict latent", &s, self.latent_dim)?;
        check_cols("forward_predict action", &a, ACTION_DIM)?;
        check_rows("forward_predict batch", &s, &a)?;
        Ok(concat_cols(s, a))
    }

    pub fn predict(&self, s: ArrayView2<T>, a: ArrayView2<T>) -> Result<Array2<T>> {
        Ok(self.net.forward(self.input(s, a)?.view()))
    }

    pub fn forward_tape(&self, s: ArrayView2<T>, a: ArrayView2<T>) -> Result<MlpTape<T>> {
        Ok(self.net.forward_tape(self.input(s, a)?))
    }

    /// Returns the gradients w.r.t. the latent and the action inputs.
    pub fn backward(&mut self, tape: &MlpTape<T>, dout: Array2<T>) -> (Array2<T>, Array2<T>) {
        let d = self.net.backward(tape, dout);
        let l = self.latent_dim;
        (d.slice(s![.., ..l]).to_owned(), d.slice(s![.., l..]).to_owned())
    }
}

/// Recovers the action from a pair of latents.
#[derive(Clone, Debug)]
pub struct InverseModel<T> {
    net: Mlp<T>,
    latent_dim: usize,
}

impl<T: Scalar> InverseModel<T> {
    pub fn new<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Self {
        let (l, h) = (config.latent_dim, config.hidden_width);
        Self {
            net: Mlp::new("inverse", &[2 * l, h, h, ACTION_DIM], Activation::Identity, rng),
            latent_dim: l,
        }
    }

    fn input(&self, s: ArrayView2<T>, s_next: ArrayView2<T>) -> Result<Array2<T>> {
        check_cols("inverse_predict latent", &s, self.latent_dim)?;
        check_cols("inverse_predict next latent", &s_next, self.latent_dim)?;
        check_rows("inverse_predict batch", &s, &s_next)?;
        Ok(concat_cols(s, s_next))
    }

    pub fn predict(&self, s: ArrayView2<T>, s_next: ArrayView2<T>) -> Result<Array2<T>> {
        Ok(self.net.forward(self.input(s, s_next)?.view()))
    }

    pub fn forward_tape(&self, s: ArrayView2<T>, s_next: ArrayView2<T>) -> Result<MlpTape<T>> {
        Ok(self.net.forward_tape(self.input(s, s_next)?))
    }

    /// Returns the gradients w.r.t. the first and second latent.
    pub fn backward(&mut self, tape: &MlpTape<T>, dout: Array2<T>) -> (Array2<T>, Array2<T>) {
        let d = self.net.backward(tape, dout);
        let l = self.latent_dim;
        (d.slice(s![.., ..l]).to_owned(), d.slice(s![.., l..]).to_owned())
    }
}

/// Predicts the auditory target of a step from its visual latent.
#[derive(Clone, Debug)]
pub struct CrossmodalHead<T> {
    net: Mlp<T>,
    mode: CrossmodalMode,
}

impl<T: Scalar> CrossmodalHead<T> {
    pub fn new<R: Rng + ?Sized>(config: &ModelConfig, mode: CrossmodalMode, rng: &mut R) -> Self {
        let output = match mode {
            CrossmodalMode::Discriminator => Activation::Sigmoid,
            CrossmodalMode::Regressor => Activation::Identity,
        };
        let widths = [config.latent_dim, config.hidden_width, mode.output_dim()];
        Self {
            net: Mlp::new("crossmodal", &widths, output, rng),
            mode,
        }
    }

    pub fn mode(&self) -> CrossmodalMode {
        self.mode
    }

    pub fn predict(&self, s: ArrayView2<T>) -> Result<Array2<T>> {
        check_cols("crossmodal_predict", &s, self.net.inputs())?;
        Ok(self.net.forward(s))
    }

    pub fn forward_tape(&self, s: ArrayView2<T>) -> Result<MlpTape<T>> {
        check_cols("crossmodal_predict", &s, self.net.inputs())?;
        Ok(self.net.forward_tape(s.to_owned()))
    }

    pub fn backward(&mut self, tape: &MlpTape<T>, dout: Array2<T>) -> Array2<T> {
        self.net.backward(tape, dout)
    }
}

/// Deterministic policy with tanh-squashed output.
#[derive(Clone, Debug)]
pub struct Actor<T> {
    net: Mlp<T>,
}

impl<T: Scalar> Actor<T> {
    pub fn new<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Self {
        let (l, h) = (config.latent_dim, config.hidden_width);
        Self {
            net: Mlp::new("actor", &[l, h, h, ACTION_DIM], Activation::Tanh, rng),
        }
    }

    pub fn act(&self, s: ArrayView2<T>) -> Result<Array2<T>> {
        check_cols("act", &s, self.net.inputs())?;
        Ok(self.net.forward(s))
    }

    pub fn forward_tape(&self, s: ArrayView2<T>) -> Result<MlpTape<T>> {
        check_cols("act", &s, self.net.inputs())?;
        Ok(self.net.forward_tape(s.to_owned()))
    }

    pub fn backward(&mut self, tape: &MlpTape<T>, dout: Array2<T>) -> Array2<T> {
        self.net.backward(tape, dout)
    }
}

/// Action-value function over a latent and an action.
#[derive(Clone, Debug)]
pub struct Critic<T> {
    net: Mlp<T>,
    latent_dim: usize,
}

impl<T: Scalar> Critic<T> {
    pub fn new<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Self {
        let (l, h) = (config.latent_dim, config.hidden_width);
        Self {
            net: Mlp::new("critic", &[l + ACTION_DIM, h, h, 1], Activation::Identity, rng),
            latent_dim: l,
        }
    }

    fn input(&self, s: ArrayView2<T>, a: ArrayView2<T>) -> Result<Array2<T>> {
        check_cols("value latent", &s, self.latent_dim)?;
        check_cols("value action", &a, ACTION_DIM)?;
        check_rows("value batch", &s, &a)?;
        Ok(concat_cols(s, a))
    }

    /// `(N, 1)` values.
    pub fn value(&self, s: ArrayView2<T>, a: ArrayView2<T>) -> Result<Array2<T>> {
        Ok(self.net.forward(self.input(s, a)?.view()))
    }

    pub fn forward_tape(&self, s: ArrayView2<T>, a: ArrayView2<T>) -> Result<MlpTape<T>> {
        Ok(self.net.forward_tape(self.input(s, a)?))
    }

    /// Returns the gradients w.r.t. the latent and the action.
    pub fn backward(&mut self, tape: &MlpTape<T>, dout: Array2<T>) -> (Array2<T>, Array2<T>) {
        let d = self.net.backward(tape, dout);
        let l = self.latent_dim;
        (d.slice(s![.., ..l]).to_owned(), d.slice(s![.., l..]).to_owned())
    }
}

impl_parameters_for_fields!(ForwardModel { net });
impl_parameters_for_fields!(InverseModel { net });
impl_parameters_for_fields!(CrossmodalHead { net });
impl_parameters_for_fields!(Actor { net });
impl_parameters_for_fields!(Critic { net });

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(shape: (usize, usize), rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array::from_shape_fn(shape, |_| StandardNormal.sample(rng))
    }

    #[test]
    fn default_conv_geometry() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.conv_sizes().unwrap(), vec![41, 39, 37, 35]);
        assert_eq!(cfg.flat_dim(), 32 * 35 * 35);
    }

    #[test]
    fn parameter_counts_match_hand_computation() {
        let cfg = ModelConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = VisualEncoder::<f32>::new(&cfg, &mut rng);
        let conv = (9 * 9 + 1) * 32 + 3 * ((32 * 9 + 1) * 32);
        assert_eq!(enc.num_params(), conv + 39200 * 50 + 50);
        let fwd = ForwardModel::<f32>::new(&cfg, &mut rng);
        assert_eq!(fwd.num_params(), 53 * 256 + 257 * 256 + 257 * 50);
        let inv = InverseModel::<f32>::new(&cfg, &mut rng);
        assert_eq!(inv.num_params(), 101 * 256 + 256 * 257 + 257 * 2);
        let disc = CrossmodalHead::<f32>::new(&cfg, CrossmodalMode::Discriminator, &mut rng);
        assert_eq!(disc.num_params(), 51 * 256 + 257);
        let reg = CrossmodalHead::<f32>::new(&cfg, CrossmodalMode::Regressor, &mut rng);
        assert_eq!(reg.num_params(), 51 * 256 + 257 * 36);
        let actor = Actor::<f32>::new(&cfg, &mut rng);
        assert_eq!(actor.num_params(), 51 * 256 + 257 * 256 + 257 * 2);
        let critic = Critic::<f32>::new(&cfg, &mut rng);
        assert_eq!(critic.num_params(), 53 * 256 + 257 * 256 + 257);
    }

    #[test]
    fn small_encoder_output_and_determinism() {
        let cfg = ModelConfig {
            latent_dim: 6,
            conv_channels: 4,
            input_size: 16,
            ..ModelConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc = VisualEncoder::<f64>::new(&cfg, &mut rng);
        let x = Array4::from_shape_fn((2, 9, 16, 16), |(a, b, c, d)| ((a + b * 3 + c * 5 + d * 7) % 11) as f64 / 10.0);
        let a = enc.encode(x.view()).unwrap();
        let b = enc.encode(x.view()).unwrap();
        assert_eq!(a.dim(), (2, 6));
        assert_eq!(a, b);
        assert_eq!(enc.forward_tape(x).unwrap().latent, a);
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_latent() {
        let cfg = ModelConfig {
            latent_dim: 5,
            conv_channels: 3,
            input_size: 16,
            ..ModelConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut enc = VisualEncoder::<f64>::new(&cfg, &mut rng);
        for p in enc.params_mut() {
            if p.name().ends_with("bias") {
                p.value.fill(0.0);
            }
        }
        let z = enc.encode(Array4::zeros((1, 9, 16, 16)).view()).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wrong_shapes_are_errors() {
        let cfg = ModelConfig {
            latent_dim: 4,
            conv_channels: 2,
            input_size: 16,
            hidden_width: 8,
            ..ModelConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let enc = VisualEncoder::<f64>::new(&cfg, &mut rng);
        assert!(matches!(enc.encode(Array4::zeros((1, 6, 16, 16)).view()), Err(Error::Shape { .. })));
        let fwd = ForwardModel::<f64>::new(&cfg, &mut rng);
        assert!(fwd.predict(Array2::zeros((3, 4)).view(), Array2::zeros((2, 2)).view()).is_err());
        let critic = Critic::<f64>::new(&cfg, &mut rng);
        assert!(critic.value(Array2::zeros((1, 5)).view(), Array2::zeros((1, 2)).view()).is_err());
    }

    #[test]
    fn head_ranges() {
        let cfg = ModelConfig {
            latent_dim: 8,
            hidden_width: 16,
            ..ModelConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let disc = CrossmodalHead::<f64>::new(&cfg, CrossmodalMode::Discriminator, &mut rng);
        let reg = CrossmodalHead::<f64>::new(&cfg, CrossmodalMode::Regressor, &mut rng);
        let actor = Actor::<f64>::new(&cfg, &mut rng);
        let s = randn((1000, 8), &mut rng);
        let p = disc.predict(s.view()).unwrap();
        assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
        assert_eq!(reg.predict(s.view()).unwrap().ncols(), 36);
        let a = actor.act((&s * 50.0).view()).unwrap();
        assert!(a.iter().all(|&v| (-1.0..=1.0).contains(&v)));
    }

    #[test]
    fn visual_batch_scales_and_orders_channels() {
        use crate::env::{Environment, EnvConfig, PushWorld};
        let mut env = PushWorld::new(EnvConfig::default()).unwrap();
        let obs = env.reset(0);
        let x = observation_batch::<f32>(&[&obs]);
        assert_eq!(x.dim(), (1, 9, 84, 84));
        let px = obs.visual[1].pixel(0, 0);
        assert_eq!(x[[0, 3, 0, 0]], px[0] as f32 / 255.0);
        assert!(x.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn config_rejects_oversized_kernels() {
        let cfg = ModelConfig {
            input_size: 4,
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
        ModelConfig::default().validate().unwrap();
    }
}

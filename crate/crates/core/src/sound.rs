//! Impact audio: modal synthesis, per-step mixing, STFT spectrograms, and the
//! two fixed auditory encodings (silence discrimination and random features).

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array2, Array4, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::env::MaterialPreset;
use crate::error::{Error, Result};
use crate::nn::{relu_inplace, Conv2d, Linear, Parameters, Scalar};

/// Side length of a spectrogram image.
pub const SPEC_SIZE: usize = 32;
/// Number of spectrograms in an auditory observation.
pub const SPEC_STACK: usize = 3;
/// Width of the regression target produced by [`RandomAudioEncoder`].
pub const AUDIO_FEATURE_DIM: usize = 36;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SoundConfig {
    /// Whether the environment renders audio at all.
    pub enabled: bool,
    pub sample_rate: u32,
    /// Seconds of audio per control step.
    pub step_duration: f64,
    /// Half-width of the uniform background noise.
    pub noise_amplitude: f64,
    /// Silence threshold on mean stack magnitude; calibrated when absent.
    pub silence_threshold: Option<f64>,
    pub stft_window: usize,
    pub stft_hop: usize,
    pub encoder_seed: u64,
    /// Impulse (N·s) at which the saturating gain reaches tanh(1).
    pub impulse_ref: f64,
    /// Seed of the noise-only steps used to calibrate the silence threshold.
    pub calibration_seed: u64,
    pub calibration_steps: usize,
}

impl Default for SoundConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            sample_rate: 16_000,
            step_duration: 0.1,
            noise_amplitude: 0.005,
            silence_threshold: None,
            stft_window: 256,
            stft_hop: 64,
            encoder_seed: 0x5eed_a0d1,
            impulse_ref: 0.05,
            calibration_seed: 0xca11b,
            calibration_steps: 1000,
        }
    }
}

impl SoundConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::Config("sound.sample_rate must be positive".into()));
        }
        if !(self.step_duration > 0.0) {
            return Err(Error::Config("sound.step_duration must be positive".into()));
        }
        if !(self.stft_window > self.stft_hop && self.stft_hop > 0) {
            return Err(Error::Config("sound requires stft_window > stft_hop > 0".into()));
        }
        if self.samples_per_step() < self.stft_window {
            return Err(Error::Config("sound.step_duration too short for one STFT window".into()));
        }
        if !(self.noise_amplitude >= 0.0) {
            return Err(Error::Config("sound.noise_amplitude must be non-negative".into()));
        }
        if let Some(t) = self.silence_threshold {
            if !(t > 0.0) {
                return Err(Error::Config("sound.silence_threshold must be positive".into()));
            }
        }
        if !(self.impulse_ref > 0.0) {
            return Err(Error::Config("sound.impulse_ref must be positive".into()));
        }
        Ok(())
    }

    pub fn samples_per_step(&self) -> usize {
        (self.sample_rate as f64 * self.step_duration).round() as usize
    }

    pub fn nyquist(&self) -> f64 {
        self.sample_rate as f64 / 2.0
    }
}

/// Mono audio clipped to `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn silent(config: &SoundConfig) -> Self {
        Self {
            samples: vec![0.0; config.samples_per_step()],
            sample_rate: config.sample_rate,
        }
    }

    pub fn rms(&self) -> f64 {
        (self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len().max(1) as f64).sqrt()
    }
}

/// 32x32 log-magnitude spectrogram scaled to `[0, 1]`; rows are frequency
/// (low to high), columns are time.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub magnitudes: Array2<f32>,
}

impl Spectrogram {
    pub fn zeros() -> Self {
        Self {
            magnitudes: Array2::zeros((SPEC_SIZE, SPEC_SIZE)),
        }
    }

    pub fn filled(value: f32) -> Self {
        Self {
            magnitudes: Array2::from_elem((SPEC_SIZE, SPEC_SIZE), value),
        }
    }

    pub fn mean(&self) -> f64 {
        self.magnitudes.iter().map(|&v| v as f64).sum::<f64>() / (SPEC_SIZE * SPEC_SIZE) as f64
    }
}

/// The three most recent spectrograms, oldest first.
pub type SpectrogramStack = [Arc<Spectrogram>; SPEC_STACK];

/// Fixed auditory encoding `φ(o^A)` of one observation.
#[derive(Clone, Debug, PartialEq)]
pub enum AuditoryFeature {
    Label(u8),
    Vector(Vec<f32>),
}

/// One sounding contact inside a control step.
#[derive(Clone, Debug)]
pub struct SoundEvent {
    pub impulse: f64,
    pub preset: Arc<MaterialPreset>,
    /// Seconds since the start of the step.
    pub onset: f64,
}

/// Saturating excitation gain, zero at zero impulse.
pub fn impulse_gain(impulse: f64, impulse_ref: f64) -> f64 {
    (impulse / impulse_ref).tanh()
}

fn check_preset(preset: &MaterialPreset, config: &SoundConfig) -> Result<()> {
    let nyquist = config.nyquist();
    if preset.modal_freqs.len() != preset.modal_dampings.len() || preset.modal_freqs.len() != preset.modal_gains.len() {
        return Err(Error::Config(format!("preset `{}` has mismatched modal lists", preset.name)));
    }
    if let Some(f) = preset.modal_freqs.iter().find(|&&f| !(f > 0.0 && f < nyquist)) {
        return Err(Error::Config(format!(
            "preset `{}` mode at {f} Hz outside (0, {nyquist}) Hz",
            preset.name
        )));
    }
    if preset.modal_dampings.iter().any(|&d| !(d >= 0.0)) || preset.modal_gains.iter().any(|&g| !(g >= 0.0)) {
        return Err(Error::Config(format!("preset `{}` has negative damping or gain", preset.name)));
    }
    Ok(())
}

/// Unclipped modal response `Σ gain·g(impulse)·exp(-damping·t)·sin(2π·freq·t)`
/// for `len` samples starting at `t = 0`.
pub fn render_modes(impulse: f64, preset: &MaterialPreset, config: &SoundConfig, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    accumulate_modes(&mut out, impulse, preset, config);
    out
}

fn accumulate_modes(buf: &mut [f64], impulse: f64, preset: &MaterialPreset, config: &SoundConfig) {
    let amp = impulse_gain(impulse, config.impulse_ref);
    if amp == 0.0 {
        return;
    }
    let dt = 1.0 / config.sample_rate as f64;
    for ((&freq, &damping), &gain) in preset
        .modal_freqs
        .iter()
        .zip(&preset.modal_dampings)
        .zip(&preset.modal_gains)
    {
        let a = gain * amp;
        let w = 2.0 * PI * freq;
        for (n, s) in buf.iter_mut().enumerate() {
            let t = n as f64 * dt;
            *s += a * (-damping * t).exp() * (w * t).sin();
        }
    }
}

/// Impact waveform for one contact, covering one control step.
pub fn synthesize_impact(impulse: f64, preset: &MaterialPreset, config: &SoundConfig) -> Result<Waveform> {
    if !(impulse >= 0.0) {
        return Err(Error::Domain(format!("impulse must be non-negative, got {impulse}")));
    }
    check_preset(preset, config)?;
    let mut samples = render_modes(impulse, preset, config, config.samples_per_step());
    clip(&mut samples);
    Ok(Waveform {
        samples,
        sample_rate: config.sample_rate,
    })
}

fn clip(samples: &mut [f64]) {
    for s in samples {
        *s = s.clamp(-1.0, 1.0);
    }
}

/// Sum of onset-shifted impacts plus uniform background noise, clipped.
///
/// Exactly one noise sample is drawn per output sample regardless of the
/// events, so a fixed RNG state yields the same noise floor for any event list.
pub fn mix_step_audio<R: Rng + ?Sized>(events: &[SoundEvent], config: &SoundConfig, rng: &mut R) -> Result<Waveform> {
    let n = config.samples_per_step();
    let mut samples = vec![0.0; n];
    for ev in events {
        if !(ev.onset >= 0.0 && ev.onset < config.step_duration) {
            return Err(Error::Domain(format!(
                "onset {} outside [0, {})",
                ev.onset, config.step_duration
            )));
        }
        if !(ev.impulse >= 0.0) {
            return Err(Error::Domain(format!("impulse must be non-negative, got {}", ev.impulse)));
        }
        check_preset(&ev.preset, config)?;
        let start = ((ev.onset * config.sample_rate as f64).round() as usize).min(n);
        accumulate_modes(&mut samples[start..], ev.impulse, &ev.preset, config);
    }
    let a = config.noise_amplitude;
    for s in samples.iter_mut() {
        let u: f64 = rng.random_range(-1.0..1.0);
        *s += a * u;
    }
    clip(&mut samples);
    Ok(Waveform {
        samples,
        sample_rate: config.sample_rate,
    })
}

/// Short-time Fourier transform with a symmetric Hann window and no padding.
pub struct Stft {
    window: Vec<f64>,
    hop: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(window_len: usize, hop: usize) -> Self {
        let denom = (window_len - 1) as f64;
        let window = (0..window_len)
            .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / denom).cos())
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(window_len);
        Self { window, hop, fft }
    }

    pub fn from_config(config: &SoundConfig) -> Self {
        Self::new(config.stft_window, config.stft_hop)
    }

    pub fn bins(&self) -> usize {
        self.window.len() / 2 + 1
    }

    /// Largest magnitude any waveform bounded by 1 can produce in one bin.
    pub fn max_magnitude(&self) -> f64 {
        self.window.iter().sum()
    }

    /// `frames x bins` magnitude matrix.
    pub fn magnitudes(&self, samples: &[f64]) -> Array2<f64> {
        let n = self.window.len();
        let frames = if samples.len() >= n { (samples.len() - n) / self.hop + 1 } else { 0 };
        let bins = self.bins();
        let mut out = Array2::zeros((frames, bins));
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        for f in 0..frames {
            let start = f * self.hop;
            for (b, (&x, &w)) in buf.iter_mut().zip(samples[start..start + n].iter().zip(&self.window)) {
                *b = Complex::new(x * w, 0.0);
            }
            self.fft.process(&mut buf);
            for k in 0..bins {
                out[[f, k]] = buf[k].norm();
            }
        }
        out
    }
}

/// Global scale: `ln(1 + max magnitude)`, so every spectrogram lands in [0, 1].
pub fn spectrogram_normalizer(config: &SoundConfig) -> f64 {
    Stft::from_config(config).max_magnitude().ln_1p()
}

/// Bilinear resize with corner alignment (endpoints map to endpoints).
pub fn resize_bilinear(src: ArrayView2<f64>, rows: usize, cols: usize) -> Array2<f64> {
    let (h, w) = src.dim();
    let coord = |i: usize, out: usize, inp: usize| -> (usize, usize, f64) {
        if out <= 1 || inp <= 1 {
            return (0, 0, 0.0);
        }
        let x = i as f64 * (inp - 1) as f64 / (out - 1) as f64;
        let lo = (x.floor() as usize).min(inp - 1);
        let hi = (lo + 1).min(inp - 1);
        (lo, hi, x - lo as f64)
    };
    Array2::from_shape_fn((rows, cols), |(r, c)| {
        let (r0, r1, fr) = coord(r, rows, h);
        let (c0, c1, fc) = coord(c, cols, w);
        let top = src[[r0, c0]] * (1.0 - fc) + src[[r0, c1]] * fc;
        let bottom = src[[r1, c0]] * (1.0 - fc) + src[[r1, c1]] * fc;
        top * (1.0 - fr) + bottom * fr
    })
}

/// STFT → `ln(1+|X|)` → 32x32 resize (frequency rows, time columns) → global scale.
pub fn stft_spectrogram(w: &Waveform, config: &SoundConfig) -> Result<Spectrogram> {
    let stft = Stft::from_config(config);
    spectrogram_with(&stft, w, config)
}

fn spectrogram_with(stft: &Stft, w: &Waveform, config: &SoundConfig) -> Result<Spectrogram> {
    if w.samples.len() != config.samples_per_step() {
        return Err(Error::shape(
            "stft_spectrogram",
            config.samples_per_step(),
            w.samples.len(),
        ));
    }
    let mags = stft.magnitudes(&w.samples).mapv(f64::ln_1p);
    let norm = stft.max_magnitude().ln_1p();
    let resized = resize_bilinear(mags.t(), SPEC_SIZE, SPEC_SIZE);
    Ok(Spectrogram {
        magnitudes: resized.mapv(|v| (v / norm).clamp(0.0, 1.0) as f32),
    })
}

/// Mean magnitude over all values of a stack.
pub fn stack_mean(stack: &SpectrogramStack) -> f64 {
    stack.iter().map(|s| s.mean()).sum::<f64>() / SPEC_STACK as f64
}

/// 1 iff the mean stack magnitude strictly exceeds `threshold`.
pub fn discriminate(stack: &SpectrogramStack, threshold: f64) -> u8 {
    u8::from(stack_mean(stack) > threshold)
}

/// Twice the largest single-spectrogram mean over noise-only steps.
pub fn calibrate_threshold(config: &SoundConfig) -> Result<f64> {
    let stft = Stft::from_config(config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.calibration_seed);
    let mut max_mean: f64 = 0.0;
    for _ in 0..config.calibration_steps.max(1) {
        let w = mix_step_audio(&[], config, &mut rng)?;
        max_mean = max_mean.max(spectrogram_with(&stft, &w, config)?.mean());
    }
    // A silent floor (no noise) would give a zero threshold; keep it positive.
    Ok((2.0 * max_mean).max(1e-6))
}

/// Threshold from the config, or the calibrated value when unset.
pub fn resolve_threshold(config: &SoundConfig) -> Result<f64> {
    match config.silence_threshold {
        Some(t) => Ok(t),
        None => calibrate_threshold(config),
    }
}

/// Frozen, never-trained convolutional encoder producing 36-d regression
/// targets from a spectrogram stack.
#[derive(Clone, Debug)]
pub struct RandomAudioEncoder<T> {
    conv1: Conv2d<T>,
    conv2: Conv2d<T>,
    proj: Linear<T>,
}

impl<T: Scalar> RandomAudioEncoder<T> {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let conv1 = Conv2d::new("audio.conv0", SPEC_STACK, 16, 3, 2, &mut rng);
        let conv2 = Conv2d::new("audio.conv1", 16, 32, 3, 2, &mut rng);
        let (h1, _) = conv1.output_hw(SPEC_SIZE, SPEC_SIZE).expect("fits");
        let (h2, _) = conv2.output_hw(h1, h1).expect("fits");
        let proj = Linear::new("audio.proj", 32 * h2 * h2, AUDIO_FEATURE_DIM, &mut rng);
        Self { conv1, conv2, proj }
    }

    /// Encodes a `(batch, 3, 32, 32)` array.
    pub fn encode_batch(&self, x: ndarray::ArrayView4<T>) -> Result<Array2<T>> {
        let (_, c, h, w) = x.dim();
        if (c, h, w) != (SPEC_STACK, SPEC_SIZE, SPEC_SIZE) {
            return Err(Error::shape("random_encode", "(N, 3, 32, 32)", format!("{:?}", x.dim())));
        }
        let mut h1 = self.conv1.forward(x);
        relu_inplace(&mut h1);
        let mut h2 = self.conv2.forward(h1.view());
        relu_inplace(&mut h2);
        let n = h2.dim().0;
        let flat = h2.into_shape_with_order((n, self.proj.inputs())).expect("contiguous");
        Ok(self.proj.forward(flat.view()))
    }

    pub fn encode(&self, stack: &SpectrogramStack) -> Vec<T> {
        let x = stack_to_array::<T>(std::slice::from_ref(stack));
        self.encode_batch(x.view())
            .expect("stack shape is fixed")
            .into_raw_vec_and_offset()
            .0
    }

    /// Upper bound on the L2 Lipschitz constant: each stride-2, 3x3 conv is
    /// bounded by 2·‖W‖_F (every input pixel feeds at most 4 windows), ReLU
    /// by 1, the projection by ‖W‖_F.
    pub fn lipschitz_bound(&self) -> f64 {
        let fro = |p: &crate::nn::Param<T>| p.value.iter().map(|v| v.to_f64().unwrap().powi(2)).sum::<f64>().sqrt();
        let overlap = |c: &Conv2d<T>| c.kernel().div_ceil(c.stride()) as f64;
        overlap(&self.conv1) * fro(&self.conv1.weight) * overlap(&self.conv2) * fro(&self.conv2.weight) * fro(&self.proj.weight)
    }
}

impl<T: Scalar> Parameters<T> for RandomAudioEncoder<T> {
    fn params(&self) -> Vec<&crate::nn::Param<T>> {
        let mut v = self.conv1.params();
        v.extend(self.conv2.params());
        v.extend(self.proj.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut crate::nn::Param<T>> {
        let mut v = self.conv1.params_mut();
        v.extend(self.conv2.params_mut());
        v.extend(self.proj.params_mut());
        v
    }
}

/// Packs stacks into a `(batch, 3, 32, 32)` array.
pub fn stack_to_array<T: Scalar>(stacks: &[SpectrogramStack]) -> Array4<T> {
    let mut out = Array4::zeros((stacks.len(), SPEC_STACK, SPEC_SIZE, SPEC_SIZE));
    for (b, stack) in stacks.iter().enumerate() {
        for (c, spec) in stack.iter().enumerate() {
            for ((r, col), &v) in spec.magnitudes.indexed_iter() {
                out[[b, c, r, col]] = T::from_f32(v).expect("finite");
            }
        }
    }
    out
}

/// Per-environment audio renderer: owns the noise stream and a planned STFT.
pub struct AudioPipeline {
    config: SoundConfig,
    stft: Stft,
    rng: ChaCha8Rng,
    poisoned: bool,
}

impl AudioPipeline {
    pub fn new(config: SoundConfig, noise_seed: u64) -> Result<Self> {
        config.validate()?;
        let stft = Stft::from_config(&config);
        Ok(Self {
            config,
            stft,
            rng: ChaCha8Rng::seed_from_u64(noise_seed),
            poisoned: false,
        })
    }

    /// A pipeline whose every spectrogram is NaN; used to prove that a phase
    /// never reads audio.
    pub fn poisoned(config: SoundConfig, noise_seed: u64) -> Result<Self> {
        let mut p = Self::new(config, noise_seed)?;
        p.poisoned = true;
        Ok(p)
    }

    pub fn config(&self) -> &SoundConfig {
        &self.config
    }

    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    pub fn render(&mut self, events: &[SoundEvent]) -> Result<Spectrogram> {
        let w = mix_step_audio(events, &self.config, &mut self.rng)?;
        if self.poisoned {
            return Ok(Spectrogram::filled(f32::NAN));
        }
        spectrogram_with(&self.stft, &w, &self.config)
    }
}

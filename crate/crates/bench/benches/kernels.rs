use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use iscm_core::env::materials::metal;
use iscm_core::env::{Action, Environment, PushWorld};
use iscm_core::models::{ModelConfig, VisualEncoder, VISUAL_CHANNELS};
use iscm_core::sound::{
    mix_step_audio, stft_spectrogram, synthesize_impact, AudioPipeline, RandomAudioEncoder, SoundConfig, SoundEvent,
    SPEC_SIZE, SPEC_STACK,
};
use iscm_core::{Config, Task};

fn env_step(c: &mut Criterion) {
    let config = Config::default();
    let mut group = c.benchmark_group("env_step");
    for (name, audio) in [("vision", false), ("vision_audio", true)] {
        let mut env = PushWorld::new(config.env_for(Task::ThreeCubes)).unwrap();
        if audio {
            env = env.with_audio(AudioPipeline::new(config.sound.clone(), 0).unwrap()).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut episode = 0;
        env.reset(episode);
        group.bench_function(name, |b| {
            b.iter(|| {
                let a = Action::from([rng.random_range(-1.0f32..=1.0), rng.random_range(-1.0f32..=1.0)]);
                let res = env.step(a).unwrap();
                if res.done {
                    episode += 1;
                    env.reset(episode);
                }
                black_box(res.extrinsic_reward)
            })
        });
    }
    group.finish();
}

fn audio(c: &mut Criterion) {
    let sound = SoundConfig::default();
    let preset = Arc::new(metal());
    let wave = synthesize_impact(0.05, &preset, &sound).unwrap();
    c.bench_function("synthesize_impact", |b| b.iter(|| synthesize_impact(black_box(0.05), &preset, &sound).unwrap()));
    c.bench_function("stft_spectrogram", |b| b.iter(|| stft_spectrogram(black_box(&wave), &sound).unwrap()));
    let events = [
        SoundEvent { impulse: 0.05, preset: preset.clone(), onset: 0.0 },
        SoundEvent { impulse: 0.02, preset: preset.clone(), onset: 0.04 },
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    c.bench_function("mix_step_audio", |b| b.iter(|| mix_step_audio(black_box(&events), &sound, &mut rng).unwrap()));

    let encoder = RandomAudioEncoder::<f32>::new(sound.encoder_seed);
    let batch = random_batch(64, SPEC_STACK, SPEC_SIZE, 2);
    c.bench_function("random_audio_encoder_b64", |b| b.iter(|| encoder.encode_batch(black_box(batch.view())).unwrap()));
}

fn random_batch(n: usize, channels: usize, side: usize, seed: u64) -> Array4<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array4::from_shape_simple_fn((n, channels, side, side), || rng.random::<f32>())
}

fn encoder(c: &mut Criterion) {
    let mut group = c.benchmark_group("visual_encoder");
    group.sample_size(10);
    let small = ModelConfig {
        conv_channels: 8,
        latent_dim: 16,
        hidden_width: 32,
        ..ModelConfig::default()
    };
    for (name, config) in [("small", small), ("default", ModelConfig::default())] {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let enc = VisualEncoder::<f32>::new(&config, &mut rng);
        group.bench_function(format!("{name}_encode_b16"), |b| {
            b.iter_batched(
                || random_batch(16, VISUAL_CHANNELS, config.input_size, 4),
                |x| enc.encode(x.view()).unwrap(),
                BatchSize::LargeInput,
            )
        });
    }
    group.finish();
}

// The workspace builds plotters with ab_glyph, which has no system font
// lookup, so criterion's own charts are turned off.
criterion_group! {
    name = benches;
    config = Criterion::default().without_plots();
    targets = env_step, audio, encoder
}
criterion_main!(benches);

//! `iscm`: pretraining, finetuning, evaluation, plotting and audio demos.
//!
//! Failures print one line `error[E_CODE]: message` to stderr and exit with
//! 2 for usage, configuration and missing-file errors, 1 otherwise.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use iscm_core::checkpoint::Checkpoint;
use iscm_core::env::materials::{ceramic, metal, wood};
use iscm_core::env::{Observation, PushWorld};
use iscm_core::harness::{self, Comparison, GreedyPolicy, Policy, RunOptions, RunSeeds};
use iscm_core::report::{self, RunLog};
use iscm_core::sound::{render_modes, stft_spectrogram, synthesize_impact, SoundConfig, SPEC_SIZE};
use iscm_core::{Config, CrossmodalMode, Error, Method, PolicyInit, Result, Task};

#[derive(Parser, Debug)]
#[command(name = "iscm", version, about = "Curiosity-driven pretraining with impact sounds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Reward-free exploration; writes logs and a checkpoint.
    Pretrain(PretrainArgs),
    /// Task-reward training from a checkpoint or from scratch.
    Finetune(FinetuneArgs),
    /// Greedy evaluation of a checkpoint.
    Eval(EvalArgs),
    /// Learning curves from run directories.
    Plot(PlotArgs),
    /// WAV files and spectrogram images of one impact per material.
    SynthDemo(SynthArgs),
    /// Every regime of a comparison for every configured seed.
    Matrix(MatrixArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// TOML configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run seed; defaults to the first of `run.seeds`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to a name under `run.output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// iscm, icm or ddpg.
    #[arg(long)]
    method: Option<Method>,
    /// Environment steps; overrides the configured budget.
    #[arg(long)]
    steps: Option<usize>,
    /// Progress messages on stderr.
    #[arg(long)]
    progress: bool,
}

#[derive(Args, Debug)]
struct PretrainArgs {
    #[command(flatten)]
    common: Common,
    /// discriminator or regressor.
    #[arg(long)]
    mode: Option<CrossmodalMode>,
    /// Exploration scene; overrides `run.pretrain_task`.
    #[arg(long)]
    task: Option<Task>,
}

#[derive(Args, Debug)]
struct FinetuneArgs {
    #[command(flatten)]
    common: Common,
    /// Pretrained checkpoint, or `none` to train from scratch.
    #[arg(long)]
    checkpoint: String,
    /// Target scene; overrides `run.task`.
    #[arg(long)]
    task: Option<Task>,
    /// reuse or reinit.
    #[arg(long)]
    policy_init: Option<PolicyInit>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Defaults to the task stored in the checkpoint.
    #[arg(long)]
    task: Option<Task>,
    #[arg(long, default_value_t = 10)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Writes every frame the policy sees as PNG into this directory.
    #[arg(long)]
    dump_frames: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PlotArgs {
    /// Glob over run directories or their episodes.csv files.
    #[arg(long)]
    runs: String,
    #[arg(long)]
    out: PathBuf,
    /// Episodes in the moving average.
    #[arg(long, default_value_t = 10)]
    window: usize,
    /// Step spacing of the curve; 100 points over the longest run when omitted.
    #[arg(long)]
    grid: Option<u64>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// Sound settings are read from the `[sound]` section.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Contact impulse in N·s.
    #[arg(long, default_value_t = 0.05)]
    impulse: f64,
    /// WAV length in seconds.
    #[arg(long, default_value_t = 1.0)]
    duration: f64,
}

#[derive(Args, Debug)]
struct MatrixArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// methods or audio-targets.
    #[arg(long)]
    comparison: Comparison,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    progress: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    ExitCode::SUCCESS
                }
                _ => {
                    let text = e.render().to_string();
                    let first = text.lines().next().unwrap_or("invalid arguments");
                    eprintln!("error[E_USAGE]: {}", first.trim_start_matches("error: "));
                    ExitCode::from(2)
                }
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.code(), detail(&e).replace('\n', " "));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

/// Error text without the class prefix, which the code already carries.
fn detail(e: &Error) -> String {
    match e {
        Error::Config(m) | Error::Usage(m) | Error::Domain(m) | Error::Checkpoint(m) | Error::Runtime(m) => m.clone(),
        other => other.to_string(),
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Pretrain(a) => pretrain(a),
        Command::Finetune(a) => finetune(a),
        Command::Eval(a) => eval(a),
        Command::Plot(a) => plot(a),
        Command::SynthDemo(a) => synth_demo(a),
        Command::Matrix(a) => matrix(a),
    }
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p),
        None => Config::from_toml_with_overrides("", std::env::vars()),
    }
}

fn warn_ignored_audio(config: &Config) {
    if config.run.method == Method::Icm && config.sound != SoundConfig::default() {
        eprintln!("warning: method icm is vision-only; [sound] settings are ignored");
    }
}

fn seed_of(common: &Common, config: &Config) -> u64 {
    common.seed.unwrap_or(config.run.seeds[0])
}

fn pretrain(a: PretrainArgs) -> Result<()> {
    let mut config = load_config(a.common.config.as_deref())?;
    if let Some(m) = a.common.method {
        config.run.method = m;
    }
    if let Some(m) = a.mode {
        config.curiosity.mode = m;
    }
    if let Some(t) = a.task {
        config.run.pretrain_task = t;
    }
    if let Some(s) = a.common.steps {
        config.run.pretrain_steps = s;
    }
    config.validate()?;
    warn_ignored_audio(&config);
    let seed = seed_of(&a.common, &config);
    let out = a.common.out.clone().unwrap_or_else(|| {
        config
            .run
            .output_dir
            .join(format!("pretrain-{}-seed{seed}", config.run.method.as_str()))
    });
    let outcome = harness::pretrain(&config, seed, &out, &options(a.common.progress))?;
    println!(
        "pretrained {} for {} steps: {} episodes, checkpoint {}",
        config.run.method.as_str(),
        config.run.pretrain_steps,
        outcome.episodes.len(),
        outcome.checkpoint_path().display()
    );
    Ok(())
}

fn finetune(a: FinetuneArgs) -> Result<()> {
    let mut config = load_config(a.common.config.as_deref())?;
    let checkpoint = (a.checkpoint != "none").then(|| PathBuf::from(&a.checkpoint));
    if let Some(path) = &checkpoint {
        let ck = Checkpoint::load(path)?;
        let trained = Config::from_toml_str(&ck.manifest.config_toml)?;
        if let Some(m) = a.common.method {
            if m != trained.run.method {
                return Err(Error::Usage(format!(
                    "checkpoint was pretrained with {}, not {}",
                    trained.run.method.as_str(),
                    m.as_str()
                )));
            }
        }
        config.run.method = trained.run.method;
        config.curiosity.mode = trained.curiosity.mode;
        config.model = trained.model;
    } else if let Some(m) = a.common.method {
        config.run.method = m;
    }
    if let Some(t) = a.task {
        config.run.task = t;
    }
    if let Some(p) = a.policy_init {
        config.run.policy_init = p;
    }
    if let Some(s) = a.common.steps {
        config.run.finetune_steps = s;
    }
    config.validate()?;
    warn_ignored_audio(&config);
    let seed = seed_of(&a.common, &config);
    let out = a.common.out.clone().unwrap_or_else(|| {
        config.run.output_dir.join(format!(
            "finetune-{}-{}-{}-seed{seed}",
            config.run.method.as_str(),
            config.run.policy_init.as_str(),
            config.run.task.as_str()
        ))
    });
    let outcome = harness::finetune(&config, seed, checkpoint.as_deref(), &out, &options(a.common.progress))?;
    let returns: Vec<f64> = outcome.episodes.iter().map(|e| e.episode_return).collect();
    let (mean, _) = report::mean_stderr(&returns);
    println!(
        "finetuned {} on {} for {} steps: {} episodes, mean return {:.4}, logs in {}",
        harness::regime_label(config.run.method, config.curiosity.mode, config.run.policy_init),
        config.run.task.as_str(),
        config.run.finetune_steps,
        returns.len(),
        mean,
        out.display()
    );
    Ok(())
}

fn options(progress: bool) -> RunOptions {
    RunOptions {
        progress,
        ..RunOptions::default()
    }
}

/// Saves the newest frame of every observation before delegating.
struct FrameDump<'a, P> {
    inner: P,
    dir: &'a Path,
    count: usize,
}

impl<P: Policy> Policy for FrameDump<'_, P> {
    fn act(&mut self, obs: &Observation) -> Result<[f32; 2]> {
        let frame = obs.visual.last().expect("nonempty frame stack");
        frame.save_png(&self.dir.join(format!("frame{:06}.png", self.count)))?;
        self.count += 1;
        self.inner.act(obs)
    }
}

fn eval(a: EvalArgs) -> Result<()> {
    if a.episodes == 0 {
        return Err(Error::Usage("--episodes must be at least 1".into()));
    }
    let ck = Checkpoint::load(&a.checkpoint)?;
    let config = Config::from_toml_str(&ck.manifest.config_toml)?;
    let task = a.task.unwrap_or(config.run.task);
    let result = match &a.dump_frames {
        None => harness::evaluate_checkpoint(&a.checkpoint, task, a.episodes, a.seed)?,
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let mut policy = FrameDump {
                inner: GreedyPolicy::from_checkpoint(&ck)?,
                dir,
                count: 0,
            };
            let mut env = PushWorld::new(config.env_for(task))?;
            harness::evaluate(&mut env, &mut policy, a.episodes, RunSeeds::derive(a.seed).eval)?
        }
    };
    println!("{} episodes on {}: {:.4} ± {:.4}", a.episodes, task.as_str(), result.mean, result.stderr);
    println!("mean_return={} stderr={} episodes={}", result.mean, result.stderr, a.episodes);
    Ok(())
}

fn plot(a: PlotArgs) -> Result<()> {
    let paths = glob::glob(&a.runs).map_err(|e| Error::Usage(format!("bad glob `{}`: {e}", a.runs)))?;
    let mut dirs = Vec::new();
    for entry in paths {
        let path = entry.map_err(|e| Error::Runtime(e.to_string()))?;
        let dir = if path.is_dir() {
            path
        } else if path.file_name().is_some_and(|n| n == report::EPISODES_FILE) {
            path.parent().map(Path::to_path_buf).unwrap_or_default()
        } else {
            continue;
        };
        if dir.join(report::EPISODES_FILE).is_file() {
            dirs.push(dir);
        }
    }
    dirs.sort();
    dirs.dedup();
    if dirs.is_empty() {
        return Err(Error::Usage(format!("no run directories match `{}`", a.runs)));
    }
    let runs = dirs.iter().map(|d| RunLog::load(d)).collect::<Result<Vec<_>>>()?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let files = report::plot_runs(&runs, &a.out, a.grid, a.window)?;
    for path in [files.finetune, files.pretrain].into_iter().flatten() {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn synth_demo(a: SynthArgs) -> Result<()> {
    let sound = load_config(a.config.as_deref())?.sound;
    if !(a.duration > 0.0 && a.duration <= 60.0) {
        return Err(Error::Usage("--duration must be in (0, 60] seconds".into()));
    }
    std::fs::create_dir_all(&a.out)?;
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: sound.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let len = (a.duration * sound.sample_rate as f64).round() as usize;
    for preset in [ceramic(), wood(), metal()] {
        let step = synthesize_impact(a.impulse, &preset, &sound)?;
        let samples = render_modes(a.impulse, &preset, &sound, len);
        let wav_path = a.out.join(format!("{}.wav", preset.name));
        let mut w = hound::WavWriter::create(&wav_path, spec).map_err(wav_err)?;
        for s in samples {
            w.write_sample((s.clamp(-1.0, 1.0) * i16::MAX as f64).round() as i16).map_err(wav_err)?;
        }
        w.finalize().map_err(wav_err)?;

        let spectrogram = stft_spectrogram(&step, &sound)?;
        let scale = 8;
        let side = (SPEC_SIZE * scale) as u32;
        // High frequencies at the top.
        let img = image::GrayImage::from_fn(side, side, |x, y| {
            let row = SPEC_SIZE - 1 - y as usize / scale;
            let col = x as usize / scale;
            image::Luma([(spectrogram.magnitudes[[row, col]] * 255.0).round() as u8])
        });
        let png_path = a.out.join(format!("{}.png", preset.name));
        img.save(&png_path).map_err(|e| Error::Runtime(format!("{}: {e}", png_path.display())))?;
        println!("{}: {} and {}", preset.name, wav_path.display(), png_path.display());
    }
    Ok(())
}

fn wav_err(e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::Io(io),
        other => Error::Runtime(format!("wav encoding failed: {other}")),
    }
}

fn matrix(a: MatrixArgs) -> Result<()> {
    let config = load_config(a.config.as_deref())?;
    let name = match a.comparison {
        Comparison::Methods => "methods",
        Comparison::AudioTargets => "audio-targets",
    };
    let out = a.out.unwrap_or_else(|| config.run.output_dir.join(format!("matrix-{name}")));
    let result = harness::run_matrix(&config, a.comparison, &out, &options(a.progress))?;
    let failed = result.cells.iter().filter(|c| c.status != "ok").count();
    for regime in a.comparison.regimes() {
        let label = regime.label();
        match result.mean_score(&label, harness::FINETUNE) {
            Some(s) => println!("{label:<14} mean curve height {s:.4}"),
            None => println!("{label:<14} no finished runs"),
        }
    }
    println!("{} cells, {failed} not ok; results in {}", result.cells.len(), out.display());
    if failed > 0 {
        return Err(Error::Runtime(format!("{failed} matrix cells did not complete; see {}", out.join(harness::CELLS_FILE).display())));
    }
    Ok(())
}

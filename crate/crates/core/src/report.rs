//! Run logs on disk, learning-curve aggregation and plots.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EPISODES_FILE: &str = "episodes.csv";
pub const UPDATES_FILE: &str = "updates.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const PLOT_FILE: &str = "plot.png";

/// One finished episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    /// Global environment step at which the episode ended.
    pub step: u64,
    pub episode: u64,
    pub phase: String,
    /// Task return; during pretraining it is monitored, never trained on.
    #[serde(rename = "return")]
    pub episode_return: f64,
    pub length: u64,
    pub success: bool,
}

/// One gradient update. Columns that do not apply to a phase stay empty.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateRow {
    pub step: u64,
    pub phase: String,
    pub forward_loss: Option<f64>,
    pub inverse_loss: Option<f64>,
    pub dynamics_loss: Option<f64>,
    pub crossmodal_loss: Option<f64>,
    pub objective: Option<f64>,
    pub reward_crossmodal: Option<f64>,
    pub reward_dynamics: Option<f64>,
    pub reward_total: Option<f64>,
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub mean_reward: f64,
    pub mean_q: f64,
}

/// Aggregated learning curve point across seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub regime: String,
    pub step: u64,
    pub mean: f64,
    pub stderr: f64,
    pub seeds: usize,
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes only a header row; used when a log ends up empty.
pub fn write_header(path: &Path, header: &[&str]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    w.flush()?;
    Ok(())
}

pub const EPISODE_HEADER: [&str; 6] = ["step", "episode", "phase", "return", "length", "success"];
pub const UPDATE_HEADER: [&str; 14] = [
    "step",
    "phase",
    "forward_loss",
    "inverse_loss",
    "dynamics_loss",
    "crossmodal_loss",
    "objective",
    "reward_crossmodal",
    "reward_dynamics",
    "reward_total",
    "critic_loss",
    "actor_loss",
    "mean_reward",
    "mean_q",
];

pub fn write_episodes(path: &Path, rows: &[EpisodeRow]) -> Result<()> {
    if rows.is_empty() {
        return write_header(path, &EPISODE_HEADER);
    }
    write_csv(path, rows)
}

pub fn write_updates(path: &Path, rows: &[UpdateRow]) -> Result<()> {
    if rows.is_empty() {
        return write_header(path, &UPDATE_HEADER);
    }
    write_csv(path, rows)
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn read_episodes(path: &Path) -> Result<Vec<EpisodeRow>> {
    read_csv(path)
}

pub fn write_manifest(path: &Path, entries: &BTreeMap<String, String>) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, entries)?;
    f.write_all(b"\n")?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<BTreeMap<String, String>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

/// Moving average of the last `window` episode returns, sampled every
/// `grid` steps up to `max_step`. Grid points before the first finished
/// episode are omitted.
pub fn smoothed_curve(episodes: &[(u64, f64)], grid: u64, max_step: u64, window: usize) -> Vec<(u64, f64)> {
    let mut out = Vec::new();
    let mut done = 0;
    let mut g = grid;
    while g <= max_step {
        while done < episodes.len() && episodes[done].0 <= g {
            done += 1;
        }
        if done > 0 {
            let lo = done.saturating_sub(window);
            let recent = &episodes[lo..done];
            out.push((g, recent.iter().map(|e| e.1).sum::<f64>() / recent.len() as f64));
        }
        g += grid;
    }
    out
}

/// Mean and standard error across curves at every step present in at least one.
pub fn aggregate(regime: &str, curves: &[Vec<(u64, f64)>]) -> Vec<SummaryRow> {
    let mut by_step: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for c in curves {
        for &(s, v) in c {
            by_step.entry(s).or_default().push(v);
        }
    }
    by_step
        .into_iter()
        .map(|(step, vals)| {
            let (mean, stderr) = mean_stderr(&vals);
            SummaryRow {
                regime: regime.to_string(),
                step,
                mean,
                stderr,
                seeds: vals.len(),
            }
        })
        .collect()
}

/// Sample mean and standard error (n - 1 denominator; zero for one value).
pub fn mean_stderr(vals: &[f64]) -> (f64, f64) {
    let n = vals.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = vals.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Area under a curve, normalized by its step span (mean height).
pub fn curve_auc(curve: &[(u64, f64)]) -> f64 {
    if curve.is_empty() {
        return f64::NAN;
    }
    curve.iter().map(|c| c.1).sum::<f64>() / curve.len() as f64
}

const FONT_CANDIDATES: [&str; 4] = [
    "/usr/share/fonts/truetype/dejavu/DejaVuSans.ttf",
    "/usr/share/fonts/TTF/DejaVuSans.ttf",
    "/usr/share/fonts/dejavu/DejaVuSans.ttf",
    "/Library/Fonts/Arial.ttf",
];

/// Registers a sans-serif font for plot text once. Returns false when no
/// font file is available, in which case plots carry no text.
fn ensure_font() -> bool {
    static FONT: OnceLock<bool> = OnceLock::new();
    *FONT.get_or_init(|| {
        let from_env = std::env::var("ISCM_PLOT_FONT").ok();
        let candidates = from_env.iter().map(String::as_str).chain(FONT_CANDIDATES);
        for path in candidates {
            if let Ok(bytes) = std::fs::read(path) {
                let leaked: &'static [u8] = Box::leak(bytes.into_boxed_slice());
                if plotters::style::register_font("sans-serif", FontStyle::Normal, leaked).is_ok() {
                    return true;
                }
            }
        }
        false
    })
}

const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Runtime(format!("plotting failed: {e}"))
}

/// Mean curves with a ±1 standard error band, one series per regime.
pub fn plot_summary(series: &[(String, Vec<SummaryRow>)], title: &str, y_label: &str, out: &Path) -> Result<()> {
    let points: Vec<&SummaryRow> = series.iter().flat_map(|s| s.1.iter()).collect();
    if points.is_empty() {
        return Err(Error::Usage("nothing to plot".into()));
    }
    let with_text = ensure_font();
    let x_max = points.iter().map(|p| p.step).max().unwrap_or(1).max(1) as f64;
    let lo = points.iter().map(|p| p.mean - p.stderr).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.mean + p.stderr).fold(f64::NEG_INFINITY, f64::max);
    let pad = ((hi - lo) * 0.05).max(1e-3);
    let (y_lo, y_hi) = (lo - pad, hi + pad);

    let root = BitMapBackend::new(out, (960, 600)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut builder = ChartBuilder::on(&root);
    builder.margin(16);
    if with_text {
        builder
            .caption(title, ("sans-serif", 24))
            .x_label_area_size(40)
            .y_label_area_size(56);
    }
    let mut chart = builder.build_cartesian_2d(0.0..x_max, y_lo..y_hi).map_err(plot_err)?;
    let mut mesh = chart.configure_mesh();
    if with_text {
        mesh.x_desc("environment steps").y_desc(y_label);
    } else {
        mesh.disable_x_axis().disable_y_axis();
    }
    mesh.draw().map_err(plot_err)?;

    for (i, (label, rows)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let band: Vec<(f64, f64)> = rows
            .iter()
            .map(|r| (r.step as f64, r.mean + r.stderr))
            .chain(rows.iter().rev().map(|r| (r.step as f64, r.mean - r.stderr)))
            .collect();
        if rows.len() > 1 {
            chart
                .draw_series(std::iter::once(Polygon::new(band, color.mix(0.2).filled())))
                .map_err(plot_err)?;
        }
        let line = chart
            .draw_series(LineSeries::new(rows.iter().map(|r| (r.step as f64, r.mean)), color.stroke_width(2)))
            .map_err(plot_err)?;
        if with_text {
            line.label(label.as_str())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
        }
    }
    if with_text {
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .position(SeriesLabelPosition::LowerRight)
            .draw()
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)?;
    Ok(())
}

/// Episode log of one run directory with the labels from its manifest.
#[derive(Clone, Debug)]
pub struct RunLog {
    pub dir: PathBuf,
    pub regime: String,
    pub phase: String,
    pub episodes: Vec<EpisodeRow>,
    /// Step budget of the run, or the last logged step without a manifest.
    pub max_step: u64,
}

impl RunLog {
    /// Reads `episodes.csv` and, when present, `manifest.json` from `dir`.
    /// Without a manifest the regime is the directory name, or its parent's
    /// for `seed<k>` directories.
    pub fn load(dir: &Path) -> Result<Self> {
        let episodes = read_episodes(&dir.join(EPISODES_FILE))?;
        let manifest = match read_manifest(&dir.join(MANIFEST_FILE)) {
            Ok(m) => m,
            Err(Error::MissingFile(_)) => BTreeMap::new(),
            Err(e) => return Err(e),
        };
        let phase = manifest
            .get("phase")
            .cloned()
            .or_else(|| episodes.first().map(|e| e.phase.clone()))
            .unwrap_or_else(|| "finetune".into());
        let regime = manifest.get("regime").cloned().unwrap_or_else(|| fallback_regime(dir));
        let budget = manifest
            .get(&format!("run.{phase}_steps"))
            .and_then(|v| v.parse::<u64>().ok());
        let max_step = budget.unwrap_or_else(|| episodes.iter().map(|e| e.step).max().unwrap_or(0));
        Ok(Self {
            dir: dir.to_path_buf(),
            regime,
            phase,
            episodes,
            max_step,
        })
    }

    pub fn returns(&self) -> Vec<(u64, f64)> {
        self.episodes.iter().map(|e| (e.step, e.episode_return)).collect()
    }
}

fn fallback_regime(dir: &Path) -> String {
    let name = |p: &Path| p.file_name().map(|n| n.to_string_lossy().into_owned());
    let own = name(dir).unwrap_or_else(|| "run".into());
    match dir.parent().and_then(name) {
        Some(parent) if own.starts_with("seed") => parent,
        _ => own,
    }
}

/// Files written by [`plot_runs`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PlotFiles {
    pub finetune: Option<PathBuf>,
    pub pretrain: Option<PathBuf>,
}

/// Path of the monitored-return figure that accompanies `out`.
pub fn pretrain_plot_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "plot".into());
    out.with_file_name(format!("{stem}-pretrain.png"))
}

/// Groups runs by phase and regime, smooths every run on a shared grid and
/// plots the across-run mean with a standard-error band. Finetuning runs
/// go to `out`; pretraining runs go to `out` when they are the only phase,
/// else to [`pretrain_plot_path`]. A `None` grid spreads 100 points over
/// the longest run.
pub fn plot_runs(runs: &[RunLog], out: &Path, grid: Option<u64>, window: usize) -> Result<PlotFiles> {
    if runs.is_empty() {
        return Err(Error::Usage("no runs to plot".into()));
    }
    if window == 0 || grid == Some(0) {
        return Err(Error::Usage("plot window and grid must be positive".into()));
    }
    let (fine, pre): (Vec<&RunLog>, Vec<&RunLog>) = runs.iter().partition(|r| r.phase != "pretrain");
    let mut files = PlotFiles::default();
    if !fine.is_empty() {
        plot_phase(&fine, out, grid, window, "Finetuning return")?;
        files.finetune = Some(out.to_path_buf());
    }
    if !pre.is_empty() {
        let path = if fine.is_empty() { out.to_path_buf() } else { pretrain_plot_path(out) };
        plot_phase(&pre, &path, grid, window, "Monitored task return during exploration")?;
        files.pretrain = Some(path);
    }
    Ok(files)
}

fn plot_phase(runs: &[&RunLog], out: &Path, grid: Option<u64>, window: usize, title: &str) -> Result<()> {
    let max_step = runs.iter().map(|r| r.max_step).max().unwrap_or(0);
    let grid = grid.unwrap_or_else(|| max_step.div_ceil(100).max(1));
    let mut curves: BTreeMap<&str, Vec<Vec<(u64, f64)>>> = BTreeMap::new();
    for r in runs {
        curves
            .entry(r.regime.as_str())
            .or_default()
            .push(smoothed_curve(&r.returns(), grid, r.max_step, window));
    }
    let series: Vec<(String, Vec<SummaryRow>)> = curves
        .into_iter()
        .map(|(label, c)| (label.to_string(), aggregate(label, &c)))
        .collect();
    if series.iter().all(|s| s.1.is_empty()) {
        return Err(Error::Usage(format!("runs under {title:?} have no finished episodes on the plot grid")));
    }
    plot_summary(&series, title, "episode return", out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoothing_window_and_grid() {
        let eps = vec![(10, 1.0), (20, 3.0), (35, 5.0)];
        let c = smoothed_curve(&eps, 10, 40, 2);
        assert_eq!(c, vec![(10, 1.0), (20, 2.0), (30, 2.0), (40, 4.0)]);
        assert!(smoothed_curve(&eps, 5, 5, 2).is_empty());
    }

    #[test]
    fn aggregate_mean_and_stderr() {
        let rows = aggregate("x", &[vec![(10, 1.0), (20, 2.0)], vec![(10, 3.0)]]);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].mean, 2.0);
        assert!((rows[0].stderr - 1.0).abs() < 1e-12);
        assert_eq!(rows[1].seeds, 1);
        assert_eq!(rows[1].stderr, 0.0);
    }

    #[test]
    fn csv_round_trip_keeps_empty_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.csv");
        let row = UpdateRow {
            step: 3,
            phase: "pretrain".into(),
            forward_loss: Some(1.5),
            ..UpdateRow::default()
        };
        write_updates(&path, std::slice::from_ref(&row)).unwrap();
        let back: Vec<UpdateRow> = read_csv(&path).unwrap();
        assert_eq!(back, vec![row]);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("step,phase,forward_loss"));
    }

    #[test]
    fn plot_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let rows = aggregate("a", &[vec![(10, 0.1), (20, 0.4)], vec![(10, 0.3), (20, 0.2)]]);
        let series = vec![("a".to_string(), rows)];
        let (p1, p2) = (dir.path().join("1.png"), dir.path().join("2.png"));
        plot_summary(&series, "t", "return", &p1).unwrap();
        plot_summary(&series, "t", "return", &p2).unwrap();
        assert_eq!(std::fs::read(p1).unwrap(), std::fs::read(p2).unwrap());
    }

    #[test]
    fn run_logs_group_by_manifest_regime() {
        let root = tempfile::tempdir().unwrap();
        let dir = root.path().join("icm").join("seed0");
        std::fs::create_dir_all(&dir).unwrap();
        let row = |step, r| EpisodeRow {
            step,
            episode: step / 10,
            phase: "finetune".into(),
            episode_return: r,
            length: 10,
            success: false,
        };
        write_episodes(&dir.join(EPISODES_FILE), &[row(10, -1.0), row(20, -0.5)]).unwrap();
        let log = RunLog::load(&dir).unwrap();
        assert_eq!((log.regime.as_str(), log.phase.as_str(), log.max_step), ("icm", "finetune", 20));
        let m = BTreeMap::from([("regime".to_string(), "ICM".to_string()), ("run.finetune_steps".to_string(), "40".to_string())]);
        write_manifest(&dir.join(MANIFEST_FILE), &m).unwrap();
        let log = RunLog::load(&dir).unwrap();
        assert_eq!((log.regime.as_str(), log.max_step), ("ICM", 40));
        let out = root.path().join("p.png");
        let files = plot_runs(&[log], &out, Some(10), 2).unwrap();
        assert_eq!(files.finetune, Some(out.clone()));
        assert!(files.pretrain.is_none());
        assert_eq!(pretrain_plot_path(&out), root.path().join("p-pretrain.png"));
        assert!(plot_runs(&[], &out, None, 2).is_err());
    }
}

//! Command-line front end.

mod config;
pub mod svg;

pub use config::{parse_ini, IniFile};

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{
    format_benchmark, history_window, ingest_benchmark_file, parse_benchmark, scene_name, synthesize_scenes,
    window_scenes, RawTrack, SceneWindow, SynthConfig, WindowConfig,
};
use crate::diffusion::{GammaMode, Schedule};
use crate::error::{Error, Result};
use crate::inference::{
    evaluate_best_of_n, hybrid_sample, window_rng, Accounting, SampleConfig, Selection, Strategy,
};
use crate::model::{config_fields, Model, ModelConfig};
use crate::training::{fit, TrainConfig};

/// Environment variable naming the default data directory.
pub const DATA_DIR_ENV: &str = "DISTDIFF_DATA_DIR";

#[derive(Parser, Debug)]
#[command(name = "distdiff", version, about = "Trajectory forecasting with diffused Gaussian statistics")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write a checkpoint plus a per-step loss log.
    Train(TrainArgs),
    /// Best-of-N ADE/FDE on the held-out scene.
    Eval(EvalArgs),
    /// Sweep sampling steps, strategies or the noise mode.
    Ablate(AblateArgs),
    /// Candidate trajectories for a benchmark-format file.
    Predict(PredictArgs),
    /// Write synthetic scenes in benchmark format.
    Synth(SynthArgs),
}

#[derive(Args, Debug, Default)]
struct Common {
    /// Config file with [data], [synth], [model], [train] and [eval] sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory of benchmark text files (one scene per file), or `synthetic`.
    #[arg(long)]
    data: Option<String>,
    /// Scene held out for evaluation; defaults to the last scene.
    #[arg(long)]
    test_scene: Option<String>,
    /// Override any config entry.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Debug, Default)]
struct ProtocolArgs {
    /// A, B or C.
    #[arg(long)]
    strategy: Option<String>,
    /// Reverse runs for strategy A.
    #[arg(long)]
    r1: Option<usize>,
    /// Gaussian draws for strategy A.
    #[arg(long)]
    r2: Option<usize>,
    /// Candidates for strategies B and C.
    #[arg(long)]
    r: Option<usize>,
    /// gt-ade or self-likelihood.
    #[arg(long)]
    selection: Option<String>,
    /// pooled or post-selection.
    #[arg(long)]
    accounting: Option<String>,
    /// Cap on candidates per pedestrian (0 = none).
    #[arg(long)]
    budget: Option<usize>,
    /// Sampling steps S; defaults to the checkpoint's.
    #[arg(long)]
    steps: Option<usize>,
    /// deterministic or ddpm.
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f32>,
    #[arg(long)]
    seed: Option<u64>,
    /// Continue from a training checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long, default_value = "runs/train")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    protocol: ProtocolArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "runs/eval")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    protocol: ProtocolArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// steps, sampling or gamma.
    #[arg(long)]
    axis: String,
    #[arg(long, default_value = "runs/ablate")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[command(flatten)]
    protocol: ProtocolArgs,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Benchmark-format file of one scene.
    #[arg(long)]
    input: PathBuf,
    /// Predict from the history ending at this frame; defaults to the last frame.
    #[arg(long)]
    anchor: Option<i64>,
    /// Candidate CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Also write an SVG overlay here.
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    scenes: Option<usize>,
    #[arg(long)]
    peds: Option<usize>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataSettings {
    /// Directory or `synthetic`; empty means unset.
    pub dir: String,
    pub test_scene: String,
    pub stride: usize,
    pub max_peds: usize,
    pub neighbor_radius: f64,
}

impl Default for DataSettings {
    fn default() -> Self {
        let w = WindowConfig::default();
        DataSettings {
            dir: String::new(),
            test_scene: String::new(),
            stride: w.stride,
            max_peds: w.max_peds,
            neighbor_radius: w.neighbor_radius,
        }
    }
}

impl DataSettings {
    config_fields!(dir, test_scene, stride, max_peds, neighbor_radius);
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSettings {
    pub strategy: String,
    pub r1: usize,
    pub r2: usize,
    pub r: usize,
    pub selection: String,
    pub accounting: String,
    pub budget: usize,
    /// 0 keeps the checkpoint's S.
    pub steps: usize,
    pub gamma: String,
    pub seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            strategy: "A".into(),
            r1: 10,
            r2: 10,
            r: 20,
            selection: Selection::GtAde.as_str().into(),
            accounting: Accounting::Pooled.as_str().into(),
            budget: 0,
            steps: 0,
            gamma: GammaMode::Deterministic.as_str().into(),
            seed: 0,
        }
    }
}

impl EvalSettings {
    config_fields!(strategy, r1, r2, r, selection, accounting, budget, steps, gamma, seed);

    pub fn sample_config(&self) -> Result<SampleConfig> {
        let strategy = match self.strategy.to_ascii_uppercase().as_str() {
            "A" => Strategy::A { r1: self.r1, r2: self.r2 },
            "B" => Strategy::B { r: self.r },
            "C" => Strategy::C { r: self.r },
            other => return Err(Error::Config(format!("unknown strategy {other:?}"))),
        };
        strategy.validate()?;
        Ok(SampleConfig {
            strategy,
            selection: Selection::parse(&self.selection)?,
            accounting: Accounting::parse(&self.accounting)?,
            budget: (self.budget > 0).then_some(self.budget),
        })
    }

    pub fn gamma_mode(&self) -> Result<GammaMode> {
        GammaMode::parse(&self.gamma)
    }

    /// The checkpoint schedule re-cut to the requested S and noise mode.
    pub fn schedule(&self, model: &Model) -> Result<Schedule> {
        let s = if self.steps == 0 { model.schedule.sampling_steps() } else { self.steps };
        let k = model.schedule.total_steps();
        if s > k {
            return Err(Error::Config(format!("sampling steps {s} exceed the checkpoint's K = {k}")));
        }
        model.schedule.with_steps(s, self.gamma_mode()?)
    }
}

/// Every setting a command can read, after config file and flags.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Settings {
    pub data: DataSettings,
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalSettings,
}

impl Settings {
    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        let r = match section {
            "data" => self.data.set(key, value),
            "synth" => self.synth.set(key, value),
            "model" => self.model.set(key, value),
            "train" => self.train.set(key, value),
            "eval" => self.eval.set(key, value),
            other => return Err(Error::Config(format!("unknown section [{other}]"))),
        };
        r.map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("[{section}] {msg}")),
            e => e,
        })
    }

    pub fn apply_ini(&mut self, ini: &IniFile, source: &str) -> Result<()> {
        for (section, entries) in &ini.sections {
            for (k, v, line) in entries {
                self.set(section, k, v)
                    .map_err(|e| Error::Config(format!("{source}:{line}: {e}")))?;
            }
        }
        Ok(())
    }

    /// Applies `section.key=value` strings.
    pub fn apply_overrides(&mut self, items: &[String]) -> Result<()> {
        for item in items {
            let (path, value) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {item:?} is not section.key=value")))?;
            let (section, key) = path
                .split_once('.')
                .ok_or_else(|| Error::Config(format!("override {item:?} is not section.key=value")))?;
            self.set(section.trim(), key.trim(), value)?;
        }
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut section = |name: &str, pairs: Vec<(String, String)>| {
            let _ = writeln!(out, "[{name}]");
            for (k, v) in pairs {
                let _ = writeln!(out, "{k} = {v}");
            }
        };
        section("data", self.data.to_pairs());
        section("synth", self.synth.to_pairs());
        section("model", self.model.to_pairs());
        section("train", self.train.to_pairs());
        section("eval", self.eval.to_pairs());
        out
    }

    pub fn window_config(&self, model: &ModelConfig) -> WindowConfig {
        WindowConfig {
            obs_len: model.obs_len,
            pred_len: model.pred_len,
            stride: self.data.stride,
            max_peds: self.data.max_peds,
            neighbor_radius: self.data.neighbor_radius,
        }
    }
}

fn load_settings(config: Option<&Path>, set: &[String], flags: &[(&str, &str, String)]) -> Result<Settings> {
    let mut s = Settings::default();
    if let Some(path) = config {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let source = path.display().to_string();
        s.apply_ini(&parse_ini(&text, &source)?, &source)?;
    }
    s.apply_overrides(set)?;
    for (section, key, value) in flags {
        s.set(section, key, value)?;
    }
    Ok(s)
}

fn common_flags(c: &Common) -> Vec<(&'static str, &'static str, String)> {
    let mut f = Vec::new();
    if let Some(d) = &c.data {
        f.push(("data", "dir", d.clone()));
    }
    if let Some(t) = &c.test_scene {
        f.push(("data", "test_scene", t.clone()));
    }
    f
}

fn protocol_flags(p: &ProtocolArgs) -> Vec<(&'static str, &'static str, String)> {
    let mut f = Vec::new();
    let mut push = |k: &'static str, v: Option<String>| {
        if let Some(v) = v {
            f.push(("eval", k, v));
        }
    };
    push("strategy", p.strategy.clone());
    push("r1", p.r1.map(|v| v.to_string()));
    push("r2", p.r2.map(|v| v.to_string()));
    push("r", p.r.map(|v| v.to_string()));
    push("selection", p.selection.clone());
    push("accounting", p.accounting.clone());
    push("budget", p.budget.map(|v| v.to_string()));
    push("steps", p.steps.map(|v| v.to_string()));
    push("gamma", p.gamma.clone());
    push("seed", p.seed.map(|v| v.to_string()));
    f
}

/// Scenes as `(name, tracks)` in a stable order.
pub fn load_scenes(settings: &Settings) -> Result<Vec<(String, Vec<RawTrack>)>> {
    let dir = if settings.data.dir.is_empty() {
        std::env::var(DATA_DIR_ENV).unwrap_or_default()
    } else {
        settings.data.dir.clone()
    };
    if dir.is_empty() {
        return Err(Error::Config(format!("no data source: pass --data or set {DATA_DIR_ENV}")));
    }
    if dir == "synthetic" {
        let tracks = synthesize_scenes(&settings.synth)?;
        return Ok((0..settings.synth.n_scenes)
            .map(|i| {
                let name = scene_name(i);
                let rows = tracks.iter().filter(|t| t.scene_id == name).cloned().collect();
                (name, rows)
            })
            .collect());
    }
    let path = Path::new(&dir);
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Data(format!("no .txt scene files in {dir}")));
    }
    files
        .iter()
        .map(|f| {
            let name = f.file_stem().expect("file has a stem").to_string_lossy().to_string();
            Ok((name.clone(), ingest_benchmark_file(f, &name)?))
        })
        .collect()
}

/// Train and test windows for the leave-one-out split named in `settings`.
pub fn split_windows(settings: &Settings, model: &ModelConfig) -> Result<(String, Vec<SceneWindow>, Vec<SceneWindow>)> {
    let scenes = load_scenes(settings)?;
    let test = if settings.data.test_scene.is_empty() {
        scenes.last().expect("at least one scene").0.clone()
    } else {
        settings.data.test_scene.clone()
    };
    if !scenes.iter().any(|(n, _)| *n == test) {
        return Err(Error::Data(format!("test scene {test:?} not found")));
    }
    let wc = settings.window_config(model);
    let mut train = Vec::new();
    let mut held = Vec::new();
    for (name, tracks) in &scenes {
        let ws = window_scenes(tracks, &wc)?;
        if *name == test {
            held = ws;
        } else {
            train.extend(ws);
        }
    }
    Ok((test, train, held))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut flags = common_flags(&a.common);
    let mut push = |k: &'static str, v: Option<String>| {
        if let Some(v) = v {
            flags.push(("train", k, v));
        }
    };
    push("epochs", a.epochs.map(|v| v.to_string()));
    push("max_steps", a.max_steps.map(|v| v.to_string()));
    push("batch_size", a.batch_size.map(|v| v.to_string()));
    push("learning_rate", a.lr.map(|v| v.to_string()));
    push("seed", a.seed.map(|v| v.to_string()));
    let settings = load_settings(a.common.config.as_deref(), &a.common.set, &flags)?;
    settings.model.validate()?;
    settings.train.validate()?;
    let (test, train, _) = split_windows(&settings, &settings.model)?;
    eprintln!("training on {} windows (held out: {test})", train.len());
    write_file(&a.out.join("config.ini"), &settings.render())?;
    let out = fit(&train, &settings.model, &settings.train, &a.out, a.resume.as_deref())?;
    let l = out.last;
    println!(
        "step {}: total {:.4} diffusion {:.4} likelihood {:.4} consistency {:.4}",
        out.steps, l.total, l.diffusion, l.likelihood, l.consistency
    );
    println!("checkpoint {} ({})", out.checkpoint.display(), out.digest);
    Ok(())
}

struct Loaded {
    settings: Settings,
    model: Model,
    digest: String,
    test: String,
    windows: Vec<SceneWindow>,
}

fn load_for_eval(common: &Common, protocol: &ProtocolArgs, checkpoint: &Path) -> Result<Loaded> {
    let mut flags = common_flags(common);
    flags.extend(protocol_flags(protocol));
    let settings = load_settings(common.config.as_deref(), &common.set, &flags)?;
    let (model, digest) = Model::load(checkpoint)?;
    let (test, _, windows) = split_windows(&settings, &model.config)?;
    if windows.is_empty() {
        return Err(Error::Data(format!("test scene {test} has no complete windows")));
    }
    Ok(Loaded {
        settings,
        model,
        digest,
        test,
        windows,
    })
}

fn meta(l: &Loaded, sched: &Schedule, cfg: &SampleConfig, checkpoint: &Path) -> Vec<(String, String)> {
    vec![
        ("checkpoint".into(), checkpoint.display().to_string()),
        ("checkpoint_sha256".into(), l.digest.clone()),
        ("seed".into(), l.settings.eval.seed.to_string()),
        ("protocol".into(), cfg.protocol()),
        ("selection".into(), cfg.selection.as_str().into()),
        ("steps".into(), format!("{}/{}", sched.sampling_steps(), sched.total_steps())),
        ("gamma".into(), sched.mode.as_str().into()),
        ("test_scene".into(), l.test.clone()),
    ]
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let l = load_for_eval(&a.common, &a.protocol, &a.checkpoint)?;
    let cfg = l.settings.eval.sample_config()?;
    let sched = l.settings.eval.schedule(&l.model)?;
    let report = evaluate_best_of_n(&l.model, &l.windows, &sched, &cfg, l.settings.eval.seed)?;
    let m = meta(&l, &sched, &cfg, &a.checkpoint);
    write_file(&a.out.join("metrics.csv"), &report.to_csv(&m))?;
    write_file(&a.out.join("metrics.json"), &report.to_json(&m))?;
    print!("{}", report.table());
    Ok(())
}

fn cmd_ablate(a: &AblateArgs) -> Result<()> {
    let l = load_for_eval(&a.common, &a.protocol, &a.checkpoint)?;
    let base = l.settings.eval.clone();
    let k = l.model.schedule.total_steps();
    let settings: Vec<(String, EvalSettings)> = match a.axis.as_str() {
        "steps" => [10, 25, 50, 100]
            .into_iter()
            .filter(|&s| {
                let ok = s <= k;
                if !ok {
                    eprintln!("skipping S = {s} > K = {k}");
                }
                ok
            })
            .map(|s| (format!("S={s}"), EvalSettings { steps: s, ..base.clone() }))
            .collect(),
        "sampling" => {
            let n = base.r1 + base.r2;
            vec![
                ("A".into(), EvalSettings { strategy: "A".into(), ..base.clone() }),
                ("B".into(), EvalSettings { strategy: "B".into(), r: n, ..base.clone() }),
                ("C".into(), EvalSettings { strategy: "C".into(), r: n, ..base.clone() }),
            ]
        }
        "gamma" => [GammaMode::Deterministic, GammaMode::DdpmMatching]
            .into_iter()
            .map(|g| (g.as_str().to_string(), EvalSettings { gamma: g.as_str().into(), ..base.clone() }))
            .collect(),
        other => return Err(Error::Config(format!("unknown ablation axis {other:?} (steps, sampling, gamma)"))),
    };
    let mut csv = String::new();
    let _ = writeln!(csv, "# checkpoint={}", a.checkpoint.display());
    let _ = writeln!(csv, "# test_scene={}", l.test);
    let _ = writeln!(csv, "axis,setting,checkpoint_sha256,seed,protocol,steps,gamma,ade,fde");
    for (label, s) in settings {
        let cfg = s.sample_config()?;
        let sched = s.schedule(&l.model)?;
        let r = evaluate_best_of_n(&l.model, &l.windows, &sched, &cfg, s.seed)?;
        let _ = writeln!(
            csv,
            "{},{label},{},{},{},{}/{},{},{:.6},{:.6}",
            a.axis,
            l.digest,
            s.seed,
            cfg.protocol(),
            sched.sampling_steps(),
            sched.total_steps(),
            sched.mode.as_str(),
            r.avg_ade,
            r.avg_fde
        );
        println!("{label:<16} {:>6.3}/{:<6.3}", r.avg_ade, r.avg_fde);
    }
    write_file(&a.out.join(format!("ablate_{}.csv", a.axis)), &csv)
}

fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let mut flags = protocol_flags(&a.protocol);
    if a.protocol.selection.is_none() {
        flags.push(("eval", "selection", Selection::SelfLikelihood.as_str().into()));
    }
    let settings = load_settings(a.config.as_deref(), &a.set, &flags)?;
    let (model, digest) = Model::load(&a.checkpoint)?;
    let scene = a
        .input
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "input".into());
    let text = std::fs::read_to_string(&a.input).map_err(|e| Error::io(&a.input, e))?;
    let tracks = parse_benchmark(&text, &scene, &a.input.display().to_string())?;
    let wc = settings.window_config(&model.config);
    let anchor_frame = a
        .anchor
        .or_else(|| tracks.iter().map(|t| t.frame_id).max())
        .ok_or_else(|| Error::Data(format!("{} has no tracks", a.input.display())))?;
    let h = history_window(&tracks, &wc, Some(anchor_frame))?;
    for (ped, why) in &h.skipped {
        eprintln!("pedestrian {ped}: skipped ({why})");
    }
    let cfg = settings.eval.sample_config()?;
    let sched = settings.eval.schedule(&model)?;
    let with_gt = h.has_future.iter().all(|&f| f);
    let mut rng = window_rng(settings.eval.seed, 0);
    let set = hybrid_sample(&model, &h.window, &sched, &cfg, with_gt, &mut rng)?;

    let mut csv = String::new();
    let _ = writeln!(csv, "# checkpoint_sha256={digest}");
    let _ = writeln!(csv, "# seed={}", settings.eval.seed);
    let _ = writeln!(csv, "# protocol={}", cfg.protocol());
    let _ = writeln!(csv, "# anchor_frame={}", anchor_frame);
    let _ = writeln!(csv, "scene,ped,candidate,t,x,y");
    for (n, cands) in set.candidates.iter().enumerate() {
        for (m, path) in cands.iter().enumerate() {
            for (t, p) in path.iter().enumerate() {
                let _ = writeln!(csv, "{scene},{},{m},{},{},{}", h.window.ped_ids[n], t + 1, p[0], p[1]);
            }
        }
    }
    write_file(&a.out, &csv)?;
    if let Some(plot) = &a.plot {
        let history = h.window.observed_positions();
        let truth = h.window.future_positions();
        let layers: Vec<svg::PedLayers<'_>> = (0..h.window.num_peds())
            .map(|n| svg::PedLayers {
                id: h.window.ped_ids[n],
                history: &history[n],
                candidates: &set.candidates[n],
                truth: h.has_future[n].then_some(truth[n].as_slice()),
            })
            .collect();
        write_file(plot, &svg::render(&format!("{scene} {}", cfg.protocol()), &layers))?;
    }
    println!(
        "{} pedestrians, {} candidates each -> {}",
        set.num_peds(),
        set.candidates.first().map_or(0, Vec::len),
        a.out.display()
    );
    Ok(())
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let mut flags = Vec::new();
    let mut push = |k: &'static str, v: Option<String>| {
        if let Some(v) = v {
            flags.push(("synth", k, v));
        }
    };
    push("n_scenes", a.scenes.map(|v| v.to_string()));
    push("peds_per_scene", a.peds.map(|v| v.to_string()));
    push("frames", a.frames.map(|v| v.to_string()));
    push("seed", a.seed.map(|v| v.to_string()));
    let settings = load_settings(a.config.as_deref(), &a.set, &flags)?;
    let tracks = synthesize_scenes(&settings.synth)?;
    for i in 0..settings.synth.n_scenes {
        let name = scene_name(i);
        let rows: Vec<RawTrack> = tracks.iter().filter(|t| t.scene_id == name).cloned().collect();
        write_file(&a.out.join(format!("{name}.txt")), &format_benchmark(&rows))?;
    }
    println!("{} scenes -> {}", settings.synth.n_scenes, a.out.display());
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

/// Parses `args` (program name first) and runs; returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn settings_layering() {
        let ini = parse_ini("[train]\nepochs = 3\n[eval]\nstrategy = b\n", "c.ini").unwrap();
        let mut s = Settings::default();
        s.apply_ini(&ini, "c.ini").unwrap();
        s.apply_overrides(&["train.epochs=5".into(), "model.embed_dim=8".into()]).unwrap();
        assert_eq!(s.train.epochs, 5);
        assert_eq!(s.model.embed_dim, 8);
        assert_eq!(s.eval.sample_config().unwrap().strategy, Strategy::B { r: 20 });
        let bad = parse_ini("[train]\nepocs = 3\n", "c.ini").unwrap();
        let e = Settings::default().apply_ini(&bad, "c.ini").unwrap_err().to_string();
        assert!(e.contains("epocs") && e.contains("c.ini:2"), "{e}");
        assert!(Settings::default().set("nope", "a", "1").is_err());
        let mut round = Settings::default();
        round.apply_ini(&parse_ini(&s.render(), "r").unwrap(), "r").unwrap();
        assert_eq!(round, s);
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["distdiff", "train", "--bogus"]), 1);
        assert_eq!(run(["distdiff"]), 1);
        assert_eq!(run(["distdiff", "--help"]), 0);
    }
}

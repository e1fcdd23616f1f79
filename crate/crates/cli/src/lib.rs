//! Argument parsing and subcommand dispatch for the `stylepass` binary.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use stylepass::config::RunConfig;
use stylepass::datasets::{build_mixed_dataset, procedural_style, write_procedural_corpus};
use stylepass::imaging::{read_flo, ImageTensor};
use stylepass::manifest::RunManifest;
use stylepass::metrics::{
    evaluate_sequence, plot_series, table, SequenceInput, SequenceMetricsReport, Series,
};
use stylepass::network::{export_graph, StyleModel};
use stylepass::render_sim::{render_sequence, InjectionMode, StylePass};
use stylepass::trainer::{Checkpoint, Trainer, FINAL_CHECKPOINT, LOG_FILE};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

/// Training resolution and step budget of `train --smoke`.
pub const SMOKE_RESOLUTION: usize = 64;
pub const SMOKE_STEPS: u64 = 20;

#[derive(Parser, Debug)]
#[command(
    name = "stylepass",
    version,
    about = "Train, run and evaluate render-loop stylisation"
)]
struct Cli {
    /// JSON run configuration; omitted fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default `runs/<command>`).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a style network.
    Train(TrainArgs),
    /// Stylise one image with a trained network.
    Stylise(StyliseArgs),
    /// Render simulator scenes, optionally with the style pass injected.
    Simulate(SimulateArgs),
    /// Compute temporal and quality metrics.
    Evaluate(EvaluateArgs),
    /// Write the network as an ONNX graph.
    Export(ExportArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    style: Option<PathBuf>,
    /// Loss term or data source to remove; repeatable.
    #[arg(long, value_enum)]
    ablate: Vec<Ablation>,
    /// Short low-resolution run; generates a procedural corpus and style
    /// image when the configured ones are missing.
    #[arg(long)]
    smoke: bool,
    /// Continue from a checkpoint written with the same configuration.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct StyliseArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    style: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Evaluate two injection modes on the same scenes.
    #[arg(long, value_enum, num_args = 2, value_names = ["MODE_A", "MODE_B"])]
    compare: Option<Vec<Mode>>,
    /// Directory of `frame_NNNN.png` originals and `flow_NNNN.flo` flows
    /// instead of simulator scenes.
    #[arg(long)]
    frames: Option<PathBuf>,
    /// Directory of stylised `frame_NNNN.png` matching `--frames`
    /// (defaults to the originals).
    #[arg(long, requires = "frames")]
    stylised: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[arg(long)]
    model: PathBuf,
    /// Output file (default `<out-dir>/model.onnx`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Ablation {
    Dog,
    Depth,
    Synthetic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Mode {
    #[value(name = "before_post")]
    BeforePost,
    #[value(name = "after_post")]
    AfterPost,
    #[value(name = "none")]
    None,
}

impl From<Mode> for InjectionMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::BeforePost => InjectionMode::BeforePost,
            Mode::AfterPost => InjectionMode::AfterPost,
            Mode::None => InjectionMode::None,
        }
    }
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Run(stylepass::Error),
}

impl From<stylepass::Error> for CliError {
    fn from(e: stylepass::Error) -> Self {
        match e {
            stylepass::Error::Config(msg) => CliError::Usage(msg),
            other => CliError::Run(other),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let recorded: Vec<String> = argv
        .iter()
        .skip(1)
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli, recorded) {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Run(e)) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

fn dispatch(cli: Cli, args: Vec<String>) -> CliResult<()> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.apply_seed(seed);
    }
    let name = match &cli.command {
        Command::Train(_) => "train",
        Command::Stylise(_) => "stylise",
        Command::Simulate(_) => "simulate",
        Command::Evaluate(_) => "evaluate",
        Command::Export(_) => "export",
    };
    let out_dir = cli
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(name));
    std::fs::create_dir_all(&out_dir).map_err(|e| io_err(&out_dir, e))?;
    let mut manifest = RunManifest::new(name, args, String::new(), config.seed);
    let clock = Instant::now();
    match cli.command {
        Command::Train(a) => train(a, config, &out_dir, &mut manifest)?,
        Command::Stylise(a) => stylise(a, &config, &mut manifest)?,
        Command::Simulate(a) => simulate(a, &config, &out_dir, &mut manifest)?,
        Command::Evaluate(a) => evaluate(a, &config, &out_dir, &mut manifest)?,
        Command::Export(a) => export(a, &config, &out_dir, &mut manifest)?,
    }
    manifest.wall_clock_ms = clock.elapsed().as_millis() as u64;
    let path = manifest.write(&out_dir)?;
    println!("manifest: {}", path.display());
    Ok(())
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Run(stylepass::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn load_model(path: &Path) -> CliResult<StyleModel<f32>> {
    Ok(Checkpoint::load(path)?.model()?)
}

fn config_hash(config: &RunConfig) -> CliResult<String> {
    let v = serde_json::to_value(config).map_err(|e| CliError::Run(e.into()))?;
    Ok(stylepass::trainer::canonical_hash(&v))
}

fn train(
    a: TrainArgs,
    mut config: RunConfig,
    out: &Path,
    manifest: &mut RunManifest,
) -> CliResult<()> {
    for ab in &a.ablate {
        match ab {
            Ablation::Dog => config.train.ablations.no_dog = true,
            Ablation::Depth => config.train.ablations.no_depth = true,
            Ablation::Synthetic => {
                config.train.ablations.no_synthetic = true;
                config.corpus.synthetic_dir = None;
            }
        }
    }
    if a.smoke {
        config.train.resolution = SMOKE_RESOLUTION;
        config.train.max_steps = Some(SMOKE_STEPS);
        config.train.checkpoint_every = SMOKE_STEPS / 2;
        config.apply_seed(config.seed);
        if !config.corpus.photo_dir.is_dir() {
            let (photos, synthetic) = write_procedural_corpus(
                &out.join("mini_corpus"),
                8,
                8,
                SMOKE_RESOLUTION,
                config.seed,
            )?;
            config.corpus.photo_dir = photos;
            if config.corpus.synthetic_dir.is_some() {
                config.corpus.synthetic_dir = Some(synthetic);
            }
        }
    }
    config.validate()?;
    let res = config.train.resolution;
    let style = match a.style.as_ref().or(config.style.as_ref()) {
        Some(p) => ImageTensor::load(p)?,
        None if a.smoke => {
            let s = procedural_style(config.seed, res, res)?;
            s.save_png(&out.join("style.png"))?;
            s
        }
        None => {
            return Err(CliError::Usage(
                "train needs --style or a configured style".into(),
            ))
        }
    };
    let dataset = build_mixed_dataset(&config.corpus)?;
    let ds_manifest = out.join("dataset_manifest.json");
    dataset.manifest().write(&ds_manifest)?;
    let resolved = out.join("config.json");
    std::fs::write(&resolved, config.to_json()?).map_err(|e| io_err(&resolved, e))?;

    let trainer = Trainer::new(config.train.clone(), &dataset, &style)?.with_out_dir(out);
    manifest.config_hash = config.train.config_hash();
    manifest.backbone("encoder", trainer.objective().encoder.id());
    manifest.backbone("depth", trainer.objective().depth.id());
    let resume = a.resume.as_deref().map(Checkpoint::load).transpose()?;
    let outcome = trainer.run(resume)?;

    let mut series: Vec<Series> = Vec::new();
    let pick: [(&str, fn(&stylepass::trainer::LogRecord) -> f64); 5] = [
        ("total", |r| r.total),
        ("content", |r| r.content),
        ("style", |r| r.style),
        ("depth", |r| r.depth),
        ("dog", |r| r.dog),
    ];
    for (name, f) in pick {
        series.push(Series {
            name: name.into(),
            points: outcome
                .log
                .iter()
                .map(|r| (r.step as f64, f(r).max(1e-12).log10()))
                .collect(),
        });
    }
    let plot = out.join("loss.png");
    if !outcome.log.is_empty() {
        plot_series(&plot, &series, 640, 360)?;
        manifest.add_artifacts([&plot])?;
    }
    manifest.add_artifacts([
        out.join(FINAL_CHECKPOINT),
        out.join(LOG_FILE),
        ds_manifest,
        resolved,
    ])?;
    manifest.add_artifacts(&outcome.checkpoints)?;
    if let Some(last) = outcome.log.last() {
        println!(
            "trained {} steps; final total loss {:.6e}",
            outcome.steps, last.total
        );
    }
    Ok(())
}

fn stylise(a: StyliseArgs, config: &RunConfig, manifest: &mut RunManifest) -> CliResult<()> {
    let model = load_model(&a.model)?;
    let image = ImageTensor::load(&a.input)?;
    model.stylise(&image)?.display.save_png(&a.out)?;
    manifest.config_hash = config_hash(config)?;
    manifest.backbone("network", model.id());
    manifest.add_artifacts([&a.out])?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn resolve_mode(mode: Option<Mode>, config: &RunConfig) -> InjectionMode {
    mode.map(Into::into).unwrap_or(config.simulate.mode)
}

fn require_model(mode: InjectionMode, model: &Option<StyleModel<f32>>) -> CliResult<()> {
    if mode != InjectionMode::None && model.is_none() {
        return Err(CliError::Usage(format!(
            "mode {} needs --model",
            mode.as_str()
        )));
    }
    Ok(())
}

fn simulate(
    a: SimulateArgs,
    config: &RunConfig,
    out: &Path,
    manifest: &mut RunManifest,
) -> CliResult<()> {
    let mode = resolve_mode(a.mode, config);
    let model = a.model.as_deref().map(load_model).transpose()?;
    require_model(mode, &model)?;
    manifest.config_hash = config_hash(config)?;
    if let Some(m) = &model {
        manifest.backbone("network", m.id());
    }
    for (i, scene) in config.simulate.scenes(config.seed)?.iter().enumerate() {
        let pass = model.as_ref().map(|m| m as &dyn StylePass);
        let rendered = render_sequence(scene, &config.simulate.post, mode, pass)?;
        let dir = out.join(format!("scene_{i:02}"));
        let files = rendered.write(&dir)?;
        let scene_file = dir.join("scene.json");
        std::fs::write(&scene_file, scene.to_json()?).map_err(|e| io_err(&scene_file, e))?;
        manifest.add_artifacts(files.iter().chain([&scene_file]))?;
    }
    println!(
        "rendered {} scene(s) with mode {} into {}",
        config.simulate.scenes,
        mode.as_str(),
        out.display()
    );
    Ok(())
}

fn numbered(dir: &Path, prefix: &str, ext: &str) -> CliResult<Vec<PathBuf>> {
    let mut files = Vec::new();
    for i in 0.. {
        let p = dir.join(format!("{prefix}_{i:04}.{ext}"));
        if !p.is_file() {
            break;
        }
        files.push(p);
    }
    Ok(files)
}

fn evaluate(
    a: EvaluateArgs,
    config: &RunConfig,
    out: &Path,
    manifest: &mut RunManifest,
) -> CliResult<()> {
    let encoder = config.train.encoder.build()?;
    let style_path =
        a.style.as_ref().or(config.style.as_ref()).ok_or_else(|| {
            CliError::Usage("evaluate needs --style or a configured style".into())
        })?;
    let style = ImageTensor::load(style_path)?;
    let style_name = style_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "style".into());
    manifest.config_hash = config_hash(config)?;
    manifest.backbone("encoder", encoder.id());

    let mut reports: Vec<(String, SequenceMetricsReport)> = Vec::new();
    if let Some(dir) = &a.frames {
        let originals = numbered(dir, "frame", "png")?
            .iter()
            .map(|p| ImageTensor::load(p))
            .collect::<stylepass::Result<Vec<_>>>()?;
        let stylised_dir = a.stylised.as_deref().unwrap_or(dir);
        let stylised = numbered(stylised_dir, "frame", "png")?
            .iter()
            .map(|p| ImageTensor::load(p))
            .collect::<stylepass::Result<Vec<_>>>()?;
        let flows = numbered(dir, "flow", "flo")?
            .iter()
            .map(|p| read_flo(p))
            .collect::<stylepass::Result<Vec<_>>>()?;
        if originals.len() < 2 {
            return Err(CliError::Usage(format!(
                "{} holds fewer than two frame_NNNN.png files",
                dir.display()
            )));
        }
        let input = SequenceInput {
            name: dir.display().to_string(),
            style_name,
            originals: &originals,
            stylised: &stylised,
            flows: &flows,
            flow_source: format!("flo:{}", dir.display()),
            style: &style,
        };
        let result = evaluate_sequence(&encoder, &input)?;
        reports.push((
            "frames".into(),
            SequenceMetricsReport::aggregate("frames", &encoder, vec![result])?,
        ));
    } else {
        let modes: Vec<InjectionMode> = match (&a.compare, a.mode) {
            (Some(c), _) => c.iter().map(|&m| m.into()).collect(),
            (None, m) => vec![resolve_mode(m, config)],
        };
        let model = a.model.as_deref().map(load_model).transpose()?;
        for &m in &modes {
            require_model(m, &model)?;
        }
        if let Some(m) = &model {
            manifest.backbone("network", m.id());
        }
        let scenes = config.simulate.scenes(config.seed)?;
        let stack = &config.simulate.post;
        for &mode in &modes {
            let mut results = Vec::new();
            for (i, scene) in scenes.iter().enumerate() {
                let originals = render_sequence(scene, stack, InjectionMode::None, None)?;
                let pass = model.as_ref().map(|m| m as &dyn StylePass);
                let stylised = render_sequence(scene, stack, mode, pass)?;
                let flows = stylised.flows();
                let input = SequenceInput {
                    name: format!("scene_{i:02}"),
                    style_name: style_name.clone(),
                    originals: &originals.frames,
                    stylised: &stylised.frames,
                    flows: &flows,
                    flow_source: "analytic".into(),
                    style: &style,
                };
                results.push(evaluate_sequence(&encoder, &input)?);
            }
            reports.push((
                mode.as_str().into(),
                SequenceMetricsReport::aggregate(mode.as_str(), &encoder, results)?,
            ));
        }
    }

    for (label, r) in &reports {
        let p = out.join(format!("report_{label}.json"));
        r.write_json(&p)?;
        manifest.add_artifacts([&p])?;
    }
    let rows: Vec<(&str, &SequenceMetricsReport)> =
        reports.iter().map(|(l, r)| (l.as_str(), r)).collect();
    let text = table(&rows);
    let table_path = out.join("report.txt");
    std::fs::write(&table_path, &text).map_err(|e| io_err(&table_path, e))?;
    manifest.add_artifacts([&table_path])?;
    print!("{text}");

    let series: Vec<Series> = reports
        .iter()
        .map(|(label, r)| Series {
            name: label.clone(),
            points: r
                .per_sequence
                .iter()
                .enumerate()
                .map(|(i, s)| (i as f64, s.metrics.warping_error * 10.0))
                .collect(),
        })
        .collect();
    let plot = out.join("warping_error.png");
    plot_series(&plot, &series, 640, 360)?;
    manifest.add_artifacts([&plot])?;

    if let [(la, ra), (lb, rb)] = reports.as_slice() {
        let wins = ra
            .per_sequence
            .iter()
            .zip(&rb.per_sequence)
            .filter(|(x, y)| x.metrics.warping_error <= y.metrics.warping_error)
            .count();
        println!(
            "warping error {la} <= {lb} in {wins} of {} scenes",
            ra.per_sequence.len()
        );
    }
    Ok(())
}

fn export(
    a: ExportArgs,
    config: &RunConfig,
    out: &Path,
    manifest: &mut RunManifest,
) -> CliResult<()> {
    let model = load_model(&a.model)?;
    let path = a.out.unwrap_or_else(|| out.join("model.onnx"));
    let summary = export_graph(&model, &path)?;
    let meta = out.join("export_manifest.json");
    let text = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Run(e.into()))?;
    std::fs::write(&meta, text).map_err(|e| io_err(&meta, e))?;
    manifest.config_hash = config_hash(config)?;
    manifest.backbone("network", model.id());
    manifest.add_artifacts([&path, &meta])?;
    println!("exported {}", path.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_flag_is_a_usage_error() {
        assert_eq!(run_cli(["stylepass", "train", "--bogus"]), EXIT_USAGE);
        assert_eq!(run_cli(["stylepass"]), EXIT_USAGE);
    }

    #[test]
    fn help_exits_cleanly() {
        assert_eq!(run_cli(["stylepass", "--help"]), EXIT_OK);
    }

    #[test]
    fn missing_model_is_a_runtime_failure() {
        let dir = tempfile::tempdir().unwrap();
        let code = run_cli([
            "stylepass".as_ref(),
            "export".as_ref(),
            "--model".as_ref(),
            dir.path().join("nope.ckpt").as_os_str(),
            "--out-dir".as_ref(),
            dir.path().as_os_str(),
        ]);
        assert_eq!(code, EXIT_FAILURE);
    }

    #[test]
    fn stylised_mode_without_model_is_a_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let code = run_cli([
            "stylepass".as_ref(),
            "simulate".as_ref(),
            "--mode".as_ref(),
            "after_post".as_ref(),
            "--out-dir".as_ref(),
            dir.path().as_os_str(),
        ]);
        assert_eq!(code, EXIT_USAGE);
    }
}

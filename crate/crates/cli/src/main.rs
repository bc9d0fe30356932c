//! `objmap`: simulate detection logs, build augmented maps from them, score
//! and sweep, and render the result.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod manifest;

use std::fs;
use std::io::{self, BufRead, BufReader, Write as _};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use objmap::eval::{evaluate, sweep, SweepError, SweepParam, DEFAULT_RADIUS};
use objmap::map_io::{
    load_annotations, load_augmented, load_grid, load_mask, render, save_annotations, save_augmented, save_grid,
    save_image, save_mask, sidecar_path, AugmentedMap, MapIoError,
};
use objmap::pipeline::{replay, PipelineError};
use objmap::simulator::{presets, run_scenario, CameraRig, CorrectionEvent, FrameRecord, SimError};
use objmap::{ClassLabel, ScenarioConfig, TrackingConfig};

use manifest::RunManifest;

const FRAMES: &str = "frames.jsonl";
const EVENTS: &str = "events.jsonl";
const TRUTH: &str = "truth.txt";
const MASK: &str = "mask.txt";
const CAMERA: &str = "camera.json";
const GRID: &str = "grid.pgm";
const SCENARIO: &str = "scenario.json";

#[derive(Parser)]
#[command(name = "objmap", version, about = "Object-augmented 2D maps from detection logs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its detection log, events and ground truth
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay a log through shape fitting and the tracker
    Track {
        /// Directory written by `simulate`
        #[arg(long)]
        log: PathBuf,
        /// Occupancy grid the map refers to
        #[arg(long)]
        grid: Option<PathBuf>,
        /// Tracking config (JSON); defaults to the log's scenario settings
        #[arg(long)]
        config: Option<PathBuf>,
        /// Augmented map to write
        #[arg(long)]
        out: PathBuf,
    },
    /// Score an augmented map against ground truth
    Eval {
        #[arg(long)]
        augmented: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Which truth entries were observed; all when omitted
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_RADIUS)]
        radius: f64,
        /// Also write the rows as JSON lines
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate, track and score over a range of values and seeds
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        /// delta, sigma_I or max_range
        #[arg(long)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long, default_value_t = DEFAULT_RADIUS)]
        radius: f64,
        /// Mean scores as JSON lines
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw the instances over the grid as a PPM image
    Render {
        #[arg(long)]
        augmented: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a built-in scenario as JSON
    Preset {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(presets::NAMES))]
        name: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Exit 2 for anything wrong with the inputs, 3 when valid inputs fail
/// while running.
#[derive(Debug)]
enum CliError {
    Input(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<MapIoError> for CliError {
    fn from(e: MapIoError) -> Self {
        match &e {
            MapIoError::Io { source, .. } if source.kind() != io::ErrorKind::NotFound => CliError::Runtime(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Grid(g) => g.into(),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<SweepError> for CliError {
    fn from(e: SweepError) -> Self {
        match e {
            SweepError::Sim(s) => s.into(),
            SweepError::Pipeline(p) => p.into(),
            other => CliError::Input(other.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn read_input(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn write_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(write_err(path))
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r).expect("plain data"));
        text.push('\n');
    }
    write_file(path, text.as_bytes())
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| CliError::Input(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

fn load_scenario(path: &Path) -> Result<ScenarioConfig> {
    Ok(ScenarioConfig::from_json(&read_input(path)?)?)
}

fn canonical<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("plain data")
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(write_err(dir))
}

fn parent_dir(path: &Path) -> &Path {
    path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."))
}

/// `map.jsonl` -> `map.manifest.json`, next to the output.
fn manifest_beside(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.{}", manifest::FILE_NAME))
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn simulate(scenario: &Path, out: &Path) -> Result<()> {
    let cfg = load_scenario(scenario)?;
    let log = run_scenario(&cfg, Some(parent_dir(scenario)))?;
    create_dir(out)?;
    write_jsonl(&out.join(FRAMES), &log.frames)?;
    write_jsonl(&out.join(EVENTS), &log.events)?;
    save_annotations(&log.truth, &out.join(TRUTH))?;
    save_mask(&log.observed, &out.join(MASK))?;
    write_file(&out.join(CAMERA), (canonical(&log.camera) + "\n").as_bytes())?;
    save_grid(&log.grid, &out.join(GRID))?;
    let config_json = canonical(&cfg);
    let pretty = serde_json::to_string_pretty(&cfg).expect("plain data") + "\n";
    write_file(&out.join(SCENARIO), pretty.as_bytes())?;

    let mut m = RunManifest::new("simulate", &config_json, Some(cfg.seed));
    m.input(scenario).map_err(write_err(scenario))?;
    let grid_yaml = file_name(&sidecar_path(Path::new(GRID)));
    for name in [FRAMES, EVENTS, TRUTH, MASK, CAMERA, GRID, grid_yaml.as_str(), SCENARIO] {
        m.output(out, name).map_err(write_err(out))?;
    }
    let path = out.join(manifest::FILE_NAME);
    m.write(&path).map_err(write_err(&path))?;
    eprintln!(
        "{} frames, {} detections, {} correction events",
        log.frames.len(),
        log.frames.iter().map(|f| f.detections.len()).sum::<usize>(),
        log.events.len()
    );
    Ok(())
}

fn track(log: &Path, grid: Option<&Path>, config: Option<&Path>, out: &Path) -> Result<()> {
    let cfg: TrackingConfig = match config {
        Some(path) => serde_json::from_str(&read_input(path)?)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?,
        None if log.join(SCENARIO).exists() => load_scenario(&log.join(SCENARIO))?.tracking,
        None => TrackingConfig::default(),
    };
    cfg.validate().map_err(CliError::Input)?;
    let camera: CameraRig = serde_json::from_str(&read_input(&log.join(CAMERA))?)
        .map_err(|e| CliError::Input(format!("{}: {e}", log.join(CAMERA).display())))?;
    let frames: Vec<FrameRecord> = read_jsonl(&log.join(FRAMES))?;
    let events: Vec<CorrectionEvent> = if log.join(EVENTS).exists() {
        read_jsonl(&log.join(EVENTS))?
    } else {
        Vec::new()
    };
    if let Some(g) = grid {
        load_grid(g)?;
    }

    let (tracker, stats) = replay(camera, &frames, &events, &cfg)?;
    let map = AugmentedMap::from_tracker(grid.map(|g| g.display().to_string()), &tracker);
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    save_augmented(&map, out)?;

    let mut m = RunManifest::new("track", &canonical(&cfg), None);
    for input in [log.join(CAMERA), log.join(FRAMES)] {
        m.input(&input).map_err(write_err(&input))?;
    }
    if log.join(EVENTS).exists() {
        m.input(&log.join(EVENTS)).map_err(write_err(log))?;
    }
    if let Some(g) = grid {
        m.input(g).map_err(write_err(g))?;
    }
    m.output(parent_dir(out), &file_name(out)).map_err(write_err(out))?;
    let path = manifest_beside(out);
    m.write(&path).map_err(write_err(&path))?;
    eprintln!(
        "{} instances from {} detections ({} dropped, {} out of range), {} corrections",
        tracker.len(),
        stats.detections,
        stats.dropped,
        stats.out_of_range,
        stats.corrections
    );
    Ok(())
}

fn eval(augmented: &Path, truth: &Path, mask: Option<&Path>, radius: f64, out: Option<&Path>) -> Result<()> {
    if !(radius > 0.0) {
        return Err(CliError::Input("--radius must be positive".into()));
    }
    let map = load_augmented(augmented)?;
    let truth = load_annotations(truth)?;
    let mask = mask.map(load_mask).transpose()?;
    if let Some(m) = &mask {
        if m.len() != truth.len() {
            return Err(CliError::Input(format!(
                "mask has {} entries but truth has {}",
                m.len(),
                truth.len()
            )));
        }
    }
    let report = evaluate(&map.instances, &truth, mask.as_deref(), radius);
    print!("{}", report.table());
    if let Some(path) = out {
        write_file(path, report.jsonl().as_bytes())?;
    }
    Ok(())
}

fn run_sweep(
    scenario: &Path,
    param: SweepParam,
    values: &[f64],
    seeds: u64,
    radius: f64,
    out: Option<&Path>,
) -> Result<()> {
    if !(radius > 0.0) {
        return Err(CliError::Input("--radius must be positive".into()));
    }
    let cfg = load_scenario(scenario)?;
    let result = sweep(&cfg, Some(parent_dir(scenario)), param, values, seeds, radius)?;
    let mut stdout = io::stdout().lock();
    let classes = std::iter::once("all").chain(ClassLabel::STATIC.iter().map(|c| c.as_str()));
    for class in classes {
        if result.points[0].class(class).is_some() {
            let _ = writeln!(stdout, "[{class}]\n{}", result.table(class));
        }
    }
    if let Some(path) = out {
        write_file(path, result.jsonl().as_bytes())?;
        #[derive(Serialize)]
        struct SweepSpec<'a> {
            scenario: &'a ScenarioConfig,
            param: &'static str,
            values: &'a [f64],
            seeds: u64,
            radius: f64,
        }
        let spec = SweepSpec {
            scenario: &cfg,
            param: param.name(),
            values,
            seeds,
            radius,
        };
        let mut m = RunManifest::new("sweep", &canonical(&spec), Some(cfg.seed));
        m.input(scenario).map_err(write_err(scenario))?;
        m.output(parent_dir(path), &file_name(path)).map_err(write_err(path))?;
        let mpath = manifest_beside(path);
        m.write(&mpath).map_err(write_err(&mpath))?;
    }
    Ok(())
}

fn run_render(augmented: &Path, grid: &Path, out: &Path) -> Result<()> {
    let map = load_augmented(augmented)?;
    let grid = load_grid(grid)?;
    let rendered = render(&map, &grid)?;
    if rendered.clamped > 0 {
        eprintln!("warning: {} instances lie outside the grid and were drawn at its border", rendered.clamped);
    }
    save_image(&rendered.image, out)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { scenario, out } => simulate(&scenario, &out),
        Command::Track { log, grid, config, out } => track(&log, grid.as_deref(), config.as_deref(), &out),
        Command::Eval {
            augmented,
            truth,
            mask,
            radius,
            out,
        } => eval(&augmented, &truth, mask.as_deref(), radius, out.as_deref()),
        Command::Sweep {
            scenario,
            param,
            values,
            seeds,
            radius,
            out,
        } => run_sweep(&scenario, param, &values, seeds, radius, out.as_deref()),
        Command::Render { augmented, grid, out } => run_render(&augmented, &grid, &out),
        Command::Preset { name, seed } => {
            let cfg = presets::by_name(&name, seed).expect("validated by clap");
            println!("{}", serde_json::to_string_pretty(&cfg).expect("plain data"));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let start = Instant::now();
    match run(cli) {
        Ok(()) => {
            eprintln!("done in {:.2?}", start.elapsed());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

//! `occlufuse` command-line front end.
//!
//! Exit codes: 0 success, 1 partial failure, 2 usage or configuration error,
//! 3 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use occlufuse::geometry::Pose6;
use occlufuse::render::Renderer;
use occlufuse::sensor::{fit_params, CalibrationFile, FitError, DEFAULT_RANGE_M};
use occlufuse::sim::scene::example_scenario;
use occlufuse::sim::sweep::write_atomic;
use occlufuse::sim::table::rmse;
use occlufuse::sim::{self, FrameRecord, Scenario, SimError, SweepError, SweepGrid};

#[derive(Parser)]
#[command(name = "occlufuse", version, about = "Camera + capacitive-proximity pose fusion under occlusion")]
struct Cli {
    /// Seed override; falls back to OCCLUFUSE_SEED, then to the scene's own seed.
    #[arg(long, global = true, env = "OCCLUFUSE_SEED")]
    seed: Option<u64>,
    /// Worker threads for sweeps.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    jobs: Option<u64>,
    /// More progress output on stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the sensor response curve to (d_m, v_volts) samples.
    Fit(FitArgs),
    /// Run one scene and write per-frame records plus a summary.
    Simulate(SimulateArgs),
    /// Run a band grid of generated scenes and build the result table.
    Sweep(SweepArgs),
    /// Configuration helpers.
    Config {
        #[command(subcommand)]
        command: ConfigCommand,
    },
    /// Write a frame's mask as a PGM image, for debugging.
    RenderMask(RenderMaskArgs),
}

#[derive(Args)]
struct FitArgs {
    /// CSV with a `d_m,v_volts` header.
    samples: PathBuf,
    #[arg(long, default_value = "forearm")]
    object_class: String,
    /// Sensing range to record; defaults to the forearm range.
    #[arg(long, default_value_t = DEFAULT_RANGE_M)]
    range_m: f64,
    /// Noise variance to record; defaults to the squared fit residual.
    #[arg(long)]
    noise_variance_v2: Option<f64>,
    /// Calibration JSON destination; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scene JSON file.
    #[arg(long)]
    scene: PathBuf,
    /// Output directory for `records.csv` and `summary.json`.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// Grid JSON; the built-in default grid when absent.
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long)]
    seeds_per_cell: Option<usize>,
    /// Output directory; existing scenario CSVs there are reused.
    #[arg(long, default_value = "sweep-out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum ConfigCommand {
    /// Print every default as JSON.
    Dump {
        #[arg(value_enum, default_value_t = DumpWhat::All)]
        what: DumpWhat,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DumpWhat {
    All,
    /// The bundled example scene, with every default filled in.
    Scene,
    /// The default sweep grid.
    Grid,
}

#[derive(Args)]
struct RenderMaskArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long, default_value_t = 0)]
    frame: usize,
    /// Write the camera's view (occlusion and noise applied) instead of the clean silhouette.
    #[arg(long)]
    observed: bool,
    /// Render at this pose instead of the trajectory's: x y z roll pitch yaw.
    #[arg(long, num_args = 6, value_names = ["X", "Y", "Z", "ROLL", "PITCH", "YAW"], allow_negative_numbers = true)]
    pose: Option<Vec<f64>>,
    #[arg(long, default_value = "mask.pgm")]
    out: PathBuf,
}

struct Failure {
    code: u8,
    message: String,
}

fn usage(message: impl std::fmt::Display) -> Failure {
    Failure {
        code: 2,
        message: message.to_string(),
    }
}

fn numerical(message: impl std::fmt::Display) -> Failure {
    Failure {
        code: 3,
        message: message.to_string(),
    }
}

fn write_out(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| usage(format!("{}: {e}", dir.display())))?;
    }
    write_atomic(path, bytes).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn load_scene(path: &Path, seed: Option<u64>) -> Result<Scenario, Failure> {
    let mut s = Scenario::load(path).map_err(usage)?;
    if let Some(seed) = seed {
        s.seed = seed;
    }
    Ok(s)
}

fn fit(cli: &Cli, args: &FitArgs) -> Result<(), Failure> {
    let mut rdr = csv::Reader::from_path(&args.samples).map_err(|e| usage(format!("{}: {e}", args.samples.display())))?;
    let headers = rdr.headers().map_err(|e| usage(format!("{}: {e}", args.samples.display())))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| usage(format!("{}: missing column {name:?}", args.samples.display())))
    };
    let (d_col, v_col) = (col("d_m")?, col("v_volts")?);
    let mut samples = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| usage(format!("{}: {e}", args.samples.display())))?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |i: usize| -> Result<f64, Failure> {
            let raw = row.get(i).unwrap_or("").trim();
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| usage(format!("{}:{line}: cannot parse {raw:?} as a number", args.samples.display())))
        };
        samples.push((field(d_col)?, field(v_col)?));
    }
    let report = fit_params(&samples).map_err(|e| match e {
        FitError::RankDeficient | FitError::NoConvergence(_) => numerical(format!("fit failed: {e}")),
        _ => usage(format!("fit failed: {e}")),
    })?;
    let cal = CalibrationFile {
        object_class: args.object_class.clone(),
        a1: report.a1,
        a2: report.a2,
        a3: report.a3,
        noise_variance: args.noise_variance_v2.unwrap_or(report.residual_rms * report.residual_rms),
        range: args.range_m,
        residual_rms: Some(report.residual_rms),
    };
    cal.to_model().map_err(|e| numerical(format!("fitted parameters are unusable: {e}")))?;
    let json = serde_json::to_string_pretty(&cal).expect("calibration serializes") + "\n";
    match &args.out {
        Some(path) => {
            write_out(path, json.as_bytes())?;
            println!(
                "a1 = {:.6} V, a2 = {:.6} 1/m^2, a3 = {:.6} V, residual rms = {:.3e} V ({} samples, {} iterations)",
                report.a1,
                report.a2,
                report.a3,
                report.residual_rms,
                samples.len(),
                report.iterations
            );
            if cli.verbose > 0 {
                eprintln!("wrote {}", path.display());
            }
        }
        None => print!("{json}"),
    }
    Ok(())
}

#[derive(Serialize)]
struct MethodSummary {
    #[serde(skip_serializing_if = "Option::is_none")]
    vision_raw: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    haptic_raw: Option<f64>,
    vision_only: Option<f64>,
    haptic_only: Option<f64>,
    fused: Option<f64>,
}

#[derive(Serialize)]
struct Summary {
    scene: String,
    seed: u64,
    frames: usize,
    vision_lost_frames: usize,
    haptic_valid_frames: usize,
    mean_occlusion_fraction: f64,
    rmse_m: MethodSummary,
    rmse_rad: MethodSummary,
}

fn summarize(name: &str, seed: u64, r: &[FrameRecord]) -> Summary {
    Summary {
        scene: name.to_string(),
        seed,
        frames: r.len(),
        vision_lost_frames: r.iter().filter(|x| x.vision.is_none()).count(),
        haptic_valid_frames: r.iter().filter(|x| x.haptic.is_some()).count(),
        mean_occlusion_fraction: r.iter().map(|x| x.occlusion_fraction).sum::<f64>() / r.len().max(1) as f64,
        rmse_m: MethodSummary {
            vision_raw: rmse(r.iter().filter_map(|x| x.err_vision_raw_m)),
            haptic_raw: rmse(r.iter().filter_map(|x| x.err_haptic_raw_m)),
            vision_only: rmse(r.iter().map(|x| x.err_vision_only_m)),
            haptic_only: rmse(r.iter().map(|x| x.err_haptic_only_m)),
            fused: rmse(r.iter().map(|x| x.err_fused_m)),
        },
        rmse_rad: MethodSummary {
            vision_raw: None,
            haptic_raw: None,
            vision_only: rmse(r.iter().map(|x| x.err_vision_only_rad)),
            haptic_only: rmse(r.iter().map(|x| x.err_haptic_only_rad)),
            fused: rmse(r.iter().map(|x| x.err_fused_rad)),
        },
    }
}

fn fmt_cm(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{:.2} cm", v * 100.0))
}

fn simulate(cli: &Cli, args: &SimulateArgs) -> Result<(), Failure> {
    let scene = load_scene(&args.scene, cli.seed)?;
    let records = sim::run_scenario(&scene).map_err(|e| match e {
        SimError::Scene(e) => usage(e),
        e @ SimError::Observer { .. } => numerical(e),
    })?;
    let name = if scene.name.is_empty() {
        args.scene.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned())
    } else {
        scene.name.clone()
    };
    let summary = summarize(&name, scene.seed, &records);
    write_out(&args.out.join("records.csv"), &sim::records_to_csv(&records))?;
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
    write_out(&args.out.join("summary.json"), json.as_bytes())?;

    println!("{name}: {} frames, seed {}", summary.frames, summary.seed);
    println!(
        "position RMSE  vision-only {}  haptic-only {}  fused {}",
        fmt_cm(summary.rmse_m.vision_only),
        fmt_cm(summary.rmse_m.haptic_only),
        fmt_cm(summary.rmse_m.fused)
    );
    println!(
        "vision lost track in {} frames; haptic fix in {} frames",
        summary.vision_lost_frames, summary.haptic_valid_frames
    );
    if cli.verbose > 0 {
        eprintln!("wrote {}", args.out.display());
    }
    Ok(())
}

fn jobs(cli: &Cli) -> usize {
    cli.jobs
        .map(|j| j as usize)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn run_sweep(cli: &Cli, args: &SweepArgs) -> Result<u8, Failure> {
    let mut grid = match &args.grid {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            SweepGrid::from_json(&text).map_err(usage)?
        }
        None => SweepGrid::default(),
    };
    if let Some(seed) = cli.seed {
        grid.base_seed = seed;
    }
    if let Some(n) = args.seeds_per_cell {
        grid.seeds_per_cell = n;
    }
    let n = grid.keys().len();
    if cli.verbose > 0 {
        eprintln!("running {n} scenarios on {} threads", jobs(cli));
    }
    let report = sim::sweep(&grid, &args.out, jobs(cli)).map_err(|e| match e {
        SweepError::Grid(_) | SweepError::Io { .. } | SweepError::Pool(_) => usage(e),
        e => numerical(e),
    })?;

    for s in &report.table.sections {
        println!("haptic range: {}", s.haptic_range.as_str());
        println!("  {:<8} {:<8} {:>6} {:>10} {:>10} {:>10}", "distance", "occl.", "frames", "vision", "haptic", "fused");
        for r in &s.rows {
            println!(
                "  {:<8} {:<8} {:>6} {:>10} {:>10} {:>10}",
                r.distance_band.as_str(),
                r.occlusion_band.as_str(),
                r.frames,
                fmt_cm(r.rmse_m.vision),
                fmt_cm(r.rmse_m.haptic),
                fmt_cm(r.rmse_m.fused)
            );
        }
    }
    let reused = report.outcomes.iter().filter(|o| !o.ran).count();
    if reused > 0 {
        println!("reused {reused} of {n} scenario CSVs");
    }
    let failures = report.failures_per_cell();
    if failures.is_empty() {
        return Ok(0);
    }
    for ((range, d, o), count) in &failures {
        eprintln!("cell {}/{}/{}: {count} scenario(s) failed", range.as_str(), d.as_str(), o.as_str());
    }
    for f in report.failures() {
        if let Err(e) = &f.result {
            eprintln!("  {}: {e}", f.key.file_name());
        }
    }
    Ok(1)
}

fn dump(what: DumpWhat) {
    let scene: serde_json::Value = serde_json::from_str(&example_scenario().to_json()).expect("valid JSON");
    let grid: serde_json::Value = serde_json::from_str(&SweepGrid::default().to_json()).expect("valid JSON");
    let v = match what {
        DumpWhat::All => serde_json::json!({ "scene": scene, "sweep_grid": grid }),
        DumpWhat::Scene => scene,
        DumpWhat::Grid => grid,
    };
    println!("{}", serde_json::to_string_pretty(&v).expect("valid JSON"));
}

fn render_mask(cli: &Cli, args: &RenderMaskArgs) -> Result<(), Failure> {
    let scene = load_scene(&args.scene, cli.seed)?;
    if args.frame >= scene.frame_count() {
        return Err(usage(format!("frame {} is past the end ({} frames)", args.frame, scene.frame_count())));
    }
    let mask = match &args.pose {
        Some(p) => {
            let pose = Pose6::from_xyz_rpy(p[0], p[1], p[2], p[3], p[4], p[5]);
            let camera = scene.camera.to_camera().map_err(usage)?;
            Renderer::new(&scene.target, &camera, &[]).render(&pose)
        }
        None => {
            let (full, observed) = sim::frame_masks(&scene, args.frame).map_err(usage)?;
            if args.observed {
                observed
            } else {
                full
            }
        }
    };
    write_out(&args.out, &mask.to_pgm())?;
    println!("{}: {}x{}, {} target pixels", args.out.display(), mask.width, mask.height, mask.target_count());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Fit(a) => fit(&cli, a).map(|_| 0),
        Command::Simulate(a) => simulate(&cli, a).map(|_| 0),
        Command::Sweep(a) => run_sweep(&cli, a),
        Command::Config {
            command: ConfigCommand::Dump { what },
        } => {
            dump(*what);
            Ok(0)
        }
        Command::RenderMask(a) => render_mask(&cli, a).map(|_| 0),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

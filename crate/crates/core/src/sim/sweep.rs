//! Band-grid sweeps: generate one scenario per (range, distance, occlusion,
//! seed), run them in parallel, keep each run's CSV, and aggregate.
//!
//! Scenario CSVs double as checkpoints: a rerun with the same grid skips every
//! scenario whose CSV already exists, and the table is always rebuilt from the
//! files on disk, so an interrupted sweep resumes to the same result.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::fusion::NoiseConfig;
use crate::shape::ShapePrimitive;
use crate::sim::records::{read_records, records_to_csv, FrameRecord, RecordError};
use crate::sim::scene::{CameraConfig, HapticRange, OcclusionSchedule, OcclusionSource, OcclusionWindow, RigConfig, Scenario, VisionConfig};
use crate::sim::table::{aggregate, DistanceBand, OcclusionBand, ResultTable, TableError, MIN_CELL_FRAMES};
use crate::sim::trajectory::{Keyframe, Trajectory};
use crate::sim::{mix_seed, run_scenario};

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntrinsicsConfig {
    pub fx_px: f64,
    pub fy_px: f64,
    pub width_px: usize,
    pub height_px: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub haptic_ranges: Vec<HapticRange>,
    pub distance_bands: Vec<DistanceBand>,
    pub occlusion_bands: Vec<OcclusionBand>,
    /// Scenario seeds are `base_seed .. base_seed + seeds_per_cell`.
    pub base_seed: u64,
    pub seeds_per_cell: usize,
    pub duration_s: f64,
    pub frame_rate_hz: f64,
    pub substep_s: f64,
    pub min_cell_frames: usize,
    pub pixel_noise: f64,
    pub target: ShapePrimitive,
    pub intrinsics: IntrinsicsConfig,
    #[serde(default)]
    pub rig: RigConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub vision: VisionConfig,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            haptic_ranges: HapticRange::ALL.to_vec(),
            distance_bands: DistanceBand::ALL.to_vec(),
            occlusion_bands: OcclusionBand::ALL.to_vec(),
            base_seed: 1,
            seeds_per_cell: 5,
            duration_s: 3.4,
            frame_rate_hz: 30.0,
            substep_s: 1e-3,
            min_cell_frames: MIN_CELL_FRAMES,
            pixel_noise: 0.0,
            target: ShapePrimitive::capsule(0.045, 0.30).expect("valid forearm capsule"),
            intrinsics: IntrinsicsConfig {
                fx_px: 600.0,
                fy_px: 600.0,
                width_px: 320,
                height_px: 240,
            },
            rig: RigConfig::default(),
            noise: NoiseConfig::default(),
            // exact-score ascent: faster, and steadier on cut-up masks
            vision: VisionConfig {
                supersample: 1,
                ..VisionConfig::default()
            },
        }
    }
}

/// One scenario of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ScenarioKey {
    pub haptic_range: HapticRange,
    pub distance: DistanceBand,
    pub occlusion: OcclusionBand,
    pub seed: u64,
}

impl ScenarioKey {
    pub fn file_name(&self) -> String {
        format!(
            "{}_{}_{}_seed{}.csv",
            self.haptic_range.as_str(),
            self.distance.as_str(),
            self.occlusion.as_str(),
            self.seed
        )
    }

    fn stream(&self) -> u64 {
        (self.haptic_range as u64) << 8 | (self.distance as u64) << 4 | self.occlusion as u64
    }
}

/// Camera distance range used to place the camera for a band, meters.
pub fn distance_range(band: DistanceBand) -> (f64, f64) {
    match band {
        DistanceBand::Short => (1.5, 2.5),
        DistanceBand::Medium => (4.0, 5.0),
        DistanceBand::Long => (7.0, 9.0),
    }
}

/// Per-frame occlusion target range for a band; kept inside the band edges.
pub fn occlusion_range(band: OcclusionBand) -> (f64, f64) {
    match band {
        OcclusionBand::Light => (0.0, 0.30),
        OcclusionBand::Medium => (0.38, 0.62),
        OcclusionBand::Heavy => (0.70, 0.95),
    }
}

impl SweepGrid {
    pub fn from_json(text: &str) -> Result<Self, SweepError> {
        let g: SweepGrid = serde_json::from_str(text).map_err(|e| SweepError::Grid(e.to_string()))?;
        g.validate()?;
        Ok(g)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("grids always serialize")
    }

    pub fn validate(&self) -> Result<(), SweepError> {
        if self.haptic_ranges.is_empty() || self.distance_bands.is_empty() || self.occlusion_bands.is_empty() {
            return Err(SweepError::Grid("the grid needs at least one cell".into()));
        }
        if self.seeds_per_cell == 0 {
            return Err(SweepError::Grid("seeds_per_cell must be at least 1".into()));
        }
        // any scenario will do; they share every checked setting
        let key = self.keys()[0];
        self.scenario(&key).validate().map_err(|e| SweepError::Grid(e.to_string()))
    }

    pub fn keys(&self) -> Vec<ScenarioKey> {
        let mut keys = Vec::new();
        for &haptic_range in &self.haptic_ranges {
            for &distance in &self.distance_bands {
                for &occlusion in &self.occlusion_bands {
                    for i in 0..self.seeds_per_cell {
                        keys.push(ScenarioKey {
                            haptic_range,
                            distance,
                            occlusion,
                            seed: self.base_seed + i as u64,
                        });
                    }
                }
            }
        }
        keys
    }

    /// The forearm moves up and down over the pad (or well above it), with a
    /// little sway; the camera looks at it from the side at a band distance.
    pub fn scenario(&self, key: &ScenarioKey) -> Scenario {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(key.seed, key.stream(), 0));
        let base_height = match key.haptic_range {
            HapticRange::Within => rng.random_range(0.10..0.12),
            HapticRange::Outside => rng.random_range(0.45..0.55),
        };
        let heave = 0.035;
        let heave_hz = rng.random_range(0.2..0.3);
        let sway_hz = rng.random_range(0.1..0.2);
        let phases: [f64; 5] = std::array::from_fn(|_| rng.random_range(0.0..2.0 * PI));
        let yaw = rng.random_range(-PI..PI);
        let w = |hz: f64, t: f64, phase: f64| (2.0 * PI * hz * t + phase).sin();
        let n_knots = (self.duration_s / 0.1).ceil() as usize + 1;
        let keyframes = (0..n_knots)
            .map(|i| {
                let t = i as f64 * 0.1;
                Keyframe {
                    t_s: t,
                    position_m: [
                        0.02 * w(sway_hz, t, phases[0]),
                        0.02 * w(sway_hz, t, phases[1]),
                        base_height + heave * w(heave_hz, t, phases[2]),
                    ],
                    attitude_rad: [
                        FRAC_PI_2 + 0.1 * w(sway_hz, t, phases[3]),
                        0.08 * w(heave_hz, t, phases[4]),
                        yaw,
                    ],
                }
            })
            .collect();

        let (dmin, dmax) = distance_range(key.distance);
        let distance = rng.random_range(dmin..dmax);
        let azimuth = rng.random_range(-0.35..0.35f64);
        let elevation = rng.random_range(0.3..0.5f64);
        let look_at = [0.0, 0.0, base_height];
        let dir = [
            elevation.cos() * azimuth.cos(),
            elevation.cos() * azimuth.sin(),
            elevation.sin(),
        ];
        let (omin, omax) = occlusion_range(key.occlusion);

        Scenario {
            name: key.file_name().trim_end_matches(".csv").to_string(),
            seed: mix_seed(key.seed, key.stream(), 1),
            duration_s: self.duration_s,
            frame_rate_hz: self.frame_rate_hz,
            substep_s: self.substep_s,
            target: self.target,
            trajectory: Trajectory { keyframes },
            camera: CameraConfig {
                fx_px: self.intrinsics.fx_px,
                fy_px: self.intrinsics.fy_px,
                width_px: self.intrinsics.width_px,
                height_px: self.intrinsics.height_px,
                eye_m: std::array::from_fn(|i| look_at[i] + distance * dir[i]),
                look_at_m: look_at,
                up: [0.0, 0.0, 1.0],
            },
            occlusion: OcclusionSchedule {
                windows: vec![OcclusionWindow {
                    start_s: 0.0,
                    end_s: self.duration_s + 1.0,
                    source: OcclusionSource::Degrade {
                        min_fraction: omin,
                        max_fraction: omax,
                    },
                }],
                pixel_noise: self.pixel_noise,
            },
            rig: self.rig.clone(),
            haptic_range: key.haptic_range,
            noise: self.noise,
            vision: self.vision,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error("invalid sweep grid: {0}")]
    Grid(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Records { path: PathBuf, source: RecordError },
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("cannot start worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub key: ScenarioKey,
    pub path: PathBuf,
    /// `false` when the CSV from an earlier run was reused.
    pub ran: bool,
    pub result: Result<Vec<FrameRecord>, String>,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub table: ResultTable,
    pub outcomes: Vec<ScenarioOutcome>,
}

impl SweepReport {
    pub fn failures(&self) -> impl Iterator<Item = &ScenarioOutcome> {
        self.outcomes.iter().filter(|o| o.result.is_err())
    }

    /// Failed scenario count per (range, distance, occlusion) cell.
    pub fn failures_per_cell(&self) -> Vec<((HapticRange, DistanceBand, OcclusionBand), usize)> {
        let mut cells: Vec<((HapticRange, DistanceBand, OcclusionBand), usize)> = Vec::new();
        for o in self.failures() {
            let k = (o.key.haptic_range, o.key.distance, o.key.occlusion);
            match cells.iter_mut().find(|(c, _)| *c == k) {
                Some((_, n)) => *n += 1,
                None => cells.push((k, 1)),
            }
        }
        cells
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SweepError + '_ {
    move |source| SweepError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn load_csv(path: &Path) -> Option<Vec<FrameRecord>> {
    let file = std::fs::File::open(path).ok()?;
    read_records(std::io::BufReader::new(file)).ok()
}

fn run_one(grid: &SweepGrid, key: ScenarioKey, dir: &Path) -> ScenarioOutcome {
    let path = dir.join(key.file_name());
    if let Some(records) = load_csv(&path) {
        return ScenarioOutcome {
            key,
            path,
            ran: false,
            result: Ok(records),
        };
    }
    let result = run_scenario(&grid.scenario(&key))
        .map_err(|e| e.to_string())
        .and_then(|records| {
            let bytes = records_to_csv(&records);
            write_atomic(&path, &bytes).map_err(|e| format!("{}: {e}", path.display()))?;
            // aggregate what is on disk, so fresh and resumed runs agree to the bit
            read_records(bytes.as_slice()).map_err(|e| e.to_string())
        });
    ScenarioOutcome { key, path, ran: true, result }
}

/// Runs every scenario of the grid on `jobs` threads and writes
/// `scenarios/*.csv`, `table.json`, `cells.csv` and `plot.dat` under `out_dir`.
pub fn sweep(grid: &SweepGrid, out_dir: &Path, jobs: usize) -> Result<SweepReport, SweepError> {
    grid.validate()?;
    let dir = out_dir.join("scenarios");
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| SweepError::Pool(e.to_string()))?;
    let keys = grid.keys();
    let outcomes: Vec<ScenarioOutcome> = pool.install(|| {
        use rayon::prelude::*;
        keys.par_iter().map(|&k| run_one(grid, k, &dir)).collect()
    });

    let records: Vec<FrameRecord> = outcomes.iter().filter_map(|o| o.result.as_ref().ok()).flatten().copied().collect();
    let table = aggregate(&records, grid.min_cell_frames)?;
    for (name, body) in [
        ("table.json", table.to_json()),
        ("cells.csv", table.to_cells_csv()),
        ("plot.dat", table.to_plot_data()),
    ] {
        let path = out_dir.join(name);
        write_atomic(&path, body.as_bytes()).map_err(io_err(&path))?;
    }
    Ok(SweepReport { table, outcomes })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_grid() -> SweepGrid {
        SweepGrid {
            haptic_ranges: vec![HapticRange::Within],
            distance_bands: vec![DistanceBand::Short],
            occlusion_bands: vec![OcclusionBand::Medium],
            seeds_per_cell: 2,
            duration_s: 0.2,
            min_cell_frames: 1,
            ..SweepGrid::default()
        }
    }

    #[test]
    fn grid_counts_scenarios() {
        let g = SweepGrid {
            haptic_ranges: vec![HapticRange::Within],
            ..SweepGrid::default()
        };
        assert_eq!(g.keys().len(), 45);
        assert_eq!(SweepGrid::default().keys().len(), 90);
    }

    #[test]
    fn generated_scenarios_match_their_cell() {
        let g = SweepGrid::default();
        for key in g.keys().iter().step_by(7) {
            let s = g.scenario(key);
            s.validate().unwrap();
            let d = s.camera.distance_m();
            let (lo, hi) = distance_range(key.distance);
            assert!((lo..hi).contains(&d));
            assert_eq!(DistanceBand::of(d), key.distance);
            // same key, same scenario
            assert_eq!(g.scenario(key), s);
        }
    }

    #[test]
    fn grid_json_round_trip() {
        let g = SweepGrid::default();
        assert_eq!(SweepGrid::from_json(&g.to_json()).unwrap(), g);
        assert!(SweepGrid::from_json("{\"bogus\": 1}").is_err());
    }

    #[test]
    fn bundled_grid_matches_the_default() {
        let bundled = SweepGrid::from_json(include_str!("../../scenes/grid.json")).unwrap();
        assert_eq!(bundled, SweepGrid::default());
    }

    #[test]
    fn resumed_sweep_gives_the_same_table() {
        let g = tiny_grid();
        let a = tempfile::tempdir().unwrap();
        let first = sweep(&g, a.path(), 1).unwrap();
        assert!(first.outcomes.iter().all(|o| o.ran && o.result.is_ok()));
        let table_bytes = std::fs::read(a.path().join("table.json")).unwrap();

        // lose one scenario, as if interrupted
        std::fs::remove_file(&first.outcomes[1].path).unwrap();
        let second = sweep(&g, a.path(), 2).unwrap();
        assert_eq!(second.outcomes.iter().filter(|o| o.ran).count(), 1);
        assert_eq!(std::fs::read(a.path().join("table.json")).unwrap(), table_bytes);
        assert_eq!(second.table, first.table);
        assert!(a.path().join("plot.dat").exists() && a.path().join("cells.csv").exists());
    }

    #[test]
    fn atomic_write_replaces_content() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("x.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(d.path()).unwrap().count(), 1);
    }
}

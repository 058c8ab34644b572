//! Per-frame results and their CSV form.
//!
//! Columns are fixed and ordered; floats are written in scientific notation
//! with nine significant digits, and a missing estimate is an empty field.

use std::io::{Read, Write};

use nalgebra::Vector3;

use crate::geometry::Pose6;
use crate::sim::scene::HapticRange;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameRecord {
    pub frame: usize,
    pub t_s: f64,
    pub haptic_range: HapticRange,
    pub camera_distance_m: f64,
    pub truth: Pose6,
    /// Measured share of the silhouette hidden in the observed mask.
    pub occlusion_fraction: f64,
    pub vision: Option<Pose6>,
    pub vision_score: Option<f64>,
    /// Occlusion scalar behind R_v.
    pub r_v_scalar: Option<f64>,
    pub haptic: Option<Pose6>,
    pub haptic_measurements: usize,
    /// Observer outputs after low-pass filtering.
    pub fused: Pose6,
    pub vision_only: Pose6,
    pub haptic_only: Pose6,
    pub err_vision_raw_m: Option<f64>,
    pub err_haptic_raw_m: Option<f64>,
    pub err_fused_m: f64,
    pub err_vision_only_m: f64,
    pub err_haptic_only_m: f64,
    /// Attitude error over the observable axes.
    pub err_fused_rad: f64,
    pub err_vision_only_rad: f64,
    pub err_haptic_only_rad: f64,
}

const POSE_SUFFIXES: [&str; 6] = ["x_m", "y_m", "z_m", "roll_rad", "pitch_rad", "yaw_rad"];

/// Header row, in column order.
pub fn csv_header() -> Vec<String> {
    let mut h: Vec<String> = ["frame", "t_s", "haptic_range", "camera_distance_m"].map(String::from).to_vec();
    let pose = |h: &mut Vec<String>, prefix: &str| {
        for s in POSE_SUFFIXES {
            h.push(format!("{prefix}_{s}"));
        }
    };
    pose(&mut h, "truth");
    h.push("occlusion_fraction".into());
    pose(&mut h, "vision");
    h.extend(["vision_score", "r_v_scalar"].map(String::from));
    pose(&mut h, "haptic");
    h.push("haptic_measurements".into());
    pose(&mut h, "fused");
    pose(&mut h, "vision_only");
    pose(&mut h, "haptic_only");
    h.extend(
        [
            "err_vision_raw_m",
            "err_haptic_raw_m",
            "err_fused_m",
            "err_vision_only_m",
            "err_haptic_only_m",
            "err_fused_rad",
            "err_vision_only_rad",
            "err_haptic_only_rad",
        ]
        .map(String::from),
    );
    h
}

/// Nine significant digits, scientific notation; fixed width per exponent.
pub fn format_float(v: f64) -> String {
    if v == 0.0 {
        // keeps -0.0 and 0.0 byte-identical
        "0.00000000e0".to_string()
    } else {
        format!("{v:.8e}")
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(format_float).unwrap_or_default()
}

fn pose_fields(out: &mut Vec<String>, p: Option<&Pose6>) {
    match p {
        Some(p) => out.extend(p.to_vector().iter().map(|&v| format_float(v))),
        None => out.extend(std::iter::repeat_n(String::new(), 6)),
    }
}

impl FrameRecord {
    pub fn to_row(&self) -> Vec<String> {
        let mut r = vec![
            self.frame.to_string(),
            format_float(self.t_s),
            self.haptic_range.as_str().to_string(),
            format_float(self.camera_distance_m),
        ];
        pose_fields(&mut r, Some(&self.truth));
        r.push(format_float(self.occlusion_fraction));
        pose_fields(&mut r, self.vision.as_ref());
        r.push(opt(self.vision_score));
        r.push(opt(self.r_v_scalar));
        pose_fields(&mut r, self.haptic.as_ref());
        r.push(self.haptic_measurements.to_string());
        pose_fields(&mut r, Some(&self.fused));
        pose_fields(&mut r, Some(&self.vision_only));
        pose_fields(&mut r, Some(&self.haptic_only));
        r.push(opt(self.err_vision_raw_m));
        r.push(opt(self.err_haptic_raw_m));
        for v in [
            self.err_fused_m,
            self.err_vision_only_m,
            self.err_haptic_only_m,
            self.err_fused_rad,
            self.err_vision_only_rad,
            self.err_haptic_only_rad,
        ] {
            r.push(format_float(v));
        }
        r
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RecordError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("unexpected CSV header")]
    Header,
    #[error("line {line}: {message}")]
    Field { line: u64, message: String },
}

pub fn write_records<W: Write>(out: W, records: &[FrameRecord]) -> Result<(), RecordError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(csv_header())?;
    for r in records {
        w.write_record(r.to_row())?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn records_to_csv(records: &[FrameRecord]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_records(&mut buf, records).expect("writing to memory cannot fail");
    buf
}

pub fn read_records<R: Read>(input: R) -> Result<Vec<FrameRecord>, RecordError> {
    let mut rdr = csv::Reader::from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    if header != csv_header() {
        return Err(RecordError::Header);
    }
    let mut out = Vec::new();
    let width = csv_header().len();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let err = |message: String| RecordError::Field { line, message };
        if row.len() != width {
            return Err(err(format!("expected {width} fields, found {}", row.len())));
        }
        let f: Vec<&str> = row.iter().collect();
        let num = |s: &str| s.parse::<f64>().map_err(|e| err(format!("{s:?}: {e}")));
        let opt_num = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
        let int = |s: &str| s.parse::<usize>().map_err(|e| err(format!("{s:?}: {e}")));
        let pose = |at: usize| -> Result<Option<Pose6>, RecordError> {
            if f[at..at + 6].iter().all(|s| s.is_empty()) {
                return Ok(None);
            }
            let mut v = [0.0; 6];
            for (i, slot) in v.iter_mut().enumerate() {
                *slot = num(f[at + i])?;
            }
            Ok(Some(Pose6 {
                position: Vector3::new(v[0], v[1], v[2]),
                attitude: Vector3::new(v[3], v[4], v[5]),
            }))
        };
        let required = |at: usize| pose(at)?.ok_or_else(|| err("missing pose".into()));
        let haptic_range = match f[2] {
            "within" => HapticRange::Within,
            "outside" => HapticRange::Outside,
            other => return Err(err(format!("unknown haptic range {other:?}"))),
        };
        let mut rest = [0.0; 6];
        for (i, slot) in rest.iter_mut().enumerate() {
            *slot = num(f[46 + i])?;
        }
        let (frame, t_s, camera_distance_m) = (int(f[0])?, num(f[1])?, num(f[3])?);
        let truth = required(4)?;
        let occlusion_fraction = num(f[10])?;
        let vision = pose(11)?;
        let (vision_score, r_v_scalar) = (opt_num(f[17])?, opt_num(f[18])?);
        let haptic = pose(19)?;
        let haptic_measurements = int(f[25])?;
        let (fused, vision_only, haptic_only) = (required(26)?, required(32)?, required(38)?);
        let (err_vision_raw_m, err_haptic_raw_m) = (opt_num(f[44])?, opt_num(f[45])?);
        out.push(FrameRecord {
            frame,
            t_s,
            haptic_range,
            camera_distance_m,
            truth,
            occlusion_fraction,
            vision,
            vision_score,
            r_v_scalar,
            haptic,
            haptic_measurements,
            fused,
            vision_only,
            haptic_only,
            err_vision_raw_m,
            err_haptic_raw_m,
            err_fused_m: rest[0],
            err_vision_only_m: rest[1],
            err_haptic_only_m: rest[2],
            err_fused_rad: rest[3],
            err_vision_only_rad: rest[4],
            err_haptic_only_rad: rest[5],
        });
    }
    Ok(out)
}

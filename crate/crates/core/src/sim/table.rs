//! Per-cell RMSE tables keyed by camera distance, measured occlusion and
//! whether the trajectory stays within the haptic pad's reach.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::sim::records::{format_float, FrameRecord};
use crate::sim::scene::HapticRange;

/// Cells with fewer frames than this are reported as absent.
pub const MIN_CELL_FRAMES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceBand {
    /// Under 3 m.
    Short,
    /// 3 m to 6 m.
    Medium,
    /// 6 m and beyond.
    Long,
}

impl DistanceBand {
    pub const ALL: [DistanceBand; 3] = [DistanceBand::Short, DistanceBand::Medium, DistanceBand::Long];

    pub fn of(distance_m: f64) -> Self {
        if distance_m < 3.0 {
            DistanceBand::Short
        } else if distance_m < 6.0 {
            DistanceBand::Medium
        } else {
            DistanceBand::Long
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            DistanceBand::Short => "short",
            DistanceBand::Medium => "medium",
            DistanceBand::Long => "long",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OcclusionBand {
    /// Under 33 %.
    Light,
    /// 33 % to 66 %.
    Medium,
    /// 66 % and above.
    Heavy,
}

impl OcclusionBand {
    pub const ALL: [OcclusionBand; 3] = [OcclusionBand::Light, OcclusionBand::Medium, OcclusionBand::Heavy];

    pub fn of(fraction: f64) -> Self {
        if fraction < 0.33 {
            OcclusionBand::Light
        } else if fraction < 0.66 {
            OcclusionBand::Medium
        } else {
            OcclusionBand::Heavy
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            OcclusionBand::Light => "light",
            OcclusionBand::Medium => "medium",
            OcclusionBand::Heavy => "heavy",
        }
    }
}

/// Position RMSE per method, in meters; `None` marks an absent cell.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MethodRmse {
    pub vision: Option<f64>,
    pub haptic: Option<f64>,
    pub fused: Option<f64>,
}

impl MethodRmse {
    pub fn methods(&self) -> [(&'static str, Option<f64>); 3] {
        [("vision", self.vision), ("haptic", self.haptic), ("fused", self.fused)]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub distance_band: DistanceBand,
    pub occlusion_band: OcclusionBand,
    pub frames: usize,
    pub rmse_m: MethodRmse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSection {
    pub haptic_range: HapticRange,
    pub rows: Vec<TableRow>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResultTable {
    pub sections: Vec<TableSection>,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TableError {
    #[error("no frames to aggregate")]
    Empty,
}

#[derive(Default)]
struct Acc {
    sum: f64,
    n: usize,
}

impl Acc {
    fn push(&mut self, e: f64) {
        self.sum += e * e;
        self.n += 1;
    }

    fn rmse(&self, min_frames: usize) -> Option<f64> {
        (self.n > 0 && self.n >= min_frames).then(|| (self.sum / self.n as f64).sqrt())
    }
}

/// Position RMSE of a set of error norms.
pub fn rmse(errors: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut acc = Acc::default();
    errors.into_iter().for_each(|e| acc.push(e));
    acc.rmse(1)
}

/// Bins every frame into exactly one cell. The vision and fused columns use
/// every frame of the cell; the haptic column only frames with a haptic fix.
pub fn aggregate(records: &[FrameRecord], min_frames: usize) -> Result<ResultTable, TableError> {
    if records.is_empty() {
        return Err(TableError::Empty);
    }
    let mut sections = Vec::new();
    for range in HapticRange::ALL {
        let mut rows = Vec::new();
        for d in DistanceBand::ALL {
            for o in OcclusionBand::ALL {
                let cell = records.iter().filter(|r| {
                    r.haptic_range == range && DistanceBand::of(r.camera_distance_m) == d && OcclusionBand::of(r.occlusion_fraction) == o
                });
                let (mut v, mut h, mut f, mut frames) = (Acc::default(), Acc::default(), Acc::default(), 0);
                for r in cell {
                    frames += 1;
                    v.push(r.err_vision_only_m);
                    f.push(r.err_fused_m);
                    if r.haptic.is_some() {
                        h.push(r.err_haptic_only_m);
                    }
                }
                if frames > 0 {
                    rows.push(TableRow {
                        distance_band: d,
                        occlusion_band: o,
                        frames,
                        rmse_m: MethodRmse {
                            vision: v.rmse(min_frames),
                            haptic: h.rmse(min_frames),
                            fused: f.rmse(min_frames),
                        },
                    });
                }
            }
        }
        if !rows.is_empty() {
            sections.push(TableSection { haptic_range: range, rows });
        }
    }
    Ok(ResultTable { sections })
}

impl ResultTable {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tables always serialize") + "\n"
    }

    pub fn cell(&self, range: HapticRange, d: DistanceBand, o: OcclusionBand) -> Option<&TableRow> {
        self.sections
            .iter()
            .find(|s| s.haptic_range == range)?
            .rows
            .iter()
            .find(|r| r.distance_band == d && r.occlusion_band == o)
    }

    pub fn rows(&self) -> impl Iterator<Item = (HapticRange, &TableRow)> {
        self.sections.iter().flat_map(|s| s.rows.iter().map(move |r| (s.haptic_range, r)))
    }

    /// One line per cell; absent values are empty fields.
    pub fn to_cells_csv(&self) -> String {
        let mut out = String::from("haptic_range,distance_band,occlusion_band,frames,vision_rmse_m,haptic_rmse_m,fused_rmse_m\n");
        for (range, r) in self.rows() {
            let f = |v: Option<f64>| v.map(format_float).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                range.as_str(),
                r.distance_band.as_str(),
                r.occlusion_band.as_str(),
                r.frames,
                f(r.rmse_m.vision),
                f(r.rmse_m.haptic),
                f(r.rmse_m.fused)
            );
        }
        out
    }

    /// Long-format gnuplot data, one block per haptic-range section
    /// (select with `index`). Absent cells are left out.
    pub fn to_plot_data(&self) -> String {
        let mut out = String::new();
        for (i, s) in self.sections.iter().enumerate() {
            if i > 0 {
                out.push_str("\n\n");
            }
            let _ = writeln!(out, "# haptic_range: {}", s.haptic_range.as_str());
            out.push_str("# distance occlusion method rmse_m\n");
            for r in &s.rows {
                for (method, v) in r.rmse_m.methods() {
                    if let Some(v) = v {
                        let _ = writeln!(out, "{} {} {} {}", r.distance_band.as_str(), r.occlusion_band.as_str(), method, format_float(v));
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose6;
    use proptest::prelude::*;

    fn record(distance: f64, occlusion: f64, vision_err: f64, range: HapticRange) -> FrameRecord {
        let p = Pose6::identity();
        FrameRecord {
            frame: 0,
            t_s: 0.0,
            haptic_range: range,
            camera_distance_m: distance,
            truth: p,
            occlusion_fraction: occlusion,
            vision: Some(p),
            vision_score: Some(1.0),
            r_v_scalar: Some(occlusion),
            haptic: None,
            haptic_measurements: 0,
            fused: p,
            vision_only: p,
            haptic_only: p,
            err_vision_raw_m: Some(vision_err),
            err_haptic_raw_m: None,
            err_fused_m: vision_err,
            err_vision_only_m: vision_err,
            err_haptic_only_m: 1.0,
            err_fused_rad: 0.0,
            err_vision_only_rad: 0.0,
            err_haptic_only_rad: 0.0,
        }
    }

    #[test]
    fn single_frame_cell() {
        let t = aggregate(&[record(2.0, 0.5, 0.02, HapticRange::Within)], 1).unwrap();
        assert_eq!(t.sections.len(), 1);
        let row = t.cell(HapticRange::Within, DistanceBand::Short, OcclusionBand::Medium).unwrap();
        assert_eq!(row.frames, 1);
        assert_eq!(row.rmse_m.vision, Some(0.02));
        // no haptic fix in the cell: absent, not zero
        assert_eq!(row.rmse_m.haptic, None);
    }

    #[test]
    fn band_edges() {
        assert_eq!(DistanceBand::of(2.999), DistanceBand::Short);
        assert_eq!(DistanceBand::of(3.0), DistanceBand::Medium);
        assert_eq!(DistanceBand::of(6.0), DistanceBand::Long);
        assert_eq!(DistanceBand::of(12.0), DistanceBand::Long);
        assert_eq!(OcclusionBand::of(0.0), OcclusionBand::Light);
        assert_eq!(OcclusionBand::of(0.33), OcclusionBand::Medium);
        assert_eq!(OcclusionBand::of(0.66), OcclusionBand::Heavy);
        assert_eq!(OcclusionBand::of(1.0), OcclusionBand::Heavy);
    }

    #[test]
    fn sparse_cells_are_absent() {
        let records: Vec<_> = (0..99).map(|_| record(4.0, 0.1, 0.01, HapticRange::Outside)).collect();
        let t = aggregate(&records, MIN_CELL_FRAMES).unwrap();
        let row = t.cell(HapticRange::Outside, DistanceBand::Medium, OcclusionBand::Light).unwrap();
        assert_eq!(row.frames, 99);
        assert_eq!(row.rmse_m, MethodRmse::default());
        assert!(t.to_json().contains("\"vision\": null"));
        assert!(t.to_plot_data().lines().all(|l| l.starts_with('#')));
    }

    #[test]
    fn empty_input_is_an_error() {
        assert_eq!(aggregate(&[], 1), Err(TableError::Empty));
    }

    #[test]
    fn outputs_are_consistent() {
        let records = vec![
            record(2.0, 0.1, 0.01, HapticRange::Within),
            record(2.0, 0.1, 0.03, HapticRange::Within),
            record(7.0, 0.9, 0.05, HapticRange::Outside),
        ];
        let t = aggregate(&records, 1).unwrap();
        let row = t.cell(HapticRange::Within, DistanceBand::Short, OcclusionBand::Light).unwrap();
        assert!((row.rmse_m.vision.unwrap() - (0.0005f64).sqrt()).abs() < 1e-15);
        assert_eq!(t.to_cells_csv().lines().count(), 3);
        assert_eq!(t.to_plot_data().matches("vision").count(), 2);
        let back: ResultTable = serde_json::from_str(&t.to_json()).unwrap();
        assert_eq!(back, t);
    }

    proptest! {
        #[test]
        fn every_frame_lands_in_exactly_one_cell(
            frames in proptest::collection::vec((0.0f64..15.0, 0.0f64..=1.0, any::<bool>()), 1..200)
        ) {
            let records: Vec<_> = frames
                .iter()
                .map(|&(d, o, w)| record(d, o, 0.01, if w { HapticRange::Within } else { HapticRange::Outside }))
                .collect();
            let t = aggregate(&records, 1).unwrap();
            let total: usize = t.rows().map(|(_, r)| r.frames).sum();
            prop_assert_eq!(total, records.len());
            let mut keys: Vec<_> = t.rows().map(|(h, r)| (h, r.distance_band, r.occlusion_band)).collect();
            let n = keys.len();
            keys.sort();
            keys.dedup();
            prop_assert_eq!(keys.len(), n);
        }
    }
}

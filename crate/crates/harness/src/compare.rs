//! Accuracy-versus-density comparison of the two arms.

use std::fs;
use std::path::Path;

use crate::error::HarnessError;
use crate::records::ExperimentRecord;

/// Accuracy level whose smallest-density crossing is reported.
pub const TARGET_ACCURACY: f64 = 0.90;

/// Two alive ratios denote the same schedule point when they agree this closely.
const LEVEL_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub alive_ratio: f64,
    pub accuracy: f64,
}

/// Smallest alive ratio at which the piecewise-linear accuracy curve is at or
/// above `level`. Points may come in any order; `None` when no point reaches
/// `level`.
pub fn crossing(points: &[CurvePoint], level: f64) -> Option<f64> {
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| b.alive_ratio.total_cmp(&a.alive_ratio));
    let mut best: Option<f64> = None;
    let mut consider = |x: f64| best = Some(best.map_or(x, |b: f64| b.min(x)));
    for p in &sorted {
        if p.accuracy >= level {
            consider(p.alive_ratio);
        }
    }
    for pair in sorted.windows(2) {
        let (hi, lo) = (pair[0], pair[1]);
        let above = (hi.accuracy >= level, lo.accuracy >= level);
        if above.0 != above.1 {
            let t = (level - hi.accuracy) / (lo.accuracy - hi.accuracy);
            consider(hi.alive_ratio + t * (lo.alive_ratio - hi.alive_ratio));
        }
    }
    best
}

fn ok_points(records: &[ExperimentRecord]) -> Vec<CurvePoint> {
    records
        .iter()
        .filter(|r| r.is_ok())
        .filter_map(|r| {
            r.test_accuracy.map(|accuracy| CurvePoint {
                alive_ratio: r.alive_ratio,
                accuracy,
            })
        })
        .collect()
}

fn same_level(a: f64, b: f64) -> bool {
    (a - b).abs() <= LEVEL_TOLERANCE * a.abs().max(b.abs()).max(1.0)
}

/// Mean accuracy per alive-ratio level across runs; only levels present in
/// every run are kept. Sorted by decreasing alive ratio.
pub fn mean_curve(runs: &[Vec<ExperimentRecord>]) -> Vec<CurvePoint> {
    let Some((first, rest)) = runs.split_first() else {
        return Vec::new();
    };
    let mut out = Vec::new();
    'level: for p in ok_points(first) {
        let mut sum = p.accuracy;
        for run in rest {
            match ok_points(run).into_iter().find(|q| same_level(q.alive_ratio, p.alive_ratio)) {
                Some(q) => sum += q.accuracy,
                None => continue 'level,
            }
        }
        out.push(CurvePoint {
            alive_ratio: p.alive_ratio,
            accuracy: sum / runs.len() as f64,
        });
    }
    out.sort_by(|a, b| b.alive_ratio.total_cmp(&a.alive_ratio));
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub alive_ratio: f64,
    pub baseline: f64,
    pub simguided: f64,
    /// `simguided - baseline`.
    pub difference: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmSummary {
    pub curve: Vec<CurvePoint>,
    /// Crossing of [`TARGET_ACCURACY`] for each input run.
    pub per_run_crossing: Vec<Option<f64>>,
    /// Mean of the per-run crossings; `None` if any run never reaches the level.
    pub mean_crossing: Option<f64>,
    /// Crossing of the mean curve.
    pub curve_crossing: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub baseline: ArmSummary,
    pub simguided: ArmSummary,
}

fn summarize(runs: &[Vec<ExperimentRecord>]) -> ArmSummary {
    let curve = mean_curve(runs);
    let per_run_crossing: Vec<Option<f64>> = runs
        .iter()
        .map(|r| crossing(&ok_points(r), TARGET_ACCURACY))
        .collect();
    let mean_crossing = per_run_crossing
        .iter()
        .copied()
        .collect::<Option<Vec<f64>>>()
        .filter(|v| !v.is_empty())
        .map(|v| v.iter().sum::<f64>() / v.len() as f64);
    ArmSummary {
        curve_crossing: crossing(&curve, TARGET_ACCURACY),
        curve,
        per_run_crossing,
        mean_crossing,
    }
}

/// Joins the two arms' seed-averaged curves on shared alive-ratio levels.
pub fn compare(
    baseline_runs: &[Vec<ExperimentRecord>],
    simguided_runs: &[Vec<ExperimentRecord>],
) -> Result<Comparison, HarnessError> {
    if baseline_runs.is_empty() || simguided_runs.is_empty() {
        return Err(HarnessError::Compare("each arm needs at least one run".into()));
    }
    let baseline = summarize(baseline_runs);
    let simguided = summarize(simguided_runs);
    let rows: Vec<ComparisonRow> = baseline
        .curve
        .iter()
        .filter_map(|b| {
            simguided
                .curve
                .iter()
                .find(|s| same_level(s.alive_ratio, b.alive_ratio))
                .map(|s| ComparisonRow {
                    alive_ratio: b.alive_ratio,
                    baseline: b.accuracy,
                    simguided: s.accuracy,
                    difference: s.accuracy - b.accuracy,
                })
        })
        .collect();
    if rows.is_empty() {
        return Err(HarnessError::Compare(
            "the two arms share no alive-ratio level".into(),
        ));
    }
    Ok(Comparison {
        rows,
        baseline,
        simguided,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), |x| format!("{x}"))
}

impl Comparison {
    /// Human-readable table.
    pub fn report(&self) -> String {
        let mut out = String::new();
        out.push_str("alive_ratio   baseline  simguided  difference\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{:<12.6} {:>9.4} {:>10.4} {:>+11.4}\n",
                r.alive_ratio, r.baseline, r.simguided, r.difference
            ));
        }
        out.push_str(&format!(
            "smallest alive ratio with accuracy >= {TARGET_ACCURACY}:\n  baseline  mean {} per-run {:?} curve {}\n  simguided mean {} per-run {:?} curve {}\n",
            fmt_opt(self.baseline.mean_crossing),
            self.baseline.per_run_crossing,
            fmt_opt(self.baseline.curve_crossing),
            fmt_opt(self.simguided.mean_crossing),
            self.simguided.per_run_crossing,
            fmt_opt(self.simguided.curve_crossing),
        ));
        out
    }

    /// Writes `summary.csv`, `plot-baseline.csv` and `plot-simguided.csv`.
    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        fs::create_dir_all(dir).map_err(HarnessError::io(dir))?;
        let mut summary = String::from("alive_ratio,baseline_accuracy,simguided_accuracy,difference\n");
        for r in &self.rows {
            summary.push_str(&format!("{},{},{},{}\n", r.alive_ratio, r.baseline, r.simguided, r.difference));
        }
        let path = dir.join("summary.csv");
        fs::write(&path, summary).map_err(HarnessError::io(&path))?;
        for (name, arm) in [("baseline", &self.baseline), ("simguided", &self.simguided)] {
            let mut plot = String::from("alive_ratio,accuracy\n");
            for p in &arm.curve {
                plot.push_str(&format!("{},{}\n", p.alive_ratio, p.accuracy));
            }
            let path = dir.join(format!("plot-{name}.csv"));
            fs::write(&path, plot).map_err(HarnessError::io(&path))?;
        }
        Ok(())
    }
}

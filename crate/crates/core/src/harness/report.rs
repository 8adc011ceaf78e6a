//! Aggregate CSVs and SVG plots over a finished (or partial) run.
//!
//! Writes into `<run>/report/`:
//! `eval_rewards.csv` (per-cell mean evaluation reward per phase),
//! `eval_summary.csv` and `boxplot.svg` (per kind and phase),
//! `lap_rewards.csv` and `lap_rewards.svg` (median ± std per fine-tuning
//! lap), `trajectory.csv` and `trajectory.svg` (per-lap paths of one cell),
//! and `warnings.json` listing missing inputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ops::LapRow;
use super::pipeline::{
    eval_csv, finetune_file, train_track_file, CellId, EvalRow, ExperimentPlan, RunDir, EVAL_PHASES,
};
use super::stats::{self, Summary};
use super::svg::{red_to_blue, Scale, Svg, PALETTE};
use super::HarnessError;
use crate::cells::CellKind;
use crate::env::TrackMap;

/// One (kind, phase) box of the evaluation boxplot.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub kind: CellKind,
    pub phase: String,
    pub summary: Summary,
}

/// Median and spread of lap reward across seeds for one lap index.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LapSummaryRow {
    pub kind: CellKind,
    pub lap: usize,
    pub n: usize,
    pub median: f64,
    pub std: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReportData {
    pub summaries: Vec<SummaryRow>,
    pub laps: Vec<LapSummaryRow>,
    /// Cell drawn in the trajectory plot and whether its laps show an
    /// off-road first lap followed by a completed lap.
    pub trajectory_cell: Option<(String, bool)>,
    /// Fine-tuning lap tables by cell name.
    pub lap_tables: BTreeMap<String, Vec<LapRow>>,
    pub warnings: Vec<String>,
}

impl ReportData {
    pub fn summary(&self, kind: CellKind, phase: &str) -> Option<&Summary> {
        self.summaries
            .iter()
            .find(|r| r.kind == kind && r.phase == phase)
            .map(|r| &r.summary)
    }
}

/// Lap 1 ends off the road and some later lap is completed.
pub fn shows_recovery(laps: &[LapRow]) -> bool {
    laps.first().is_some_and(|l| l.offroad) && laps.iter().skip(1).any(|l| l.completed)
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, HarnessError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

#[derive(Deserialize)]
struct TrajPoint {
    x: f64,
    y: f64,
    lap: usize,
}

#[derive(Serialize)]
struct CellReward<'a> {
    kind: CellKind,
    index: usize,
    phase: &'a str,
    reward: f64,
    tracks: usize,
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Renders the report of the run directory at `root`. Missing cells leave
/// gaps in the plots and are listed in `warnings.json`.
pub fn cmd_report(root: &Path) -> Result<ReportData, HarnessError> {
    if !root.is_dir() || fs::read_dir(root)?.next().is_none() {
        return Err(HarnessError::MissingArtifact(format!(
            "{} is empty or missing",
            root.display()
        )));
    }
    let dir = RunDir::open(root)?;
    let plan = ExperimentPlan::new(dir.config()?)?;
    let out = dir.path("report");
    fs::create_dir_all(&out)?;
    let mut data = ReportData::default();

    // evaluation
    let mut per_cell: Vec<CellReward> = Vec::new();
    for &c in &plan.cells {
        let p = dir.path(&eval_csv(c));
        if !p.is_file() {
            data.warnings
                .push(format!("{}: no evaluation results", c.name()));
            continue;
        }
        let rows: Vec<EvalRow> = read_csv(&p)?;
        for phase in EVAL_PHASES {
            let r: Vec<f64> = rows
                .iter()
                .filter(|r| r.phase == phase)
                .map(|r| r.reward)
                .collect();
            if r.is_empty() {
                data.warnings
                    .push(format!("{}: no {phase} evaluation", c.name()));
                continue;
            }
            per_cell.push(CellReward {
                kind: c.kind,
                index: c.index,
                phase,
                reward: stats::mean(&r),
                tracks: r.len(),
            });
        }
    }
    write_csv(&out.join("eval_rewards.csv"), &per_cell)?;
    for &kind in &plan.config.kinds {
        for phase in EVAL_PHASES {
            let v: Vec<f64> = per_cell
                .iter()
                .filter(|r| r.kind == kind && r.phase == phase)
                .map(|r| r.reward)
                .collect();
            if !v.is_empty() {
                data.summaries.push(SummaryRow {
                    kind,
                    phase: phase.into(),
                    summary: Summary::of(&v),
                });
            }
        }
    }
    let mut w = csv::Writer::from_path(out.join("eval_summary.csv"))?;
    w.write_record([
        "kind", "phase", "n", "min", "q1", "median", "q3", "max", "mean", "std",
    ])?;
    for r in &data.summaries {
        let s = &r.summary;
        let mut rec = vec![r.kind.name().to_string(), r.phase.clone(), s.n.to_string()];
        rec.extend(
            [s.min, s.q1, s.median, s.q3, s.max, s.mean, s.std]
                .iter()
                .map(f64::to_string),
        );
        w.write_record(&rec)?;
    }
    w.flush()?;
    fs::write(
        out.join("boxplot.svg"),
        boxplot(&plan.config.kinds, &data.summaries, &per_cell),
    )?;

    // fine-tuning laps
    for &c in &plan.cells {
        let p = dir.path(&finetune_file(c, "laps"));
        if !p.is_file() {
            data.warnings
                .push(format!("{}: no fine-tuning lap table", c.name()));
            continue;
        }
        data.lap_tables.insert(c.name(), read_csv(&p)?);
    }
    for &kind in &plan.config.kinds {
        let tables: Vec<&Vec<LapRow>> = plan
            .cells
            .iter()
            .filter(|c| c.kind == kind)
            .filter_map(|c| data.lap_tables.get(&c.name()))
            .collect();
        let max_lap = tables.iter().map(|t| t.len()).max().unwrap_or(0);
        for lap in 1..=max_lap {
            let v: Vec<f64> = tables
                .iter()
                .filter_map(|t| t.get(lap - 1))
                .map(|l| l.reward)
                .collect();
            data.laps.push(LapSummaryRow {
                kind,
                lap,
                n: v.len(),
                median: stats::median(&v),
                std: stats::std_dev(&v),
            });
        }
    }
    write_csv(&out.join("lap_rewards.csv"), &data.laps)?;
    fs::write(
        out.join("lap_rewards.svg"),
        lap_plot(&plan.config.kinds, &data.laps),
    )?;

    // trajectory of the first recovering cell, else the first cell with laps
    let pick = plan
        .cells
        .iter()
        .find(|c| {
            data.lap_tables
                .get(&c.name())
                .is_some_and(|t| shows_recovery(t))
        })
        .or_else(|| {
            plan.cells
                .iter()
                .find(|c| data.lap_tables.contains_key(&c.name()))
        });
    let track_path = dir.path(&train_track_file());
    match (pick, track_path.is_file()) {
        (Some(&c), true) => {
            let track = TrackMap::parse_points(&fs::read_to_string(&track_path)?)
                .map_err(crate::env::EnvError::from)?;
            let track = if plan.config.shift.mirror {
                track.mirrored()
            } else {
                track
            };
            let traj_path = dir.path(&finetune_file(c, "traj"));
            if traj_path.is_file() {
                let pts: Vec<TrajPoint> = read_csv(&traj_path)?;
                write_trajectory_outputs(&out, c, &track, &pts)?;
                let recovered = shows_recovery(&data.lap_tables[&c.name()]);
                data.trajectory_cell = Some((c.name(), recovered));
            } else {
                data.warnings.push(format!("{}: no trajectory", c.name()));
            }
        }
        (None, _) => data.warnings.push("no fine-tuned cell to draw".into()),
        (_, false) => data
            .warnings
            .push(format!("missing {}", train_track_file())),
    }

    let w = serde_json::to_string_pretty(&data.warnings).expect("warnings serialize");
    fs::write(out.join("warnings.json"), w + "\n")?;
    Ok(data)
}

const W: f64 = 720.0;
const H: f64 = 440.0;
const M: (f64, f64, f64, f64) = (70.0, 20.0, 40.0, 60.0); // left, right, top, bottom

fn axes(svg: &mut Svg, ys: &Scale, title: &str, y_label: &str) {
    let (l, r, t, b) = M;
    svg.line(l, H - b, W - r, H - b, "#000", 1.0);
    svg.line(l, t, l, H - b, "#000", 1.0);
    for v in ys.ticks(6) {
        let y = ys.map(v);
        svg.line(l - 4.0, y, l, y, "#000", 1.0);
        svg.line(l, y, W - r, y, "#e0e0e0", 0.5);
        svg.text(l - 6.0, y + 4.0, 11.0, "end", &format!("{v}"));
    }
    svg.text(W / 2.0, 22.0, 14.0, "middle", title);
    svg.text(16.0, H / 2.0, 12.0, "middle", y_label);
}

fn boxplot(kinds: &[CellKind], summaries: &[SummaryRow], points: &[CellReward]) -> String {
    let mut svg = Svg::new(W, H);
    let (l, r, t, b) = M;
    let lo = summaries
        .iter()
        .map(|s| s.summary.min)
        .fold(f64::INFINITY, f64::min);
    let hi = summaries
        .iter()
        .map(|s| s.summary.max)
        .fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 1.0) };
    let pad = 0.05 * (hi - lo).max(1.0);
    let ys = Scale::new((lo - pad, hi + pad), (H - b, t));
    axes(&mut svg, &ys, "Evaluation reward per model", "reward");
    let group = (W - l - r) / kinds.len().max(1) as f64;
    let bw = group / (EVAL_PHASES.len() as f64 + 1.5);
    for (k, &kind) in kinds.iter().enumerate() {
        let x0 = l + k as f64 * group;
        svg.text(x0 + group / 2.0, H - b + 18.0, 12.0, "middle", kind.name());
        for (p, phase) in EVAL_PHASES.iter().enumerate() {
            let cx = x0 + bw * (p as f64 + 1.25);
            let color = PALETTE[p];
            let Some(s) = summaries
                .iter()
                .find(|s| s.kind == kind && s.phase == *phase)
            else {
                svg.text(cx, ys.map(lo), 10.0, "middle", "missing");
                continue;
            };
            let s = &s.summary;
            svg.line(cx, ys.map(s.min), cx, ys.map(s.max), "#333", 1.0);
            svg.line(
                cx - bw * 0.2,
                ys.map(s.min),
                cx + bw * 0.2,
                ys.map(s.min),
                "#333",
                1.0,
            );
            svg.line(
                cx - bw * 0.2,
                ys.map(s.max),
                cx + bw * 0.2,
                ys.map(s.max),
                "#333",
                1.0,
            );
            let top = ys.map(s.q3);
            svg.rect(
                cx - bw * 0.4,
                top,
                bw * 0.8,
                (ys.map(s.q1) - top).max(0.5),
                color,
                "#333",
            );
            svg.line(
                cx - bw * 0.4,
                ys.map(s.median),
                cx + bw * 0.4,
                ys.map(s.median),
                "#000",
                2.0,
            );
            for pt in points
                .iter()
                .filter(|q| q.kind == kind && q.phase == *phase)
            {
                svg.circle(cx + bw * 0.25, ys.map(pt.reward), 2.0, "#000");
            }
        }
    }
    for (p, phase) in EVAL_PHASES.iter().enumerate() {
        let x = l + 10.0 + p as f64 * 170.0;
        svg.rect(x, H - 22.0, 12.0, 12.0, PALETTE[p], "#333");
        svg.text(x + 16.0, H - 12.0, 11.0, "start", phase);
    }
    svg.finish()
}

fn lap_plot(kinds: &[CellKind], rows: &[LapSummaryRow]) -> String {
    let mut svg = Svg::new(W, H);
    let (l, r, t, b) = M;
    let max_lap = rows.iter().map(|r| r.lap).max().unwrap_or(1);
    let finite = |v: f64| if v.is_finite() { v } else { 0.0 };
    let lo = rows
        .iter()
        .map(|r| r.median - finite(r.std))
        .fold(f64::INFINITY, f64::min);
    let hi = rows
        .iter()
        .map(|r| r.median + finite(r.std))
        .fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 1.0) };
    let ys = Scale::new((lo, hi), (H - b, t));
    let xs = Scale::new((1.0, max_lap as f64), (l + 10.0, W - r - 10.0));
    axes(
        &mut svg,
        &ys,
        "Fine-tuning reward per lap (median and std across seeds)",
        "reward",
    );
    for lap in 1..=max_lap {
        let x = xs.map(lap as f64);
        svg.line(x, H - b, x, H - b + 4.0, "#000", 1.0);
        svg.text(x, H - b + 16.0, 11.0, "middle", &lap.to_string());
    }
    svg.text(W / 2.0, H - b + 32.0, 12.0, "middle", "lap");
    for (k, &kind) in kinds.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let rs: Vec<&LapSummaryRow> = rows.iter().filter(|r| r.kind == kind).collect();
        let mut band: Vec<(f64, f64)> = rs
            .iter()
            .map(|r| (xs.map(r.lap as f64), ys.map(r.median + finite(r.std))))
            .collect();
        band.extend(
            rs.iter()
                .rev()
                .map(|r| (xs.map(r.lap as f64), ys.map(r.median - finite(r.std)))),
        );
        svg.polygon(&band, color, 0.2);
        let line: Vec<(f64, f64)> = rs
            .iter()
            .map(|r| (xs.map(r.lap as f64), ys.map(r.median)))
            .collect();
        svg.polyline(&line, color, 2.0, 1.0);
        let x = l + 10.0 + k as f64 * 110.0;
        svg.rect(x, H - 22.0, 12.0, 12.0, color, "none");
        svg.text(x + 16.0, H - 12.0, 11.0, "start", kind.name());
    }
    svg.finish()
}

fn edge(track: &TrackMap, side: f64) -> Vec<[f64; 2]> {
    let k = track.keypoints();
    let n = k.len();
    let mut pts: Vec<[f64; 2]> = (0..n)
        .map(|i| {
            let (a, b) = (k[(i + n - 1) % n], k[(i + 1) % n]);
            let (tx, ty) = (b[0] - a[0], b[1] - a[1]);
            let len = tx.hypot(ty).max(1e-12);
            let hw = side * track.half_width();
            [k[i][0] - ty / len * hw, k[i][1] + tx / len * hw]
        })
        .collect();
    pts.push(pts[0]);
    pts
}

fn write_trajectory_outputs(
    out: &Path,
    c: CellId,
    track: &TrackMap,
    pts: &[TrajPoint],
) -> Result<(), HarnessError> {
    #[derive(Serialize)]
    struct Row<'a> {
        cell: &'a str,
        lap: usize,
        x: f64,
        y: f64,
    }
    let name = c.name();
    let rows: Vec<Row> = pts
        .iter()
        .map(|p| Row {
            cell: &name,
            lap: p.lap,
            x: p.x,
            y: p.y,
        })
        .collect();
    write_csv(&out.join("trajectory.csv"), &rows)?;

    let left = edge(track, 1.0);
    let right = edge(track, -1.0);
    let all = left
        .iter()
        .chain(&right)
        .copied()
        .chain(pts.iter().map(|p| [p.x, p.y]));
    let (mut x0, mut x1, mut y0, mut y1) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for [x, y] in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let side = 560.0;
    let span = (x1 - x0).max(y1 - y0).max(1e-9);
    let s = (side - 40.0) / span;
    let map = |p: [f64; 2]| {
        (
            20.0 + (p[0] - x0) * s,
            side + 20.0 - (20.0 + (p[1] - y0) * s),
        )
    };
    let mut svg = Svg::new(side, side + 30.0);
    let to_px = |v: &[[f64; 2]]| v.iter().map(|p| map(*p)).collect::<Vec<_>>();
    svg.polyline(&to_px(&left), "#888", 1.0, 1.0);
    svg.polyline(&to_px(&right), "#888", 1.0, 1.0);
    let mut center = track.keypoints().to_vec();
    center.push(center[0]);
    svg.polyline(&to_px(&center), "#ccc", 0.5, 1.0);
    let laps = pts.iter().map(|p| p.lap).max().unwrap_or(1);
    for lap in 1..=laps {
        let seg: Vec<[f64; 2]> = pts
            .iter()
            .filter(|p| p.lap == lap)
            .map(|p| [p.x, p.y])
            .collect();
        let t = if laps > 1 {
            (lap - 1) as f64 / (laps - 1) as f64
        } else {
            1.0
        };
        svg.polyline(&to_px(&seg), &red_to_blue(t), 1.5, 0.9);
    }
    let (sx, sy) = map(track.start_pose().0);
    svg.circle(sx, sy, 4.0, "#000");
    svg.text(
        side / 2.0,
        side + 22.0,
        12.0,
        "middle",
        &format!("{name}: laps 1 (red) to {laps} (blue)"),
    );
    fs::write(out.join("trajectory.svg"), svg.finish())?;
    Ok(())
}

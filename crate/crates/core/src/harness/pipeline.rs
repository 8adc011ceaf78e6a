//! Run-directory layout, experiment plan, manifest and the per-phase
//! commands.
//!
//! ```text
//! <run>/run.run                 resolved configuration
//! <run>/manifest.json           per-cell phase records
//! <run>/demos.demos             expert demonstrations
//! <run>/tracks/train.txt        training track; eval-<i>.txt evaluation tracks
//! <run>/pretrain/<cell>.ckpt    .loss.csv
//! <run>/finetune/<cell>.ckpt    .laps.csv .diag.csv .traj.csv
//! <run>/eval/<cell>.csv
//! <run>/report/
//! ```
//!
//! Seeds: the training track uses `[track, 0]`, evaluation track `i` uses
//! `[track, 1 + i]`, collection `[collect]`, and cell `(kind, i)` uses
//! `[pretrain, kind, i]` and `[finetune, kind, i]`, all derived from the
//! master seed with [`derive_seed`] and [`tag`].

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::ops::{collect_demos, evaluate_policy, finetune, CollectSummary, FinetuneLog, LapRow};
use super::HarnessError;
use crate::agent::{RtrrlAgent, StepDiagnostics};
use crate::bc::{BcConfig, DemoDataset, EpochLoss, Pretrainer};
use crate::cells::CellKind;
use crate::env::{make_track, write_trajectory_csv, DrivingEnv, ShiftConfig, TrackMap};
use crate::persist::{
    load_checkpoint, load_dataset, save_checkpoint, save_dataset, Checkpoint, CriticBundle,
    Lineage, RunConfig,
};
use crate::seeds::{derive_seed, tag};

pub const RUN_FILE: &str = "run.run";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const DEMOS_FILE: &str = "demos.demos";

/// One (model kind, seed index) cell of a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellId {
    pub kind: CellKind,
    pub index: usize,
}

impl CellId {
    pub fn name(&self) -> String {
        format!("{}-{}", self.kind.name(), self.index)
    }
}

/// Restricts a command to a subset of cells.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CellFilter {
    pub kind: Option<CellKind>,
    pub index: Option<usize>,
}

impl CellFilter {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn matches(&self, c: CellId) -> bool {
        self.kind.is_none_or(|k| k == c.kind) && self.index.is_none_or(|i| i == c.index)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Collect,
    Pretrain,
    Finetune,
    Evaluate,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Collect => "collect",
            Phase::Pretrain => "pretrain",
            Phase::Finetune => "finetune",
            Phase::Evaluate => "evaluate",
        }
    }
}

/// Cells, seeds and tracks of one run.
#[derive(Clone, Debug)]
pub struct ExperimentPlan {
    pub config: RunConfig,
    pub cells: Vec<CellId>,
    pub train_track_seed: u64,
    pub eval_track_seeds: Vec<u64>,
}

impl ExperimentPlan {
    pub fn new(config: RunConfig) -> Result<Self, HarnessError> {
        config
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        let unique: BTreeSet<_> = config.kinds.iter().collect();
        if unique.len() != config.kinds.len() {
            return Err(HarnessError::Config(
                "model kinds listed more than once".into(),
            ));
        }
        let cells = config
            .kinds
            .iter()
            .flat_map(|&kind| (0..config.seeds_per_kind).map(move |index| CellId { kind, index }))
            .collect();
        let m = config.master_seed;
        let train_track_seed = derive_seed(m, &[tag("track"), 0]);
        let eval_track_seeds: Vec<u64> = (0..config.eval.tracks as u64)
            .map(|i| derive_seed(m, &[tag("track"), 1 + i]))
            .collect();
        let mut seen = BTreeSet::from([train_track_seed]);
        if !eval_track_seeds.iter().all(|s| seen.insert(*s)) {
            return Err(HarnessError::Config(
                "evaluation track seeds collide with the training track".into(),
            ));
        }
        Ok(Self {
            config,
            cells,
            train_track_seed,
            eval_track_seeds,
        })
    }

    pub fn selected(&self, filter: CellFilter) -> Vec<CellId> {
        self.cells
            .iter()
            .copied()
            .filter(|c| filter.matches(*c))
            .collect()
    }

    pub fn collect_seed(&self) -> u64 {
        derive_seed(self.config.master_seed, &[tag("collect")])
    }

    pub fn cell_seed(&self, phase: Phase, c: CellId) -> u64 {
        derive_seed(
            self.config.master_seed,
            &[tag(phase.name()), tag(c.kind.name()), c.index as u64],
        )
    }

    pub fn train_track(&self) -> Result<TrackMap, HarnessError> {
        Ok(make_track(self.train_track_seed, &self.config.track)
            .map_err(crate::env::EnvError::from)?)
    }

    pub fn eval_tracks(&self) -> Result<Vec<TrackMap>, HarnessError> {
        let train = self.train_track()?;
        let mut out = Vec::with_capacity(self.eval_track_seeds.len());
        for &s in &self.eval_track_seeds {
            let t = make_track(s, &self.config.track).map_err(crate::env::EnvError::from)?;
            if t.keypoints() == train.keypoints() {
                return Err(HarnessError::Config(
                    "an evaluation track equals the training track".into(),
                ));
            }
            out.push(t);
        }
        Ok(out)
    }

    fn env(&self, track: TrackMap, shift: ShiftConfig) -> Result<DrivingEnv, HarnessError> {
        Ok(DrivingEnv::new(track, self.config.env.clone(), shift)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseStatus {
    Done,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub status: PhaseStatus,
    pub seed: u64,
    /// Paths relative to the run directory.
    pub artifacts: Vec<String>,
    pub error: Option<String>,
    /// Command that re-runs this phase of this cell from inside the run
    /// directory.
    pub rerun: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub kind: CellKind,
    pub index: usize,
    pub phases: BTreeMap<Phase, PhaseRecord>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub collect: Option<PhaseRecord>,
    pub cells: BTreeMap<String, CellRecord>,
}

impl Manifest {
    pub fn record(&self, c: CellId, phase: Phase) -> Option<&PhaseRecord> {
        self.cells.get(&c.name()).and_then(|r| r.phases.get(&phase))
    }

    fn set(&mut self, c: CellId, phase: Phase, rec: PhaseRecord) {
        self.cells
            .entry(c.name())
            .or_insert_with(|| CellRecord {
                kind: c.kind,
                index: c.index,
                phases: BTreeMap::new(),
            })
            .phases
            .insert(phase, rec);
    }
}

fn rerun_command(phase: Phase, c: Option<CellId>) -> String {
    let mut s = format!("rtrrl {} --config {RUN_FILE} --out .", phase.name());
    if let Some(c) = c {
        s += &format!(" --model {} --index {}", c.kind.name(), c.index);
    }
    s
}

/// Totals of one command over the selected cells.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PhaseOutcome {
    pub completed: Vec<String>,
    pub skipped: Vec<String>,
    /// Cells that hit a learning fault, with the reason.
    pub failed: Vec<(String, String)>,
}

impl PhaseOutcome {
    /// 3 when any cell hit a learning fault, else 0.
    pub fn exit_code(&self) -> i32 {
        if self.failed.is_empty() {
            0
        } else {
            3
        }
    }

    fn merge(&mut self, other: PhaseOutcome) {
        self.completed.extend(other.completed);
        self.skipped.extend(other.skipped);
        self.failed.extend(other.failed);
    }
}

/// A run directory on disk.
#[derive(Clone, Debug)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    /// Opens `root`, writing `config` as `run.run` on first use. A directory
    /// created with a different configuration is rejected.
    pub fn init(root: impl Into<PathBuf>, config: &RunConfig) -> Result<Self, HarnessError> {
        let dir = Self { root: root.into() };
        fs::create_dir_all(&dir.root)?;
        let path = dir.root.join(RUN_FILE);
        if path.exists() {
            let existing = RunConfig::load(&path)?;
            if existing != *config {
                return Err(HarnessError::Config(format!(
                    "{} was created with a different configuration",
                    dir.root.display()
                )));
            }
        } else {
            config.save(&path)?;
        }
        Ok(dir)
    }

    /// Opens an existing run directory without writing anything.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, HarnessError> {
        let dir = Self { root: root.into() };
        if !dir.root.join(RUN_FILE).is_file() {
            return Err(HarnessError::MissingArtifact(format!(
                "{} has no {RUN_FILE}",
                dir.root.display()
            )));
        }
        Ok(dir)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> Result<RunConfig, HarnessError> {
        Ok(RunConfig::load(self.root.join(RUN_FILE))?)
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn manifest(&self) -> Result<Manifest, HarnessError> {
        let p = self.root.join(MANIFEST_FILE);
        if !p.exists() {
            return Ok(Manifest::default());
        }
        serde_json::from_str(&fs::read_to_string(p)?)
            .map_err(|e| HarnessError::Config(format!("unreadable {MANIFEST_FILE}: {e}")))
    }

    fn save_manifest(&self, m: &Manifest) -> Result<(), HarnessError> {
        let text = serde_json::to_string_pretty(m).expect("manifest serializes");
        fs::write(self.root.join(MANIFEST_FILE), text + "\n")?;
        Ok(())
    }

    fn done(&self, rec: Option<&PhaseRecord>) -> bool {
        rec.is_some_and(|r| {
            r.status == PhaseStatus::Done && r.artifacts.iter().all(|a| self.root.join(a).is_file())
        })
    }

    fn require(&self, rel: &str) -> Result<PathBuf, HarnessError> {
        let p = self.root.join(rel);
        if !p.is_file() {
            return Err(HarnessError::MissingArtifact(p.display().to_string()));
        }
        Ok(p)
    }
}

pub fn train_track_file() -> String {
    "tracks/train.txt".into()
}

pub fn eval_track_file(i: usize) -> String {
    format!("tracks/eval-{i}.txt")
}

pub fn pretrain_ckpt(c: CellId) -> String {
    format!("pretrain/{}.ckpt", c.name())
}

pub fn pretrain_loss(c: CellId) -> String {
    format!("pretrain/{}.loss.csv", c.name())
}

pub fn finetune_ckpt(c: CellId) -> String {
    format!("finetune/{}.ckpt", c.name())
}

pub fn finetune_file(c: CellId, what: &str) -> String {
    format!("finetune/{}.{what}.csv", c.name())
}

pub fn eval_csv(c: CellId) -> String {
    format!("eval/{}.csv", c.name())
}

fn create(path: &Path) -> Result<BufWriter<File>, HarnessError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>, HarnessError> {
    Ok(csv::Writer::from_writer(create(path)?))
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<(), HarnessError> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(create(path)?);
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_loss_csv(path: &Path, curve: &[EpochLoss]) -> Result<(), HarnessError> {
    #[derive(Serialize)]
    struct Row {
        epoch: usize,
        train_loss: f64,
        val_loss: f64,
    }
    let rows: Vec<Row> = curve
        .iter()
        .map(|e| Row {
            epoch: e.epoch,
            train_loss: e.train_loss,
            val_loss: e.val_loss,
        })
        .collect();
    write_rows(path, &rows, &["epoch", "train_loss", "val_loss"])
}

pub const LAPS_HEADER: [&str; 6] = [
    "lap",
    "reward",
    "steps",
    "completed",
    "offroad",
    "anchor_distance",
];

fn write_laps_csv(path: &Path, laps: &[LapRow]) -> Result<(), HarnessError> {
    write_rows(path, laps, &LAPS_HEADER)
}

fn write_diag_csv(path: &Path, diags: &[StepDiagnostics]) -> Result<(), HarnessError> {
    let mut w = csv_writer(path)?;
    let action_dim = diags.first().map_or(0, |d| d.action.len());
    let mut header: Vec<String> = [
        "step",
        "reward",
        "delta",
        "value",
        "entropy",
        "anchor_distance",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend((0..action_dim).map(|i| format!("action_{i}")));
    w.write_record(&header)?;
    for d in diags {
        let mut rec = vec![
            d.step.to_string(),
            d.reward.to_string(),
            d.delta.to_string(),
            d.value.to_string(),
            d.entropy.to_string(),
            d.anchor_distance.to_string(),
        ];
        rec.extend(d.action.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn write_finetune_logs(
    dir: &RunDir,
    c: CellId,
    log: &FinetuneLog,
) -> Result<Vec<String>, HarnessError> {
    let laps = finetune_file(c, "laps");
    let diag = finetune_file(c, "diag");
    let traj = finetune_file(c, "traj");
    write_laps_csv(&dir.path(&laps), &log.laps)?;
    write_diag_csv(&dir.path(&diag), &log.diagnostics)?;
    let mut w = create(&dir.path(&traj))?;
    write_trajectory_csv(&log.trajectory, &mut w)?;
    w.flush()?;
    Ok(vec![laps, diag, traj])
}

/// One evaluation rollout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    /// `pretrained_clean`, `pretrained_shift` or `finetuned_shift`.
    pub phase: String,
    pub track: usize,
    pub reward: f64,
    pub laps: usize,
    pub steps: usize,
    pub offroad: bool,
}

pub const EVAL_HEADER: [&str; 6] = ["phase", "track", "reward", "laps", "steps", "offroad"];
pub const EVAL_PHASES: [&str; 3] = ["pretrained_clean", "pretrained_shift", "finetuned_shift"];

/// Runs `f` over `cells` on `workers` threads; results come back in cell
/// order regardless of scheduling.
fn run_cells<T: Send>(workers: usize, cells: &[CellId], f: impl Fn(CellId) -> T + Sync) -> Vec<T> {
    let workers = match workers {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        n => n,
    }
    .clamp(1, cells.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<T>>> = cells.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= cells.len() {
                    break;
                }
                let r = f(cells[i]);
                *slots[i].lock().expect("slot lock") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot lock").expect("every cell ran"))
        .collect()
}

/// Runs one phase over the selected cells, skipping those already done,
/// and records every result in the manifest. Cells that hit a learning
/// fault are reported in the outcome; any other failure is returned as an
/// error after the manifest is saved.
fn sweep(
    dir: &RunDir,
    plan: &ExperimentPlan,
    phase: Phase,
    filter: CellFilter,
    f: impl Fn(CellId) -> Result<Vec<String>, HarnessError> + Sync,
) -> Result<PhaseOutcome, HarnessError> {
    let mut manifest = dir.manifest()?;
    let mut outcome = PhaseOutcome::default();
    let mut todo = Vec::new();
    for c in plan.selected(filter) {
        if dir.done(manifest.record(c, phase)) {
            outcome.skipped.push(c.name());
        } else {
            todo.push(c);
        }
    }
    let results = run_cells(plan.config.workers, &todo, |c| {
        info!("{} {}", phase.name(), c.name());
        f(c)
    });
    let mut fatal = None;
    for (c, r) in todo.into_iter().zip(results) {
        let seed = plan.cell_seed(phase, c);
        let rerun = rerun_command(phase, Some(c));
        let rec = match r {
            Ok(artifacts) => {
                outcome.completed.push(c.name());
                PhaseRecord {
                    status: PhaseStatus::Done,
                    seed,
                    artifacts,
                    error: None,
                    rerun,
                }
            }
            Err(e) => {
                warn!("{} {} failed: {e}", phase.name(), c.name());
                let error = Some(e.to_string());
                if e.exit_code() == 3 {
                    outcome.failed.push((c.name(), e.to_string()));
                } else if fatal.is_none() {
                    fatal = Some(e);
                }
                PhaseRecord {
                    status: PhaseStatus::Failed,
                    seed,
                    artifacts: vec![],
                    error,
                    rerun,
                }
            }
        };
        manifest.set(c, phase, rec);
    }
    dir.save_manifest(&manifest)?;
    match fatal {
        Some(e) => Err(e),
        None => Ok(outcome),
    }
}

/// Expert demonstrations on the training track plus the exported track
/// files.
pub fn cmd_collect(dir: &RunDir) -> Result<CollectSummary, HarnessError> {
    let plan = ExperimentPlan::new(dir.config()?)?;
    let cfg = &plan.config;
    let train = plan.train_track()?;
    fs::create_dir_all(dir.path("tracks"))?;
    fs::write(dir.path(&train_track_file()), train.export_points())?;
    for (i, t) in plan.eval_tracks()?.iter().enumerate() {
        fs::write(dir.path(&eval_track_file(i)), t.export_points())?;
    }
    let mut env = plan.env(train, ShiftConfig::identity())?;
    let seed = plan.collect_seed();
    let (data, summary) = collect_demos(
        &mut env,
        &cfg.expert,
        cfg.collect.episodes,
        cfg.collect.steps,
        seed,
    )?;
    save_dataset(dir.path(DEMOS_FILE), &data)?;
    let mut manifest = dir.manifest()?;
    let mut artifacts = vec![DEMOS_FILE.to_string(), train_track_file()];
    artifacts.extend((0..plan.eval_track_seeds.len()).map(eval_track_file));
    manifest.collect = Some(PhaseRecord {
        status: PhaseStatus::Done,
        seed,
        artifacts,
        error: None,
        rerun: rerun_command(Phase::Collect, None),
    });
    dir.save_manifest(&manifest)?;
    Ok(summary)
}

fn load_demos(dir: &RunDir) -> Result<DemoDataset, HarnessError> {
    Ok(load_dataset(dir.require(DEMOS_FILE)?)?)
}

fn load_ckpt(dir: &RunDir, rel: &str) -> Result<Checkpoint, HarnessError> {
    Ok(load_checkpoint(dir.require(rel)?)?)
}

/// Behavioral cloning, one checkpoint and loss curve per cell.
pub fn cmd_pretrain(dir: &RunDir, filter: CellFilter) -> Result<PhaseOutcome, HarnessError> {
    let plan = ExperimentPlan::new(dir.config()?)?;
    let data = load_demos(dir)?;
    let cfg = &plan.config;
    sweep(dir, &plan, Phase::Pretrain, filter, |c| {
        let seed = plan.cell_seed(Phase::Pretrain, c);
        let bc = BcConfig {
            seed,
            ..cfg.bc.clone()
        };
        let mut trainer = Pretrainer::new(&data, &cfg.model.spec(c.kind), &bc)?;
        let mut fault = None;
        for _ in 0..bc.epochs {
            if let Err(e) = trainer.run_epoch() {
                fault = Some(e);
                break;
            }
        }
        let loss = pretrain_loss(c);
        write_loss_csv(&dir.path(&loss), trainer.curve())?;
        if let Some(e) = fault {
            return Err(e.into());
        }
        let ckpt = Checkpoint {
            policy: trainer.into_parts().0,
            critic: None,
            observation: cfg.env.obs.clone(),
            lineage: Lineage {
                master_seed: cfg.master_seed,
                stage: "pretrain".into(),
                index: c.index as u64,
                seed,
            },
        };
        let path = pretrain_ckpt(c);
        fs::create_dir_all(dir.path("pretrain"))?;
        save_checkpoint(dir.path(&path), &ckpt)?;
        Ok(vec![path, loss])
    })
}

/// Online RTRRL under the configured shift on the training track.
pub fn cmd_finetune(dir: &RunDir, filter: CellFilter) -> Result<PhaseOutcome, HarnessError> {
    let plan = ExperimentPlan::new(dir.config()?)?;
    let cfg = &plan.config;
    let track = plan.train_track()?;
    sweep(dir, &plan, Phase::Finetune, filter, |c| {
        let pre = load_ckpt(dir, &pretrain_ckpt(c))?;
        let seed = plan.cell_seed(Phase::Finetune, c);
        let mut env = plan.env(track.clone(), cfg.shift.clone())?;
        let mut agent = RtrrlAgent::new(pre.policy, seed, cfg.hyper.clone())?;
        let ft = &cfg.finetune;
        let (log, fault) =
            match finetune(&mut agent, &mut env, ft.laps, ft.max_steps, ft.diagnostics) {
                Ok(log) => (log, None),
                Err(HarnessError::Learning {
                    step,
                    reason,
                    partial,
                }) => (*partial, Some((step, reason))),
                Err(e) => return Err(e),
            };
        let mut artifacts = write_finetune_logs(dir, c, &log)?;
        if let Some((step, reason)) = fault {
            return Err(HarnessError::Learning {
                step,
                reason,
                partial: Box::default(),
            });
        }
        let ckpt = Checkpoint {
            critic: Some(CriticBundle {
                cell: agent.critic_cell().clone(),
                head: agent.critic_head().clone(),
            }),
            policy: agent.into_policy(),
            observation: cfg.env.obs.clone(),
            lineage: Lineage {
                master_seed: cfg.master_seed,
                stage: "finetune".into(),
                index: c.index as u64,
                seed,
            },
        };
        let path = finetune_ckpt(c);
        save_checkpoint(dir.path(&path), &ckpt)?;
        artifacts.insert(0, path);
        Ok(artifacts)
    })
}

/// Mode-action rollouts on every evaluation track: the pretrained policy
/// without and with the shift, and the fine-tuned policy with the shift
/// when its checkpoint exists.
pub fn cmd_evaluate(dir: &RunDir, filter: CellFilter) -> Result<PhaseOutcome, HarnessError> {
    let plan = ExperimentPlan::new(dir.config()?)?;
    let cfg = &plan.config;
    let tracks = plan.eval_tracks()?;
    sweep(dir, &plan, Phase::Evaluate, filter, |c| {
        let pre = load_ckpt(dir, &pretrain_ckpt(c))?;
        let ft_path = finetune_ckpt(c);
        let ft = if dir.path(&ft_path).is_file() {
            Some(load_ckpt(dir, &ft_path)?)
        } else {
            None
        };
        let mut runs = vec![
            (EVAL_PHASES[0], &pre, ShiftConfig::identity()),
            (EVAL_PHASES[1], &pre, cfg.shift.clone()),
        ];
        if let Some(ft) = &ft {
            runs.push((EVAL_PHASES[2], ft, cfg.shift.clone()));
        }
        let mut rows = Vec::new();
        for (phase, ckpt, shift) in runs {
            for (i, t) in tracks.iter().enumerate() {
                let mut env = plan.env(t.clone(), shift.clone())?;
                let r = evaluate_policy(&ckpt.policy, &mut env, cfg.eval.laps, cfg.eval.max_steps)?;
                rows.push(EvalRow {
                    phase: phase.into(),
                    track: i,
                    reward: r.reward,
                    laps: r.laps,
                    steps: r.steps,
                    offroad: r.offroad,
                });
            }
        }
        let path = eval_csv(c);
        write_rows(&dir.path(&path), &rows, &EVAL_HEADER)?;
        Ok(vec![path])
    })
}

/// Every phase in order, then the report. Resumes from the manifest.
pub fn run_pipeline(dir: &RunDir) -> Result<PhaseOutcome, HarnessError> {
    let manifest = dir.manifest()?;
    if !dir.done(manifest.collect.as_ref()) {
        let s = cmd_collect(dir)?;
        info!(
            "collected {} episodes, {} steps, mean reward {:.2}",
            s.episodes, s.steps, s.mean_reward
        );
    }
    let mut outcome = cmd_pretrain(dir, CellFilter::all())?;
    outcome.merge(cmd_finetune(dir, CellFilter::all())?);
    outcome.merge(cmd_evaluate(dir, CellFilter::all())?);
    super::report::cmd_report(dir.root())?;
    Ok(outcome)
}

//! One PASS/FAIL line per acceptance criterion, written straight to stderr
//! so it shows without `--nocapture`. Run with
//! `cargo test --test acceptance`.

mod common;

use std::alloc::{GlobalAlloc, Layout, System};
use std::cell::Cell;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rtrrl_core::agent::{Hyperparams, RtrrlAgent};
use rtrrl_core::cells::CellKind;
use rtrrl_core::env::{make_track, DrivingEnv, EnvConfig, ShiftConfig, TrackConfig};
use rtrrl_core::harness::{finetune, run_pipeline, shows_recovery, ReportData, RunDir};
use rtrrl_core::heads::ActionDistribution;
use rtrrl_core::online_grad::oracle::finite_diff_grad;
use rtrrl_core::persist::{load_checkpoint, RunConfig};

struct Counting;

thread_local! {
    static ALLOCS: Cell<u64> = const { Cell::new(0) };
    static LIVE: Cell<i64> = const { Cell::new(0) };
}

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, l: Layout) -> *mut u8 {
        let _ = ALLOCS.try_with(|c| c.set(c.get() + 1));
        let _ = LIVE.try_with(|c| c.set(c.get() + l.size() as i64));
        System.alloc(l)
    }
    unsafe fn dealloc(&self, p: *mut u8, l: Layout) {
        let _ = LIVE.try_with(|c| c.set(c.get() - l.size() as i64));
        System.dealloc(p, l)
    }
    unsafe fn realloc(&self, p: *mut u8, l: Layout, new: usize) -> *mut u8 {
        let _ = ALLOCS.try_with(|c| c.set(c.get() + 1));
        let _ = LIVE.try_with(|c| c.set(c.get() + new as i64 - l.size() as i64));
        System.realloc(p, l, new)
    }
}

#[global_allocator]
static GLOBAL: Counting = Counting;

fn counters() -> (u64, i64) {
    (ALLOCS.with(Cell::get), LIVE.with(Cell::get))
}

struct Verdict {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn report(v: &Verdict) {
    let tag = if v.pass { "PASS" } else { "FAIL" };
    let line = format!("{tag} criterion {} ({}): {}\n", v.id, v.name, v.detail);
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn gradient_exactness() -> Verdict {
    let t0 = Instant::now();
    let mut worst = 0.0f64;
    for kind in [CellKind::Lru, CellKind::Lrcssm] {
        for n in 1..=4 {
            for seed in 0..3 {
                worst = worst.max(common::rtrl_rel_error(kind, n, 100, 100 + seed));
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    Verdict {
        id: 1,
        name: "RTRL equals BPTT for diagonal cells",
        pass: worst < 1e-8 && secs < 10.0,
        detail: format!("max relative error {worst:.2e} (< 1e-8), {secs:.2} s (< 10 s)"),
    }
}

fn rflo_fidelity() -> Verdict {
    let gap = (0..3).map(|s| common::rflo_closed_form_gap(4, 100, 200 + s)).fold(0.0, f64::max);
    Verdict {
        id: 2,
        name: "RFLO recursion matches closed form",
        pass: gap < 1e-12,
        detail: format!("max gap {gap:.2e} over 100 steps (< 1e-12)"),
    }
}

fn td_lambda() -> Verdict {
    let gap = common::td1_chain_gap();
    Verdict {
        id: 3,
        name: "TD(1) equals Monte-Carlo gradient",
        pass: gap < 1e-10,
        detail: format!("max gap {gap:.2e} (< 1e-10)"),
    }
}

fn head_calibration() -> Verdict {
    // Integral by the midpoint rule on the open action interval.
    let cases = [(0.0, 0.0, 1.0), (0.7, -1.0, 2.0), (-1.5, 0.5, 0.35), (2.5, -2.0, 1.0)];
    let mut worst_mass = 0.0f64;
    for &(mu, sp, scale) in &cases {
        let d = ActionDistribution::from_preactivations(&[mu, sp], &[scale]);
        let m = 200_000;
        let h = 2.0 * scale / m as f64;
        let mass: f64 = (0..m).map(|k| d.log_prob(&[-scale + (k as f64 + 0.5) * h]).unwrap().exp() * h).sum();
        worst_mass = worst_mass.max((mass - 1.0).abs());
    }

    let mut worst_grad = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let scales = [0.4, 3.0];
    for _ in 0..20 {
        let out: Vec<f64> = (0..4).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
        let a = ActionDistribution::from_preactivations(&out, &scales).sample(&mut rng);
        let analytic = ActionDistribution::from_preactivations(&out, &scales).grad_log_prob(&a).unwrap().output_grad;
        let fd = finite_diff_grad(&out, 1e-5, |o| ActionDistribution::from_preactivations(o, &scales).log_prob(&a).unwrap());
        for (x, y) in analytic.iter().zip(&fd) {
            worst_grad = worst_grad.max((x - y).abs() / y.abs().max(1.0));
        }
    }

    // Wide, off-centre Gaussians put most pre-squash mass deep in the tails.
    let d = ActionDistribution::from_preactivations(&[3.0, -4.0, 5.0, 5.0], &[0.5, 2.0]);
    let inside = (0..100_000)
        .filter(|_| d.sample(&mut rng).iter().zip(&scales_of(&d)).all(|(a, s)| a.abs() < *s))
        .count();
    Verdict {
        id: 4,
        name: "squashed-Gaussian head calibration",
        pass: worst_mass < 1e-3 && worst_grad < 1e-5 && inside == 100_000,
        detail: format!(
            "mass error {worst_mass:.2e} (< 1e-3), gradient error {worst_grad:.2e} (< 1e-5), {inside}/100000 samples inside bounds"
        ),
    }
}

fn scales_of(d: &ActionDistribution) -> Vec<f64> {
    d.action_scale.clone()
}

fn trend(data: &ReportData, kinds: &[CellKind]) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for &k in kinds {
        let med = |phase: &str| data.summary(k, phase).map_or(f64::NAN, |s| s.median);
        let (clean, shift, tuned) = (med("pretrained_clean"), med("pretrained_shift"), med("finetuned_shift"));
        let n = data.summary(k, "finetuned_shift").map_or(0, |s| s.n);
        pass &= shift < clean && tuned > shift && n == 5;
        parts.push(format!("{} clean {clean:.1} shift {shift:.1} tuned {tuned:.1} (n {n})", k.name()));
    }
    Verdict { id: 5, name: "shift hurts and fine-tuning recovers", pass, detail: parts.join("; ") }
}

fn recovery(data: &ReportData) -> Verdict {
    let hits: Vec<&String> = data
        .lap_tables
        .iter()
        .filter(|(_, laps)| shows_recovery(&laps[..laps.len().min(10)]))
        .map(|(name, _)| name)
        .collect();
    Verdict {
        id: 6,
        name: "off-road lap 1 then a completed lap",
        pass: !hits.is_empty(),
        detail: format!("{} of {} cells: {:?}", hits.len(), data.lap_tables.len(), hits),
    }
}

fn shifted_env(seed: u64) -> DrivingEnv {
    let shift = ShiftConfig { sensor_bias: 0.75, ..ShiftConfig::identity() };
    DrivingEnv::new(make_track(seed, &TrackConfig::default()).unwrap(), EnvConfig::default(), shift).unwrap()
}

/// Fresh agent on the behavior-cloned checkpoint of `<kind>-0`.
fn agent_for(run: &RunDir, kind: CellKind) -> RtrrlAgent {
    let ckpt = load_checkpoint(run.path(&format!("pretrain/{}-0.ckpt", kind.name()))).unwrap();
    RtrrlAgent::new(ckpt.policy, 17, Hyperparams::default()).unwrap()
}

fn anchor(run: &RunDir) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for kind in CellKind::ALL {
        let mut env = shifted_env(5);
        let mut agent = agent_for(run, kind);
        assert_eq!(agent.hyper().eta_p, 1e-5);
        let log = finetune(&mut agent, &mut env, usize::MAX, 10_000, false).unwrap();
        let moved = agent.anchor_distance();
        agent.set_zero_td(true);
        let ablation = finetune(&mut agent, &mut env, usize::MAX, 2_000, true).unwrap();
        let mut last = moved;
        let mut monotone = true;
        for d in &ablation.diagnostics {
            monotone &= d.anchor_distance <= last;
            last = d.anchor_distance;
        }
        let ok = log.total_steps == 10_000 && moved.is_finite() && moved > 0.0 && monotone && last < moved;
        pass &= ok;
        parts.push(format!("{} ‖θ−θ_pre‖ {moved:.9e} → {last:.9e} under δ≡0", kind.name()));
    }
    Verdict { id: 7, name: "parameter anchor", pass, detail: parts.join("; ") }
}

fn median_duration(v: &mut [Duration]) -> Duration {
    v.sort();
    v[v.len() / 2]
}

fn resource_contract(run: &RunDir) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for kind in CellKind::ALL {
        let mut env = shifted_env(6);
        let mut agent = agent_for(run, kind);
        let mut obs = env.reset();
        agent.begin_episode(&obs).unwrap();
        let total = 10_000;
        let mut times = Vec::with_capacity(total);
        let mut allocs = Vec::with_capacity(total);
        let mut live = Vec::with_capacity(total);
        for _ in 0..total {
            let a = agent.state().action.clone();
            let o = env.step(&a).unwrap();
            let (a0, l0) = counters();
            let t0 = Instant::now();
            agent.step(&o.obs, o.reward, o.info.offroad).unwrap();
            times.push(t0.elapsed());
            let (a1, l1) = counters();
            allocs.push(a1 - a0);
            live.push(l1 - l0);
            obs = if o.done { env.reset() } else { o.obs };
            if o.done {
                agent.begin_episode(&obs).unwrap();
            }
        }
        let window = 2_000;
        let early = median_duration(&mut times[100..100 + window].to_vec());
        let late = median_duration(&mut times[total - window..].to_vec());
        let ratio = late.as_secs_f64() / early.as_secs_f64();
        let max_early = *allocs[100..100 + window].iter().max().unwrap();
        let max_late = *allocs[total - window..].iter().max().unwrap();
        let retained: i64 = live[100..].iter().sum();
        // Allocation counts are the exact check; the timing ratio has slack
        // for scheduler noise on a shared core.
        let ok = ratio < 3.0 && max_late <= max_early && retained <= 0;
        pass &= ok;
        parts.push(format!(
            "{} median step {:.1} µs → {:.1} µs, allocations/step ≤ {max_early} → ≤ {max_late}, retained {retained} B",
            kind.name(),
            early.as_secs_f64() * 1e6,
            late.as_secs_f64() * 1e6
        ));
    }
    Verdict { id: 8, name: "constant per-step time and memory", pass, detail: parts.join("; ") }
}

fn read_tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism(tmp: &Path) -> Verdict {
    let mut cfg = RunConfig::default();
    cfg.master_seed = 77;
    cfg.seeds_per_kind = 2;
    cfg.collect.steps = 500;
    cfg.bc.epochs = 3;
    cfg.finetune.laps = 3;
    cfg.finetune.max_steps = 3_000;
    cfg.eval.tracks = 2;
    cfg.eval.laps = 1;
    cfg.eval.max_steps = 800;
    let trees: Vec<_> = ["a", "b"]
        .iter()
        .map(|name| {
            let dir = RunDir::init(tmp.join(name), &cfg).unwrap();
            run_pipeline(&dir).unwrap();
            read_tree(dir.root())
        })
        .collect();
    let names = |t: &[(String, Vec<u8>)]| t.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>();
    let differing: Vec<String> =
        trees[0].iter().zip(&trees[1]).filter(|(x, y)| x != y).map(|(x, _)| x.0.clone()).collect();
    let kinds = |ext: &str| trees[0].iter().filter(|(n, _)| n.ends_with(ext)).count();
    let pass = names(&trees[0]) == names(&trees[1]) && differing.is_empty() && kinds(".svg") > 0;
    Verdict {
        id: 9,
        name: "bitwise determinism",
        pass,
        detail: format!(
            "{} files compared ({} ckpt, {} csv, {} svg), differing: {:?}",
            trees[0].len(),
            kinds(".ckpt"),
            kinds(".csv"),
            kinds(".svg"),
            differing
        ),
    }
}

#[test]
fn acceptance_criteria() {
    let tmp = tempfile::tempdir().unwrap();
    let mut verdicts = vec![gradient_exactness(), rflo_fidelity(), td_lambda(), head_calibration()];
    verdicts.iter().for_each(report);

    let cfg = RunConfig::default();
    let dir = RunDir::init(tmp.path().join("default"), &cfg).unwrap();
    let t0 = Instant::now();
    let outcome = run_pipeline(&dir).unwrap();
    let _ = writeln!(
        std::io::stderr(),
        "default pipeline: {} cells done in {:.0} s",
        outcome.completed.len(),
        t0.elapsed().as_secs_f64()
    );
    let data = rtrrl_core::harness::cmd_report(dir.root()).unwrap();
    let later: [&dyn Fn() -> Verdict; 5] = [
        &|| trend(&data, &cfg.kinds),
        &|| recovery(&data),
        &|| anchor(&dir),
        &|| resource_contract(&dir),
        &|| determinism(tmp.path()),
    ];
    for f in later {
        let v = f();
        report(&v);
        verdicts.push(v);
    }
    let failed: Vec<u32> = verdicts.iter().filter(|v| !v.pass).map(|v| v.id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

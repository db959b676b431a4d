//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. Pass criterion numbers as arguments to run a
//! subset: `cargo test -p fflp-cli --test acceptance -- 2 5`.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use common::{ref_add, ref_mul};
use fflp::accel::memory::{Access, BankId, BankRequest, MemoryBank, Outcome, StallReason};
use fflp::accel::{
    assumptions, run_benchmark, Accelerator, BenchOptions, HardwareConfig, RunOptions, SchedulePolicy,
};
use fflp::evolution::{
    evaluate_candidate, train_rule, EsParams, EvalSpec, EvolutionState, Population, TrainConfig,
};
use fflp::snn::{network_timestep, NetworkConfig, NetworkState, PlasticityRule};
use fflp::tasks::reaching::recovery;
use fflp::tasks::{run_episode, Controller, FunctionalBackend, Perturbation, TaskKind};
use fflp::Half;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    assert!(!v.is_empty());
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

// ---------------------------------------------------------------------------
// 1. Half-precision fidelity

fn operand_pair(rng: &mut ChaCha8Rng) -> (u16, u16) {
    let a: u16 = rng.random();
    let b: u16 = match rng.random_range(0..3) {
        0 => rng.random(),
        // Same exponent: exercises cancellation and carries.
        1 => (a & 0xFC00) ^ rng.random_range(0..0x0400) ^ (rng.random_range(0..2u16) << 15),
        _ => a.wrapping_add(rng.random_range(0..64)) ^ 0x8000,
    };
    (a, b)
}

fn fp16_fidelity() -> Verdict {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xF16);
    let (mut add_bad, mut mul_bad) = (0u32, 0u32);
    for _ in 0..1_000_000 {
        let (a, b) = operand_pair(&mut rng);
        add_bad += u32::from((Half::from_bits(a) + Half::from_bits(b)).to_bits() != ref_add(a, b));
        let (a, b) = operand_pair(&mut rng);
        mul_bad += u32::from((Half::from_bits(a) * Half::from_bits(b)).to_bits() != ref_mul(a, b));
    }
    let halve_bad = (0..=u16::MAX)
        .filter(|&b| {
            let h = Half::from_bits(b);
            h.halve().to_bits() != (h * Half::HALF).to_bits()
        })
        .count();
    let elapsed = started.elapsed();
    verdict(
        add_bad == 0 && mul_bad == 0 && halve_bad == 0 && elapsed < Duration::from_secs(60),
        format!(
            "add mismatches {add_bad}/1e6, mul mismatches {mul_bad}/1e6, halve mismatches {halve_bad}/65536, {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------
// 2-4. Cycle model against the functional model

struct FuzzCase {
    config: NetworkConfig,
    hw: HardwareConfig,
    state: NetworkState,
    rule: PlasticityRule,
    inputs: Vec<Vec<bool>>,
}

fn fuzz_case(seed: u64) -> FuzzCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = NetworkConfig::new(
        rng.random_range(1..=64),
        rng.random_range(1..=64),
        rng.random_range(1..=16),
    );
    let pe = [4, 8, 16][rng.random_range(0..3)];
    let hw = HardwareConfig {
        pe_count: pe,
        plasticity_lanes: rng.random_range(1..=pe.min(4)),
        ..HardwareConfig::default()
    };
    let mut state = NetworkState::new(config).unwrap();
    for layer in state.layers.iter_mut() {
        let scale = 3.0 / layer.n_pre() as f64;
        for w in layer.weights.as_mut_slice() {
            *w = Half::from_f64(rng.random_range(-0.5..1.5) * scale);
        }
    }
    let span = [1e-3, 1e-2, 0.1][rng.random_range(0..3)];
    let genome: Vec<f64> = (0..PlasticityRule::genome_len(&config))
        .map(|_| rng.random_range(-span..span))
        .collect();
    let rule = PlasticityRule::from_genome(&config, &genome).unwrap();
    let rate = rng.random_range(0.05..0.6);
    let inputs = (0..100)
        .map(|_| (0..config.n_in).map(|_| rng.random_bool(rate)).collect())
        .collect();
    FuzzCase {
        config,
        hw,
        state,
        rule,
        inputs,
    }
}

struct FuzzSummary {
    cases: usize,
    mismatches: Vec<String>,
    violations: usize,
    overlap_cases: usize,
    overlap_failures: Vec<String>,
    cycle_ratios: Vec<f64>,
    overlap_ratios: Vec<f64>,
    elapsed: Duration,
}

fn run_fuzz_corpus() -> FuzzSummary {
    let started = Instant::now();
    let mut s = FuzzSummary {
        cases: 500,
        mismatches: Vec::new(),
        violations: 0,
        overlap_cases: 0,
        overlap_failures: Vec::new(),
        cycle_ratios: Vec::new(),
        overlap_ratios: Vec::new(),
        elapsed: Duration::ZERO,
    };
    for seed in 0..s.cases as u64 {
        let case = fuzz_case(seed);
        let mut golden = case.state.clone();
        let outputs: Vec<Vec<bool>> = case
            .inputs
            .iter()
            .map(|x| network_timestep(&mut golden, &case.rule, x).unwrap().to_vec())
            .collect();

        let mut cycles = [0u64; 2];
        let mut standalone = 0u64;
        let mut overlap_ratio = 0.0;
        for (k, policy) in [SchedulePolicy::Overlapped, SchedulePolicy::Serial].into_iter().enumerate() {
            let mut acc = Accelerator::new(&case.hw, &case.state, &case.rule).unwrap();
            let opts = RunOptions {
                policy,
                record_events: false,
            };
            let report = match acc.run_stream(&case.inputs, &opts) {
                Ok(r) => r,
                Err(e) => {
                    s.mismatches.push(format!("case {seed} {policy:?}: {e}"));
                    continue;
                }
            };
            s.violations += report.ordering_violations.len();
            if report.outputs != outputs || acc.to_network_state() != golden {
                s.mismatches.push(format!("case {seed} {policy:?} ({:?})", case.config));
            }
            cycles[k] = report.counters.cycles;
            if policy == SchedulePolicy::Serial {
                standalone = report.spans.iter().map(|r| r.cycles()).sum();
            } else {
                overlap_ratio = report.counters.overlap_ratio();
            }
        }
        let c = case.config;
        if c.n_in * c.n_hidden >= 16 && c.n_hidden * c.n_out >= 16 {
            s.overlap_cases += 1;
            if cycles[0] >= standalone {
                s.overlap_failures.push(format!("case {seed}: {} >= {standalone}", cycles[0]));
            }
            s.cycle_ratios.push(cycles[0] as f64 / standalone as f64);
            s.overlap_ratios.push(overlap_ratio);
        }
    }
    s.elapsed = started.elapsed();
    s
}

fn golden_equivalence(s: &FuzzSummary) -> Verdict {
    let mut detail = format!(
        "{} cases x 2 schedules, {} mismatches, {:.1}s",
        s.cases,
        s.mismatches.len(),
        s.elapsed.as_secs_f64()
    );
    if let Some(first) = s.mismatches.first() {
        detail += &format!(", first: {first}");
    }
    verdict(s.mismatches.is_empty() && s.elapsed < Duration::from_secs(600), detail)
}

/// A read and a write of the same word in one cycle: the read must stall
/// exactly one cycle and then return the written value.
fn directed_same_cycle() -> Result<(), String> {
    let mut bank = MemoryBank::new(BankId::Weight(0), 8, 4);
    let old = vec![Half::from_f64(0.25); 4];
    let new = vec![Half::from_f64(-3.5); 4];
    bank.load_word(5, &old);
    let read = BankRequest {
        id: 0,
        addr: 5,
        access: Access::Read {
            min_version: None,
            consumer: true,
        },
    };
    let write = BankRequest {
        id: 1,
        addr: 5,
        access: Access::Write {
            data: new.clone(),
            min_consumers: None,
        },
    };
    let mut stalls = 0;
    let mut pending = vec![read, write];
    for cycle in 0..4 {
        let out = bank.arbitrate(cycle, &pending).map_err(|e| e.to_string())?;
        let mut next = Vec::new();
        for (req, o) in pending.iter().zip(out) {
            match o {
                Outcome::Stalled(StallReason::WritePriority) => {
                    stalls += 1;
                    next.push(req.clone());
                }
                Outcome::Stalled(r) => return Err(format!("unexpected stall {r:?}")),
                Outcome::ReadGranted { data, .. } => {
                    if data != new {
                        return Err(format!("read returned {data:?}"));
                    }
                }
                Outcome::WriteGranted { .. } => {}
            }
        }
        if next.is_empty() {
            return if stalls == 1 {
                Ok(())
            } else {
                Err(format!("{stalls} stall cycles"))
            };
        }
        pending = next;
    }
    Err("read never granted".into())
}

fn raw_safety(s: &FuzzSummary) -> Verdict {
    let directed = directed_same_cycle();
    verdict(
        s.violations == 0 && directed.is_ok(),
        format!(
            "{} stale accesses over the corpus; directed same-cycle test: {}",
            s.violations,
            match &directed {
                Ok(()) => "one stall, new value".to_string(),
                Err(e) => e.clone(),
            }
        ),
    )
}

fn pipeline_overlap(s: &FuzzSummary) -> Verdict {
    let mut detail = format!(
        "{}/{} eligible cases faster than the standalone sum; median scheduled/standalone {:.3}, median share of cycles with concurrent units {:.3}",
        s.overlap_cases - s.overlap_failures.len(),
        s.overlap_cases,
        median(s.cycle_ratios.clone()),
        median(s.overlap_ratios.clone()),
    );
    if let Some(first) = s.overlap_failures.first() {
        detail += &format!(", first failure: {first}");
    }
    verdict(s.overlap_cases > 0 && s.overlap_failures.is_empty(), detail)
}

// ---------------------------------------------------------------------------
// 5. Latency model

fn latency_model() -> Verdict {
    let hw = HardwareConfig::default();
    let unit_ok = hw.cycles_to_us(1600) == 8.0;
    let control = NetworkConfig::new(27, 128, 8);
    let opts = BenchOptions {
        frames: 8,
        ..BenchOptions::default()
    };
    let c = run_benchmark(control, &hw, &opts).unwrap();
    let us = hw.cycles_to_us(1) * c.cycles_per_timestep();
    let mnist = run_benchmark(NetworkConfig::new(784, 1024, 10), &hw, &BenchOptions::default()).unwrap();
    let fps = mnist.report.fps;
    for a in assumptions(&hw) {
        println!("    assumption: {a}");
    }
    let within = |x: f64, target: f64| x >= target / 4.0 && x <= target * 4.0;
    verdict(
        unit_ok && within(us, 8.0) && within(fps, 32.0),
        format!(
            "{}-{}-{}: {:.1} cycles = {us:.2} us per timestep (target 8 us); 784-1024-10: {:.1} FPS at {} timesteps/frame (target 32)",
            control.n_in,
            control.n_hidden,
            control.n_out,
            c.cycles_per_timestep(),
            fps,
            BenchOptions::default().timesteps_per_frame
        ),
    )
}

// ---------------------------------------------------------------------------
// 6. Adaptation after a perturbation

fn workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn episode_rewards(rule: &PlasticityRule, net: NetworkConfig, seed: u64, variant: usize) -> Vec<f64> {
    let mut env = TaskKind::Reaching.make(None, Some(Perturbation::WEAK_JOINT));
    let backend = FunctionalBackend::new(NetworkState::new(net).unwrap(), rule.clone()).unwrap();
    let mut ctl = Controller::new(backend, TaskKind::Reaching, 16);
    run_episode(env.as_mut(), &mut ctl, seed, variant, false).unwrap().rewards
}

fn adaptation() -> Verdict {
    let started = Instant::now();
    let mut cfg = TrainConfig::preset(TaskKind::Reaching, 40, 32, 0);
    cfg.workers = workers();
    let evolved = train_rule(&cfg, None).unwrap().rule;
    let net = cfg.spec.net;
    let zero = PlasticityRule::zeros(&net);
    let at = Perturbation::WEAK_JOINT.at_step;
    let (mut evolved_ratio, mut zero_ratio) = (Vec::new(), Vec::new());
    let variants = TaskKind::Reaching.eval_variants();
    for k in 0..10 {
        let (seed, variant) = (5000 + k as u64, variants[k % variants.len()]);
        let (pre, post) = recovery(&episode_rewards(&evolved, net, seed, variant), at, 50, 200);
        let (_, zero_post) = recovery(&episode_rewards(&zero, net, seed, variant), at, 50, 200);
        // Both ratios are taken against the evolved rule's pre-perturbation
        // progress; the zero rule makes none of its own.
        let ratio = |post: f64| if pre > 0.0 { post / pre } else { 0.0 };
        evolved_ratio.push(ratio(post));
        zero_ratio.push(ratio(zero_post));
    }
    let (e, z) = (median(evolved_ratio), median(zero_ratio));
    let elapsed = started.elapsed();
    verdict(
        e >= 0.5 && z < 0.1 && elapsed < Duration::from_secs(1800),
        format!(
            "median recovery over 10 seeds: evolved {e:.3}, zero rule {z:.3}; {:.0}s",
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------
// 7. Generalization to held-out directions

fn generalization() -> Verdict {
    let mut cfg = TrainConfig::preset(TaskKind::PointMass, 40, 32, 0);
    cfg.workers = workers();
    let genome = train_rule(&cfg, None).unwrap().state.mu;
    let returns = |variants: Vec<usize>| {
        let spec = EvalSpec {
            variants,
            ..cfg.spec.clone()
        };
        evaluate_candidate(&spec, &genome, 77, 0).unwrap().returns
    };
    let trained = median(returns(TaskKind::PointMass.train_variants()));
    let held = median(returns(TaskKind::PointMass.eval_variants()));
    verdict(
        trained > 0.0 && held >= 0.7 * trained,
        format!(
            "median return: trained directions {trained:.3}, held-out {held:.3} (ratio {:.3})",
            held / trained
        ),
    )
}

// ---------------------------------------------------------------------------
// 8. PEPG mechanics

fn mirrored(mu: &[f64], eps: Vec<Vec<f64>>) -> Population {
    let genomes = eps
        .iter()
        .flat_map(|e| {
            [
                mu.iter().zip(e).map(|(m, e)| m + e).collect::<Vec<_>>(),
                mu.iter().zip(e).map(|(m, e)| m - e).collect(),
            ]
        })
        .collect();
    Population { eps, genomes }
}

fn pepg_mechanics() -> Verdict {
    let mut notes = Vec::new();

    // Mirrored pairs with equal fitness leave the mean untouched.
    let mu = vec![0.3, -0.7, 1e-3];
    let mut es = EvolutionState::new(3, 1, EsParams::default());
    es.mu = mu.clone();
    let pop = es.sample_population(6).unwrap();
    es.pepg_update(&pop, &[4.0, 4.0, -1.0, -1.0, 2.5, 2.5]).unwrap();
    if es.mu != mu {
        notes.push(format!("antithetic: mu moved to {:?}", es.mu));
    }

    // Fitness equal to the baseline leaves sigma untouched.
    let sigma = vec![0.05, 0.02, 0.3];
    let mut es = EvolutionState::new(3, 2, EsParams::default());
    es.sigma = sigma.clone();
    for _ in 0..3 {
        let pop = es.sample_population(8).unwrap();
        es.pepg_update(&pop, &[1.25; 8]).unwrap();
    }
    if es.sigma != sigma {
        notes.push(format!("baseline-neutral: sigma moved to {:?}", es.sigma));
    }

    // Two pairs worked by hand; see the evolution tests for the arithmetic.
    let mut es = EvolutionState::new(2, 7, EsParams::default());
    es.mu = vec![0.1, -0.2];
    es.sigma = vec![0.05, 0.1];
    let pop = mirrored(&es.mu, vec![vec![0.01, -0.05], vec![-0.02, 0.1]]);
    es.pepg_update(&pop, &[3.0, 1.0, 0.0, 2.0]).unwrap();
    let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-15);
    if !close(&es.mu, &[0.101, -0.205]) || !close(&es.sigma, &[0.04995, 0.099375]) {
        notes.push(format!("two-pair update: mu {:?} sigma {:?}", es.mu, es.sigma));
    }

    let mut cfg = TrainConfig::preset(TaskKind::PointMass, 5, 8, 3);
    cfg.spec.net = TaskKind::PointMass.network_config(8);
    cfg.spec.episode_len = Some(20);
    let mut log = Vec::new();
    let out = train_rule(&cfg, Some(&mut log)).unwrap();
    let best: Vec<f64> = out.state.history.iter().map(|h| h.best).collect();
    let logged = String::from_utf8(log).unwrap().lines().count() - 1;
    if best.len() != 5 || logged != 5 || best.windows(2).any(|w| w[1] < w[0]) {
        notes.push(format!("smoke run best-so-far {best:?}, {logged} log rows"));
    }
    let detail = if notes.is_empty() {
        format!("unit cases exact; smoke best-so-far {best:.3?}")
    } else {
        notes.join("; ")
    };
    verdict(notes.is_empty(), detail)
}

// ---------------------------------------------------------------------------
// 9. Replay determinism

fn fflp(args: &[&str]) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_fflp"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(())
    } else {
        Err(format!(
            "fflp {} exited {:?}: {}",
            args.join(" "),
            o.status.code(),
            String::from_utf8_lossy(&o.stderr)
        ))
    }
}

/// Blanks the wall-clock column, the only field that legitimately differs.
fn without_wallclock(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes)
        .lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head).to_string() + "\n")
        .collect()
}

fn compare_dirs(a: &Path, b: &Path) -> Result<usize, String> {
    let mut n = 0;
    for entry in std::fs::read_dir(a).map_err(|e| e.to_string())? {
        let entry = entry.map_err(|e| e.to_string())?;
        let name = entry.file_name().into_string().unwrap();
        if name == "manifest.json" || entry.path().is_dir() {
            continue;
        }
        let x = std::fs::read(entry.path()).map_err(|e| e.to_string())?;
        let y = std::fs::read(b.join(&name)).map_err(|e| format!("{name}: {e}"))?;
        let same = if name == "train_log.csv" {
            without_wallclock(&x) == without_wallclock(&y)
        } else {
            x == y
        };
        if !same {
            return Err(format!("{} differs", a.join(&name).display()));
        }
        n += 1;
    }
    Ok(n)
}

fn replay_determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let runs: Vec<(&str, Vec<String>)> = vec![
        ("data", vec!["gen-dataset", "--count", "80", "--seed", "4"]),
        (
            "train",
            vec!["train-rule", "--task", "velocity", "--hidden", "6", "--generations", "3", "--pop", "6", "--episode-len", "20", "--seed", "9"],
        ),
        (
            "adapt",
            vec!["adapt", "--rule", &format!("{}/rule.fflp", p("train")), "--task", "velocity", "--steps", "30", "--seed", "2"],
        ),
        (
            "adapt-cycle",
            vec!["adapt", "--rule", &format!("{}/rule.fflp", p("train")), "--task", "velocity", "--steps", "10", "--backend", "cycle", "--check"],
        ),
        ("bench", vec!["bench", "--net", "27,128,8", "--frames", "2", "--trace-frames", "1"]),
        (
            "classify",
            vec!["train-rule", "--task", "mini_classify", "--hidden", "8", "--generations", "1", "--pop", "2", "--episode-len", "10"],
        ),
    ]
    .into_iter()
    .map(|(name, args)| (name, args.into_iter().map(String::from).collect()))
    .collect();

    let mut files = 0;
    for (name, mut args) in runs {
        args.extend(["--out-dir".to_string(), p(name)]);
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let replayed = p(&format!("{name}-replay"));
        let result = fflp(&args)
            .and_then(|()| fflp(&["replay", &format!("{}/manifest.json", p(name)), "--out-dir", &replayed]))
            .and_then(|()| compare_dirs(&dir.path().join(name), Path::new(&replayed)));
        match result {
            Ok(n) => files += n,
            Err(e) => return verdict(false, format!("{name}: {e}")),
        }
    }
    verdict(files > 0, format!("6 commands replayed, {files} output files identical"))
}

// ---------------------------------------------------------------------------

fn main() {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: u32| selected.is_empty() || selected.contains(&n);
    let mut fuzz: Option<FuzzSummary> = None;
    let mut failed = 0;
    for n in 1..=9u32 {
        if !wanted(n) {
            continue;
        }
        if (2..=4).contains(&n) && fuzz.is_none() {
            fuzz = Some(run_fuzz_corpus());
        }
        let v = match n {
            1 => fp16_fidelity(),
            2 => golden_equivalence(fuzz.as_ref().unwrap()),
            3 => raw_safety(fuzz.as_ref().unwrap()),
            4 => pipeline_overlap(fuzz.as_ref().unwrap()),
            5 => latency_model(),
            6 => adaptation(),
            7 => generalization(),
            8 => pepg_mechanics(),
            _ => replay_determinism(),
        };
        if !v.pass {
            failed += 1;
        }
        println!("criterion {n}: {} - {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}

use crate::error::CliError;
use crate::manifest::{digest_input, read_manifest, FileDigest, Outputs, MANIFEST_NAME, TRAIN_LOG};
use crate::{AdaptArgs, BackendKind, BenchArgs, Command, DatasetArgs, Policy, ReplayArgs, TrainArgs};
use fflp::accel::trace::export_lines;
use fflp::accel::{assumptions, run_benchmark, BenchOptions, Counters, HardwareConfig, LatencyReport, RunOptions, SchedulePolicy};
use fflp::evolution::{train_rule, TrainConfig};
use fflp::snn::{read_model, ModelFile, NetworkConfig, NetworkState};
use fflp::tasks::classify::{Dataset, MiniClassify, EPISODE_LEN};
use fflp::tasks::{
    reaching, run_episode, Backend, Controller, CycleBackend, EpisodeResult, Environment, FunctionalBackend,
    Perturbation, TaskKind,
};
use serde_json::json;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

pub fn execute(cmd: &Command) -> Result<(), CliError> {
    let cmd = absolutize(cmd.clone())?;
    match &cmd {
        Command::TrainRule(a) => train(a, &cmd),
        Command::Adapt(a) => adapt(a, &cmd),
        Command::Bench(a) => bench(a, &cmd),
        Command::GenDataset(a) => gen_dataset(a, &cmd),
        Command::Replay(a) => replay(a),
    }
}

fn absolute(p: &Path) -> Result<PathBuf, CliError> {
    std::path::absolute(p).map_err(|e| CliError::io(p, e))
}

/// Makes every path in the command absolute so the manifest can be replayed
/// from any working directory.
fn absolutize(mut cmd: Command) -> Result<Command, CliError> {
    match &mut cmd {
        Command::TrainRule(a) => {
            a.out_dir = absolute(&a.out_dir)?;
            if let Some(p) = &mut a.net {
                *p = absolute(p)?;
            }
        }
        Command::Adapt(a) => {
            a.out_dir = absolute(&a.out_dir)?;
            a.rule = absolute(&a.rule)?;
            for p in [&mut a.hwconfig, &mut a.dataset].into_iter().flatten() {
                *p = absolute(p)?;
            }
        }
        Command::Bench(a) => {
            a.out_dir = absolute(&a.out_dir)?;
            if let Some(p) = &mut a.hwconfig {
                *p = absolute(p)?;
            }
            if parse_sizes(&a.net).is_none() {
                a.net = absolute(Path::new(&a.net))?.display().to_string();
            }
        }
        Command::GenDataset(a) => a.out_dir = absolute(&a.out_dir)?,
        Command::Replay(_) => {}
    }
    Ok(cmd)
}

fn read_input(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

fn load_net(path: &Path) -> Result<NetworkConfig, CliError> {
    let text = String::from_utf8(read_input(path)?)
        .map_err(|_| CliError::Input(format!("{}: not UTF-8", path.display())))?;
    let cfg: NetworkConfig =
        serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    cfg.validate().map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok(cfg)
}

fn load_hw(path: Option<&Path>) -> Result<HardwareConfig, CliError> {
    match path {
        None => Ok(HardwareConfig::default()),
        Some(p) => {
            let text = String::from_utf8(read_input(p)?)
                .map_err(|_| CliError::Input(format!("{}: not UTF-8", p.display())))?;
            HardwareConfig::from_json(&text).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))
        }
    }
}

fn parse_sizes(s: &str) -> Option<NetworkConfig> {
    let v: Vec<usize> = s.split(',').map(|x| x.trim().parse().ok()).collect::<Option<_>>()?;
    match v[..] {
        [a, b, c] => Some(NetworkConfig::new(a, b, c)),
        _ => None,
    }
}

fn to_json(value: &impl serde::Serialize) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s.into_bytes()
}

fn train(a: &TrainArgs, cmd: &Command) -> Result<(), CliError> {
    let started = Instant::now();
    if a.workers == 0 {
        return Err(CliError::Input("--workers must be at least 1".into()));
    }
    let mut inputs = Vec::new();
    let mut cfg = TrainConfig::preset(a.task, a.generations, a.pop, a.seed);
    if let Some(p) = &a.net {
        cfg.spec.net = load_net(p)?;
        inputs.push(digest_input(p)?);
    } else if let Some(h) = a.hidden {
        cfg.spec.net = a.task.network_config(h);
    }
    cfg.spec.episode_len = a.episode_len;
    cfg.workers = a.workers;
    cfg.es.lr_mu = a.lr_mu;

    let mut out = Outputs::create(&a.out_dir)?;
    let log_path = out.dir.join(TRAIN_LOG);
    let file = fs::File::create(&log_path).map_err(|e| CliError::io(&log_path, e))?;
    let mut log = BufWriter::new(file);
    let outcome = train_rule(&cfg, Some(&mut log))?;
    log.flush().map_err(|e| CliError::io(&log_path, e))?;
    drop(log);
    out.record(TRAIN_LOG, &read_input(&log_path)?);

    let model = ModelFile::rule_only(cfg.spec.net, outcome.rule);
    out.write("rule.fflp", &model.to_bytes())?;
    out.write("es_state.json", &to_json(&outcome.state))?;
    out.write("train_config.json", &to_json(&cfg))?;
    out.finish(cmd.clone(), vec![a.seed], inputs, started)?;

    let best = outcome.state.history.last().map_or(f64::NAN, |h| h.best);
    println!(
        "trained {} for {} generations: best fitness {best}; rule written to {}",
        a.task,
        a.generations,
        a.out_dir.join("rule.fflp").display()
    );
    Ok(())
}

struct Rollout {
    episode: EpisodeResult,
    state: NetworkState,
    cycle: Option<(Counters, usize)>,
}

fn make_env(a: &AdaptArgs, perturbation: Option<Perturbation>) -> Result<Box<dyn Environment>, CliError> {
    if a.task == TaskKind::MiniClassify {
        let data = match &a.dataset {
            Some(p) => Dataset::from_bytes(&read_input(p)?)
                .map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?,
            None => Dataset::generate(fflp::tasks::classify::DEFAULT_SIZE, 0),
        };
        return Ok(Box::new(MiniClassify::new(data, a.steps.unwrap_or(EPISODE_LEN))));
    }
    Ok(a.task.make(a.steps, perturbation))
}

fn rollout(
    a: &AdaptArgs,
    backend: BackendKind,
    model: &ModelFile,
    hw: &HardwareConfig,
    perturbation: Option<Perturbation>,
    variant: usize,
) -> Result<Rollout, CliError> {
    let mut env = make_env(a, perturbation)?;
    let net = NetworkState::new(model.config).map_err(|e| CliError::Input(e.to_string()))?;
    match backend {
        BackendKind::Functional => {
            let b = FunctionalBackend::new(net, model.rule.clone())?;
            let mut ctl = Controller::new(b, a.task, a.window);
            let episode = run_episode(env.as_mut(), &mut ctl, a.seed, variant, true)?;
            Ok(Rollout {
                episode,
                state: ctl.backend.net,
                cycle: None,
            })
        }
        BackendKind::Cycle => {
            let b = CycleBackend::new(hw, &net, &model.rule, RunOptions::default())?;
            let mut ctl = Controller::new(b, a.task, a.window);
            let episode = run_episode(env.as_mut(), &mut ctl, a.seed, variant, true)?;
            Ok(Rollout {
                episode,
                state: ctl.backend.network(),
                cycle: Some((ctl.backend.counters, ctl.backend.ordering_violations)),
            })
        }
    }
}

fn episode_csv(ep: &EpisodeResult) -> String {
    let Some(first) = ep.rows.first() else {
        return "step,reward\n".into();
    };
    let mut out = String::from("step,reward");
    for i in 0..first.obs.len() {
        out.push_str(&format!(",obs_{i}"));
    }
    for i in 0..first.action.len() {
        out.push_str(&format!(",action_{i}"));
    }
    let classify = first.correct.is_some();
    if classify {
        out.push_str(",correct");
    }
    out.push('\n');
    for r in &ep.rows {
        out.push_str(&format!("{},{}", r.step, r.reward));
        for x in r.obs.iter().chain(&r.action) {
            out.push_str(&format!(",{x}"));
        }
        if let Some(c) = r.correct {
            out.push_str(if c { ",1" } else { ",0" });
        }
        out.push('\n');
    }
    out
}

fn counters_json(c: &Counters) -> serde_json::Value {
    let stalls: serde_json::Map<String, serde_json::Value> = c
        .stalls_by_reason
        .iter()
        .map(|(k, v)| (k.as_str().to_string(), json!(v)))
        .collect();
    json!({
        "cycles": c.cycles,
        "stall_events": c.stall_events,
        "stall_cycles": c.stall_cycles,
        "overlap_cycles": c.overlap_cycles,
        "read_grants": c.read_grants,
        "write_grants": c.write_grants,
        "weight_fetches": c.weight_fetches,
        "stalls_by_reason": stalls,
    })
}

fn adapt(a: &AdaptArgs, cmd: &Command) -> Result<(), CliError> {
    let started = Instant::now();
    if a.window == 0 {
        return Err(CliError::Input("--window must be at least 1".into()));
    }
    let mut inputs = vec![digest_input(&a.rule)?];
    let model = read_model(&read_input(&a.rule)?).map_err(|e| CliError::Input(format!("{}: {e}", a.rule.display())))?;
    let want = a.task.network_config(model.config.n_hidden);
    if (want.n_in, want.n_out) != (model.config.n_in, model.config.n_out) {
        return Err(CliError::Input(format!(
            "rule is for a {}-{}-{} network; {} needs {} inputs and {} outputs",
            model.config.n_in, model.config.n_hidden, model.config.n_out, a.task, want.n_in, want.n_out
        )));
    }
    let perturbation = Perturbation::from_name(&a.perturb).expect("validated by the parser");
    if perturbation.is_some() && a.task != TaskKind::Reaching {
        return Err(CliError::Input(format!("--perturb applies to reaching only, not {}", a.task)));
    }
    let hw = load_hw(a.hwconfig.as_deref())?;
    for p in [&a.hwconfig, &a.dataset].into_iter().flatten() {
        inputs.push(digest_input(p)?);
    }
    let variant = a.variant.unwrap_or(a.task.eval_variants()[0]);

    let main = rollout(a, a.backend, &model, &hw, perturbation, variant)?;
    if a.check {
        let other = match a.backend {
            BackendKind::Functional => BackendKind::Cycle,
            BackendKind::Cycle => BackendKind::Functional,
        };
        let twin = rollout(a, other, &model, &hw, perturbation, variant)?;
        let cycle_run = if main.cycle.is_some() { &main } else { &twin };
        if let Some((_, violations)) = cycle_run.cycle {
            if violations > 0 {
                return Err(CliError::Failed(format!("check failed: {violations} ordering violations")));
            }
        }
        if let Some(step) = main.episode.rows.iter().zip(&twin.episode.rows).position(|(x, y)| x != y) {
            return Err(CliError::Failed(format!("check failed: backends diverge at step {step}")));
        }
        if main.state != twin.state {
            return Err(CliError::Failed("check failed: final network states differ".into()));
        }
        eprintln!(
            "check: functional and cycle backends agree over {} steps (state {})",
            main.episode.rows.len(),
            &main.state.state_hash()[..16]
        );
    }

    let ep = &main.episode;
    let mut summary = json!({
        "task": a.task.name(),
        "variant": variant,
        "backend": a.backend,
        "steps": ep.rewards.len(),
        "return": ep.total,
        "mean_reward": if ep.rewards.is_empty() { 0.0 } else { ep.total / ep.rewards.len() as f64 },
        "failed": ep.failed,
        "final_state_sha256": main.state.state_hash(),
        "weight_abs_mean": main.state.layers.iter().map(|l| {
            let w = l.weights.as_slice();
            w.iter().map(|x| x.to_f64().abs()).sum::<f64>() / w.len().max(1) as f64
        }).collect::<Vec<_>>(),
    });
    if a.task == TaskKind::MiniClassify {
        summary["accuracy"] = json!(ep.accuracy());
    }
    if let Some(p) = perturbation {
        if ep.rewards.len() > p.at_step {
            let (pre, post) = reaching::recovery(&ep.rewards, p.at_step, 50, 200);
            summary["recovery"] = json!({
                "perturb": a.perturb,
                "at_step": p.at_step,
                "pre_progress": pre,
                "post_progress": post,
                "ratio": if pre > 0.0 { json!(post / pre) } else { serde_json::Value::Null },
            });
        }
    }

    let mut out = Outputs::create(&a.out_dir)?;
    out.write("episode.csv", episode_csv(ep).as_bytes())?;
    out.write("summary.json", &to_json(&summary))?;
    let adapted = ModelFile {
        config: model.config,
        weights: main.state.layers.clone().map(|l| l.weights),
        rule: model.rule.clone(),
    };
    out.write("adapted.fflp", &adapted.to_bytes())?;
    if let Some((counters, violations)) = &main.cycle {
        let report = LatencyReport::from_counters(&hw, counters, ep.rewards.len() as u64);
        let latency = json!({
            "hardware": hw,
            "control_steps": ep.rewards.len(),
            "timesteps": ep.rewards.len() * a.window,
            "report": report,
            "us_per_control_step": report.us / ep.rewards.len().max(1) as f64,
            "counters": counters_json(counters),
            "ordering_violations": violations,
            "assumptions": assumptions(&hw),
        });
        out.write("latency.json", &to_json(&latency))?;
    }
    out.finish(cmd.clone(), vec![a.seed], inputs, started)?;
    if a.report {
        print!("{}", String::from_utf8(to_json(&summary)).expect("utf-8"));
    } else {
        println!("{} variant {variant}: return {} over {} steps", a.task, ep.total, ep.rewards.len());
    }
    Ok(())
}

fn bench(a: &BenchArgs, cmd: &Command) -> Result<(), CliError> {
    let started = Instant::now();
    let mut inputs = Vec::new();
    let net = match parse_sizes(&a.net) {
        Some(c) => {
            c.validate().map_err(|e| CliError::Input(e.to_string()))?;
            c
        }
        None => {
            let p = Path::new(&a.net);
            inputs.push(digest_input(p)?);
            load_net(p)?
        }
    };
    let hw = load_hw(a.hwconfig.as_deref())?;
    if let Some(p) = &a.hwconfig {
        inputs.push(digest_input(p)?);
    }
    if !(0.0..=1.0).contains(&a.input_rate) {
        return Err(CliError::Input("--input-rate must be within [0, 1]".into()));
    }
    let opts = BenchOptions {
        frames: a.frames,
        timesteps_per_frame: a.timesteps,
        input_rate: a.input_rate,
        seed: a.seed,
        policy: match a.policy {
            Policy::Overlapped => SchedulePolicy::Overlapped,
            Policy::Serial => SchedulePolicy::Serial,
        },
        trace_frames: a.trace_frames,
    };
    let r = run_benchmark(net, &hw, &opts)?;
    let report = json!({
        "network": net,
        "hardware": hw,
        "frames": a.frames,
        "timesteps_per_frame": a.timesteps,
        "policy": a.policy,
        "report": r.report,
        "cycles_per_timestep": r.cycles_per_timestep(),
        "us_per_timestep": r.cycles_per_timestep() / hw.clock_mhz as f64,
        // One control step spans a frame of `timesteps_per_frame` timesteps.
        "us_per_control_step": r.cycles_per_timestep() * a.timesteps as f64 / hw.clock_mhz as f64,
        "input_spike_rate": r.input_spike_rate,
        "hidden_spike_rate": r.hidden_spike_rate,
        "counters": counters_json(&r.counters),
        "assumptions": assumptions(&hw),
    });
    let mut out = Outputs::create(&a.out_dir)?;
    let text = to_json(&report);
    out.write("report.json", &text)?;
    if a.trace_frames > 0 {
        out.write("trace.csv", export_lines(&r.events).as_bytes())?;
    }
    out.finish(cmd.clone(), vec![a.seed], inputs, started)?;
    print!("{}", String::from_utf8(text).expect("utf-8"));
    Ok(())
}

fn gen_dataset(a: &DatasetArgs, cmd: &Command) -> Result<(), CliError> {
    let started = Instant::now();
    let data = Dataset::generate(a.count, a.seed);
    let mut out = Outputs::create(&a.out_dir)?;
    out.write("glyphs.ffds", &data.to_bytes())?;
    out.finish(cmd.clone(), vec![a.seed], Vec::new(), started)?;
    println!("{} records written to {}", data.len(), a.out_dir.join("glyphs.ffds").display());
    Ok(())
}

fn replay(a: &ReplayArgs) -> Result<(), CliError> {
    let manifest = read_manifest(&a.manifest)?;
    for input in &manifest.inputs {
        let now = digest_input(&input.path)?;
        if now.sha256 != input.sha256 {
            return Err(CliError::Input(format!("input {} changed since the run", input.path.display())));
        }
    }
    let out_dir = match &a.out_dir {
        Some(d) => absolute(d)?,
        None => absolute(&a.manifest)?
            .parent()
            .unwrap_or(Path::new("."))
            .join("replay"),
    };
    let mut cmd = manifest.command.clone();
    match &mut cmd {
        Command::TrainRule(x) => x.out_dir = out_dir.clone(),
        Command::Adapt(x) => x.out_dir = out_dir.clone(),
        Command::Bench(x) => x.out_dir = out_dir.clone(),
        Command::GenDataset(x) => x.out_dir = out_dir.clone(),
        Command::Replay(_) => return Err(CliError::Input("cannot replay a replay".into())),
    }
    execute(&cmd)?;
    let fresh = read_manifest(&out_dir.join(MANIFEST_NAME))?;
    let mut mismatches = 0;
    for FileDigest { path, sha256 } in &manifest.outputs {
        let now = fresh.outputs.iter().find(|f| &f.path == path);
        let same = now.is_some_and(|f| &f.sha256 == sha256);
        eprintln!("{} {}", if same { "same" } else { "DIFFERS" }, path.display());
        mismatches += !same as usize;
    }
    if fresh.outputs.len() != manifest.outputs.len() {
        mismatches += 1;
        eprintln!("output file sets differ");
    }
    if mismatches > 0 {
        return Err(CliError::Failed(format!("replay differs in {mismatches} file(s)")));
    }
    eprintln!("replay reproduced {} output file(s)", manifest.outputs.len());
    Ok(())
}

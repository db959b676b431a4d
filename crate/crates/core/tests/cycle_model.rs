use fflp::accel::memory::{BankId, StallReason};
use fflp::accel::trace::{export_lines, EngineKind, Phase, Stage};
use fflp::accel::{Accelerator, Counters, HardwareConfig, RunOptions, SchedulePolicy, UnitId};
use fflp::snn::{network_timestep, NetworkConfig, NetworkState, PlasticityRule};
use fflp::Half;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_case(config: NetworkConfig, seed: u64) -> (NetworkState, PlasticityRule) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = NetworkState::new(config).unwrap();
    for layer in state.layers.iter_mut() {
        let scale = 3.0 / layer.n_pre() as f64;
        for w in layer.weights.as_mut_slice() {
            *w = Half::from_f64(rng.random_range(-0.5..1.5) * scale);
        }
    }
    let genome: Vec<f64> = (0..PlasticityRule::genome_len(&config))
        .map(|_| rng.random_range(-0.05..0.05))
        .collect();
    (state, PlasticityRule::from_genome(&config, &genome).unwrap())
}

fn random_inputs(n_in: usize, steps: usize, rate: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<bool>> {
    (0..steps)
        .map(|_| (0..n_in).map(|_| rng.random_bool(rate)).collect())
        .collect()
}

fn small_hw(pe: usize, lanes: usize) -> HardwareConfig {
    HardwareConfig {
        pe_count: pe,
        plasticity_lanes: lanes,
        ..HardwareConfig::default()
    }
}

/// Drives the golden model and the cycle model with the same streams and
/// compares full state after every stream.
fn check_equivalence(config: NetworkConfig, hw: &HardwareConfig, policy: SchedulePolicy, seed: u64) {
    let (mut golden, rule) = random_case(config, seed);
    let mut acc = Accelerator::new(hw, &golden, &rule).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
    let opts = RunOptions {
        policy,
        record_events: false,
    };
    for stream in 0..3 {
        let inputs = random_inputs(config.n_in, 1 + stream * 3, 0.4, &mut rng);
        let report = acc.run_stream(&inputs, &opts).unwrap();
        assert!(report.ordering_violations.is_empty(), "{:?}", &report.ordering_violations[..1]);
        for (t, x) in inputs.iter().enumerate() {
            let out = network_timestep(&mut golden, &rule, x).unwrap().to_vec();
            assert_eq!(report.outputs[t], out, "stream {stream} step {t}");
            assert_eq!(report.hidden[t], golden.layers[0].out_spikes);
        }
        let sim = acc.to_network_state();
        assert_eq!(sim, golden, "state after stream {stream}");
        assert_eq!(sim.state_hash(), golden.state_hash());
    }
}

#[test]
fn bit_exact_against_golden_model() {
    let shapes = [(3, 5, 2), (7, 9, 3), (16, 16, 16), (20, 33, 5), (1, 1, 1)];
    for (i, &(a, b, c)) in shapes.iter().enumerate() {
        for (pe, lanes) in [(4, 2), (4, 4), (8, 3), (16, 4)] {
            for policy in [SchedulePolicy::Overlapped, SchedulePolicy::Serial] {
                check_equivalence(NetworkConfig::new(a, b, c), &small_hw(pe, lanes), policy, i as u64 * 31 + pe as u64);
            }
        }
    }
}

#[test]
fn bit_exact_with_slow_pipelines() {
    let hw = HardwareConfig {
        pe_count: 4,
        plasticity_lanes: 2,
        mem_read_latency: 3,
        fp_add_latency: 2,
        fp_mul_latency: 3,
        adder_tree_latency: 4,
        writeback_latency: 2,
        ..HardwareConfig::default()
    };
    check_equivalence(NetworkConfig::new(6, 10, 3), &hw, SchedulePolicy::Overlapped, 5);
}

#[test]
fn counters_equal_fold_over_records() {
    let config = NetworkConfig::new(12, 20, 6);
    let (state, rule) = random_case(config, 9);
    let mut acc = Accelerator::new(&small_hw(4, 2), &state, &rule).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let inputs = random_inputs(12, 8, 0.5, &mut rng);
    let opts = RunOptions {
        record_events: true,
        ..RunOptions::default()
    };
    let report = acc.run_stream(&inputs, &opts).unwrap();
    assert_eq!(Counters::from_events(&report.events), report.counters);
    assert!(report.counters.stall_events > 0);
    assert!(report.counters.overlap_cycles > 0);

    let text = export_lines(&report.events);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("cycle,engine,stage,layer,op,addr,stall_reason"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), report.events.len());
    assert!(rows.iter().all(|r| r.len() == 7));
    // stall events recounted from the text export
    let stalls = rows.iter().filter(|r| r[6] != "-").count() as u64;
    assert_eq!(stalls, report.counters.stall_events);
}

#[test]
fn forward_fetches_scale_with_spikes() {
    let config = NetworkConfig::new(10, 9, 4);
    let hw = small_hw(4, 4);
    let (state, rule) = random_case(config, 4);
    let mut acc = Accelerator::new(&hw, &state, &rule).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let inputs = random_inputs(10, 6, 0.3, &mut rng);
    let report = acc.run_stream(&inputs, &RunOptions::default()).unwrap();
    let tiles_h = 9usize.div_ceil(4) as u64;
    let tiles_o = 4usize.div_ceil(4) as u64;
    let expected: u64 = inputs
        .iter()
        .zip(&report.hidden)
        .map(|(x, h)| {
            let sx = x.iter().filter(|&&s| s).count() as u64;
            let sh = h.iter().filter(|&&s| s).count() as u64;
            sx * tiles_h + sh * tiles_o
        })
        .sum();
    assert_eq!(report.counters.weight_fetches, expected);
}

#[test]
fn plasticity_sweep_of_single_synapse_matches_latency_sum() {
    // 1-1-1 network under the serial schedule: each run executes alone.
    let hw = HardwareConfig::default();
    let config = NetworkConfig::new(1, 1, 1);
    let (state, rule) = random_case(config, 1);
    let mut acc = Accelerator::new(&hw, &state, &rule).unwrap();
    let opts = RunOptions {
        policy: SchedulePolicy::Serial,
        record_events: false,
    };
    let report = acc.run_stream(&[vec![true]], &opts).unwrap();
    let p1 = report.spans.iter().find(|s| s.unit == UnitId::P1).unwrap();
    // trace fetch of the pre word then the post word, then the delta datapath,
    // the weight add, the writeback register and the write cycle itself
    let expected = 1
        + hw.mem_read_latency
        + 2 * hw.fp_mul_latency
        + hw.adder_tree_latency
        + hw.fp_add_latency
        + hw.writeback_latency
        + 1;
    assert_eq!(p1.cycles(), expected);
}

#[test]
fn serial_total_is_sum_of_runs_and_overlap_is_faster() {
    let config = NetworkConfig::new(16, 64, 8);
    let hw = small_hw(8, 4);
    let (state, rule) = random_case(config, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let inputs = random_inputs(16, 6, 0.4, &mut rng);
    let mut serial = Accelerator::new(&hw, &state, &rule).unwrap();
    let s = serial
        .run_stream(
            &inputs,
            &RunOptions {
                policy: SchedulePolicy::Serial,
                record_events: false,
            },
        )
        .unwrap();
    let sum: u64 = s.spans.iter().map(|r| r.cycles()).sum();
    assert_eq!(s.counters.cycles, sum);
    assert_eq!(s.counters.overlap_cycles, 0);

    let mut over = Accelerator::new(&hw, &state, &rule).unwrap();
    let o = over.run_stream(&inputs, &RunOptions::default()).unwrap();
    assert!(o.counters.cycles < s.counters.cycles);
    assert_eq!(over.to_network_state(), serial.to_network_state());
}

#[test]
fn layer1_update_overlaps_layer2_forward() {
    let config = NetworkConfig::new(16, 48, 8);
    let (state, rule) = random_case(config, 8);
    let mut acc = Accelerator::new(&small_hw(8, 2), &state, &rule).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let inputs = random_inputs(16, 4, 0.5, &mut rng);
    let report = acc
        .run_stream(
            &inputs,
            &RunOptions {
                record_events: true,
                ..RunOptions::default()
            },
        )
        .unwrap();
    let together = report.events.iter().any(|e| {
        e.unit == UnitId::P1
            && e.phase == Phase::A
            && report
                .events
                .iter()
                .any(|f| f.cycle == e.cycle && f.unit == UnitId::F2 && f.timestep == e.timestep)
    });
    assert!(together, "no cycle with both layer-1 plasticity and layer-2 forward activity");
    assert!(report.spans.iter().any(|s| s.phase == Phase::Prologue));
    assert!(report.spans.iter().any(|s| s.phase == Phase::Epilogue));
}

#[test]
fn forward_weight_reads_wait_for_the_previous_update() {
    // Without the gate, layer-1 forward of the next timestep would read
    // weight words the current update has not written yet.
    let config = NetworkConfig::new(4, 32, 2);
    let (state, rule) = random_case(config, 12);
    let mut acc = Accelerator::new(&small_hw(4, 1), &state, &rule).unwrap();
    let inputs = vec![vec![true; 4]; 3];
    let report = acc
        .run_stream(
            &inputs,
            &RunOptions {
                record_events: true,
                ..RunOptions::default()
            },
        )
        .unwrap();
    assert!(report.ordering_violations.is_empty());
    let waits = report.events.iter().filter(|e| {
        e.unit.engine == EngineKind::Forward
            && e.stage == Stage::Psum
            && e.bank == BankId::Weight(0)
            && e.stall == Some(StallReason::NotValid)
    });
    assert!(waits.count() > 0);
}

#[test]
fn empty_stream_and_bad_inputs() {
    let config = NetworkConfig::new(3, 4, 2);
    let (state, rule) = random_case(config, 0);
    let mut acc = Accelerator::new(&HardwareConfig::default(), &state, &rule).unwrap();
    let r = acc.run_stream(&[], &RunOptions::default()).unwrap();
    assert_eq!(r.counters.cycles, 0);
    assert!(acc.run_stream(&[vec![true; 2]], &RunOptions::default()).is_err());
    assert_eq!(acc.to_network_state(), state);
}

#[test]
fn forward_run_is_fetches_plus_drain() {
    // Layer-2 forward alone under the serial schedule: the only trace traffic
    // is its own post-trace read-modify-write, so nothing contends.
    let hw = small_hw(4, 2);
    let config = NetworkConfig::new(6, 10, 7);
    let (state, rule) = random_case(config, 21);
    let mut acc = Accelerator::new(&hw, &state, &rule).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let inputs = random_inputs(6, 12, 0.6, &mut rng);
    let serial = RunOptions {
        policy: SchedulePolicy::Serial,
        record_events: false,
    };
    let report = acc.run_stream(&inputs, &serial).unwrap();
    let tiles = 7usize.div_ceil(4) as u64;
    let drain = hw.mem_read_latency + hw.fp_add_latency + hw.neuron_latency() + hw.trace_latency();
    let mut saw_active = false;
    for span in report.spans.iter().filter(|s| s.unit == UnitId::F2) {
        let spikes = report.hidden[span.timestep].iter().filter(|&&s| s).count() as u64;
        let expected = if spikes == 0 {
            tiles + hw.mem_read_latency + hw.neuron_latency() + hw.trace_latency()
        } else {
            saw_active = true;
            tiles * spikes + drain
        };
        assert_eq!(span.cycles(), expected, "timestep {}", span.timestep);
    }
    assert!(saw_active);
}

#[test]
fn zero_input_fetches_no_weights() {
    let config = NetworkConfig::new(5, 8, 3);
    let (state, rule) = random_case(config, 2);
    let mut acc = Accelerator::new(&small_hw(4, 4), &state, &rule).unwrap();
    let report = acc.run_stream(&vec![vec![false; 5]; 3], &RunOptions::default()).unwrap();
    assert_eq!(report.counters.weight_fetches, 0);
}

#[test]
fn zero_rule_still_pays_for_the_sweep() {
    let config = NetworkConfig::new(5, 8, 3);
    let (state, rule) = random_case(config, 2);
    let hw = small_hw(4, 2);
    let inputs = vec![vec![true; 5]; 2];
    let serial = RunOptions {
        policy: SchedulePolicy::Serial,
        record_events: false,
    };
    let plasticity_spans = |rule: &PlasticityRule| {
        let mut acc = Accelerator::new(&hw, &state, rule).unwrap();
        let report = acc.run_stream(&inputs, &serial).unwrap();
        let spans: Vec<u64> = report
            .spans
            .iter()
            .filter(|s| s.unit.engine == EngineKind::Plasticity)
            .map(|s| s.cycles())
            .collect();
        (spans, acc.to_network_state())
    };
    let zero = PlasticityRule::zeros(&config);
    let (zero_spans, after) = plasticity_spans(&zero);
    let (rule_spans, _) = plasticity_spans(&rule);
    assert_eq!(after.layers[0].weights, state.layers[0].weights);
    assert_eq!(after.layers[1].weights, state.layers[1].weights);
    assert_eq!(zero_spans, rule_spans);
}

#[test]
fn event_trace_is_deterministic() {
    let config = NetworkConfig::new(9, 14, 4);
    let (state, rule) = random_case(config, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let inputs = random_inputs(9, 5, 0.5, &mut rng);
    let opts = RunOptions {
        record_events: true,
        ..RunOptions::default()
    };
    let run = || {
        let mut acc = Accelerator::new(&small_hw(4, 2), &state, &rule).unwrap();
        export_lines(&acc.run_stream(&inputs, &opts).unwrap().events)
    };
    assert_eq!(run(), run());
}

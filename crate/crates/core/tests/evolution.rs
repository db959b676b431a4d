use fflp::evolution::{
    evaluate_candidate, evaluate_population, rank_shape, train_rule, EsParams, EvalSpec, EvolutionState, Population,
    TrainConfig,
};
use fflp::snn::PlasticityRule;
use fflp::tasks::TaskKind;
use proptest::prelude::*;

fn population(mu: &[f64], eps: Vec<Vec<f64>>) -> Population {
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

fn state(mu: Vec<f64>, sigma: Vec<f64>) -> EvolutionState {
    let mut es = EvolutionState::new(mu.len(), 7, EsParams::default());
    es.mu = mu;
    es.sigma = sigma;
    es
}

fn tiny_spec() -> EvalSpec {
    let mut spec = EvalSpec::for_task(TaskKind::PointMass);
    spec.net = TaskKind::PointMass.network_config(4);
    spec.episode_len = Some(10);
    spec.variants = vec![0, 3];
    spec
}

#[test]
fn hand_worked_two_pair_update() {
    let mut es = state(vec![0.1, -0.2], vec![0.05, 0.1]);
    let pop = population(&es.mu, vec![vec![0.01, -0.05], vec![-0.02, 0.1]]);
    // fitness [f+0, f-0, f+1, f-1] = [3, 1, 0, 2] ranks to
    // [0.5, -1/6, -0.5, 1/6]; the first baseline is the raw mean 1.5, which
    // sits exactly in the middle of the shaped scale (0).
    //   pair 0: (f+ - f-)/2 = 1/3,  (f+ + f-)/2 - b = 1/6
    //   pair 1: (f+ - f-)/2 = -1/3, (f+ + f-)/2 - b = -1/6
    // mu    += 0.2 * (1/3 * e0 - 1/3 * e1) / 2          = [0.001, -0.005]
    // sigma += 0.1 * (1/6) * (e0^2 - e1^2) / sigma / 2  = [-5e-5, -6.25e-4]
    es.pepg_update(&pop, &[3.0, 1.0, 0.0, 2.0]).unwrap();
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-15;
    assert!(close(es.mu[0], 0.101) && close(es.mu[1], -0.205), "{:?}", es.mu);
    assert!(close(es.sigma[0], 0.04995) && close(es.sigma[1], 0.099375), "{:?}", es.sigma);
    assert_eq!(es.generation, 1);
    assert_eq!(es.baseline, Some(1.5));
}

#[test]
fn equal_mirrored_fitness_leaves_mu_unchanged() {
    let mu = vec![0.3, -0.7, 1e-3];
    let mut es = state(mu.clone(), vec![0.05; 3]);
    let pop = es.sample_population(6).unwrap();
    es.pepg_update(&pop, &[4.0, 4.0, -1.0, -1.0, 2.5, 2.5]).unwrap();
    assert_eq!(es.mu, mu);
}

#[test]
fn fitness_at_baseline_leaves_sigma_unchanged() {
    let sigma = vec![0.05, 0.02, 0.3];
    let mut es = state(vec![0.0; 3], sigma.clone());
    for _ in 0..3 {
        let pop = es.sample_population(8).unwrap();
        es.pepg_update(&pop, &[1.25; 8]).unwrap();
        assert_eq!(es.sigma, sigma);
    }
}

#[test]
fn zero_sigma_population_is_all_mu() {
    let mu = vec![0.5, -0.25];
    let es = state(mu.clone(), vec![0.0, 0.0]);
    let pop = es.sample_population(4).unwrap();
    assert!(pop.genomes.iter().all(|g| *g == mu));
}

#[test]
fn sampling_is_reproducible_and_mirrored() {
    let es = EvolutionState::new(5, 42, EsParams::default());
    let a = es.sample_population(6).unwrap();
    assert_eq!(a, es.sample_population(6).unwrap());
    assert_eq!(a.eps.len(), 3);
    for (k, e) in a.eps.iter().enumerate() {
        for i in 0..5 {
            assert_eq!(a.genomes[2 * k][i], e[i]);
            assert_eq!(a.genomes[2 * k + 1][i], -e[i]);
        }
    }
    let mut next = es.clone();
    next.generation = 1;
    assert_ne!(next.sample_population(6).unwrap(), a);
}

#[test]
fn mismatched_pairs_are_rejected() {
    let mut es = EvolutionState::new(2, 0, EsParams::default());
    let pop = es.sample_population(4).unwrap();
    assert!(es.pepg_update(&pop, &[1.0, 2.0]).is_err());
    assert!(es.pepg_update(&pop, &[1.0, 2.0, 3.0]).is_err());
    assert_eq!(es.generation, 0);
}

/// Brute-force ranking: position = values strictly below plus half the
/// other equal values.
fn oracle_ranks(f: &[f64]) -> Vec<f64> {
    let n = f.len() as f64;
    f.iter()
        .map(|&x| {
            let below = f.iter().filter(|&&y| y < x).count() as f64;
            let ties = f.iter().filter(|&&y| y == x).count() as f64 - 1.0;
            (below + ties / 2.0) / (n - 1.0) - 0.5
        })
        .collect()
}

proptest! {
    #[test]
    fn ranks_match_brute_force(f in prop::collection::vec(-3i32..3, 2..12)) {
        let f: Vec<f64> = f.into_iter().map(f64::from).collect();
        prop_assert_eq!(rank_shape(&f), oracle_ranks(&f));
    }

    #[test]
    fn sigma_never_drops_below_the_floor(
        fit in prop::collection::vec(-100.0f64..100.0, 8),
        seed in any::<u64>(),
        gens in 1usize..6,
    ) {
        let params = EsParams { lr_sigma: 5.0, ..EsParams::default() };
        let mut es = EvolutionState::new(6, seed, params);
        for g in 0..gens {
            let pop = es.sample_population(8).unwrap();
            let f: Vec<f64> = fit.iter().map(|x| x * (g as f64 + 1.0)).collect();
            es.pepg_update(&pop, &f).unwrap();
            prop_assert!(es.sigma.iter().all(|&s| s >= params.sigma_min));
        }
    }

    #[test]
    fn pair_order_does_not_change_the_update(
        fit in prop::collection::vec(-10.0f64..10.0, 10),
        seed in any::<u64>(),
        rot in 1usize..5,
    ) {
        let base = EvolutionState::new(4, seed, EsParams::default());
        let pop = base.sample_population(10).unwrap();
        let mut a = base.clone();
        a.pepg_update(&pop, &fit).unwrap();

        let mut eps = pop.eps.clone();
        eps.rotate_left(rot);
        let shuffled = population(&base.mu, eps);
        let mut f2: Vec<[f64; 2]> = fit.chunks(2).map(|c| [c[0], c[1]]).collect();
        f2.rotate_left(rot);
        let mut b = base.clone();
        b.pepg_update(&shuffled, &f2.concat()).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn zero_rule_scores_like_doing_nothing() {
    let mut spec = EvalSpec::for_task(TaskKind::Reaching);
    spec.episode_len = Some(120);
    let zero = vec![0.0; spec.genome_len()];
    let report = evaluate_candidate(&spec, &zero, 11, 0).unwrap();

    // A silent network decodes to the zero action every step.
    let mut env = TaskKind::Reaching.make(spec.episode_len, spec.perturbation);
    let mut expected = Vec::new();
    for &v in &spec.variants {
        env.reset(11, v).unwrap();
        let mut total = 0.0;
        for _ in 0..env.episode_len() {
            total += env.step(&[0.0, 0.0]).unwrap().reward;
        }
        expected.push(total);
    }
    assert_eq!(report.returns, expected);
    assert!(!report.failed);
    assert_eq!(evaluate_candidate(&spec, &zero, 11, 0).unwrap(), report);
}

#[test]
fn genome_length_is_checked() {
    let spec = tiny_spec();
    assert!(evaluate_candidate(&spec, &[0.0; 3], 0, 0).is_err());
}

#[test]
fn runaway_weights_score_the_floor() {
    let spec = tiny_spec();
    let genome = vec![60000.0; spec.genome_len()];
    let r = evaluate_candidate(&spec, &genome, 0, 0).unwrap();
    assert!(r.failed);
    assert_eq!(r.fitness, TaskKind::PointMass.floor(10));
}

#[test]
fn worker_count_does_not_change_results() {
    let spec = tiny_spec();
    let es = EvolutionState::new(spec.genome_len(), 3, EsParams { sigma_init: 0.3, ..EsParams::default() });
    let pop = es.sample_population(6).unwrap();
    let serial = evaluate_population(&spec, &pop.genomes, 9, 1).unwrap();
    let parallel = evaluate_population(&spec, &pop.genomes, 9, 3).unwrap();
    assert_eq!(serial, parallel);
}

#[test]
fn zero_generations_returns_the_zero_rule() {
    let cfg = TrainConfig {
        spec: tiny_spec(),
        generations: 0,
        population: 4,
        seed: 0,
        workers: 1,
        es: EsParams::default(),
    };
    let out = train_rule(&cfg, None).unwrap();
    assert!(out.rule.is_zero());
    assert_eq!(out.rule, PlasticityRule::zeros(&cfg.spec.net));
    assert!(out.state.history.is_empty());
}

#[test]
fn smoke_run_logs_a_non_decreasing_best() {
    let cfg = TrainConfig {
        spec: tiny_spec(),
        generations: 5,
        population: 6,
        seed: 4,
        workers: 1,
        es: EsParams {
            lr_mu: 10.0,
            ..EsParams::default()
        },
    };
    let mut log = Vec::new();
    let out = train_rule(&cfg, Some(&mut log)).unwrap();
    let text = String::from_utf8(log).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "generation,best,mean,std,wallclock_s");
    assert_eq!(lines.len(), 6);
    let best: Vec<f64> = lines[1..].iter().map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(best.windows(2).all(|w| w[1] >= w[0]), "{best:?}");
    assert_eq!(out.state.generation, 5);

    let again = train_rule(&cfg, None).unwrap();
    assert_eq!(again.state.mu, out.state.mu);
}

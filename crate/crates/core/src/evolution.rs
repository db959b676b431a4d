//! Parameter-exploring policy gradients over the plasticity genome.
//!
//! The search distribution is a diagonal Gaussian `N(mu, sigma^2)`. Each
//! generation draws mirrored pairs `mu + eps`, `mu - eps`, evaluates every
//! genome as a plasticity rule on a fresh zero-weight network, rank-shapes the
//! returns to `[-0.5, 0.5]` and moves both `mu` and `sigma`.

use crate::snn::{NetworkConfig, NetworkState, PlasticityRule};
use crate::tasks::{run_episode, Controller, FunctionalBackend, Perturbation, TaskError, TaskKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::time::Instant;

#[derive(Debug, thiserror::Error)]
pub enum EvolutionError {
    #[error("population size must be even and at least 2, got {0}")]
    OddPopulation(usize),
    #[error("expected fitness for {expected} pairs, got {got}")]
    PairCount { expected: usize, got: usize },
    #[error("genome length {got} does not match the network ({expected})")]
    GenomeLength { expected: usize, got: usize },
    #[error("invalid setting: {0}")]
    Config(String),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error("writing the training log: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EsParams {
    pub sigma_init: f64,
    pub lr_mu: f64,
    pub lr_sigma: f64,
    pub sigma_min: f64,
    /// Weight of the previous baseline in its running average.
    pub baseline_decay: f64,
}

impl Default for EsParams {
    fn default() -> Self {
        EsParams {
            sigma_init: 0.05,
            lr_mu: 0.2,
            lr_sigma: 0.1,
            sigma_min: 1e-3,
            baseline_decay: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: u64,
    /// Best candidate fitness seen up to and including this generation.
    pub best: f64,
    pub mean: f64,
    pub std: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionState {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub generation: u64,
    pub rng_seed: u64,
    pub params: EsParams,
    /// Running mean of raw population fitness; `None` before the first update.
    pub baseline: Option<f64>,
    pub history: Vec<GenerationStats>,
}

/// Perturbations of one generation; genome `2k` is `mu + eps[k]`, genome
/// `2k + 1` is `mu - eps[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub eps: Vec<Vec<f64>>,
    pub genomes: Vec<Vec<f64>>,
}

impl EvolutionState {
    pub fn new(len: usize, seed: u64, params: EsParams) -> EvolutionState {
        EvolutionState {
            mu: vec![0.0; len],
            sigma: vec![params.sigma_init.max(params.sigma_min); len],
            generation: 0,
            rng_seed: seed,
            params,
            baseline: None,
            history: Vec::new(),
        }
    }

    /// Draws `pop_size / 2` mirrored pairs. Reproducible from
    /// `(rng_seed, generation)`.
    pub fn sample_population(&self, pop_size: usize) -> Result<Population, EvolutionError> {
        if pop_size < 2 || !pop_size.is_multiple_of(2) {
            return Err(EvolutionError::OddPopulation(pop_size));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed);
        rng.set_stream(self.generation);
        let mut eps = Vec::with_capacity(pop_size / 2);
        let mut genomes = Vec::with_capacity(pop_size);
        for _ in 0..pop_size / 2 {
            let e: Vec<f64> = self
                .sigma
                .iter()
                .map(|&s| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    s * z
                })
                .collect();
            genomes.push(self.mu.iter().zip(&e).map(|(m, e)| m + e).collect());
            genomes.push(self.mu.iter().zip(&e).map(|(m, e)| m - e).collect());
            eps.push(e);
        }
        Ok(Population { eps, genomes })
    }

    /// One update from the fitness of a population, in population order
    /// (`[f+_0, f-_0, f+_1, f-_1, ...]`). Pairs are accumulated in index order.
    pub fn pepg_update(&mut self, pop: &Population, fitness: &[f64]) -> Result<(), EvolutionError> {
        let pairs = pop.eps.len();
        if fitness.len() != 2 * pairs || pairs == 0 {
            return Err(EvolutionError::PairCount {
                expected: pairs,
                got: fitness.len() / 2,
            });
        }
        if let Some(e) = pop.eps.iter().find(|e| e.len() != self.mu.len()) {
            return Err(EvolutionError::GenomeLength {
                expected: self.mu.len(),
                got: e.len(),
            });
        }
        let mut sorted = fitness.to_vec();
        sorted.sort_by(f64::total_cmp);
        let raw_mean = sorted.iter().sum::<f64>() / fitness.len() as f64;
        let baseline = match self.baseline {
            None => raw_mean,
            Some(b) => self.params.baseline_decay * b + (1.0 - self.params.baseline_decay) * raw_mean,
        };
        let shaped = rank_shape(fitness);
        let b = shaped_position(fitness, baseline);
        let n = pairs as f64;
        let p = self.params;
        let mut d_mu = vec![0.0; self.mu.len()];
        let mut d_sigma = vec![0.0; self.mu.len()];
        // Canonical pair order, so that shuffling the pairs cannot change the
        // rounding of the sums.
        let mut order: Vec<usize> = (0..pairs).collect();
        order.sort_by(|&a, &b| {
            let key = |k: usize| (&pop.eps[k], shaped[2 * k], shaped[2 * k + 1]);
            let (ea, pa, ma) = key(a);
            let (eb, pb, mb) = key(b);
            ea.iter()
                .zip(eb)
                .map(|(x, y)| x.total_cmp(y))
                .chain([pa.total_cmp(&pb), ma.total_cmp(&mb)])
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        for k in order {
            let e = &pop.eps[k];
            let (fp, fm) = (shaped[2 * k], shaped[2 * k + 1]);
            let r_t = (fp - fm) / 2.0;
            let r_s = (fp + fm) / 2.0 - b;
            for i in 0..e.len() {
                let s = self.sigma[i];
                d_mu[i] += r_t * e[i];
                d_sigma[i] += r_s * (e[i] * e[i] - s * s) / s;
            }
        }
        for i in 0..self.mu.len() {
            self.mu[i] += p.lr_mu * d_mu[i] / n;
            self.sigma[i] = (self.sigma[i] + p.lr_sigma * d_sigma[i] / n).max(p.sigma_min);
        }
        self.baseline = Some(baseline);
        self.generation += 1;
        Ok(())
    }
}

/// Ranks mapped linearly onto `[-0.5, 0.5]`, worst to best. Tied values
/// share their average rank. A single value maps to 0.
pub fn rank_shape(fitness: &[f64]) -> Vec<f64> {
    let n = fitness.len();
    if n < 2 {
        return vec![0.0; n];
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| fitness[a].total_cmp(&fitness[b]));
    let mut out = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && fitness[order[j + 1]] == fitness[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0;
        for &k in &order[i..=j] {
            out[k] = rank / (n - 1) as f64 - 0.5;
        }
        i = j + 1;
    }
    out
}

/// Where a value would sit on the shaped scale of `fitness`, using the same
/// tie convention as [`rank_shape`].
fn shaped_position(fitness: &[f64], value: f64) -> f64 {
    let n = fitness.len();
    if n < 2 {
        return 0.0;
    }
    let below = fitness.iter().filter(|&&f| f < value).count() as f64;
    let equal = fitness.iter().filter(|&&f| f == value).count() as f64;
    let rank = below + (equal - 1.0) / 2.0;
    (rank / (n - 1) as f64 - 0.5).clamp(-0.5, 0.5)
}

/// How a genome is scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSpec {
    pub task: TaskKind,
    pub net: NetworkConfig,
    /// Network timesteps per control step.
    pub window: usize,
    pub episode_len: Option<usize>,
    pub variants: Vec<usize>,
    pub perturbation: Option<Perturbation>,
}

impl EvalSpec {
    /// Training setup for a task with its default hidden size and variants.
    pub fn for_task(task: TaskKind) -> EvalSpec {
        EvalSpec {
            task,
            net: task.network_config(task.default_hidden()),
            window: 16,
            episode_len: None,
            variants: task.train_variants(),
            perturbation: match task {
                TaskKind::Reaching => Some(Perturbation::WEAK_JOINT),
                _ => None,
            },
        }
    }

    pub fn genome_len(&self) -> usize {
        PlasticityRule::genome_len(&self.net)
    }

    fn validate(&self) -> Result<(), EvolutionError> {
        self.net.validate().map_err(TaskError::from)?;
        let want = self.task.network_config(self.net.n_hidden);
        if (want.n_in, want.n_out) != (self.net.n_in, self.net.n_out) {
            return Err(EvolutionError::Config(format!(
                "{} needs {} inputs and {} outputs",
                self.task, want.n_in, want.n_out
            )));
        }
        if self.window == 0 || self.variants.is_empty() {
            return Err(EvolutionError::Config("window and variant list must be non-empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitnessReport {
    pub candidate: usize,
    pub returns: Vec<f64>,
    pub fitness: f64,
    pub failed: bool,
}

/// Mean episodic return of `genome` used as the plasticity rule of a
/// zero-weight network, one episode per variant. A non-finite state scores
/// the task's floor and sets `failed`.
pub fn evaluate_candidate(
    spec: &EvalSpec,
    genome: &[f64],
    seed: u64,
    candidate: usize,
) -> Result<FitnessReport, EvolutionError> {
    let expected = spec.genome_len();
    if genome.len() != expected {
        return Err(EvolutionError::GenomeLength {
            expected,
            got: genome.len(),
        });
    }
    let rule = PlasticityRule::from_genome(&spec.net, genome).map_err(TaskError::from)?;
    let mut env = spec.task.make(spec.episode_len, spec.perturbation);
    let floor = spec.task.floor(env.episode_len());
    let mut returns = Vec::with_capacity(spec.variants.len());
    let mut failed = false;
    for &v in &spec.variants {
        let net = NetworkState::new(spec.net).map_err(TaskError::from)?;
        let mut ctl = Controller::new(FunctionalBackend::new(net, rule.clone())?, spec.task, spec.window);
        let ep = run_episode(env.as_mut(), &mut ctl, seed, v, false)?;
        if ep.failed {
            failed = true;
            returns.push(floor);
        } else {
            returns.push(ep.total);
        }
    }
    let fitness = returns.iter().sum::<f64>() / returns.len() as f64;
    Ok(FitnessReport {
        candidate,
        returns,
        fitness,
        failed,
    })
}

/// Scores a population, on `workers` threads when more than one. Results do
/// not depend on the worker count.
pub fn evaluate_population(
    spec: &EvalSpec,
    genomes: &[Vec<f64>],
    seed: u64,
    workers: usize,
) -> Result<Vec<FitnessReport>, EvolutionError> {
    let eval = |(i, g): (usize, &Vec<f64>)| evaluate_candidate(spec, g, seed, i);
    #[cfg(feature = "parallel")]
    if workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| EvolutionError::Config(format!("thread pool: {e}")))?;
        return pool.install(|| genomes.par_iter().enumerate().map(eval).collect());
    }
    let _ = workers;
    genomes.iter().enumerate().map(eval).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub spec: EvalSpec,
    pub generations: u64,
    pub population: usize,
    pub seed: u64,
    pub workers: usize,
    #[serde(default)]
    pub es: EsParams,
}

/// Mean step size used for the task presets. The plain default moves the
/// mean by roughly a hundredth of sigma per generation, which needs far more
/// generations than a desk-scale run affords.
pub const TASK_LR_MU: f64 = 10.0;

impl TrainConfig {
    /// Rule search on a task with its default network, variants and
    /// perturbation.
    pub fn preset(task: TaskKind, generations: u64, population: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            spec: EvalSpec::for_task(task),
            generations,
            population,
            seed,
            workers: 1,
            es: EsParams {
                lr_mu: TASK_LR_MU,
                ..EsParams::default()
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: EvolutionState,
    pub rule: PlasticityRule,
}

/// Episode seed of a generation; every candidate of a generation sees the
/// same episodes, so mirrored pairs differ only by their genome.
pub fn episode_seed(seed: u64, generation: u64) -> u64 {
    seed ^ generation.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Runs sample, evaluate and update for `cfg.generations` generations and
/// returns `mu` as the rule. When `log` is given, a CSV row
/// `generation,best,mean,std,wallclock_s` is written and flushed after each
/// generation.
pub fn train_rule(cfg: &TrainConfig, mut log: Option<&mut dyn Write>) -> Result<TrainOutcome, EvolutionError> {
    cfg.spec.validate()?;
    let mut state = EvolutionState::new(cfg.spec.genome_len(), cfg.seed, cfg.es);
    let started = Instant::now();
    if let Some(w) = log.as_deref_mut() {
        writeln!(w, "generation,best,mean,std,wallclock_s")?;
        w.flush()?;
    }
    let mut best = f64::NEG_INFINITY;
    for _ in 0..cfg.generations {
        let pop = state.sample_population(cfg.population)?;
        let seed = episode_seed(cfg.seed, state.generation);
        let reports = evaluate_population(&cfg.spec, &pop.genomes, seed, cfg.workers)?;
        let fitness: Vec<f64> = reports.iter().map(|r| r.fitness).collect();
        let n = fitness.len() as f64;
        let mean = fitness.iter().sum::<f64>() / n;
        let std = (fitness.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / n).sqrt();
        best = fitness.iter().copied().fold(best, f64::max);
        let stats = GenerationStats {
            generation: state.generation,
            best,
            mean,
            std,
            failures: reports.iter().filter(|r| r.failed).count(),
        };
        state.pepg_update(&pop, &fitness)?;
        if let Some(w) = log.as_deref_mut() {
            writeln!(
                w,
                "{},{},{},{},{:.3}",
                stats.generation,
                stats.best,
                stats.mean,
                stats.std,
                started.elapsed().as_secs_f64()
            )?;
            w.flush()?;
        }
        state.history.push(stats);
    }
    let rule = PlasticityRule::from_genome(&cfg.spec.net, &state.mu).map_err(TaskError::from)?;
    Ok(TrainOutcome { state, rule })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn odd_population_is_rejected() {
        let es = EvolutionState::new(3, 0, EsParams::default());
        assert!(matches!(es.sample_population(3), Err(EvolutionError::OddPopulation(3))));
        assert!(matches!(es.sample_population(0), Err(EvolutionError::OddPopulation(0))));
        assert_eq!(es.sample_population(2).unwrap().genomes.len(), 2);
    }

    #[test]
    fn ranks_with_ties() {
        assert_eq!(rank_shape(&[3.0, 1.0, 2.0]), vec![0.5, -0.5, 0.0]);
        assert_eq!(rank_shape(&[1.0, 1.0, 5.0, 0.0]), vec![0.0, 0.0, 0.5, -0.5]);
        assert_eq!(rank_shape(&[7.0; 4]), vec![0.0; 4]);
    }

    #[test]
    fn baseline_position_matches_rank_convention() {
        let f = [1.0, 2.0, 3.0];
        assert_eq!(shaped_position(&f, 2.0), 0.0);
        assert_eq!(shaped_position(&f, 1.5), -0.25);
        assert_eq!(shaped_position(&f, 9.0), 0.5);
        assert_eq!(shaped_position(&[4.0; 6], 4.0), 0.0);
    }
}

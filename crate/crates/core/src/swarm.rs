//! Global-best particle swarm optimization.
//!
//! Each iteration moves every particle with
//! `v' = w v + c1 r1 (pbest - x) + c2 r2 (gbest - x)`, `x' = x + v'`, where
//! `r1`, `r2` are fresh uniform draws per particle and dimension. Velocities
//! are capped at `v_max`; a position leaving its bounds is clamped to the
//! bound and that velocity component is zeroed.
//!
//! Each particle owns its own random stream, so fitness evaluations can run
//! in parallel without changing the trajectory.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SwarmError {
    #[error("invalid swarm configuration: {0}")]
    Config(String),
    #[error("fitness is NaN at initial point {point:?} (particle {particle})")]
    NanAtInit { particle: usize, point: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    Minimize,
    Maximize,
}

impl Direction {
    /// `true` when `a` is strictly better than `b`. NaN is never better.
    pub fn better(self, a: f64, b: f64) -> bool {
        match self {
            Direction::Minimize => a < b,
            Direction::Maximize => a > b,
        }
    }

    fn worst(self) -> f64 {
        match self {
            Direction::Minimize => f64::INFINITY,
            Direction::Maximize => f64::NEG_INFINITY,
        }
    }
}

/// Stop once the best value improves by less than `tolerance` over
/// `patience` consecutive iterations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStop {
    pub patience: usize,
    pub tolerance: f64,
}

impl Default for EarlyStop {
    fn default() -> Self {
        Self {
            patience: 50,
            tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwarmConfig {
    pub n_particles: usize,
    pub bounds: Vec<(f64, f64)>,
    pub w: f64,
    pub c1: f64,
    pub c2: f64,
    /// Per-dimension velocity cap; defaults to half the bound width.
    pub v_max: Vec<f64>,
    pub max_iters: usize,
    pub seed: u64,
    pub direction: Direction,
    pub early_stop: Option<EarlyStop>,
    /// Starting positions for the first particles; the rest start at random.
    #[serde(default)]
    pub initial_positions: Vec<Vec<f64>>,
}

impl SwarmConfig {
    /// Defaults: 30 particles, `w = 0.7`, `c1 = c2 = 1.5`, 200 iterations.
    pub fn new(bounds: Vec<(f64, f64)>) -> Self {
        let v_max = bounds.iter().map(|(lo, hi)| 0.5 * (hi - lo)).collect();
        Self {
            n_particles: 30,
            bounds,
            w: 0.7,
            c1: 1.5,
            c2: 1.5,
            v_max,
            max_iters: 200,
            seed: 0,
            direction: Direction::Minimize,
            early_stop: None,
            initial_positions: Vec::new(),
        }
    }

    pub fn n_dims(&self) -> usize {
        self.bounds.len()
    }

    pub fn validate(&self) -> Result<(), SwarmError> {
        let err = |m: &str| Err(SwarmError::Config(m.to_string()));
        if self.n_particles < 2 {
            return err("n_particles must be >= 2");
        }
        if self.bounds.is_empty() {
            return err("at least one dimension is required");
        }
        if self
            .bounds
            .iter()
            .any(|(lo, hi)| !(lo < hi && lo.is_finite() && hi.is_finite()))
        {
            return err("every bound needs finite lo < hi");
        }
        if !(0.0..=1.0).contains(&self.w) {
            return err("w must lie in [0, 1]");
        }
        if !(self.c1 >= 0.0 && self.c2 >= 0.0) {
            return err("c1 and c2 must be >= 0");
        }
        if self.v_max.len() != self.bounds.len() || self.v_max.iter().any(|v| !(*v > 0.0)) {
            return err("v_max needs one positive entry per dimension");
        }
        if self.initial_positions.len() > self.n_particles {
            return err("more initial positions than particles");
        }
        let inside = |x: &Vec<f64>| {
            x.len() == self.bounds.len()
                && x.iter()
                    .zip(&self.bounds)
                    .all(|(v, (lo, hi))| (*lo..=*hi).contains(v))
        };
        if !self.initial_positions.iter().all(inside) {
            return err("initial positions must lie within the bounds");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub fitness: f64,
    pub pbest_pos: Vec<f64>,
    pub pbest_fit: f64,
}

/// A particle whose fitness came back NaN and was held in place.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NanEvent {
    pub iteration: usize,
    pub particle: usize,
}

#[derive(Debug, Clone)]
pub struct SwarmState {
    pub cfg: SwarmConfig,
    pub particles: Vec<Particle>,
    pub gbest_pos: Vec<f64>,
    pub gbest_fit: f64,
    pub iteration: usize,
    pub history: Vec<f64>,
    pub nan_events: Vec<NanEvent>,
    rngs: Vec<ChaCha8Rng>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwarmResult {
    pub gbest_pos: Vec<f64>,
    pub gbest_fit: f64,
    /// Best value after each iteration.
    pub history: Vec<f64>,
    pub iterations_run: usize,
    pub nan_events: Vec<NanEvent>,
}

impl SwarmResult {
    /// `iteration,gbest_fit` rows, iterations numbered from 1.
    pub fn history_csv(&self) -> String {
        let mut out = String::from("iteration,gbest_fit\n");
        for (i, f) in self.history.iter().enumerate() {
            out.push_str(&format!("{},{f}\n", i + 1));
        }
        out
    }
}

/// One particle's velocity and position update before bound handling.
///
/// Returns `(v', x')` for a single dimension.
#[allow(clippy::too_many_arguments)]
pub fn velocity_update(
    x: f64,
    v: f64,
    pbest: f64,
    gbest: f64,
    r1: f64,
    r2: f64,
    w: f64,
    c1: f64,
    c2: f64,
) -> (f64, f64) {
    let v_next = w * v + c1 * r1 * (pbest - x) + c2 * r2 * (gbest - x);
    (v_next, x + v_next)
}

fn particle_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Random initial positions and velocities, evaluated once.
pub fn init_swarm<F>(cfg: &SwarmConfig, fitness: &F) -> Result<SwarmState, SwarmError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    cfg.validate()?;
    let mut rngs: Vec<ChaCha8Rng> = (0..cfg.n_particles)
        .map(|i| particle_rng(cfg.seed, i))
        .collect();
    let starts: Vec<(Vec<f64>, Vec<f64>)> = rngs
        .iter_mut()
        .enumerate()
        .map(|(i, rng)| {
            let random: Vec<f64> = cfg
                .bounds
                .iter()
                .map(|&(lo, hi)| rng.random_range(lo..=hi))
                .collect();
            let x = cfg.initial_positions.get(i).cloned().unwrap_or(random);
            let v = cfg
                .v_max
                .iter()
                .map(|&m| rng.random_range(-m..=m))
                .collect();
            (x, v)
        })
        .collect();
    let fits: Vec<f64> = starts.par_iter().map(|(x, _)| fitness(x)).collect();
    if let Some(i) = fits.iter().position(|f| f.is_nan()) {
        return Err(SwarmError::NanAtInit {
            particle: i,
            point: starts[i].0.clone(),
        });
    }
    let particles: Vec<Particle> = starts
        .into_iter()
        .zip(fits)
        .map(|((x, v), f)| Particle {
            pbest_pos: x.clone(),
            pbest_fit: f,
            position: x,
            velocity: v,
            fitness: f,
        })
        .collect();
    let mut state = SwarmState {
        cfg: cfg.clone(),
        gbest_pos: particles[0].position.clone(),
        gbest_fit: cfg.direction.worst(),
        particles,
        iteration: 0,
        history: Vec::new(),
        nan_events: Vec::new(),
        rngs,
    };
    state.refresh_gbest();
    Ok(state)
}

impl SwarmState {
    fn refresh_gbest(&mut self) {
        let dir = self.cfg.direction;
        for p in &self.particles {
            if dir.better(p.pbest_fit, self.gbest_fit) {
                self.gbest_fit = p.pbest_fit;
                self.gbest_pos = p.pbest_pos.clone();
            }
        }
    }

    /// Moves every particle once, re-evaluates and refreshes the bests.
    pub fn step<F>(&mut self, fitness: &F)
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        let cfg = &self.cfg;
        let gbest = &self.gbest_pos;
        let previous: Vec<(Vec<f64>, Vec<f64>)> = self
            .particles
            .iter()
            .map(|p| (p.position.clone(), p.velocity.clone()))
            .collect();
        for (p, rng) in self.particles.iter_mut().zip(&mut self.rngs) {
            for d in 0..cfg.n_dims() {
                let r1: f64 = rng.random();
                let r2: f64 = rng.random();
                let (v, _) = velocity_update(
                    p.position[d],
                    p.velocity[d],
                    p.pbest_pos[d],
                    gbest[d],
                    r1,
                    r2,
                    cfg.w,
                    cfg.c1,
                    cfg.c2,
                );
                let v = v.clamp(-cfg.v_max[d], cfg.v_max[d]);
                let x = p.position[d] + v;
                let (lo, hi) = cfg.bounds[d];
                if x < lo || x > hi {
                    p.position[d] = x.clamp(lo, hi);
                    p.velocity[d] = 0.0;
                } else {
                    p.position[d] = x;
                    p.velocity[d] = v;
                }
            }
        }
        let fits: Vec<f64> = self
            .particles
            .par_iter()
            .map(|p| fitness(&p.position))
            .collect();
        self.iteration += 1;
        let dir = cfg.direction;
        for (i, (p, f)) in self.particles.iter_mut().zip(fits).enumerate() {
            if f.is_nan() {
                p.position = previous[i].0.clone();
                p.velocity = previous[i].1.clone();
                self.nan_events.push(NanEvent {
                    iteration: self.iteration,
                    particle: i,
                });
                continue;
            }
            p.fitness = f;
            if dir.better(f, p.pbest_fit) {
                p.pbest_fit = f;
                p.pbest_pos = p.position.clone();
            }
        }
        self.refresh_gbest();
        self.history.push(self.gbest_fit);
    }

    pub fn result(&self) -> SwarmResult {
        SwarmResult {
            gbest_pos: self.gbest_pos.clone(),
            gbest_fit: self.gbest_fit,
            history: self.history.clone(),
            iterations_run: self.iteration,
            nan_events: self.nan_events.clone(),
        }
    }

    fn stalled(&self, stop: EarlyStop) -> bool {
        let h = &self.history;
        if stop.patience == 0 || h.len() <= stop.patience {
            return false;
        }
        let then = h[h.len() - 1 - stop.patience];
        let now = h[h.len() - 1];
        (now - then).abs() < stop.tolerance
    }
}

/// Runs the swarm for `max_iters` iterations (or until early stop).
pub fn optimize<F>(cfg: &SwarmConfig, fitness: &F) -> Result<SwarmResult, SwarmError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    optimize_observed(cfg, fitness, |_, _| {})
}

/// Like [`optimize`], calling `observe(iteration, gbest_fit)` after every
/// iteration.
pub fn optimize_observed<F, O>(
    cfg: &SwarmConfig,
    fitness: &F,
    mut observe: O,
) -> Result<SwarmResult, SwarmError>
where
    F: Fn(&[f64]) -> f64 + Sync,
    O: FnMut(usize, f64),
{
    let mut state = init_swarm(cfg, fitness)?;
    for _ in 0..cfg.max_iters {
        state.step(fitness);
        observe(state.iteration, state.gbest_fit);
        if let Some(stop) = cfg.early_stop {
            if state.stalled(stop) {
                break;
            }
        }
    }
    Ok(state.result())
}

/// Uniform random sampling with the same budget accounting as the swarm:
/// returns the best of `n_evals` points.
pub fn random_search<F>(cfg: &SwarmConfig, fitness: &F, n_evals: usize) -> (Vec<f64>, f64)
where
    F: Fn(&[f64]) -> f64,
{
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best = (Vec::new(), cfg.direction.worst());
    for _ in 0..n_evals {
        let x: Vec<f64> = cfg
            .bounds
            .iter()
            .map(|&(lo, hi)| rng.random_range(lo..=hi))
            .collect();
        let f = fitness(&x);
        if cfg.direction.better(f, best.1) {
            best = (x, f);
        }
    }
    best
}

/// Standard test functions, all with minimum 0 at the origin.
pub mod benchmarks {
    pub fn sphere(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    pub fn rastrigin(x: &[f64]) -> f64 {
        10.0 * x.len() as f64
            + x.iter()
                .map(|v| v * v - 10.0 * (std::f64::consts::TAU * v).cos())
                .sum::<f64>()
    }

    pub fn rosenbrock_shifted(x: &[f64]) -> f64 {
        // shifted so the minimum sits at the origin
        x.windows(2)
            .map(|p| {
                let (a, b) = (p[0] + 1.0, p[1] + 1.0);
                100.0 * (b - a * a).powi(2) + (1.0 - a).powi(2)
            })
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::benchmarks::*;
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_step() {
        let (v, x) = velocity_update(2.0, 1.0, 1.0, 0.0, 0.5, 0.5, 0.7, 1.5, 1.5);
        assert!((v + 1.55).abs() < 1e-12, "{v}");
        assert!((x - 0.45).abs() < 1e-12, "{x}");
    }

    #[test]
    fn fixed_point_when_at_both_bests() {
        let (v, x) = velocity_update(0.3, 0.0, 0.3, 0.3, 0.9, 0.1, 0.7, 1.5, 1.5);
        assert_eq!((v, x), (0.0, 0.3));
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let mut cfg = SwarmConfig::new(vec![(0.0, 1.0); 3]);
        cfg.seed = 42;
        let a = init_swarm(&cfg, &sphere).unwrap();
        let b = init_swarm(&cfg, &sphere).unwrap();
        assert_eq!(a.particles, b.particles);
        for p in &a.particles {
            assert!(p.position.iter().all(|v| (0.0..=1.0).contains(v)));
            assert!(p.velocity.iter().all(|v| v.abs() <= 0.5));
        }
    }

    #[test]
    fn initial_positions_seed_the_first_particles() {
        let mut cfg = SwarmConfig::new(vec![(-1.0, 1.0); 2]);
        cfg.seed = 9;
        let plain = init_swarm(&cfg, &sphere).unwrap();
        cfg.initial_positions = vec![vec![0.0, 0.0]];
        let seeded = init_swarm(&cfg, &sphere).unwrap();
        assert_eq!(seeded.particles[0].position, vec![0.0, 0.0]);
        assert_eq!(seeded.gbest_fit, 0.0);
        // other particles keep their own streams
        assert_eq!(seeded.particles[1..], plain.particles[1..]);

        cfg.initial_positions = vec![vec![2.0, 0.0]];
        assert!(init_swarm(&cfg, &sphere).is_err());
    }

    #[test]
    fn gbest_is_the_better_of_two() {
        let mut cfg = SwarmConfig::new(vec![(-3.0, 3.0); 2]);
        cfg.n_particles = 2;
        let s = init_swarm(&cfg, &sphere).unwrap();
        let best = s
            .particles
            .iter()
            .min_by(|a, b| a.fitness.total_cmp(&b.fitness))
            .unwrap();
        assert_eq!(s.gbest_pos, best.position);
        assert_eq!(s.gbest_fit, best.fitness);
    }

    #[test]
    fn nan_at_init_names_the_point() {
        let cfg = SwarmConfig::new(vec![(0.0, 1.0)]);
        match init_swarm(&cfg, &|_: &[f64]| f64::NAN) {
            Err(SwarmError::NanAtInit { particle: 0, point }) => assert_eq!(point.len(), 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn nan_during_step_freezes_particle() {
        let cfg = SwarmConfig::new(vec![(-1.0, 1.0); 2]);
        let f = |x: &[f64]| if x[0] > 0.5 { f64::NAN } else { sphere(x) };
        let mut s = init_swarm(&cfg, &sphere).unwrap();
        for _ in 0..30 {
            let before = s.gbest_fit;
            s.step(&f);
            assert!(s.gbest_fit <= before);
            assert!(s.particles.iter().all(|p| !p.fitness.is_nan()));
        }
        assert!(!s.nan_events.is_empty());
    }

    #[test]
    fn zero_iterations_returns_initial_best() {
        let mut cfg = SwarmConfig::new(vec![(-5.0, 5.0); 4]);
        cfg.max_iters = 0;
        let s = init_swarm(&cfg, &sphere).unwrap();
        let r = optimize(&cfg, &sphere).unwrap();
        assert_eq!(r.gbest_fit, s.gbest_fit);
        assert_eq!(r.gbest_pos, s.gbest_pos);
        assert!(r.history.is_empty());
        assert_eq!(r.iterations_run, 0);
    }

    #[test]
    fn sphere_converges() {
        let mut cfg = SwarmConfig::new(vec![(-5.0, 5.0); 5]);
        cfg.seed = 1;
        let r = optimize(&cfg, &sphere).unwrap();
        assert!(r.gbest_fit < 1e-3, "{}", r.gbest_fit);
        assert_eq!(r.history.len(), 200);
    }

    #[test]
    fn maximize_direction() {
        let mut cfg = SwarmConfig::new(vec![(-2.0, 2.0); 2]);
        cfg.direction = Direction::Maximize;
        let r = optimize(&cfg, &|x: &[f64]| -sphere(x) + 3.0).unwrap();
        assert!((r.gbest_fit - 3.0).abs() < 1e-4);
        assert!(r.history.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn early_stop_cuts_history() {
        let mut cfg = SwarmConfig::new(vec![(-1.0, 1.0); 2]);
        cfg.max_iters = 5000;
        cfg.early_stop = Some(EarlyStop::default());
        let r = optimize(&cfg, &|_: &[f64]| 1.0).unwrap();
        assert_eq!(r.iterations_run, 51);
    }

    #[test]
    fn observer_sees_each_iteration() {
        let mut cfg = SwarmConfig::new(vec![(-1.0, 1.0); 2]);
        cfg.max_iters = 12;
        let mut seen = Vec::new();
        let r = optimize_observed(&cfg, &sphere, |i, f| seen.push((i, f))).unwrap();
        assert_eq!(seen.len(), 12);
        assert_eq!(seen.last().unwrap(), &(12, r.gbest_fit));
        let csv = r.history_csv();
        assert_eq!(csv.lines().count(), 13);
    }

    #[test]
    fn config_validation() {
        let ok = SwarmConfig::new(vec![(0.0, 1.0)]);
        assert!(ok.validate().is_ok());
        let mut bad = ok.clone();
        bad.n_particles = 1;
        assert!(bad.validate().is_err());
        let mut bad = ok.clone();
        bad.bounds = vec![(1.0, 1.0)];
        assert!(bad.validate().is_err());
        let mut bad = ok.clone();
        bad.w = 1.5;
        assert!(bad.validate().is_err());
        let mut bad = ok;
        bad.c2 = -0.1;
        assert!(bad.validate().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn positions_stay_in_bounds_and_history_is_monotone(
            seed in 0u64..10_000,
            dims in 1usize..5,
            which in 0usize..3,
        ) {
            let f: fn(&[f64]) -> f64 = [sphere, rastrigin, rosenbrock_shifted][which];
            let mut cfg = SwarmConfig::new(vec![(-2.0, 3.0); dims]);
            cfg.seed = seed;
            cfg.n_particles = 8;
            let mut s = init_swarm(&cfg, &f).unwrap();
            let mut last = s.gbest_fit;
            for _ in 0..25 {
                s.step(&f);
                prop_assert!(s.gbest_fit <= last);
                last = s.gbest_fit;
                for p in &s.particles {
                    prop_assert!(p.position.iter().all(|v| (-2.0..=3.0).contains(v)));
                    prop_assert!(p.pbest_fit <= p.fitness);
                    prop_assert!(s.gbest_fit <= p.pbest_fit);
                }
            }
            let best = s.particles.iter().map(|p| p.pbest_fit).fold(f64::INFINITY, f64::min);
            prop_assert_eq!(best, s.gbest_fit);
        }

        #[test]
        fn trajectory_is_reproducible(seed in 0u64..10_000) {
            let mut cfg = SwarmConfig::new(vec![(-5.0, 5.0); 3]);
            cfg.seed = seed;
            cfg.max_iters = 20;
            prop_assert_eq!(optimize(&cfg, &rastrigin).unwrap(), optimize(&cfg, &rastrigin).unwrap());
        }
    }
}

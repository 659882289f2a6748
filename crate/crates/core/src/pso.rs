//! Particle swarm optimization over a bounded, mixed continuous/integer
//! search space, generic over a fitness callback.
//!
//! Log-scale dimensions are searched in log10 coordinates; integer
//! dimensions are evaluated at the rounded value while the stored
//! coordinate stays continuous. All randomness is drawn from per-
//! `(seed, particle, iteration)` substreams, so fitness evaluations can run
//! in parallel without changing any result.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{stream, substream};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Linear,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DimKind {
    Continuous,
    Integer,
}

/// One search dimension: closed bounds, scale and kind.
#[derive(Debug, Clone)]
pub struct DimSpec {
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub scale: Scale,
    pub kind: DimKind,
}

impl DimSpec {
    pub fn linear(name: &str, min: f64, max: f64) -> DimSpec {
        DimSpec {
            name: name.into(),
            min,
            max,
            scale: Scale::Linear,
            kind: DimKind::Continuous,
        }
    }

    pub fn log(name: &str, min: f64, max: f64) -> DimSpec {
        DimSpec {
            name: name.into(),
            min,
            max,
            scale: Scale::Log,
            kind: DimKind::Continuous,
        }
    }

    pub fn integer(name: &str, min: f64, max: f64) -> DimSpec {
        DimSpec {
            name: name.into(),
            min,
            max,
            scale: Scale::Linear,
            kind: DimKind::Integer,
        }
    }
}

/// Bounded search space with an optional bound on the total position norm.
#[derive(Debug, Clone)]
pub struct SearchSpace {
    pub dims: Vec<DimSpec>,
    /// Optional cap `H` on `sqrt(sum_j x_j^2)` of the stored coordinates;
    /// enforced by rescaling after each position update. Off by default.
    pub norm_bound: Option<f64>,
}

impl SearchSpace {
    pub fn new(dims: Vec<DimSpec>) -> SearchSpace {
        SearchSpace {
            dims,
            norm_bound: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() {
            return Err(Error::EmptyInput("search space"));
        }
        for d in &self.dims {
            if !(d.min < d.max) {
                return Err(Error::InvalidArgument(format!(
                    "dimension '{}': min {} must be < max {}",
                    d.name, d.min, d.max
                )));
            }
            if d.scale == Scale::Log && !(d.min > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "log dimension '{}' requires positive bounds",
                    d.name
                )));
            }
        }
        if let Some(h) = self.norm_bound {
            if !(h > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "norm bound must be positive, got {h}"
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    /// Bounds of dimension `d` in internal (search) coordinates.
    pub fn internal_bounds(&self, d: usize) -> (f64, f64) {
        let dim = &self.dims[d];
        match dim.scale {
            Scale::Linear => (dim.min, dim.max),
            Scale::Log => (dim.min.log10(), dim.max.log10()),
        }
    }

    pub fn internal_range(&self, d: usize) -> f64 {
        let (lo, hi) = self.internal_bounds(d);
        hi - lo
    }

    /// Map an internal coordinate vector to hyperparameter values:
    /// log dims exponentiated, integer dims rounded.
    pub fn decode(&self, internal: &[f64]) -> Vec<f64> {
        internal
            .iter()
            .zip(&self.dims)
            .map(|(&x, dim)| {
                let v = match dim.scale {
                    Scale::Linear => x,
                    Scale::Log => 10f64.powf(x),
                };
                match dim.kind {
                    DimKind::Continuous => v,
                    DimKind::Integer => v.round(),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Particle {
    /// Stored (internal-coordinate) position.
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub best_position: Vec<f64>,
    pub best_fitness: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwarmConfig {
    pub n_particles: usize,
    /// Iteration budget `T`.
    pub max_iters: usize,
    /// Cognitive coefficient.
    pub c1: f64,
    /// Social coefficient.
    pub c2: f64,
    pub w_max: f64,
    pub w_min: f64,
    /// Global-best movement below this for `patience` consecutive
    /// iterations stops the run.
    pub convergence_eps: f64,
    pub patience: usize,
    /// Velocity clamp as a fraction of each dimension's range.
    pub v_clamp_frac: f64,
    pub seed: u64,
    /// Weight of the optional additive compute-cost term in the fitness.
    pub cost_penalty: f64,
}

impl Default for SwarmConfig {
    fn default() -> SwarmConfig {
        SwarmConfig {
            n_particles: 20,
            max_iters: 50,
            c1: 1.5,
            c2: 1.5,
            w_max: 0.9,
            w_min: 0.4,
            convergence_eps: 1e-6,
            patience: 10,
            v_clamp_frac: 0.2,
            seed: 42,
            cost_penalty: 0.0,
        }
    }
}

impl SwarmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_particles < 2 {
            return Err(Error::InvalidArgument(format!(
                "swarm needs at least 2 particles, got {}",
                self.n_particles
            )));
        }
        if self.max_iters < 1 {
            return Err(Error::InvalidArgument("max_iters must be >= 1".into()));
        }
        if !(self.w_max >= self.w_min && self.w_min >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "inertia endpoints must satisfy w_max >= w_min >= 0, got {} and {}",
                self.w_max, self.w_min
            )));
        }
        if !(self.convergence_eps >= 0.0) {
            return Err(Error::InvalidArgument("convergence_eps must be >= 0".into()));
        }
        if self.patience < 1 {
            return Err(Error::InvalidArgument("patience must be >= 1".into()));
        }
        if !(self.v_clamp_frac > 0.0) {
            return Err(Error::InvalidArgument("v_clamp_frac must be > 0".into()));
        }
        Ok(())
    }
}

/// One row of the per-iteration trace.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub best_fitness: f64,
    /// `max_i ||v_i - p_i||` over particles, logged as a diagnostic
    /// (never a stopping rule).
    pub convergence_diag: f64,
    pub inertia: f64,
}

#[derive(Debug, Clone)]
pub struct SwarmState {
    pub particles: Vec<Particle>,
    /// Internal-coordinate global best.
    pub best_position: Vec<f64>,
    pub best_fitness: f64,
    pub iteration: usize,
    pub trace: Vec<IterationRecord>,
}

/// Outcome of [`run`].
#[derive(Debug, Clone)]
pub struct RunResult {
    /// Decoded hyperparameter values of the global best.
    pub best_position: Vec<f64>,
    pub best_fitness: f64,
    pub trace: Vec<IterationRecord>,
    /// True when the movement criterion stopped the run before `max_iters`.
    pub converged: bool,
}

/// Linearly decaying inertia weight; clamps to `w_min` past `max_iters`.
pub fn inertia(t: usize, config: &SwarmConfig) -> f64 {
    if t >= config.max_iters {
        return config.w_min;
    }
    config.w_max - (config.w_max - config.w_min) * t as f64 / config.max_iters as f64
}

/// Positions uniform within bounds (uniform in log10 for log dims),
/// velocities uniform in the clamp window. Deterministic in the seed.
pub fn init_swarm(space: &SearchSpace, config: &SwarmConfig) -> Result<SwarmState> {
    space.validate()?;
    config.validate()?;
    let mut particles = Vec::with_capacity(config.n_particles);
    for p in 0..config.n_particles {
        let mut rng = substream(config.seed, &[stream::SWARM_INIT, p as u64]);
        let mut position = Vec::with_capacity(space.len());
        let mut velocity = Vec::with_capacity(space.len());
        for d in 0..space.len() {
            let (lo, hi) = space.internal_bounds(d);
            position.push(rng.gen_range(lo..hi));
            let v_max = config.v_clamp_frac * (hi - lo);
            velocity.push(rng.gen_range(-v_max..v_max));
        }
        particles.push(Particle {
            best_position: position.clone(),
            position,
            velocity,
            best_fitness: f64::INFINITY,
        });
    }
    Ok(SwarmState {
        best_position: particles[0].position.clone(),
        best_fitness: f64::INFINITY,
        particles,
        iteration: 0,
        trace: Vec::new(),
    })
}

/// Velocity update with explicit per-dimension random factors:
/// `v <- w*v + c1*r1.(p - x) + c2*r2.(g - x)`, then componentwise clamp to
/// the fraction of each dimension's range.
pub fn update_velocity_with(
    particle: &mut Particle,
    global_best: &[f64],
    w: f64,
    config: &SwarmConfig,
    space: &SearchSpace,
    r1: &[f64],
    r2: &[f64],
) {
    for d in 0..particle.velocity.len() {
        let v = w * particle.velocity[d]
            + config.c1 * r1[d] * (particle.best_position[d] - particle.position[d])
            + config.c2 * r2[d] * (global_best[d] - particle.position[d]);
        let clamp = config.v_clamp_frac * space.internal_range(d);
        particle.velocity[d] = v.clamp(-clamp, clamp);
    }
}

/// Velocity update drawing `r1, r2` per dimension from `rng`.
pub fn update_velocity<R: Rng>(
    particle: &mut Particle,
    global_best: &[f64],
    w: f64,
    config: &SwarmConfig,
    space: &SearchSpace,
    rng: &mut R,
) {
    let n = particle.velocity.len();
    let mut r1 = Vec::with_capacity(n);
    let mut r2 = Vec::with_capacity(n);
    for _ in 0..n {
        r1.push(rng.gen_range(0.0..1.0));
        r2.push(rng.gen_range(0.0..1.0));
    }
    update_velocity_with(particle, global_best, w, config, space, &r1, &r2);
}

/// `x <- x + v`; out-of-bound components are clamped with the velocity
/// component zeroed; the optional norm bound rescales the whole vector.
pub fn update_position(particle: &mut Particle, space: &SearchSpace) {
    for d in 0..particle.position.len() {
        let (lo, hi) = space.internal_bounds(d);
        let x = particle.position[d] + particle.velocity[d];
        if x < lo {
            particle.position[d] = lo;
            particle.velocity[d] = 0.0;
        } else if x > hi {
            particle.position[d] = hi;
            particle.velocity[d] = 0.0;
        } else {
            particle.position[d] = x;
        }
    }
    if let Some(h) = space.norm_bound {
        let norm_sq: f64 = particle.position.iter().map(|x| x * x).sum();
        if norm_sq > h * h {
            let scale = h / norm_sq.sqrt();
            for (d, x) in particle.position.iter_mut().enumerate() {
                let (lo, hi) = space.internal_bounds(d);
                *x = (*x * scale).clamp(lo, hi);
            }
        }
    }
}

fn euclidean_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Run the swarm against `fitness`, which receives decoded hyperparameter
/// values. NaN evaluations score positive infinity; a run in which every
/// evaluation was NaN is rejected.
pub fn run<F>(space: &SearchSpace, config: &SwarmConfig, fitness: F) -> Result<RunResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let mut state = init_swarm(space, config)?;
    let score = |position: &[f64]| -> f64 {
        let raw = fitness(&space.decode(position));
        if raw.is_nan() {
            f64::INFINITY
        } else {
            raw
        }
    };

    // Initial evaluation; the reduction below runs in fixed particle order.
    let initial: Vec<f64> = state
        .particles
        .par_iter()
        .map(|p| score(&p.position))
        .collect();
    for (p, fit) in state.particles.iter_mut().zip(initial) {
        p.best_fitness = fit;
        p.best_position = p.position.clone();
    }
    for p in &state.particles {
        if p.best_fitness < state.best_fitness {
            state.best_fitness = p.best_fitness;
            state.best_position = p.best_position.clone();
        }
    }
    let diag0 = state
        .particles
        .iter()
        .map(|p| euclidean_distance(&p.velocity, &p.best_position))
        .fold(0.0f64, f64::max);
    state.trace.push(IterationRecord {
        iter: 0,
        best_fitness: state.best_fitness,
        convergence_diag: diag0,
        inertia: inertia(0, config),
    });

    let mut streak = 0usize;
    let mut converged = false;
    for round in 1..=config.max_iters {
        let w = inertia(round - 1, config);
        let global_best = state.best_position.clone();
        let seed = config.seed;
        state
            .particles
            .par_iter_mut()
            .enumerate()
            .for_each(|(idx, particle)| {
                let mut rng = substream(seed, &[stream::VELOCITY, idx as u64, round as u64]);
                update_velocity(particle, &global_best, w, config, space, &mut rng);
                update_position(particle, space);
                let fit = score(&particle.position);
                if fit < particle.best_fitness {
                    particle.best_fitness = fit;
                    particle.best_position = particle.position.clone();
                }
            });

        let previous_best = state.best_position.clone();
        for p in &state.particles {
            if p.best_fitness < state.best_fitness {
                state.best_fitness = p.best_fitness;
                state.best_position = p.best_position.clone();
            }
        }
        let diag = state
            .particles
            .iter()
            .map(|p| euclidean_distance(&p.velocity, &p.best_position))
            .fold(0.0f64, f64::max);
        state.iteration = round;
        state.trace.push(IterationRecord {
            iter: round,
            best_fitness: state.best_fitness,
            convergence_diag: diag,
            inertia: w,
        });

        if euclidean_distance(&state.best_position, &previous_best) < config.convergence_eps {
            streak += 1;
            if streak >= config.patience {
                converged = true;
                break;
            }
        } else {
            streak = 0;
        }
    }

    if !state.best_fitness.is_finite() && state.best_fitness.is_sign_positive() {
        return Err(Error::AllEvaluationsNan);
    }
    Ok(RunResult {
        best_position: space.decode(&state.best_position),
        best_fitness: state.best_fitness,
        trace: state.trace,
        converged,
    })
}

/// Trace rows as CSV lines: iteration, best fitness, convergence
/// diagnostic, inertia weight.
pub fn trace_to_csv(trace: &[IterationRecord]) -> String {
    let mut out = String::new();
    for row in trace {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.iter, row.best_fitness, row.convergence_diag, row.inertia
        ));
    }
    out
}

/// Best position as `key=value` lines keyed by dimension names, consumable
/// as a config fragment. Integer dimensions are printed without a decimal
/// point.
pub fn position_to_config_fragment(space: &SearchSpace, values: &[f64]) -> String {
    let mut out = String::new();
    for (dim, &v) in space.dims.iter().zip(values) {
        match dim.kind {
            DimKind::Integer => out.push_str(&format!("{}={}\n", dim.name, v as i64)),
            DimKind::Continuous => out.push_str(&format!("{}={}\n", dim.name, v)),
        }
    }
    out
}

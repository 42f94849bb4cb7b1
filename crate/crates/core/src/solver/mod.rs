//! Minimax value iteration for the stay value `H`, the spliced value `H_g`,
//! the reach-avoid-stay value `V` and the plain reach-avoid baseline `V_RA`.
//!
//! Backups, with `m(x) = max_u min_d W(f(x, u, d))` over the lattices:
//!
//! ```text
//! H(x) = min(gbar(x), γ m_H(x))
//! V(x) = min(l(x), max(H_g(x), γ m_V(x)))
//! H_g(x) = H(x) if H(x) < 0, g(x) otherwise
//! ```
//!
//! `V_RA` is the `V` backup with `g` in place of `H_g`. Ties in the argmax and
//! argmin are broken toward the lowest lattice index.

mod game;
mod policy;
pub mod qlearn;

pub use game::{FiniteGame, GridGame, MinimaxGame};
pub use policy::{TabularPolicy, POLICY_FORMAT};

use crate::grid::{action_lattice, GridError, GridSpec, ValueGrid};
use crate::system::{ControlSystem, MAX_STATE_DIM};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_GAMMA: f64 = 0.999;
pub const DEFAULT_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_MAX_SWEEPS: usize = 20_000;
/// Width of the "H = 0" band as a fraction of the value range.
pub const DEFAULT_EPSILON_FRACTION: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error(
        "no convergence after {sweeps} sweeps: residual {residual:e} > tolerance {tolerance:e}"
    )]
    NonConvergence {
        sweeps: usize,
        residual: f64,
        tolerance: f64,
    },
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepScheme {
    /// Every node reads the previous iterate; nodes are evaluated in parallel.
    #[default]
    Jacobi,
    /// In-place sequential sweep.
    GaussSeidel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub gamma: f64,
    pub tolerance: f64,
    pub max_sweeps: usize,
    pub controls: Vec<Vec<f64>>,
    pub disturbances: Vec<Vec<f64>>,
    pub sweep: SweepScheme,
}

impl SolverConfig {
    /// Default discount and tolerance with lattices of the given per-dimension counts.
    pub fn for_system<S: ControlSystem + ?Sized>(
        system: &S,
        control_counts: &[usize],
        disturbance_counts: &[usize],
    ) -> Result<Self, SolverError> {
        Ok(Self {
            gamma: DEFAULT_GAMMA,
            tolerance: DEFAULT_TOLERANCE,
            max_sweeps: DEFAULT_MAX_SWEEPS,
            controls: action_lattice(system.control_bounds(), control_counts)?,
            disturbances: action_lattice(system.disturbance_bounds(), disturbance_counts)?,
            sweep: SweepScheme::Jacobi,
        })
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(SolverError::InvalidConfig(format!(
                "gamma must lie in (0, 1), got {}",
                self.gamma
            )));
        }
        if !(self.tolerance > 0.0) {
            return Err(SolverError::InvalidConfig(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if self.controls.is_empty() || self.disturbances.is_empty() {
            return Err(SolverError::InvalidConfig("empty action lattice".into()));
        }
        Ok(())
    }
}

/// Which fixed point a sweep computes.
#[derive(Debug, Clone, Copy)]
pub enum Objective<'a> {
    /// `min(gbar, γ m)`.
    Stay { gbar: &'a [f64] },
    /// `min(l, max(target, γ m))`.
    Reach { l: &'a [f64], target: &'a [f64] },
}

impl Objective<'_> {
    /// Value above which the outer `min` saturates, so further controls cannot matter.
    #[inline]
    fn cap(&self, node: usize) -> f64 {
        match self {
            Objective::Stay { gbar } => gbar[node],
            Objective::Reach { l, .. } => l[node],
        }
    }

    #[inline]
    fn combine(&self, node: usize, discounted: f64) -> f64 {
        match self {
            Objective::Stay { gbar } => gbar[node].min(discounted),
            Objective::Reach { l, target } => l[node].min(target[node].max(discounted)),
        }
    }

    /// Starting iterate: the backup evaluated against an all-zero table.
    pub fn initial_values(&self) -> Vec<f64> {
        let n = match self {
            Objective::Stay { gbar } => gbar.len(),
            Objective::Reach { l, .. } => l.len(),
        };
        (0..n).map(|i| self.combine(i, 0.0)).collect()
    }
}

/// `max_u min_d` of the successor values. Stops early once `γ·best >= cap`.
#[inline]
fn max_min_capped<G: MinimaxGame + ?Sized>(
    game: &G,
    values: &[f64],
    node: usize,
    gamma: f64,
    cap: f64,
) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for u in 0..game.num_controls() {
        let mut worst = f64::INFINITY;
        for d in 0..game.num_disturbances() {
            let v = game.successor_value(values, node, u, d);
            if v < worst {
                worst = v;
                if worst <= best {
                    break;
                }
            }
        }
        if worst > best {
            best = worst;
            if gamma * best >= cap {
                break;
            }
        }
    }
    best
}

/// Full greedy extraction at one node: `(u*, d*, max_u min_d)` with
/// lowest-index tie-breaking.
pub fn greedy_at<G: MinimaxGame + ?Sized>(
    game: &G,
    values: &[f64],
    node: usize,
) -> (usize, usize, f64) {
    let mut best = f64::NEG_INFINITY;
    let mut best_u = 0;
    for u in 0..game.num_controls() {
        let mut worst = f64::INFINITY;
        for d in 0..game.num_disturbances() {
            let v = game.successor_value(values, node, u, d);
            if v < worst {
                worst = v;
                if worst <= best {
                    break;
                }
            }
        }
        if worst > best {
            best = worst;
            best_u = u;
        }
    }
    let (mut best_d, mut worst) = (0, f64::INFINITY);
    for d in 0..game.num_disturbances() {
        let v = game.successor_value(values, node, best_u, d);
        if v < worst {
            worst = v;
            best_d = d;
        }
    }
    (best_u, best_d, best)
}

/// One application of the backup operator at `node`.
#[inline]
pub fn backup_node<G: MinimaxGame + ?Sized>(
    game: &G,
    objective: &Objective<'_>,
    values: &[f64],
    node: usize,
    gamma: f64,
) -> f64 {
    let m = max_min_capped(game, values, node, gamma, objective.cap(node));
    objective.combine(node, gamma * m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub sweeps: usize,
    pub final_residual: f64,
    pub residuals: Vec<f64>,
}

/// Iterates the backup to a sup-norm fixed point.
pub fn value_iteration<G: MinimaxGame + ?Sized>(
    game: &G,
    objective: &Objective<'_>,
    init: Vec<f64>,
    gamma: f64,
    tolerance: f64,
    max_sweeps: usize,
    sweep: SweepScheme,
) -> Result<(Vec<f64>, SolveReport), SolverError> {
    assert_eq!(init.len(), game.num_nodes());
    let mut values = init;
    let mut next = values.clone();
    let mut residuals = Vec::new();
    for k in 1..=max_sweeps {
        let residual = match sweep {
            SweepScheme::Jacobi => {
                next.par_iter_mut()
                    .enumerate()
                    .with_min_len(512)
                    .for_each(|(i, out)| *out = backup_node(game, objective, &values, i, gamma));
                let r = next
                    .par_iter()
                    .zip(values.par_iter())
                    .with_min_len(4096)
                    .map(|(a, b)| (a - b).abs())
                    .reduce(|| 0.0, f64::max);
                std::mem::swap(&mut values, &mut next);
                r
            }
            SweepScheme::GaussSeidel => {
                let mut r: f64 = 0.0;
                for i in 0..values.len() {
                    let v = backup_node(game, objective, &values, i, gamma);
                    r = r.max((v - values[i]).abs());
                    values[i] = v;
                }
                r
            }
        };
        residuals.push(residual);
        if residual <= tolerance {
            return Ok((
                values,
                SolveReport {
                    sweeps: k,
                    final_residual: residual,
                    residuals,
                },
            ));
        }
    }
    Err(SolverError::NonConvergence {
        sweeps: max_sweeps,
        residual: residuals.last().copied().unwrap_or(f64::INFINITY),
        tolerance,
    })
}

/// Greedy policy for every node of a game on `spec`.
pub fn extract_policy_on<G: MinimaxGame + ?Sized>(
    game: &G,
    values: &[f64],
    spec: &GridSpec,
    config: &SolverConfig,
) -> TabularPolicy {
    let picks: Vec<(u32, u32)> = (0..game.num_nodes())
        .into_par_iter()
        .with_min_len(512)
        .map(|i| {
            let (u, d, _) = greedy_at(game, values, i);
            (u as u32, d as u32)
        })
        .collect();
    let (cu, cd) = picks.into_iter().unzip();
    TabularPolicy::new(
        spec.clone(),
        config.controls.clone(),
        config.disturbances.clone(),
        cu,
        cd,
    )
}

/// Greedy minimax policy of a converged value grid.
pub fn extract_policy<S: ControlSystem + ?Sized>(
    system: &S,
    value: &ValueGrid,
    config: &SolverConfig,
) -> TabularPolicy {
    let game = GridGame::new(system, value.spec(), &config.controls, &config.disturbances);
    extract_policy_on(&game, value.values(), value.spec(), config)
}

/// A solved value grid with its greedy policy.
#[derive(Debug, Clone)]
pub struct Solution {
    pub value: ValueGrid,
    pub policy: TabularPolicy,
    pub report: SolveReport,
}

fn solve_grid<S: ControlSystem + ?Sized>(
    game: &GridGame<'_, S>,
    objective: Objective<'_>,
    spec: &GridSpec,
    config: &SolverConfig,
) -> Result<Solution, SolverError> {
    config.validate()?;
    let (values, report) = value_iteration(
        game,
        &objective,
        objective.initial_values(),
        config.gamma,
        config.tolerance,
        config.max_sweeps,
        config.sweep,
    )?;
    let policy = extract_policy_on(game, &values, spec, config);
    Ok(Solution {
        value: ValueGrid::new(spec.clone(), values)?,
        policy,
        report,
    })
}

fn check_dims<S: ControlSystem + ?Sized>(system: &S, spec: &GridSpec) -> Result<(), SolverError> {
    if system.state_dim() != spec.ndim() {
        return Err(SolverError::InvalidConfig(format!(
            "grid has {} dimensions, system state has {}",
            spec.ndim(),
            system.state_dim()
        )));
    }
    Ok(())
}

/// Solves the stay value `H` and its greedy policy `π_H`.
pub fn solve_h<S: ControlSystem + ?Sized>(
    system: &S,
    spec: &GridSpec,
    config: &SolverConfig,
) -> Result<Solution, SolverError> {
    check_dims(system, spec)?;
    let game = GridGame::new(system, spec, &config.controls, &config.disturbances);
    let gbar = game.tabulate(|x| system.gbar(x));
    solve_grid(&game, Objective::Stay { gbar: &gbar }, spec, config)
}

/// Magnitude below which `H` counts as zero when splicing.
pub fn splice_slack(h: &ValueGrid) -> f64 {
    1e-12 * h.range().max(1.0)
}

/// `H_g = H` where `H < 0` (beyond machine slack), `g` elsewhere.
pub fn build_hg<S: ControlSystem + ?Sized>(h: &ValueGrid, system: &S) -> ValueGrid {
    let slack = splice_slack(h);
    let spec = h.spec().clone();
    let n = spec.ndim();
    let states = spec.node_states();
    let values = h
        .values()
        .iter()
        .zip(states.chunks_exact(n))
        .map(|(&hv, x)| splice(hv, system.target_reward(x), slack))
        .collect();
    ValueGrid::new(spec, values).expect("same spec")
}

/// Pointwise splice rule shared by the tabular and neural routes.
#[inline]
pub fn splice(h: f64, g: f64, slack: f64) -> f64 {
    if h < -slack {
        h
    } else {
        g
    }
}

/// Solves the reach-avoid-stay value `V` against a spliced `H_g`.
pub fn solve_v<S: ControlSystem + ?Sized>(
    system: &S,
    spec: &GridSpec,
    hg: &ValueGrid,
    config: &SolverConfig,
) -> Result<Solution, SolverError> {
    check_dims(system, spec)?;
    if hg.spec() != spec {
        return Err(SolverError::InvalidConfig(
            "H_g grid does not match the solve grid".into(),
        ));
    }
    let game = GridGame::new(system, spec, &config.controls, &config.disturbances);
    let l = game.tabulate(|x| system.constraint(x));
    solve_grid(
        &game,
        Objective::Reach {
            l: &l,
            target: hg.values(),
        },
        spec,
        config,
    )
}

/// Solves the reach-avoid baseline `V_RA` (target `g` instead of `H_g`).
pub fn solve_v_ra<S: ControlSystem + ?Sized>(
    system: &S,
    spec: &GridSpec,
    config: &SolverConfig,
) -> Result<Solution, SolverError> {
    check_dims(system, spec)?;
    let game = GridGame::new(system, spec, &config.controls, &config.disturbances);
    let l = game.tabulate(|x| system.constraint(x));
    let g = game.tabulate(|x| system.target_reward(x));
    solve_grid(&game, Objective::Reach { l: &l, target: &g }, spec, config)
}

/// `max_u min_d W(f(x, u, d))` over the lattices at an arbitrary state, with
/// the maximizing control index and its minimizing disturbance index.
pub fn greedy_at_state<S: ControlSystem + ?Sized>(
    system: &S,
    value: &ValueGrid,
    x: &[f64],
    controls: &[Vec<f64>],
    disturbances: &[Vec<f64>],
) -> (usize, usize, f64) {
    let n = system.state_dim();
    let mut next = [0.0; MAX_STATE_DIM];
    let mut eval = |u: usize, d: usize| {
        system.step_into(x, &controls[u], &disturbances[d], &mut next[..n]);
        value.interpolate(&next[..n])
    };
    let mut best = f64::NEG_INFINITY;
    let mut best_u = 0;
    for u in 0..controls.len() {
        let mut worst = f64::INFINITY;
        for d in 0..disturbances.len() {
            let v = eval(u, d);
            if v < worst {
                worst = v;
                if worst <= best {
                    break;
                }
            }
        }
        if worst > best {
            best = worst;
            best_u = u;
        }
    }
    let (mut best_d, mut worst) = (0, f64::INFINITY);
    for d in 0..disturbances.len() {
        let v = eval(best_u, d);
        if v < worst {
            worst = v;
            best_d = d;
        }
    }
    (best_u, best_d, best)
}

/// The `H` backup evaluated at an arbitrary state.
pub fn bellman_backup_h<S: ControlSystem + ?Sized>(
    system: &S,
    h: &ValueGrid,
    x: &[f64],
    config: &SolverConfig,
) -> f64 {
    let (_, _, m) = greedy_at_state(system, h, x, &config.controls, &config.disturbances);
    system.gbar(x).min(config.gamma * m)
}

/// The `V` backup evaluated at an arbitrary state.
pub fn bellman_backup_v<S: ControlSystem + ?Sized>(
    system: &S,
    v: &ValueGrid,
    hg: &ValueGrid,
    x: &[f64],
    config: &SolverConfig,
) -> f64 {
    let (_, _, m) = greedy_at_state(system, v, x, &config.controls, &config.disturbances);
    system
        .constraint(x)
        .min(hg.interpolate(x).max(config.gamma * m))
}

/// Membership threshold `fraction · (value range)`.
pub fn membership_epsilon(value: &ValueGrid, fraction: f64) -> f64 {
    fraction * value.range()
}

/// One-step slack for the invariance-closure check at a converged `H`.
///
/// At a node with `H ≥ -ε` the fixed point gives `γ m_H ≥ -ε - tol`, so the
/// greedy successor satisfies `W ≥ -(ε + tol)/γ = -ε - κ`.
pub fn closure_slack(epsilon: f64, tolerance: f64, gamma: f64) -> f64 {
    (epsilon + tolerance) / gamma - epsilon
}

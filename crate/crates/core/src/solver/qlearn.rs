//! Sampled tabular Q-learning of the stay value `H`.
//!
//! The table is indexed by (node, control, disturbance). Each update picks a
//! node uniformly at random and a control/disturbance pair that is either
//! uniform (with probability `exploration`) or greedy for the current table,
//! and moves the entry toward `min(gbar(node), γ W(f(node, u, d)))`, where `W`
//! is the induced value `max_u min_d Q` interpolated at the successor. The
//! learning rate follows `α_k = α₀ / (1 + k / K)`.

use super::game::{GridGame, MinimaxGame};
use super::{SolverConfig, SolverError};
use crate::grid::{GridSpec, ValueGrid};
use crate::system::ControlSystem;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QLearnConfig {
    /// α₀.
    pub initial_rate: f64,
    /// K in `α₀ / (1 + k / K)`, in updates.
    pub rate_decay: f64,
    pub episodes: usize,
    /// Updates per episode.
    pub horizon: usize,
    /// Probability of a uniformly random (control, disturbance) pair.
    pub exploration: f64,
    pub seed: u64,
}

impl Default for QLearnConfig {
    fn default() -> Self {
        Self {
            initial_rate: 1.0,
            rate_decay: 1e9,
            episodes: 150,
            horizon: 1_000_000,
            exploration: 0.5,
            seed: 17,
        }
    }
}

impl QLearnConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        let ok_rate = |r: f64| r > 0.0 && r <= 1.0;
        if !ok_rate(self.initial_rate) {
            return Err(SolverError::InvalidConfig(
                "initial_rate must lie in (0, 1]".into(),
            ));
        }
        if !(self.exploration >= 0.0 && self.exploration <= 1.0) {
            return Err(SolverError::InvalidConfig(
                "exploration must lie in [0, 1]".into(),
            ));
        }
        if !(self.rate_decay > 0.0) {
            return Err(SolverError::InvalidConfig(
                "rate_decay must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn total_updates(&self) -> u64 {
        self.episodes as u64 * self.horizon as u64
    }
}

/// Per-episode learning statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QLearnReport {
    pub updates: u64,
    /// Largest change of the induced value during each episode.
    pub episode_max_change: Vec<f64>,
}

/// Q-learning of `H` on a generic game. Returns the induced value per node.
pub fn q_learning_on<G: MinimaxGame + ?Sized>(
    game: &G,
    gbar: &[f64],
    gamma: f64,
    qconfig: &QLearnConfig,
) -> Result<(Vec<f64>, QLearnReport), SolverError> {
    qconfig.validate()?;
    let n = game.num_nodes();
    let nu = game.num_controls();
    let nd = game.num_disturbances();
    assert_eq!(gbar.len(), n);

    // Upper bound of the fixed point, so the table decreases monotonically.
    let init: Vec<f64> = gbar.iter().map(|g| g.min(0.0)).collect();
    let mut q: Vec<f64> = init
        .iter()
        .flat_map(|&v| std::iter::repeat_n(v, nu * nd))
        .collect();
    let mut row_min: Vec<f64> = init
        .iter()
        .flat_map(|&v| std::iter::repeat_n(v, nu))
        .collect();
    let mut w = init;

    let mut rng = ChaCha8Rng::seed_from_u64(qconfig.seed);
    let mut k: u64 = 0;
    let mut episode_max_change = Vec::with_capacity(qconfig.episodes);
    for _ in 0..qconfig.episodes {
        let mut max_change: f64 = 0.0;
        for _ in 0..qconfig.horizon {
            let node = rng.random_range(0..n);
            let (u, d) = if rng.random::<f64>() < qconfig.exploration {
                (rng.random_range(0..nu), rng.random_range(0..nd))
            } else {
                let mins = &row_min[node * nu..(node + 1) * nu];
                let u = argmax(mins);
                let row = &q[(node * nu + u) * nd..(node * nu + u + 1) * nd];
                (u, argmin(row))
            };
            let target = gbar[node].min(gamma * game.successor_value(&w, node, u, d));
            let rate = qconfig.initial_rate / (1.0 + k as f64 / qconfig.rate_decay);
            let idx = (node * nu + u) * nd + d;
            q[idx] += rate * (target - q[idx]);

            let row = &q[(node * nu + u) * nd..(node * nu + u + 1) * nd];
            row_min[node * nu + u] = row.iter().copied().fold(f64::INFINITY, f64::min);
            let new_w = row_min[node * nu..(node + 1) * nu]
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max);
            max_change = max_change.max((new_w - w[node]).abs());
            w[node] = new_w;
            k += 1;
        }
        episode_max_change.push(max_change);
    }
    Ok((
        w,
        QLearnReport {
            updates: k,
            episode_max_change,
        },
    ))
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x < v[best] {
            best = i;
        }
    }
    best
}

/// Q-learning of `H` on a lattice discretization of `system`.
pub fn q_learning_h<S: ControlSystem + ?Sized>(
    system: &S,
    spec: &GridSpec,
    qconfig: &QLearnConfig,
    config: &SolverConfig,
) -> Result<(ValueGrid, QLearnReport), SolverError> {
    config.validate()?;
    if system.state_dim() != spec.ndim() {
        return Err(SolverError::InvalidConfig(
            "grid dimension must match the system".into(),
        ));
    }
    let game = GridGame::new(system, spec, &config.controls, &config.disturbances);
    let gbar = game.tabulate(|x| system.gbar(x));
    let (values, report) = q_learning_on(&game, &gbar, config.gamma, qconfig)?;
    Ok((ValueGrid::new(spec.clone(), values)?, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::FiniteGame;

    fn small_config(seed: u64) -> QLearnConfig {
        QLearnConfig {
            episodes: 10,
            horizon: 200,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn single_self_loop_state() {
        let game = FiniteGame::new(1, 1, 1, vec![0]);
        let (w, _) = q_learning_on(&game, &[1.0], 0.999, &small_config(1)).unwrap();
        assert_eq!(w, vec![0.0]);
        let (w, _) = q_learning_on(&game, &[-2.0], 0.999, &small_config(1)).unwrap();
        assert_eq!(w, vec![-2.0]);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let game = FiniteGame::from_fn(5, 2, 2, |s, u, d| (s + u + 2 * d) % 5);
        let gbar = [1.0, -0.5, 0.3, 2.0, -1.0];
        let (a, _) = q_learning_on(&game, &gbar, 0.9, &small_config(4)).unwrap();
        let (b, _) = q_learning_on(&game, &gbar, 0.9, &small_config(4)).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn rejects_bad_rates() {
        let game = FiniteGame::new(1, 1, 1, vec![0]);
        let cfg = QLearnConfig {
            initial_rate: 1.5,
            ..small_config(0)
        };
        assert!(q_learning_on(&game, &[1.0], 0.9, &cfg).is_err());
    }
}

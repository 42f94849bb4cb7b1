//! Finite zero-sum games the value-iteration and Q-learning routines run on.
//!
//! A game has a set of nodes, a finite control set and a finite disturbance
//! set. The only thing the solvers need is the value of the successor reached
//! from a node under a control/disturbance pair, read from the current value
//! table. For lattice discretizations of continuous systems the successor is
//! off-grid and its value is interpolated; for hand-built games it is a plain
//! table lookup.

use crate::grid::GridSpec;
use crate::system::{ControlSystem, MAX_STATE_DIM};

pub trait MinimaxGame: Sync {
    fn num_nodes(&self) -> usize;
    fn num_controls(&self) -> usize;
    fn num_disturbances(&self) -> usize;

    /// Value of the successor of `node` under control `u` and disturbance `d`.
    fn successor_value(&self, values: &[f64], node: usize, u: usize, d: usize) -> f64;
}

/// A continuous system restricted to lattice nodes and lattice inputs.
pub struct GridGame<'a, S: ControlSystem + ?Sized> {
    system: &'a S,
    spec: &'a GridSpec,
    controls: &'a [Vec<f64>],
    disturbances: &'a [Vec<f64>],
    states: Vec<f64>,
}

impl<'a, S: ControlSystem + ?Sized> GridGame<'a, S> {
    pub fn new(
        system: &'a S,
        spec: &'a GridSpec,
        controls: &'a [Vec<f64>],
        disturbances: &'a [Vec<f64>],
    ) -> Self {
        assert_eq!(
            system.state_dim(),
            spec.ndim(),
            "grid dimension must match the system"
        );
        Self {
            system,
            spec,
            controls,
            disturbances,
            states: spec.node_states(),
        }
    }

    pub fn node_state(&self, node: usize) -> &[f64] {
        let n = self.spec.ndim();
        &self.states[node * n..(node + 1) * n]
    }

    pub fn spec(&self) -> &GridSpec {
        self.spec
    }

    pub fn system(&self) -> &S {
        self.system
    }

    /// Per-node evaluation of a state function.
    pub fn tabulate(&self, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        self.states.chunks_exact(self.spec.ndim()).map(f).collect()
    }
}

impl<S: ControlSystem + ?Sized> MinimaxGame for GridGame<'_, S> {
    fn num_nodes(&self) -> usize {
        self.spec.len()
    }

    fn num_controls(&self) -> usize {
        self.controls.len()
    }

    fn num_disturbances(&self) -> usize {
        self.disturbances.len()
    }

    #[inline]
    fn successor_value(&self, values: &[f64], node: usize, u: usize, d: usize) -> f64 {
        let n = self.spec.ndim();
        let mut next = [0.0; MAX_STATE_DIM];
        self.system.step_into(
            self.node_state(node),
            &self.controls[u],
            &self.disturbances[d],
            &mut next[..n],
        );
        self.spec.interpolate(values, &next[..n])
    }
}

/// Explicit transition table: `next[(node * nu + u) * nd + d]`.
#[derive(Debug, Clone)]
pub struct FiniteGame {
    nodes: usize,
    controls: usize,
    disturbances: usize,
    next: Vec<usize>,
}

impl FiniteGame {
    pub fn new(nodes: usize, controls: usize, disturbances: usize, next: Vec<usize>) -> Self {
        assert_eq!(
            next.len(),
            nodes * controls * disturbances,
            "transition table size"
        );
        assert!(
            next.iter().all(|&s| s < nodes),
            "transition target out of range"
        );
        Self {
            nodes,
            controls,
            disturbances,
            next,
        }
    }

    /// Builds the table from a transition function.
    pub fn from_fn(
        nodes: usize,
        controls: usize,
        disturbances: usize,
        f: impl Fn(usize, usize, usize) -> usize,
    ) -> Self {
        let mut next = Vec::with_capacity(nodes * controls * disturbances);
        for s in 0..nodes {
            for u in 0..controls {
                for d in 0..disturbances {
                    next.push(f(s, u, d));
                }
            }
        }
        Self::new(nodes, controls, disturbances, next)
    }

    pub fn next(&self, node: usize, u: usize, d: usize) -> usize {
        self.next[(node * self.controls + u) * self.disturbances + d]
    }
}

impl MinimaxGame for FiniteGame {
    fn num_nodes(&self) -> usize {
        self.nodes
    }

    fn num_controls(&self) -> usize {
        self.controls
    }

    fn num_disturbances(&self) -> usize {
        self.disturbances
    }

    fn successor_value(&self, values: &[f64], node: usize, u: usize, d: usize) -> f64 {
        values[self.next(node, u, d)]
    }
}

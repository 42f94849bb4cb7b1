//! Discrete-time controlled systems with bounded adversarial disturbance.
//!
//! A system is described by its one-step update `x' = f(x, u, d)`, a target
//! reward `g` (positive exactly inside the target set) and a constraint
//! function `l` (non-positive exactly inside the obstacle). Everything the
//! solvers and trainers need is exposed through [`ControlSystem`]; the bundled
//! benchmarks live in [`SystemModel`].

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Largest state dimension handled with stack buffers in hot loops.
pub const MAX_STATE_DIM: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SystemError {
    #[error("{what}[{index}] = {value} outside [{lower}, {upper}]")]
    InputDomain {
        what: &'static str,
        index: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },
    #[error("{what} has dimension {got}, expected {expected}")]
    Dimension {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("state is not finite: {0:?}")]
    InvalidState(Vec<f64>),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("unknown benchmark `{0}` (expected `cart2d` or `chase4d`)")]
    UnknownBenchmark(String),
}

/// Closed interval `[lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub const fn new(lower: f64, upper: f64) -> Self {
        Self { lower, upper }
    }

    pub const fn symmetric(half_width: f64) -> Self {
        Self::new(-half_width, half_width)
    }

    pub fn is_valid(&self) -> bool {
        self.lower.is_finite() && self.upper.is_finite() && self.lower <= self.upper
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lower && v <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lower, self.upper)
    }
}

/// Interface shared by every system the solvers operate on.
///
/// `step_into` is the unchecked hot-path update; callers guarantee that the
/// inputs are in bounds and that all slices have the right lengths.
pub trait ControlSystem: Sync {
    fn state_dim(&self) -> usize;
    fn control_bounds(&self) -> &[Interval];
    fn disturbance_bounds(&self) -> &[Interval];

    fn step_into(&self, x: &[f64], u: &[f64], d: &[f64], out: &mut [f64]);

    /// Target reward `g`: positive iff `x` is inside the target set.
    fn target_reward(&self, x: &[f64]) -> f64;

    /// Constraint `l`: non-positive iff `x` is inside the obstacle.
    fn constraint(&self, x: &[f64]) -> f64;

    /// `min(g, l)`: positive iff inside the target and clear of the obstacle.
    fn gbar(&self, x: &[f64]) -> f64 {
        self.target_reward(x).min(self.constraint(x))
    }

    /// Pulls a cotangent on the next state back to the control and the
    /// disturbance: returns `(cot_next · ∂f/∂u, cot_next · ∂f/∂d)`.
    fn step_vjp(&self, x: &[f64], u: &[f64], d: &[f64], cot_next: &[f64]) -> (Vec<f64>, Vec<f64>);

    fn control_dim(&self) -> usize {
        self.control_bounds().len()
    }

    fn disturbance_dim(&self) -> usize {
        self.disturbance_bounds().len()
    }

    fn step_vec(&self, x: &[f64], u: &[f64], d: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.state_dim()];
        self.step_into(x, u, d, &mut out);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Benchmark {
    Cart2d,
    Chase4d,
}

impl Benchmark {
    pub fn as_str(&self) -> &'static str {
        match self {
            Benchmark::Cart2d => "cart2d",
            Benchmark::Chase4d => "chase4d",
        }
    }
}

impl fmt::Display for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Benchmark {
    type Err = SystemError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cart2d" => Ok(Benchmark::Cart2d),
            "chase4d" => Ok(Benchmark::Chase4d),
            other => Err(SystemError::UnknownBenchmark(other.to_string())),
        }
    }
}

/// Double integrator on a track: state `[position, velocity]`, control and
/// disturbance are accelerations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartParams {
    pub target_center: f64,
    pub obstacle_center: f64,
    pub target_radius: f64,
    pub obstacle_radius: f64,
    pub control_bound: f64,
    pub disturbance_bound: f64,
}

impl Default for CartParams {
    fn default() -> Self {
        Self {
            target_center: 0.0,
            obstacle_center: -3.0,
            target_radius: 1.0,
            obstacle_radius: 1.0,
            control_bound: 3.0,
            disturbance_bound: 2.0,
        }
    }
}

/// Planar pursuit in relative coordinates: state `[p_r (2), v_r (2)]` where
/// `p_r` is the follower's position relative to the evader. The follower
/// controls its acceleration `u`, the evader's acceleration `d` is the
/// disturbance. The target is the disk `|p_r| < target_radius`, the obstacle
/// the disk `|p_r| <= obstacle_radius`; the stay region is the annulus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChaseParams {
    pub target_radius: f64,
    pub obstacle_radius: f64,
    pub control_bound: f64,
    pub disturbance_bound: f64,
}

impl Default for ChaseParams {
    fn default() -> Self {
        Self {
            target_radius: 1.0,
            obstacle_radius: 0.28,
            control_bound: 1.0,
            disturbance_bound: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "benchmark", rename_all = "lowercase")]
pub enum BenchmarkParams {
    Cart2d(CartParams),
    Chase4d(ChaseParams),
}

pub const DEFAULT_DT: f64 = 0.1;

/// One of the bundled benchmark systems.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    params: BenchmarkParams,
    dt: f64,
    control_bounds: Vec<Interval>,
    disturbance_bounds: Vec<Interval>,
}

impl SystemModel {
    pub fn new(params: BenchmarkParams, dt: f64) -> Result<Self, SystemError> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(SystemError::InvalidModel(format!(
                "dt must be positive, got {dt}"
            )));
        }
        let (control_bounds, disturbance_bounds) = match params {
            BenchmarkParams::Cart2d(p) => {
                if !(p.target_radius > 0.0 && p.obstacle_radius > 0.0) {
                    return Err(SystemError::InvalidModel("radii must be positive".into()));
                }
                (
                    vec![Interval::symmetric(p.control_bound)],
                    vec![Interval::symmetric(p.disturbance_bound)],
                )
            }
            BenchmarkParams::Chase4d(p) => {
                if !(p.obstacle_radius > 0.0 && p.obstacle_radius < p.target_radius) {
                    return Err(SystemError::InvalidModel(
                        "chase4d needs 0 < obstacle_radius < target_radius".into(),
                    ));
                }
                if !(p.control_bound > p.disturbance_bound && p.disturbance_bound >= 0.0) {
                    return Err(SystemError::InvalidModel(
                        "chase4d needs control_bound > disturbance_bound >= 0".into(),
                    ));
                }
                (
                    vec![Interval::symmetric(p.control_bound); 2],
                    vec![Interval::symmetric(p.disturbance_bound); 2],
                )
            }
        };
        if !control_bounds
            .iter()
            .chain(&disturbance_bounds)
            .all(Interval::is_valid)
        {
            return Err(SystemError::InvalidModel("empty input bounds".into()));
        }
        Ok(Self {
            params,
            dt,
            control_bounds,
            disturbance_bounds,
        })
    }

    pub fn cart2d() -> Self {
        Self::new(BenchmarkParams::Cart2d(CartParams::default()), DEFAULT_DT)
            .expect("valid defaults")
    }

    pub fn chase4d() -> Self {
        Self::new(BenchmarkParams::Chase4d(ChaseParams::default()), DEFAULT_DT)
            .expect("valid defaults")
    }

    pub fn from_benchmark(benchmark: Benchmark, dt: f64) -> Result<Self, SystemError> {
        let params = match benchmark {
            Benchmark::Cart2d => BenchmarkParams::Cart2d(CartParams::default()),
            Benchmark::Chase4d => BenchmarkParams::Chase4d(ChaseParams::default()),
        };
        Self::new(params, dt)
    }

    pub fn benchmark(&self) -> Benchmark {
        match self.params {
            BenchmarkParams::Cart2d(_) => Benchmark::Cart2d,
            BenchmarkParams::Chase4d(_) => Benchmark::Chase4d,
        }
    }

    pub fn params(&self) -> &BenchmarkParams {
        &self.params
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Checked one-step update.
    pub fn step(&self, x: &[f64], u: &[f64], d: &[f64]) -> Result<Vec<f64>, SystemError> {
        check_dim("state", x.len(), self.state_dim())?;
        if !x.iter().all(|v| v.is_finite()) {
            return Err(SystemError::InvalidState(x.to_vec()));
        }
        check_inputs("control", u, &self.control_bounds)?;
        check_inputs("disturbance", d, &self.disturbance_bounds)?;
        Ok(self.step_vec(x, u, d))
    }
}

fn check_dim(what: &'static str, got: usize, expected: usize) -> Result<(), SystemError> {
    if got != expected {
        return Err(SystemError::Dimension {
            what,
            got,
            expected,
        });
    }
    Ok(())
}

/// Validates an input vector against per-dimension bounds.
pub fn check_inputs(what: &'static str, v: &[f64], bounds: &[Interval]) -> Result<(), SystemError> {
    check_dim(what, v.len(), bounds.len())?;
    for (index, (&value, b)) in v.iter().zip(bounds).enumerate() {
        if !b.contains(value) {
            return Err(SystemError::InputDomain {
                what,
                index,
                value,
                lower: b.lower,
                upper: b.upper,
            });
        }
    }
    Ok(())
}

impl ControlSystem for SystemModel {
    fn state_dim(&self) -> usize {
        match self.params {
            BenchmarkParams::Cart2d(_) => 2,
            BenchmarkParams::Chase4d(_) => 4,
        }
    }

    fn control_bounds(&self) -> &[Interval] {
        &self.control_bounds
    }

    fn disturbance_bounds(&self) -> &[Interval] {
        &self.disturbance_bounds
    }

    #[inline]
    fn step_into(&self, x: &[f64], u: &[f64], d: &[f64], out: &mut [f64]) {
        let dt = self.dt;
        match self.params {
            BenchmarkParams::Cart2d(_) => {
                let a = u[0] + d[0];
                out[0] = x[0] + dt * x[1] + dt * dt * a;
                out[1] = x[1] + dt * a;
            }
            BenchmarkParams::Chase4d(_) => {
                out[0] = x[0] + dt * x[2];
                out[1] = x[1] + dt * x[3];
                out[2] = x[2] + dt * (u[0] - d[0]);
                out[3] = x[3] + dt * (u[1] - d[1]);
            }
        }
    }

    fn target_reward(&self, x: &[f64]) -> f64 {
        match self.params {
            BenchmarkParams::Cart2d(p) => p.target_radius - (x[0] - p.target_center).abs(),
            BenchmarkParams::Chase4d(p) => p.target_radius - x[0].hypot(x[1]),
        }
    }

    fn constraint(&self, x: &[f64]) -> f64 {
        match self.params {
            BenchmarkParams::Cart2d(p) => (x[0] - p.obstacle_center).abs() - p.obstacle_radius,
            BenchmarkParams::Chase4d(p) => x[0].hypot(x[1]) - p.obstacle_radius,
        }
    }

    fn step_vjp(&self, _x: &[f64], _u: &[f64], _d: &[f64], cot: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let dt = self.dt;
        match self.params {
            BenchmarkParams::Cart2d(_) => {
                let g = dt * dt * cot[0] + dt * cot[1];
                (vec![g], vec![g])
            }
            BenchmarkParams::Chase4d(_) => (
                vec![dt * cot[2], dt * cot[3]],
                vec![-dt * cot[2], -dt * cot[3]],
            ),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cart_step_matches_hand_evaluation() {
        let m = SystemModel::cart2d();
        let next = m.step(&[4.0, -2.0], &[-3.0], &[2.0]).unwrap();
        assert!((next[0] - 3.79).abs() < 1e-12);
        assert!((next[1] + 2.1).abs() < 1e-12);
        assert_eq!(m.step(&[0.0, 0.0], &[0.0], &[0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn chase_rest_is_stationary() {
        let m = SystemModel::chase4d();
        let next = m
            .step(&[1.0, 0.0, 0.0, 0.0], &[0.0, 0.0], &[0.0, 0.0])
            .unwrap();
        assert_eq!(next, vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn step_rejects_bad_inputs() {
        let m = SystemModel::cart2d();
        assert!(matches!(
            m.step(&[0.0, 0.0], &[3.5], &[0.0]),
            Err(SystemError::InputDomain {
                what: "control",
                ..
            })
        ));
        assert!(matches!(
            m.step(&[0.0, 0.0], &[0.0], &[-2.1]),
            Err(SystemError::InputDomain {
                what: "disturbance",
                ..
            })
        ));
        assert!(matches!(
            m.step(&[f64::NAN, 0.0], &[0.0], &[0.0]),
            Err(SystemError::InvalidState(_))
        ));
        assert!(matches!(
            m.step(&[0.0], &[0.0], &[0.0]),
            Err(SystemError::Dimension { .. })
        ));
    }

    #[test]
    fn cart_rewards() {
        let m = SystemModel::cart2d();
        assert_eq!(m.target_reward(&[0.0, 0.0]), 1.0);
        assert_eq!(m.target_reward(&[1.0, 5.0]), 0.0);
        assert_eq!(m.constraint(&[-3.0, 0.0]), -1.0);
        assert_eq!(m.constraint(&[-2.0, -4.0]), 0.0);
        assert_eq!(m.gbar(&[0.0, 0.0]), 1.0);
        assert_eq!(m.gbar(&[-3.0, 0.0]), -2.0);
        assert_eq!(m.gbar(&[-2.0, 0.0]), -1.0);
    }

    #[test]
    fn chase_rewards_vanish_on_the_circles() {
        let m = SystemModel::chase4d();
        let a = std::f64::consts::FRAC_PI_3;
        let on_target = [a.cos(), a.sin(), 0.3, -0.2];
        assert!(m.target_reward(&on_target).abs() < 1e-15);
        let on_obstacle = [0.28 * a.cos(), 0.28 * a.sin(), 0.0, 0.0];
        assert!(m.constraint(&on_obstacle).abs() < 1e-15);
    }

    #[test]
    fn invalid_models_are_rejected() {
        let bad = ChaseParams {
            obstacle_radius: 1.5,
            ..Default::default()
        };
        assert!(SystemModel::new(BenchmarkParams::Chase4d(bad), 0.1).is_err());
        assert!(SystemModel::new(BenchmarkParams::Cart2d(CartParams::default()), 0.0).is_err());
        assert!("vtol".parse::<Benchmark>().is_err());
    }

    #[test]
    fn vjp_matches_finite_differences() {
        for m in [SystemModel::cart2d(), SystemModel::chase4d()] {
            let n = m.state_dim();
            let x: Vec<f64> = (0..n).map(|i| 0.3 * i as f64 - 0.2).collect();
            let u = vec![0.4; m.control_dim()];
            let d = vec![-0.1; m.disturbance_dim()];
            let cot: Vec<f64> = (0..n).map(|i| 1.0 + i as f64).collect();
            let (gu, gd) = m.step_vjp(&x, &u, &d, &cot);
            let h = 1e-6;
            let dot = |v: Vec<f64>| v.iter().zip(&cot).map(|(a, b)| a * b).sum::<f64>();
            for j in 0..u.len() {
                let (mut up, mut um) = (u.clone(), u.clone());
                up[j] += h;
                um[j] -= h;
                let fd = (dot(m.step_vec(&x, &up, &d)) - dot(m.step_vec(&x, &um, &d))) / (2.0 * h);
                assert!((fd - gu[j]).abs() < 1e-7);
            }
            for j in 0..d.len() {
                let (mut dp, mut dm) = (d.clone(), d.clone());
                dp[j] += h;
                dm[j] -= h;
                let fd = (dot(m.step_vec(&x, &u, &dp)) - dot(m.step_vec(&x, &u, &dm))) / (2.0 * h);
                assert!((fd - gd[j]).abs() < 1e-7);
            }
        }
    }

    proptest! {
        #[test]
        fn gbar_is_below_both_rewards(x in -6.0f64..6.0, v in -4.0f64..4.0, y in -2.0f64..2.0, w in -1.5f64..1.5) {
            let cart = SystemModel::cart2d();
            let s = [x, v];
            prop_assert!(cart.gbar(&s) <= cart.target_reward(&s));
            prop_assert!(cart.gbar(&s) <= cart.constraint(&s));
            let chase = SystemModel::chase4d();
            let s = [x / 3.0, y, v / 3.0, w];
            prop_assert!(chase.gbar(&s) <= chase.target_reward(&s));
            prop_assert!(chase.gbar(&s) <= chase.constraint(&s));
        }

        #[test]
        fn signs_match_set_membership(x in -6.0f64..6.0, v in -4.0f64..4.0, y in -2.0f64..2.0) {
            let cart = SystemModel::cart2d();
            let s = [x, v];
            prop_assert_eq!(cart.target_reward(&s) > 0.0, x.abs() < 1.0);
            prop_assert_eq!(cart.constraint(&s) <= 0.0, (x + 3.0).abs() <= 1.0);
            let chase = SystemModel::chase4d();
            let p = [x / 3.0, y, 0.0, 0.0];
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
            prop_assert_eq!(chase.target_reward(&p) > 0.0, r < 1.0);
            prop_assert_eq!(chase.constraint(&p) <= 0.0, r <= 0.28);
        }

        #[test]
        fn step_is_deterministic(x in -6.0f64..6.0, v in -4.0f64..4.0, u in -3.0f64..3.0, d in -2.0f64..2.0) {
            let m = SystemModel::cart2d();
            let a = m.step(&[x, v], &[u], &[d]).unwrap();
            let b = m.step(&[x, v], &[u], &[d]).unwrap();
            prop_assert_eq!(a[0].to_bits(), b[0].to_bits());
            prop_assert_eq!(a[1].to_bits(), b[1].to_bits());
        }
    }
}

//! Closed-loop rollouts, the switching reach-avoid-stay policy and
//! Monte Carlo success statistics.

use crate::ddpg::{HgEvaluator, Mlp};
use crate::grid::ValueGrid;
use crate::solver::{greedy_at_state, TabularPolicy};
use crate::system::{ControlSystem, Interval, SystemError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use thiserror::Error;

pub const TRAJECTORY_FORMAT: &str = "ras-trajectory";
pub const REPORT_FORMAT: &str = "ras-eval-report";
pub const FORMAT_VERSION: u32 = 1;

/// Rollout horizon used for stay evaluation.
pub const DEFAULT_HORIZON: usize = 600;
/// Sampling threshold as a fraction of the value range.
pub const DEFAULT_SAMPLE_FRACTION: f64 = 0.01;
/// Smallest acceptable acceptance rate for rejection sampling.
pub const SAMPLING_FLOOR: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("policy returned out-of-bounds {what} {value:?} at step {step}")]
    ContractViolation {
        step: usize,
        what: &'static str,
        value: Vec<f64>,
    },
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("no trajectories to evaluate")]
    Empty,
    #[error("rejection sampling failed: {accepted} of {requested} states after {draws} draws")]
    SamplingFailure {
        requested: usize,
        accepted: usize,
        draws: usize,
    },
    #[error(transparent)]
    System(#[from] SystemError),
}

/// Which sub-policy of the switching policy acted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Reach,
    Stay,
}

/// A control together with the policy's companion adversarial disturbance.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub control: Vec<f64>,
    pub disturbance: Vec<f64>,
    pub hg: Option<f64>,
    pub branch: Option<Branch>,
}

pub trait FeedbackPolicy: Sync {
    fn decide(&self, x: &[f64]) -> Decision;
}

/// Something that can be evaluated at a state.
pub trait ScalarField: Sync {
    fn value(&self, x: &[f64]) -> f64;
}

impl ScalarField for ValueGrid {
    fn value(&self, x: &[f64]) -> f64 {
        self.interpolate(x)
    }
}

/// Neural `H_g` splice bound to its system.
pub struct NeuralHg<'a, S: ControlSystem + ?Sized> {
    pub system: &'a S,
    pub evaluator: &'a HgEvaluator,
}

impl<S: ControlSystem + ?Sized> ScalarField for NeuralHg<'_, S> {
    fn value(&self, x: &[f64]) -> f64 {
        self.evaluator.eval(self.system, x)
    }
}

/// One-step minimax lookahead on a value grid, evaluated at the actual state.
pub struct GreedyPolicy<'a, S: ControlSystem + ?Sized> {
    pub system: &'a S,
    pub value: &'a ValueGrid,
    pub controls: &'a [Vec<f64>],
    pub disturbances: &'a [Vec<f64>],
}

impl<S: ControlSystem + ?Sized> FeedbackPolicy for GreedyPolicy<'_, S> {
    fn decide(&self, x: &[f64]) -> Decision {
        let (u, d, _) =
            greedy_at_state(self.system, self.value, x, self.controls, self.disturbances);
        Decision {
            control: self.controls[u].clone(),
            disturbance: self.disturbances[d].clone(),
            hg: None,
            branch: None,
        }
    }
}

/// Stored per-node policy, read at the nearest node.
pub struct NodePolicy<'a>(pub &'a TabularPolicy);

impl FeedbackPolicy for NodePolicy<'_> {
    fn decide(&self, x: &[f64]) -> Decision {
        let (u, d) = self.0.lookup(x);
        Decision {
            control: u.to_vec(),
            disturbance: d.to_vec(),
            hg: None,
            branch: None,
        }
    }
}

/// Trained control actor with its disturbance actor.
pub struct NeuralPolicy<'a> {
    pub control: &'a Mlp,
    pub disturbance: &'a Mlp,
}

impl FeedbackPolicy for NeuralPolicy<'_> {
    fn decide(&self, x: &[f64]) -> Decision {
        Decision {
            control: self.control.eval(x),
            disturbance: self.disturbance.eval(x),
            hg: None,
            branch: None,
        }
    }
}

/// `π_V` while `H_g ≤ 0`, `π_H` otherwise.
pub struct SwitchingPolicy<H, R, S> {
    pub hg: H,
    pub reach: R,
    pub stay: S,
}

impl<H: ScalarField, R: FeedbackPolicy, S: FeedbackPolicy> SwitchingPolicy<H, R, S> {
    pub fn branch(&self, x: &[f64]) -> (Branch, f64) {
        let h = self.hg.value(x);
        (
            if h <= 0.0 {
                Branch::Reach
            } else {
                Branch::Stay
            },
            h,
        )
    }

    pub fn ras_action(&self, x: &[f64]) -> Vec<f64> {
        self.decide(x).control
    }
}

impl<H: ScalarField, R: FeedbackPolicy, S: FeedbackPolicy> FeedbackPolicy
    for SwitchingPolicy<H, R, S>
{
    fn decide(&self, x: &[f64]) -> Decision {
        let (branch, h) = self.branch(x);
        let mut d = match branch {
            Branch::Reach => self.reach.decide(x),
            Branch::Stay => self.stay.decide(x),
        };
        d.hg = Some(h);
        d.branch = Some(branch);
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DisturbanceMode {
    /// The policy's companion disturbance.
    Adversarial,
    /// Uniform over the disturbance bounds.
    Random,
    Zero,
}

impl std::str::FromStr for DisturbanceMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "adversarial" => Ok(Self::Adversarial),
            "random" => Ok(Self::Random),
            "zero" => Ok(Self::Zero),
            other => Err(format!("unknown disturbance mode `{other}`")),
        }
    }
}

impl std::fmt::Display for DisturbanceMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Adversarial => "adversarial",
            Self::Random => "random",
            Self::Zero => "zero",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub state: Vec<f64>,
    pub control: Vec<f64>,
    pub disturbance: Vec<f64>,
    pub g: f64,
    pub l: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub hg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub branch: Option<Branch>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryHeader {
    pub format: String,
    pub version: u32,
    pub policy: String,
    pub mode: DisturbanceMode,
    pub seed: u64,
    pub horizon: usize,
    pub initial_state: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub config_hash: Option<String>,
}

/// A closed-loop trajectory: `horizon` logged steps plus the final state.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub policy: String,
    pub mode: DisturbanceMode,
    pub seed: u64,
    pub horizon: usize,
    pub initial_state: Vec<f64>,
    pub steps: Vec<StepRecord>,
    pub final_state: Vec<f64>,
    pub final_g: f64,
    pub final_l: f64,
}

/// Per-trajectory success predicates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    /// `l > 0` at every visited state.
    pub safe: bool,
    /// `g > 0` at some visited state.
    pub reach: bool,
    /// `g > 0` from some time through the horizon.
    pub stay: bool,
    /// Start of the final run of `g > 0`, when `stay` holds.
    pub tau: Option<usize>,
}

impl TrajectoryRecord {
    /// `(g, l)` at `x_0, …, x_horizon`.
    pub fn signals(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.steps
            .iter()
            .map(|s| (s.g, s.l))
            .chain(std::iter::once((self.final_g, self.final_l)))
    }

    pub fn states(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.steps
            .iter()
            .map(|s| s.state.as_slice())
            .chain(std::iter::once(self.final_state.as_slice()))
    }

    pub fn outcome(&self) -> Outcome {
        let mut safe = true;
        let mut reach = false;
        let mut run_start = None;
        for (t, (g, l)) in self.signals().enumerate() {
            safe &= l > 0.0;
            if g > 0.0 {
                reach = true;
                run_start.get_or_insert(t);
            } else {
                run_start = None;
            }
        }
        Outcome {
            safe,
            reach,
            stay: run_start.is_some(),
            tau: run_start,
        }
    }

    /// Step index of the first reach-to-stay switch.
    pub fn first_switch(&self) -> Option<usize> {
        self.steps
            .windows(2)
            .find(|w| w[0].branch == Some(Branch::Reach) && w[1].branch == Some(Branch::Stay))
            .map(|w| w[1].t)
    }

    pub fn header(&self, config_hash: Option<&str>) -> TrajectoryHeader {
        TrajectoryHeader {
            format: TRAJECTORY_FORMAT.into(),
            version: FORMAT_VERSION,
            policy: self.policy.clone(),
            mode: self.mode,
            seed: self.seed,
            horizon: self.horizon,
            initial_state: self.initial_state.clone(),
            config_hash: config_hash.map(str::to_string),
        }
    }

    /// Line-delimited JSON: a header line, one line per step, then the final state.
    pub fn to_jsonl(&self, config_hash: Option<&str>) -> String {
        let mut s = serde_json::to_string(&self.header(config_hash)).expect("header serializes");
        s.push('\n');
        for step in &self.steps {
            s.push_str(&serde_json::to_string(step).expect("step serializes"));
            s.push('\n');
        }
        let last = serde_json::json!({
            "t": self.horizon,
            "state": self.final_state,
            "g": self.final_g,
            "l": self.final_l,
        });
        let _ = writeln!(s, "{last}");
        s
    }
}

fn check_bounds(
    step: usize,
    what: &'static str,
    v: &[f64],
    bounds: &[Interval],
) -> Result<(), SimError> {
    if v.len() != bounds.len() || !v.iter().zip(bounds).all(|(x, b)| b.contains(*x)) {
        return Err(SimError::ContractViolation {
            step,
            what,
            value: v.to_vec(),
        });
    }
    Ok(())
}

/// Simulates `x_{t+1} = f(x_t, π(x_t), d_t)` for `horizon` steps.
#[allow(clippy::too_many_arguments)]
pub fn rollout<S: ControlSystem + ?Sized, P: FeedbackPolicy + ?Sized>(
    system: &S,
    policy: &P,
    policy_name: &str,
    mode: DisturbanceMode,
    x0: &[f64],
    horizon: usize,
    seed: u64,
) -> Result<TrajectoryRecord, SimError> {
    if horizon == 0 {
        return Err(SimError::ZeroHorizon);
    }
    if x0.len() != system.state_dim() {
        return Err(SystemError::Dimension {
            what: "state",
            expected: system.state_dim(),
            got: x0.len(),
        }
        .into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = x0.to_vec();
    let mut steps = Vec::with_capacity(horizon);
    let mut next = vec![0.0; x.len()];
    for t in 0..horizon {
        let dec = policy.decide(&x);
        check_bounds(t, "control", &dec.control, system.control_bounds())?;
        let d = match mode {
            DisturbanceMode::Adversarial => {
                check_bounds(
                    t,
                    "disturbance",
                    &dec.disturbance,
                    system.disturbance_bounds(),
                )?;
                dec.disturbance
            }
            DisturbanceMode::Random => system
                .disturbance_bounds()
                .iter()
                .map(|b| b.lower + b.width() * rng.random::<f64>())
                .collect(),
            DisturbanceMode::Zero => vec![0.0; system.disturbance_dim()],
        };
        system.step_into(&x, &dec.control, &d, &mut next);
        if !next.iter().all(|v| v.is_finite()) {
            return Err(SystemError::InvalidState(next.clone()).into());
        }
        steps.push(StepRecord {
            t,
            g: system.target_reward(&x),
            l: system.constraint(&x),
            state: std::mem::replace(&mut x, next.clone()),
            control: dec.control,
            disturbance: d,
            hg: dec.hg,
            branch: dec.branch,
        });
    }
    Ok(TrajectoryRecord {
        policy: policy_name.to_string(),
        mode,
        seed,
        horizon,
        initial_state: x0.to_vec(),
        steps,
        final_g: system.target_reward(&x),
        final_l: system.constraint(&x),
        final_state: x,
    })
}

/// Per-trajectory seed derived from the master seed.
pub fn trajectory_seed(master: u64, index: usize) -> u64 {
    master ^ index as u64
}

/// Independent rollouts from each initial state, run in parallel; trajectory
/// `i` uses seed `master ^ i`.
pub fn rollout_many<S: ControlSystem + ?Sized, P: FeedbackPolicy + ?Sized>(
    system: &S,
    policy: &P,
    policy_name: &str,
    mode: DisturbanceMode,
    initial_states: &[Vec<f64>],
    horizon: usize,
    master_seed: u64,
) -> Result<Vec<TrajectoryRecord>, SimError> {
    initial_states
        .par_iter()
        .enumerate()
        .map(|(i, x0)| {
            rollout(
                system,
                policy,
                policy_name,
                mode,
                x0,
                horizon,
                trajectory_seed(master_seed, i),
            )
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub total: usize,
    pub safe: usize,
    pub reach: usize,
    pub stay: usize,
    pub safe_reach: usize,
    pub safe_stay: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub safe: f64,
    pub reach: f64,
    pub stay: f64,
    pub safe_reach: f64,
    pub safe_stay: f64,
}

impl Counts {
    fn add(&mut self, o: &Outcome) {
        self.total += 1;
        self.safe += usize::from(o.safe);
        self.reach += usize::from(o.reach);
        self.stay += usize::from(o.stay);
        self.safe_reach += usize::from(o.safe && o.reach);
        self.safe_stay += usize::from(o.safe && o.stay);
    }

    pub fn rates(&self) -> Rates {
        let n = self.total as f64;
        Rates {
            safe: self.safe as f64 / n,
            reach: self.reach as f64 / n,
            stay: self.stay as f64 / n,
            safe_reach: self.safe_reach as f64 / n,
            safe_stay: self.safe_stay as f64 / n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalGroup {
    pub policy: String,
    pub mode: DisturbanceMode,
    pub counts: Counts,
    pub rates: Rates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format: String,
    pub version: u32,
    pub counts: Counts,
    pub rates: Rates,
    /// One entry per (policy, disturbance mode), in order of first appearance.
    pub groups: Vec<EvalGroup>,
}

impl EvalReport {
    pub fn group(&self, policy: &str, mode: DisturbanceMode) -> Option<&EvalGroup> {
        self.groups
            .iter()
            .find(|g| g.policy == policy && g.mode == mode)
    }
}

pub fn evaluate_success(trajectories: &[TrajectoryRecord]) -> Result<EvalReport, SimError> {
    if trajectories.is_empty() {
        return Err(SimError::Empty);
    }
    let mut all = Counts::default();
    let mut groups: Vec<(String, DisturbanceMode, Counts)> = Vec::new();
    for tr in trajectories {
        let o = tr.outcome();
        all.add(&o);
        match groups
            .iter_mut()
            .find(|(p, m, _)| *p == tr.policy && *m == tr.mode)
        {
            Some((_, _, c)) => c.add(&o),
            None => {
                let mut c = Counts::default();
                c.add(&o);
                groups.push((tr.policy.clone(), tr.mode, c));
            }
        }
    }
    Ok(EvalReport {
        format: REPORT_FORMAT.into(),
        version: FORMAT_VERSION,
        counts: all,
        rates: all.rates(),
        groups: groups
            .into_iter()
            .map(|(policy, mode, counts)| EvalGroup {
                policy,
                mode,
                rates: counts.rates(),
                counts,
            })
            .collect(),
    })
}

/// Uniform rejection sampling over the grid box, keeping states whose
/// interpolated value exceeds `threshold`.
pub fn sample_initial_states(
    value: &ValueGrid,
    threshold: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>, SimError> {
    let fail = |accepted, draws| SimError::SamplingFailure {
        requested: count,
        accepted,
        draws,
    };
    if count > 0 && !(value.max() > threshold) {
        return Err(fail(0, 0));
    }
    let bounds = value.spec().bounds();
    let max_draws = ((count as f64 / SAMPLING_FLOOR).ceil() as usize).max(1000);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut draws = 0;
    while out.len() < count {
        if draws >= max_draws {
            return Err(fail(out.len(), draws));
        }
        draws += 1;
        let x: Vec<f64> = bounds
            .iter()
            .map(|b| b.lower + b.width() * rng.random::<f64>())
            .collect();
        if value.interpolate(&x) > threshold {
            out.push(x);
        }
    }
    Ok(out)
}

/// Volume of `{value > threshold}`: each node above the threshold contributes
/// its share of the grid box (trapezoidal weights, so boundary nodes count half
/// per boundary axis).
pub fn set_area(value: &ValueGrid, threshold: f64) -> f64 {
    let spec = value.spec();
    let cell = spec.cell_volume();
    value
        .values()
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > threshold)
        .map(|(i, _)| {
            spec.multi_index(i)
                .iter()
                .zip(spec.axes())
                .map(|(&k, a)| if k == 0 || k + 1 == a.count { 0.5 } else { 1.0 })
                .product::<f64>()
                * cell
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::system::SystemModel;

    struct Fixed(Vec<f64>, Vec<f64>);

    impl FeedbackPolicy for Fixed {
        fn decide(&self, _x: &[f64]) -> Decision {
            Decision {
                control: self.0.clone(),
                disturbance: self.1.clone(),
                hg: None,
                branch: None,
            }
        }
    }

    struct Const(f64);

    impl ScalarField for Const {
        fn value(&self, _x: &[f64]) -> f64 {
            self.0
        }
    }

    fn switching(h: f64) -> SwitchingPolicy<Const, Fixed, Fixed> {
        SwitchingPolicy {
            hg: Const(h),
            reach: Fixed(vec![-1.0], vec![0.0]),
            stay: Fixed(vec![1.0], vec![0.0]),
        }
    }

    #[test]
    fn ras_action_branches() {
        assert_eq!(switching(-0.4).ras_action(&[0.0]), vec![-1.0]);
        assert_eq!(switching(0.7).ras_action(&[0.0]), vec![1.0]);
        assert_eq!(switching(0.0).ras_action(&[0.0]), vec![-1.0]);
    }

    fn record(gs: &[f64], ls: &[f64]) -> TrajectoryRecord {
        let n = gs.len() - 1;
        TrajectoryRecord {
            policy: "p".into(),
            mode: DisturbanceMode::Zero,
            seed: 0,
            horizon: n,
            initial_state: vec![0.0],
            steps: (0..n)
                .map(|t| StepRecord {
                    t,
                    state: vec![0.0],
                    control: vec![0.0],
                    disturbance: vec![0.0],
                    g: gs[t],
                    l: ls[t],
                    hg: None,
                    branch: None,
                })
                .collect(),
            final_state: vec![0.0],
            final_g: gs[n],
            final_l: ls[n],
        }
    }

    #[test]
    fn outcome_predicates() {
        let o = record(&[1.0; 5], &[1.0; 5]).outcome();
        assert!(o.safe && o.reach && o.stay);
        assert_eq!(o.tau, Some(0));

        let o = record(&[1.0; 5], &[1.0, 1.0, -0.1, 1.0, 1.0]).outcome();
        assert!(!o.safe && o.reach && o.stay);

        let mut g = vec![-1.0; 80];
        g[10..50].fill(0.5);
        let o = record(&g, &[1.0; 80]).outcome();
        assert!(o.reach && !o.stay && o.tau.is_none());

        let mut g = vec![-1.0; 20];
        g[4..].fill(0.5);
        assert_eq!(record(&g, &[1.0; 20]).outcome().tau, Some(4));
    }

    #[test]
    fn report_rates_are_counts_over_total() {
        let mut trs = vec![record(&[1.0; 3], &[1.0; 3]), record(&[-1.0; 3], &[1.0; 3])];
        trs[1].mode = DisturbanceMode::Random;
        trs.push(record(&[-1.0, 1.0, -1.0], &[-1.0; 3]));
        let rep = evaluate_success(&trs).unwrap();
        assert_eq!(rep.counts.total, 3);
        assert_eq!(rep.counts.reach, 2);
        assert_eq!(rep.counts.safe_stay, 1);
        assert_eq!(rep.rates.reach, 2.0 / 3.0);
        assert_eq!(rep.groups.len(), 2);
        assert_eq!(
            rep.group("p", DisturbanceMode::Zero).unwrap().counts.total,
            2
        );
        assert!(rep.rates.stay <= rep.rates.reach && rep.rates.safe_reach <= rep.rates.safe);
        assert_eq!(evaluate_success(&[]), Err(SimError::Empty));
    }

    #[test]
    fn rollout_replays_exactly() {
        let sys = SystemModel::cart2d();
        let p = Fixed(vec![-1.5], vec![1.0]);
        for mode in [
            DisturbanceMode::Adversarial,
            DisturbanceMode::Random,
            DisturbanceMode::Zero,
        ] {
            let tr = rollout(&sys, &p, "fixed", mode, &[4.0, -2.0], 50, 9).unwrap();
            let mut x = tr.initial_state.clone();
            for s in &tr.steps {
                assert_eq!(s.state, x);
                x = sys.step(&x, &s.control, &s.disturbance).unwrap();
            }
            assert_eq!(x, tr.final_state);
        }
    }

    #[test]
    fn out_of_bounds_control_is_a_contract_violation() {
        let sys = SystemModel::cart2d();
        let err = rollout(
            &sys,
            &Fixed(vec![3.5], vec![0.0]),
            "bad",
            DisturbanceMode::Zero,
            &[0.0, 0.0],
            5,
            0,
        )
        .unwrap_err();
        assert!(matches!(
            err,
            SimError::ContractViolation {
                step: 0,
                what: "control",
                ..
            }
        ));
        assert_eq!(
            rollout(
                &sys,
                &Fixed(vec![0.0], vec![0.0]),
                "p",
                DisturbanceMode::Zero,
                &[0.0, 0.0],
                0,
                0
            )
            .unwrap_err(),
            SimError::ZeroHorizon
        );
    }

    #[test]
    fn random_mode_stays_in_bounds_and_is_seeded() {
        let sys = SystemModel::cart2d();
        let p = Fixed(vec![0.0], vec![0.0]);
        let a = rollout(&sys, &p, "p", DisturbanceMode::Random, &[0.0, 0.0], 100, 4).unwrap();
        let b = rollout(&sys, &p, "p", DisturbanceMode::Random, &[0.0, 0.0], 100, 4).unwrap();
        assert_eq!(a, b);
        assert!(a.steps.iter().all(|s| s.disturbance[0].abs() <= 2.0));
        let many = rollout_many(
            &sys,
            &p,
            "p",
            DisturbanceMode::Random,
            &vec![vec![0.0, 0.0]; 3],
            10,
            4,
        )
        .unwrap();
        assert_eq!(
            many[0],
            rollout(&sys, &p, "p", DisturbanceMode::Random, &[0.0, 0.0], 10, 4).unwrap()
        );
        assert_eq!(many[2].seed, 6);
    }

    #[test]
    fn jsonl_has_header_steps_and_final_line() {
        let sys = SystemModel::cart2d();
        let tr = rollout(
            &sys,
            &switching(0.5),
            "ras",
            DisturbanceMode::Zero,
            &[0.0, 0.0],
            3,
            1,
        )
        .unwrap();
        let text = tr.to_jsonl(Some("abc"));
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 5);
        let header: TrajectoryHeader = serde_json::from_str(lines[0]).unwrap();
        assert_eq!(header.format, TRAJECTORY_FORMAT);
        assert_eq!(header.config_hash.as_deref(), Some("abc"));
        let step: StepRecord = serde_json::from_str(lines[1]).unwrap();
        assert_eq!(step, tr.steps[0]);
        assert_eq!(step.branch, Some(Branch::Stay));
    }

    fn unit_grid(value: f64) -> ValueGrid {
        let spec = GridSpec::from_bounds(&[0.0, 0.0], &[1.0, 1.0], &[11, 11]).unwrap();
        ValueGrid::from_fn(spec, |_| value)
    }

    #[test]
    fn area_of_constant_grids() {
        assert!((set_area(&unit_grid(1.0), 0.0) - 1.0).abs() < 1e-12);
        assert_eq!(set_area(&unit_grid(-1.0), 0.0), 0.0);
    }

    #[test]
    fn sampling_rules() {
        let spec = GridSpec::from_bounds(&[0.0, 0.0], &[1.0, 1.0], &[11, 11]).unwrap();
        let g = ValueGrid::from_fn(spec, |x| x[0] - 0.5);
        assert!(matches!(
            sample_initial_states(&g, 1.0, 10, 0),
            Err(SimError::SamplingFailure { .. })
        ));
        let all = sample_initial_states(&g, -10.0, 50, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let first: Vec<Vec<f64>> = (0..50)
            .map(|_| vec![rng.random::<f64>(), rng.random::<f64>()])
            .collect();
        assert_eq!(all, first);
        let pos = sample_initial_states(&g, 0.0, 200, 1).unwrap();
        assert!(pos.iter().all(|x| g.interpolate(x) > 0.0));
        assert_eq!(pos, sample_initial_states(&g, 0.0, 200, 1).unwrap());
    }
}

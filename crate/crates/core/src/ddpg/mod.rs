//! Two-stage actor-critic training of the stay value `H` and the
//! reach-avoid-stay value `V`.
//!
//! Each stage trains a critic and two actors: a control actor that ascends the
//! critic evaluated at the successor state and a disturbance actor that
//! descends it. Critic targets come from slowly updated target copies of all
//! three networks. Successor states are clamped to the training domain, so the
//! networks see the same boundary rule as the grid solver.

mod mlp;
mod replay;

pub use mlp::{
    mlp_gradient_check, vector_relative_error, Adam, ForwardCache, GradientCheck, Gradients, Layer,
    Mlp, MlpDocument, OutputMap, KINK_MARGIN, MLP_FORMAT,
};
pub use replay::{ReplayBuffer, Transition};

use crate::grid::ValueGrid;
use crate::solver::splice;
use crate::system::{ControlSystem, Interval};
use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DdpgError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid network: {0}")]
    InvalidNetwork(String),
    #[error("gradient check failed: max relative error {max_relative_error:e} > {tolerance:e}")]
    GradientCheck {
        max_relative_error: f64,
        tolerance: f64,
    },
    #[error("training diverged in stage {stage} at iteration {iteration}: critic loss {loss:e}")]
    Divergence {
        stage: Stage,
        iteration: usize,
        loss: f64,
        last_snapshot: Option<EvalSnapshot>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    H,
    V,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::H => "h",
            Stage::V => "v",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DdpgConfig {
    pub gamma: f64,
    /// Samples per gradient step (S).
    pub batch_size: usize,
    pub critic_rate: f64,
    pub actor_rate: f64,
    /// Soft target-update rate.
    pub tau: f64,
    /// Exploration noise standard deviation as a fraction of each input's bound width.
    pub noise_scale: f64,
    pub hidden: Vec<usize>,
    pub iterations_h: usize,
    pub iterations_v: usize,
    /// Iterations between evaluation snapshots.
    pub eval_every: usize,
    /// Stop a stage once the reference agreement has not improved for this many snapshots.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patience: Option<usize>,
    pub episode_horizon: usize,
    pub buffer_capacity: usize,
    /// Critic loss above which training is declared divergent.
    pub loss_ceiling: f64,
    /// A neural `H` counts as negative for the splice only below `-splice_margin`.
    pub splice_margin: f64,
    pub gradient_probes: usize,
    pub gradient_tolerance: f64,
    pub seed: u64,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            batch_size: 128,
            critic_rate: 1e-3,
            actor_rate: 1e-4,
            tau: 0.02,
            noise_scale: 0.1,
            hidden: vec![64, 64, 64],
            iterations_h: 20_000,
            iterations_v: 40_000,
            eval_every: 1000,
            patience: None,
            episode_horizon: 100,
            buffer_capacity: 200_000,
            loss_ceiling: 1e6,
            splice_margin: 0.02,
            gradient_probes: 100,
            gradient_tolerance: 1e-4,
            seed: 0,
        }
    }
}

impl DdpgConfig {
    pub fn validate(&self) -> Result<(), DdpgError> {
        let bad = |m: &str| Err(DdpgError::InvalidConfig(m.into()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.critic_rate > 0.0 && self.actor_rate > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if !(self.noise_scale >= 0.0) {
            return bad("noise_scale must be non-negative");
        }
        if self.eval_every == 0 || self.episode_horizon == 0 || self.buffer_capacity == 0 {
            return bad("eval_every, episode_horizon and buffer_capacity must be positive");
        }
        if !(self.splice_margin >= 0.0) {
            return bad("splice_margin must be non-negative");
        }
        Ok(())
    }
}

/// A critic with its control and disturbance actors.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorCritic {
    pub critic: Mlp,
    pub control: Mlp,
    pub disturbance: Mlp,
}

impl ActorCritic {
    pub fn new<S: ControlSystem + ?Sized, R: Rng + ?Sized>(
        system: &S,
        domain: &[Interval],
        hidden: &[usize],
        rng: &mut R,
    ) -> Self {
        let widths = |out: usize| {
            let mut w = vec![system.state_dim()];
            w.extend_from_slice(hidden);
            w.push(out);
            w
        };
        Self {
            critic: Mlp::new(&widths(1), OutputMap::Identity, domain, rng),
            control: Mlp::new(
                &widths(system.control_dim()),
                OutputMap::squash(system.control_bounds()),
                domain,
                rng,
            ),
            disturbance: Mlp::new(
                &widths(system.disturbance_dim()),
                OutputMap::squash(system.disturbance_bounds()),
                domain,
                rng,
            ),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.critic.is_finite() && self.control.is_finite() && self.disturbance.is_finite()
    }

    fn soft_update_into(&self, target: &mut ActorCritic, tau: f64) {
        self.critic.soft_update_into(&mut target.critic, tau);
        self.control.soft_update_into(&mut target.control, tau);
        self.disturbance
            .soft_update_into(&mut target.disturbance, tau);
    }

    pub fn to_document(&self) -> ActorCriticDocument {
        ActorCriticDocument {
            critic: self.critic.to_document(),
            control: self.control.to_document(),
            disturbance: self.disturbance.to_document(),
        }
    }

    pub fn from_document(doc: &ActorCriticDocument) -> Result<Self, DdpgError> {
        Ok(Self {
            critic: Mlp::from_document(&doc.critic)?,
            control: Mlp::from_document(&doc.control)?,
            disturbance: Mlp::from_document(&doc.disturbance)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActorCriticDocument {
    pub critic: MlpDocument,
    pub control: MlpDocument,
    pub disturbance: MlpDocument,
}

/// Source of `H_g` for the reach stage.
#[derive(Debug, Clone, PartialEq)]
pub enum HgEvaluator {
    /// Interpolated tabular `H_g`.
    Grid(ValueGrid),
    /// Frozen `H` critic spliced with `g`.
    Neural { critic: Mlp, margin: f64 },
}

impl HgEvaluator {
    pub fn eval<S: ControlSystem + ?Sized>(&self, system: &S, x: &[f64]) -> f64 {
        match self {
            HgEvaluator::Grid(g) => g.interpolate(x),
            HgEvaluator::Neural { critic, margin } => {
                splice(critic.eval(x)[0], system.target_reward(x), *margin)
            }
        }
    }

    pub fn eval_batch<S: ControlSystem + ?Sized>(
        &self,
        system: &S,
        states: ArrayView2<f64>,
    ) -> Vec<f64> {
        let states = states.as_standard_layout();
        let states = states.view();
        match self {
            HgEvaluator::Grid(g) => states
                .rows()
                .into_iter()
                .map(|r| g.interpolate(r.as_slice().unwrap()))
                .collect(),
            HgEvaluator::Neural { critic, margin } => {
                let h = critic.forward(states);
                states
                    .rows()
                    .into_iter()
                    .zip(h.iter())
                    .map(|(r, &hv)| {
                        splice(hv, system.target_reward(r.as_slice().unwrap()), *margin)
                    })
                    .collect()
            }
        }
    }
}

fn check_batch(states: ArrayView2<f64>) -> Result<(), DdpgError> {
    if states.nrows() == 0 {
        Err(DdpgError::EmptyBatch)
    } else {
        Ok(())
    }
}

/// Rows of `f(x, u, d)` clamped to `domain`, with a flag per entry that is
/// true where the clamp was inactive.
fn successors<S: ControlSystem + ?Sized>(
    system: &S,
    domain: &[Interval],
    states: ArrayView2<f64>,
    u: ArrayView2<f64>,
    d: ArrayView2<f64>,
) -> (Array2<f64>, Vec<bool>) {
    let (states, u, d) = (
        states.as_standard_layout(),
        u.as_standard_layout(),
        d.as_standard_layout(),
    );
    let (b, n) = states.dim();
    let mut next = Array2::zeros((b, n));
    let mut free = vec![true; b * n];
    for i in 0..b {
        let mut row = next.row_mut(i);
        let out = row.as_slice_mut().unwrap();
        system.step_into(
            states.row(i).as_slice().unwrap(),
            u.row(i).as_slice().unwrap(),
            d.row(i).as_slice().unwrap(),
            out,
        );
        for (j, v) in out.iter_mut().enumerate() {
            let c = domain[j].clamp(*v);
            free[i * n + j] = c == *v;
            *v = c;
        }
    }
    (next, free)
}

/// `min(gbar, γ·next)`.
pub fn h_target(gbar: f64, discounted_next: f64) -> f64 {
    gbar.min(discounted_next)
}

/// `min(l, max(H_g, γ·next))`.
pub fn v_target(l: f64, hg: f64, discounted_next: f64) -> f64 {
    l.min(hg.max(discounted_next))
}

/// Critic values at the successors reached under `nets`' actors.
fn next_values<S: ControlSystem + ?Sized>(
    system: &S,
    domain: &[Interval],
    nets: &ActorCritic,
    states: ArrayView2<f64>,
) -> Vec<f64> {
    let u = nets.control.forward(states);
    let d = nets.disturbance.forward(states);
    let (next, _) = successors(system, domain, states, u.view(), d.view());
    nets.critic.forward(next.view()).into_raw_vec_and_offset().0
}

/// Regression targets for the `H` critic, computed from `nets`.
pub fn h_targets<S: ControlSystem + ?Sized>(
    system: &S,
    domain: &[Interval],
    nets: &ActorCritic,
    states: ArrayView2<f64>,
    gamma: f64,
) -> Vec<f64> {
    let states = states.as_standard_layout();
    let states = states.view();
    let next = next_values(system, domain, nets, states);
    states
        .rows()
        .into_iter()
        .zip(next)
        .map(|(x, w)| h_target(system.gbar(x.as_slice().unwrap()), gamma * w))
        .collect()
}

/// Regression targets for the `V` critic, computed from `nets` and `hg`.
pub fn v_targets<S: ControlSystem + ?Sized>(
    system: &S,
    domain: &[Interval],
    nets: &ActorCritic,
    hg: &HgEvaluator,
    states: ArrayView2<f64>,
    gamma: f64,
) -> Vec<f64> {
    let states = states.as_standard_layout();
    let states = states.view();
    let next = next_values(system, domain, nets, states);
    let hgv = hg.eval_batch(system, states);
    states
        .rows()
        .into_iter()
        .zip(next.into_iter().zip(hgv))
        .map(|(x, (w, h))| v_target(system.constraint(x.as_slice().unwrap()), h, gamma * w))
        .collect()
}

/// Mean of `(target - critic(x))²` and its gradient in the critic parameters;
/// targets are constants.
pub fn residual_loss(
    critic: &Mlp,
    states: ArrayView2<f64>,
    targets: &[f64],
) -> Result<(f64, Gradients), DdpgError> {
    check_batch(states)?;
    assert_eq!(targets.len(), states.nrows());
    let cache = critic.forward_cached(states);
    let b = states.nrows() as f64;
    let mut loss = 0.0;
    let mut grad = Array2::zeros((states.nrows(), 1));
    for (i, &y) in targets.iter().enumerate() {
        let r = cache.output[(i, 0)] - y;
        loss += r * r;
        grad[(i, 0)] = 2.0 * r / b;
    }
    let (grads, _) = critic.backward(&cache, grad.view());
    Ok((loss / b, grads))
}

/// `H` critic loss with targets from `target_nets`.
pub fn critic_loss_h<S: ControlSystem + ?Sized>(
    system: &S,
    domain: &[Interval],
    critic: &Mlp,
    target_nets: &ActorCritic,
    states: ArrayView2<f64>,
    gamma: f64,
) -> Result<(f64, Gradients), DdpgError> {
    check_batch(states)?;
    let y = h_targets(system, domain, target_nets, states, gamma);
    residual_loss(critic, states, &y)
}

/// `V` critic loss with targets from `target_nets` and the frozen `hg`.
pub fn critic_loss_v<S: ControlSystem + ?Sized>(
    system: &S,
    domain: &[Interval],
    critic: &Mlp,
    target_nets: &ActorCritic,
    hg: &HgEvaluator,
    states: ArrayView2<f64>,
    gamma: f64,
) -> Result<(f64, Gradients), DdpgError> {
    check_batch(states)?;
    let y = v_targets(system, domain, target_nets, hg, states, gamma);
    residual_loss(critic, states, &y)
}

/// Gradients of `J = mean critic(f(x, π_u(x), π_d(x)))`.
#[derive(Debug, Clone)]
pub struct ActorGradients {
    pub objective: f64,
    /// `∂J/∂θ_u`; the control actor ascends it.
    pub control: Gradients,
    /// `∂J/∂θ_d`; the disturbance actor descends it.
    pub disturbance: Gradients,
    /// `∂J/∂u` per sample.
    pub control_action: Array2<f64>,
    /// `∂J/∂d` per sample.
    pub disturbance_action: Array2<f64>,
}

pub fn actor_gradients<S: ControlSystem + ?Sized>(
    system: &S,
    domain: &[Interval],
    nets: &ActorCritic,
    states: ArrayView2<f64>,
) -> Result<ActorGradients, DdpgError> {
    check_batch(states)?;
    let b = states.nrows();
    let cu = nets.control.forward_cached(states);
    let cd = nets.disturbance.forward_cached(states);
    let (next, free) = successors(system, domain, states, cu.output.view(), cd.output.view());
    let cc = nets.critic.forward_cached(next.view());
    let objective = cc.output.sum() / b as f64;
    let seed = Array2::from_elem((b, 1), 1.0 / b as f64);
    let (_, cot_next) = nets.critic.backward(&cc, seed.view());
    let mut cot_next = cot_next.as_standard_layout().into_owned();
    let states = states.as_standard_layout();
    let (uo, dout) = (
        cu.output.as_standard_layout(),
        cd.output.as_standard_layout(),
    );
    for (g, &f) in cot_next.iter_mut().zip(&free) {
        if !f {
            *g = 0.0;
        }
    }
    let mut gu = Array2::zeros(cu.output.raw_dim());
    let mut gd = Array2::zeros(cd.output.raw_dim());
    for i in 0..b {
        let (a, c) = system.step_vjp(
            states.row(i).as_slice().unwrap(),
            uo.row(i).as_slice().unwrap(),
            dout.row(i).as_slice().unwrap(),
            cot_next.row(i).as_slice().unwrap(),
        );
        gu.row_mut(i).assign(&ndarray::ArrayView1::from(&a));
        gd.row_mut(i).assign(&ndarray::ArrayView1::from(&c));
    }
    let (control, _) = nets.control.backward(&cu, gu.view());
    let (disturbance, _) = nets.disturbance.backward(&cd, gd.view());
    Ok(ActorGradients {
        objective,
        control,
        disturbance,
        control_action: gu,
        disturbance_action: gd,
    })
}

/// Periodic training statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSnapshot {
    pub stage: Stage,
    pub iteration: usize,
    /// Mean critic loss since the previous snapshot.
    pub critic_loss: f64,
    /// Mean actor objective since the previous snapshot.
    pub actor_objective: f64,
    /// Sign agreement on the held-out reference sample, when one is given.
    pub agreement: Option<f64>,
}

/// Loss curve CSV.
pub fn snapshots_to_csv(snapshots: &[EvalSnapshot]) -> String {
    let mut s = String::from("stage,iteration,critic_loss,actor_objective,agreement\n");
    for e in snapshots {
        let a = e.agreement.map(|a| a.to_string()).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{a}",
            e.stage, e.iteration, e.critic_loss, e.actor_objective
        );
    }
    s
}

/// Tabular value used to monitor a stage: membership is `value > threshold`.
#[derive(Debug, Clone, Copy)]
pub struct SignReference<'a> {
    pub grid: &'a ValueGrid,
    pub threshold: f64,
}

/// Nodes held out for monitoring.
const MONITOR_NODES: usize = 2000;

/// Fraction of grid nodes where `critic > threshold` agrees with `grid > threshold`.
pub fn sign_agreement(critic: &Mlp, grid: &ValueGrid, threshold: f64) -> f64 {
    let states = grid.spec().node_states();
    let n = grid.spec().ndim();
    let view = ArrayView2::from_shape((grid.spec().len(), n), &states).unwrap();
    let out = critic.forward(view);
    let agree = out
        .iter()
        .zip(grid.values())
        .filter(|(&a, &b)| (a > threshold) == (b > threshold))
        .count();
    agree as f64 / grid.values().len() as f64
}

#[derive(Debug, Clone)]
pub struct TrainedStage {
    pub nets: ActorCritic,
    pub snapshots: Vec<EvalSnapshot>,
    pub iterations: usize,
}

fn uniform_state<R: Rng>(domain: &[Interval], rng: &mut R) -> Vec<f64> {
    domain
        .iter()
        .map(|b| b.lower + b.width() * rng.random::<f64>())
        .collect()
}

fn noisy<R: Rng>(a: &[f64], bounds: &[Interval], scale: f64, rng: &mut R) -> Vec<f64> {
    a.iter()
        .zip(bounds)
        .map(|(&v, b)| {
            let n: f64 = StandardNormal.sample(rng);
            b.clamp(v + scale * b.width() * n)
        })
        .collect()
}

enum Targets<'a> {
    H,
    V(&'a HgEvaluator),
}

fn train_stage<S: ControlSystem + ?Sized>(
    system: &S,
    domain: &[Interval],
    config: &DdpgConfig,
    stage: Stage,
    targets: Targets<'_>,
    reference: Option<SignReference<'_>>,
    seed: u64,
) -> Result<TrainedStage, DdpgError> {
    config.validate()?;
    let iterations = match stage {
        Stage::H => config.iterations_h,
        Stage::V => config.iterations_v,
    };
    let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut env_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0001);
    let mut online = ActorCritic::new(system, domain, &config.hidden, &mut init_rng);
    let mut target = online.clone();
    let mut opt_c = Adam::new(&online.critic, config.critic_rate);
    let mut opt_u = Adam::new(&online.control, config.actor_rate);
    let mut opt_d = Adam::new(&online.disturbance, config.actor_rate);
    let mut buffer = ReplayBuffer::new(config.buffer_capacity, seed ^ 0x5eed_0002);

    let monitor: Option<(Array2<f64>, Vec<f64>, f64)> = reference.map(|r| {
        let spec = r.grid.spec();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0003);
        let count = MONITOR_NODES.min(spec.len());
        let nodes: Vec<usize> = (0..count)
            .map(|_| rng.random_range(0..spec.len()))
            .collect();
        let mut states = Array2::zeros((count, spec.ndim()));
        for (k, &i) in nodes.iter().enumerate() {
            states
                .row_mut(k)
                .assign(&ndarray::Array1::from(spec.node_state_flat(i)));
        }
        let values = nodes.iter().map(|&i| r.grid.values()[i]).collect();
        (states, values, r.threshold)
    });

    let n = system.state_dim();
    let mut x = uniform_state(domain, &mut env_rng);
    let mut t = 0;
    let mut snapshots = Vec::new();
    let (mut loss_sum, mut obj_sum, mut count) = (0.0, 0.0, 0usize);
    let mut best = f64::NEG_INFINITY;
    let mut stale = 0;
    let mut batch = Array2::zeros((config.batch_size, n));
    let mut done = iterations;

    for it in 1..=iterations {
        let scale = config.noise_scale * (1.0 - (it - 1) as f64 / iterations as f64);
        let u = noisy(
            &online.control.eval(&x),
            system.control_bounds(),
            scale,
            &mut env_rng,
        );
        let d = noisy(
            &online.disturbance.eval(&x),
            system.disturbance_bounds(),
            scale,
            &mut env_rng,
        );
        let next = system.step_vec(&x, &u, &d);
        let inside = next.iter().zip(domain).all(|(v, b)| b.contains(*v));
        buffer.push(Transition {
            state: x.clone(),
            control: u,
            disturbance: d,
            next: next.clone(),
        });
        t += 1;
        if !inside || t >= config.episode_horizon {
            x = uniform_state(domain, &mut env_rng);
            t = 0;
        } else {
            x = next;
        }

        for (k, tr) in buffer.sample(config.batch_size).into_iter().enumerate() {
            batch
                .row_mut(k)
                .assign(&ndarray::ArrayView1::from(&tr.state));
        }
        let (loss, grads) = match targets {
            Targets::H => critic_loss_h(
                system,
                domain,
                &online.critic,
                &target,
                batch.view(),
                config.gamma,
            )?,
            Targets::V(hg) => critic_loss_v(
                system,
                domain,
                &online.critic,
                &target,
                hg,
                batch.view(),
                config.gamma,
            )?,
        };
        opt_c.apply(&mut online.critic, &grads);
        let ag = actor_gradients(system, domain, &online, batch.view())?;
        let mut up = ag.control;
        up.scale(-1.0);
        opt_u.apply(&mut online.control, &up);
        opt_d.apply(&mut online.disturbance, &ag.disturbance);
        online.soft_update_into(&mut target, config.tau);

        loss_sum += loss;
        obj_sum += ag.objective;
        count += 1;
        if !loss.is_finite() || loss > config.loss_ceiling || !online.is_finite() {
            return Err(DdpgError::Divergence {
                stage,
                iteration: it,
                loss,
                last_snapshot: snapshots.last().cloned(),
            });
        }
        if it % config.eval_every == 0 || it == iterations {
            let agreement = monitor.as_ref().map(|(states, values, thr)| {
                let out = online.critic.forward(states.view());
                let agree = out
                    .iter()
                    .zip(values)
                    .filter(|(&a, &b)| (a > *thr) == (b > *thr))
                    .count();
                agree as f64 / values.len() as f64
            });
            snapshots.push(EvalSnapshot {
                stage,
                iteration: it,
                critic_loss: loss_sum / count as f64,
                actor_objective: obj_sum / count as f64,
                agreement,
            });
            (loss_sum, obj_sum, count) = (0.0, 0.0, 0);
            if let Some(a) = agreement {
                if a > best {
                    best = a;
                    stale = 0;
                } else {
                    stale += 1;
                    if config.patience.is_some_and(|p| stale >= p) {
                        done = it;
                        break;
                    }
                }
            }
        }
    }
    Ok(TrainedStage {
        nets: online,
        snapshots,
        iterations: done,
    })
}

/// Stage 1: trains the `H` critic and its actors.
pub fn train_stage_h<S: ControlSystem + ?Sized>(
    system: &S,
    domain: &[Interval],
    config: &DdpgConfig,
    reference: Option<SignReference<'_>>,
) -> Result<TrainedStage, DdpgError> {
    train_stage(
        system,
        domain,
        config,
        Stage::H,
        Targets::H,
        reference,
        config.seed,
    )
}

/// Stage 2: trains the `V` critic and its actors against a frozen `H_g`.
pub fn train_stage_v<S: ControlSystem + ?Sized>(
    system: &S,
    domain: &[Interval],
    config: &DdpgConfig,
    hg: &HgEvaluator,
    reference: Option<SignReference<'_>>,
) -> Result<TrainedStage, DdpgError> {
    train_stage(
        system,
        domain,
        config,
        Stage::V,
        Targets::V(hg),
        reference,
        config.seed.wrapping_add(0x9e37_79b9),
    )
}

/// Gradient check of freshly initialized stage networks at uniform domain probes.
pub fn initial_gradient_check<S: ControlSystem + ?Sized>(
    system: &S,
    domain: &[Interval],
    config: &DdpgConfig,
) -> Result<GradientCheck, DdpgError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let nets = ActorCritic::new(system, domain, &config.hidden, &mut rng);
    let mut probe_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0004);
    let probes: Vec<Vec<f64>> = (0..config.gradient_probes)
        .map(|_| uniform_state(domain, &mut probe_rng))
        .collect();
    let checks = [&nets.critic, &nets.control, &nets.disturbance]
        .map(|n| mlp_gradient_check(n, &probes, 1e-5));
    let worst = checks
        .iter()
        .map(|c| c.max_relative_error)
        .fold(0.0, f64::max);
    let result = GradientCheck {
        max_relative_error: worst,
        probes: probes.len(),
        shifted: checks.iter().map(|c| c.shifted).sum(),
    };
    if worst > config.gradient_tolerance {
        return Err(DdpgError::GradientCheck {
            max_relative_error: worst,
            tolerance: config.gradient_tolerance,
        });
    }
    Ok(result)
}

#[derive(Debug, Clone)]
pub struct TwoStepResult {
    pub gradient_check: GradientCheck,
    pub h: TrainedStage,
    pub hg: HgEvaluator,
    pub v: TrainedStage,
}

/// Monitoring references for [`train_two_step`].
#[derive(Debug, Clone, Copy, Default)]
pub struct References<'a> {
    pub h: Option<SignReference<'a>>,
    pub v: Option<SignReference<'a>>,
}

/// Gradient check, stage 1, neural splice, stage 2.
pub fn train_two_step<S: ControlSystem + ?Sized>(
    system: &S,
    domain: &[Interval],
    config: &DdpgConfig,
    references: References<'_>,
) -> Result<TwoStepResult, DdpgError> {
    config.validate()?;
    if domain.len() != system.state_dim() {
        return Err(DdpgError::InvalidConfig(
            "domain dimension must match the system".into(),
        ));
    }
    let gradient_check = initial_gradient_check(system, domain, config)?;
    let h = train_stage_h(system, domain, config, references.h)?;
    let hg = HgEvaluator::Neural {
        critic: h.nets.critic.clone(),
        margin: config.splice_margin,
    };
    let v = train_stage_v(system, domain, config, &hg, references.v)?;
    Ok(TwoStepResult {
        gradient_check,
        h,
        hg,
        v,
    })
}

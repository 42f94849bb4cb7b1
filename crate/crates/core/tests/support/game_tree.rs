//! Exhaustive strategy enumeration for small finite zero-sum games.
//!
//! Independent of the value-iteration code: every positional control strategy
//! is played against every positional disturbance strategy (which may react to
//! the control), each closed-loop trajectory is simulated until it cycles, and
//! the discounted payoff is evaluated in closed form on the first pass.

pub struct Table {
    pub nodes: usize,
    pub controls: usize,
    pub disturbances: usize,
    /// `next[s][u][d]`
    pub next: Vec<Vec<Vec<usize>>>,
}

fn strategies(slots: usize, choices: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..slots {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..choices).map(move |c| {
                    let mut q = p.clone();
                    q.push(c);
                    q
                })
            })
            .collect();
    }
    out
}

/// States visited from `start` until the first repetition.
fn first_pass(t: &Table, sigma: &[usize], delta: &[usize], start: usize) -> Vec<usize> {
    let mut seen = vec![false; t.nodes];
    let mut path = vec![];
    let mut s = start;
    while !seen[s] {
        seen[s] = true;
        path.push(s);
        let u = sigma[s];
        let d = delta[s * t.controls + u];
        s = t.next[s][u][d];
    }
    path
}

fn discount(gamma: f64, t: usize) -> f64 {
    (0..t).fold(1.0, |acc, _| acc * gamma)
}

/// `inf_t γ^t gbar(x_t)`: the most negative first-pass term, or the limit 0.
fn stay_payoff(path: &[usize], gbar: &[f64], gamma: f64) -> f64 {
    path.iter()
        .enumerate()
        .map(|(t, &s)| discount(gamma, t) * gbar[s])
        .fold(0.0, f64::min)
}

/// `sup_t min(γ^t target(x_t), min_{s<=t} γ^s l(x_s))`, first pass plus the limit.
fn reach_payoff(path: &[usize], l: &[f64], target: &[f64], gamma: f64) -> f64 {
    let mut running = f64::INFINITY;
    let mut best = f64::NEG_INFINITY;
    for (t, &s) in path.iter().enumerate() {
        let w = discount(gamma, t);
        running = running.min(w * l[s]);
        best = best.max((w * target[s]).min(running));
    }
    best.max(running.min(0.0))
}

fn solve(t: &Table, payoff: impl Fn(&[usize]) -> f64) -> Vec<f64> {
    let sigmas = strategies(t.nodes, t.controls);
    let deltas = strategies(t.nodes * t.controls, t.disturbances);
    (0..t.nodes)
        .map(|x| {
            sigmas
                .iter()
                .map(|sigma| {
                    deltas
                        .iter()
                        .map(|delta| payoff(&first_pass(t, sigma, delta, x)))
                        .fold(f64::INFINITY, f64::min)
                })
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

pub fn stay_values(t: &Table, gbar: &[f64], gamma: f64) -> Vec<f64> {
    solve(t, |p| stay_payoff(p, gbar, gamma))
}

pub fn reach_values(t: &Table, l: &[f64], target: &[f64], gamma: f64) -> Vec<f64> {
    solve(t, |p| reach_payoff(p, l, target, gamma))
}

/// The hand-built 3-state, 2-control, 2-disturbance game.
///
/// State 2 is outside the target and can be held there forever by the
/// disturbance. From state 1 every control lets the disturbance reach state 2
/// in one step; from state 0 the best control delays that by one more step.
/// The stay values are therefore `[-0.5 γ², -0.5 γ, -0.5]`.
pub fn hand_built() -> (Table, [f64; 3], [f64; 3], [f64; 3]) {
    let next = vec![
        vec![vec![1, 2], vec![0, 1]],
        vec![vec![0, 2], vec![2, 2]],
        vec![vec![2, 2], vec![0, 2]],
    ];
    let g = [0.6, 0.9, -0.5];
    let l = [1.0, 0.4, 0.2];
    let gbar = [0.6, 0.4, -0.5];
    (
        Table {
            nodes: 3,
            controls: 2,
            disturbances: 2,
            next,
        },
        g,
        l,
        gbar,
    )
}

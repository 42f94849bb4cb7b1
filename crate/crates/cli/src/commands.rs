//! Subcommand implementations. Each reads the config, consumes and writes
//! artifacts in the output directory, and returns a one-line summary plus a
//! JSON record for `meta.json`.

use crate::config::{PolicyKind, RunConfig};
use crate::render::{self, Outlines, Overlay, Slice};
use crate::store::{self, Store};
use crate::CliError;
use ras_core::ddpg::{
    sign_agreement, snapshots_to_csv, train_two_step, HgEvaluator, References, SignReference,
};
use ras_core::grid::ValueGrid;
use ras_core::sim::{
    evaluate_success, rollout, rollout_many, sample_initial_states, set_area, Branch,
    DisturbanceMode, FeedbackPolicy, GreedyPolicy, NeuralHg, NeuralPolicy, SwitchingPolicy,
    TrajectoryRecord,
};
use ras_core::solver::qlearn::q_learning_h;
use ras_core::solver::{
    build_hg, membership_epsilon, solve_h, solve_v, solve_v_ra, SolveReport, SolverConfig,
};
use ras_core::system::{ControlSystem, SystemModel};
use serde_json::{json, Value};

/// Membership threshold for the stay value, as a fraction of its range.
pub const H_EPSILON_FRACTION: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    SolveH,
    BuildHg,
    SolveV,
    SolveRa,
    Qlearn,
    TrainDdpg,
    Simulate,
    Evaluate,
    Render,
    Export,
}

impl Command {
    pub const ALL: [Command; 10] = [
        Command::SolveH,
        Command::BuildHg,
        Command::SolveV,
        Command::SolveRa,
        Command::Qlearn,
        Command::TrainDdpg,
        Command::Simulate,
        Command::Evaluate,
        Command::Render,
        Command::Export,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Command::SolveH => "solve-h",
            Command::BuildHg => "build-hg",
            Command::SolveV => "solve-v",
            Command::SolveRa => "solve-ra",
            Command::Qlearn => "qlearn",
            Command::TrainDdpg => "train-ddpg",
            Command::Simulate => "simulate",
            Command::Evaluate => "evaluate",
            Command::Render => "render",
            Command::Export => "export",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub line: String,
    pub record: Value,
}

pub fn run(command: Command, config: &RunConfig) -> Result<Summary, CliError> {
    config.validate()?;
    let store = Store::new(config)?;
    let system = config.system()?;
    let summary = match command {
        Command::SolveH => solve_h_cmd(config, &store, &system)?,
        Command::BuildHg => build_hg_cmd(&store, &system)?,
        Command::SolveV => solve_v_cmd(config, &store, &system)?,
        Command::SolveRa => solve_ra_cmd(config, &store, &system)?,
        Command::Qlearn => qlearn_cmd(config, &store, &system)?,
        Command::TrainDdpg => train_ddpg_cmd(config, &store, &system)?,
        Command::Simulate => simulate_cmd(config, &store, &system)?,
        Command::Evaluate => evaluate_cmd(config, &store, &system)?,
        Command::Render => render_cmd(config, &store, &system)?,
        Command::Export => export_cmd(config, &store)?,
    };
    store.record(config, command.name(), summary.record.clone())?;
    Ok(Summary {
        line: format!("{}: {}", command.name(), summary.line),
        record: summary.record,
    })
}

fn solve_record(report: &SolveReport, config: &SolverConfig) -> Value {
    json!({
        "sweeps": report.sweeps,
        "final_residual": report.final_residual,
        "tolerance": config.tolerance,
        "residuals": report.residuals,
    })
}

fn solve_line(report: &SolveReport, config: &SolverConfig) -> String {
    format!(
        "converged in {} sweeps, residual {:.3e} <= {:.0e}",
        report.sweeps, report.final_residual, config.tolerance
    )
}

fn solve_h_cmd(
    config: &RunConfig,
    store: &Store,
    system: &SystemModel,
) -> Result<Summary, CliError> {
    let sc = config.solver_config(system)?;
    let sol = solve_h(system, &config.grid_spec()?, &sc)?;
    store.write_grid(store::H, &sol.value)?;
    store.write(store::POLICY_H, sol.policy.to_csv(Some(store.stamp())))?;
    Ok(Summary {
        line: format!(
            "{}; H in [{:.4}, {:.4}]",
            solve_line(&sol.report, &sc),
            sol.value.min(),
            sol.value.max()
        ),
        record: solve_record(&sol.report, &sc),
    })
}

fn build_hg_cmd(store: &Store, system: &SystemModel) -> Result<Summary, CliError> {
    let h = store.read_grid(store::H)?;
    let hg = build_hg(&h, system);
    store.write_grid(store::HG, &hg)?;
    let positive = hg.values().iter().filter(|&&v| v > 0.0).count();
    Ok(Summary {
        line: format!("{positive} of {} nodes have H_g > 0", hg.values().len()),
        record: json!({ "positive_nodes": positive, "nodes": hg.values().len() }),
    })
}

fn solve_v_cmd(
    config: &RunConfig,
    store: &Store,
    system: &SystemModel,
) -> Result<Summary, CliError> {
    let hg = store.read_grid(store::HG)?;
    let sc = config.solver_config(system)?;
    let sol = solve_v(system, &config.grid_spec()?, &hg, &sc)?;
    store.write_grid(store::V, &sol.value)?;
    store.write(store::POLICY_V, sol.policy.to_csv(Some(store.stamp())))?;
    Ok(Summary {
        line: solve_line(&sol.report, &sc),
        record: solve_record(&sol.report, &sc),
    })
}

fn solve_ra_cmd(
    config: &RunConfig,
    store: &Store,
    system: &SystemModel,
) -> Result<Summary, CliError> {
    let sc = config.solver_config(system)?;
    let sol = solve_v_ra(system, &config.grid_spec()?, &sc)?;
    store.write_grid(store::V_RA, &sol.value)?;
    store.write(store::POLICY_RA, sol.policy.to_csv(Some(store.stamp())))?;
    Ok(Summary {
        line: solve_line(&sol.report, &sc),
        record: solve_record(&sol.report, &sc),
    })
}

/// Fraction of nodes on which both grids agree about `value > threshold`.
pub fn grid_sign_agreement(a: &ValueGrid, b: &ValueGrid, threshold: f64) -> f64 {
    let agree = a
        .values()
        .iter()
        .zip(b.values())
        .filter(|(&x, &y)| (x > threshold) == (y > threshold))
        .count();
    agree as f64 / a.values().len() as f64
}

pub fn sup_gap(a: &ValueGrid, b: &ValueGrid) -> f64 {
    a.values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Membership threshold `-ε` for the stay value.
pub fn h_threshold(h: &ValueGrid) -> f64 {
    -membership_epsilon(h, H_EPSILON_FRACTION)
}

fn qlearn_cmd(
    config: &RunConfig,
    store: &Store,
    system: &SystemModel,
) -> Result<Summary, CliError> {
    let sc = config.solver_config(system)?;
    let q = config.qlearn_config();
    let (hq, report) = q_learning_h(system, &config.grid_spec()?, &q, &sc)?;
    store.write_grid(store::H_QLEARN, &hq)?;
    let mut record = json!({ "config": q, "report": report });
    let mut line = format!("{} updates", report.updates);
    if let Some(h) = store.read_grid_if_present(store::H)? {
        let threshold = h_threshold(&h);
        let agreement = grid_sign_agreement(&hq, &h, threshold);
        let gap = sup_gap(&hq, &h);
        record["comparison"] =
            json!({ "threshold": threshold, "sign_agreement": agreement, "sup_gap": gap });
        line.push_str(&format!(
            "; sign agreement {:.4}, sup gap {gap:.4} against {}",
            agreement,
            store::H
        ));
    }
    store.write_json(store::QLEARN_REPORT, &record)?;
    Ok(Summary { line, record })
}

fn train_ddpg_cmd(
    config: &RunConfig,
    store: &Store,
    system: &SystemModel,
) -> Result<Summary, CliError> {
    let dc = config.ddpg_config();
    let h = store.read_grid_if_present(store::H)?;
    let v = store.read_grid_if_present(store::V)?;
    let refs = References {
        h: h.as_ref().map(|g| SignReference {
            grid: g,
            threshold: h_threshold(g),
        }),
        v: v.as_ref().map(|g| SignReference {
            grid: g,
            threshold: 0.0,
        }),
    };
    let result = train_two_step(system, &config.domain(), &dc, refs)?;
    store.write_nets(store::DDPG_H, &result.h.nets)?;
    store.write_nets(store::DDPG_V, &result.v.nets)?;
    let mut log = result.h.snapshots.clone();
    log.extend(result.v.snapshots.iter().cloned());
    store.write(store::DDPG_LOG, snapshots_to_csv(&log))?;
    let agreement =
        |r: &Option<SignReference>, critic| r.map(|r| sign_agreement(critic, r.grid, r.threshold));
    let h_agree = agreement(&refs.h, &result.h.nets.critic);
    let v_agree = agreement(&refs.v, &result.v.nets.critic);
    let record = json!({
        "config": dc,
        "gradient_check": result.gradient_check,
        "iterations_h": result.h.iterations,
        "iterations_v": result.v.iterations,
        "h_sign_agreement": h_agree,
        "v_sign_agreement": v_agree,
    });
    store.write_json(store::DDPG_REPORT, &record)?;
    let fmt = |a: Option<f64>| a.map_or("n/a".to_string(), |a| format!("{a:.4}"));
    Ok(Summary {
        line: format!(
            "gradient check {:.2e}; sign agreement H {} V {}",
            result.gradient_check.max_relative_error,
            fmt(h_agree),
            fmt(v_agree)
        ),
        record,
    })
}

/// Everything a policy may need, loaded from the output directory.
struct PolicyInputs {
    h: Option<ValueGrid>,
    hg: Option<ValueGrid>,
    v: Option<ValueGrid>,
    v_ra: Option<ValueGrid>,
    nets: Option<(
        ras_core::ddpg::ActorCritic,
        ras_core::ddpg::ActorCritic,
        HgEvaluator,
    )>,
}

impl PolicyInputs {
    fn load(config: &RunConfig, store: &Store) -> Result<Self, CliError> {
        let want = |k| config.evaluation.policies.contains(&k);
        let mut p = PolicyInputs {
            h: None,
            hg: None,
            v: None,
            v_ra: None,
            nets: None,
        };
        if want(PolicyKind::Ras) {
            p.h = Some(store.read_grid(store::H)?);
            p.hg = Some(store.read_grid(store::HG)?);
            p.v = Some(store.read_grid(store::V)?);
        }
        if want(PolicyKind::Ra) {
            p.v_ra = Some(store.read_grid(store::V_RA)?);
        }
        if want(PolicyKind::Ddpg) {
            let h = store.read_nets(store::DDPG_H)?;
            let v = store.read_nets(store::DDPG_V)?;
            let hg = HgEvaluator::Neural {
                critic: h.critic.clone(),
                margin: config.ddpg_config().splice_margin,
            };
            p.nets = Some((h, v, hg));
        }
        Ok(p)
    }
}

/// Calls `f` with the policy object for `kind`.
fn with_policy<R>(
    kind: PolicyKind,
    inputs: &PolicyInputs,
    system: &SystemModel,
    lattices: &SolverConfig,
    f: impl FnOnce(&dyn FeedbackPolicy) -> R,
) -> R {
    let greedy = |value| GreedyPolicy {
        system,
        value,
        controls: &lattices.controls,
        disturbances: &lattices.disturbances,
    };
    match kind {
        PolicyKind::Ras => {
            let (h, hg, v) = (inputs.h.as_ref(), inputs.hg.as_ref(), inputs.v.as_ref());
            let p = SwitchingPolicy {
                hg: hg.expect("loaded").clone(),
                reach: greedy(v.expect("loaded")),
                stay: greedy(h.expect("loaded")),
            };
            f(&p)
        }
        PolicyKind::Ra => f(&greedy(inputs.v_ra.as_ref().expect("loaded"))),
        PolicyKind::Ddpg => {
            let (h, v, hg) = inputs.nets.as_ref().expect("loaded");
            let p = SwitchingPolicy {
                hg: NeuralHg {
                    system,
                    evaluator: hg,
                },
                reach: NeuralPolicy {
                    control: &v.control,
                    disturbance: &v.disturbance,
                },
                stay: NeuralPolicy {
                    control: &h.control,
                    disturbance: &h.disturbance,
                },
            };
            f(&p)
        }
    }
}

fn traj_name(policy: PolicyKind, mode: DisturbanceMode) -> String {
    format!("{}/{}_{}.jsonl", store::TRAJ_DIR, policy.as_str(), mode)
}

fn simulate_cmd(
    config: &RunConfig,
    store: &Store,
    system: &SystemModel,
) -> Result<Summary, CliError> {
    let inputs = PolicyInputs::load(config, store)?;
    let sc = config.solver_config(system)?;
    let x0 = config.initial_state();
    let mut records = Vec::new();
    let mut parts = Vec::new();
    for &kind in &config.evaluation.policies {
        for &mode in &config.evaluation.modes {
            let tr = with_policy(kind, &inputs, system, &sc, |p| {
                rollout(
                    system,
                    p,
                    kind.as_str(),
                    mode,
                    &x0,
                    config.evaluation.horizon,
                    config.master_seed,
                )
            })?;
            store.write(
                &traj_name(kind, mode),
                tr.to_jsonl(Some(&store.stamp().config_hash)),
            )?;
            let o = tr.outcome();
            parts.push(format!(
                "{}/{mode} safe={} reach={} stay={}",
                kind.as_str(),
                o.safe,
                o.reach,
                o.stay
            ));
            records.push(json!({
                "policy": kind.as_str(),
                "mode": mode,
                "file": traj_name(kind, mode),
                "outcome": o,
                "first_switch": tr.first_switch(),
            }));
        }
    }
    Ok(Summary {
        line: parts.join(", "),
        record: json!({ "initial_state": x0, "trajectories": records }),
    })
}

fn evaluate_cmd(
    config: &RunConfig,
    store: &Store,
    system: &SystemModel,
) -> Result<Summary, CliError> {
    let e = &config.evaluation;
    let v = store.read_grid(store::V)?;
    let inputs = PolicyInputs::load(config, store)?;
    let sc = config.solver_config(system)?;
    let threshold = membership_epsilon(&v, e.threshold_fraction);
    let x0 = sample_initial_states(&v, threshold, e.count, config.master_seed)?;
    let mut all: Vec<TrajectoryRecord> = Vec::new();
    for &kind in &e.policies {
        for &mode in &e.modes {
            let trs = with_policy(kind, &inputs, system, &sc, |p| {
                rollout_many(
                    system,
                    p,
                    kind.as_str(),
                    mode,
                    &x0,
                    e.horizon,
                    config.master_seed,
                )
            })?;
            all.extend(trs);
        }
    }
    let report = evaluate_success(&all)?;
    let record = json!({
        "sampling": {
            "grid": store::V,
            "threshold": threshold,
            "count": e.count,
            "seed": config.master_seed,
        },
        "horizon": e.horizon,
        "disturbances": {
            "adversarial": "companion minimizer of the tabular policy, or the trained disturbance actor",
            "random": "uniform over the disturbance bounds, per-trajectory seed master_seed ^ index",
            "zero": "zero vector",
        },
        "report": report,
    });
    store.write_json(store::REPORT, &record)?;
    let line = report
        .groups
        .iter()
        .map(|g| {
            format!(
                "{}/{} safe-reach {:.3} stay {:.3}",
                g.policy, g.mode, g.rates.safe_reach, g.rates.stay
            )
        })
        .collect::<Vec<_>>()
        .join(", ");
    Ok(Summary { line, record })
}

/// Switch point and projected path of a logged trajectory.
fn overlay_from_jsonl(text: &str, axes: [usize; 2], label: &str) -> Option<Overlay> {
    let mut points = Vec::new();
    let mut marker = None;
    let mut last_branch: Option<Branch> = None;
    for line in text.lines().skip(1) {
        let v: Value = serde_json::from_str(line).ok()?;
        let state: Vec<f64> = serde_json::from_value(v.get("state")?.clone()).ok()?;
        let p = [*state.get(axes[0])?, *state.get(axes[1])?];
        let branch: Option<Branch> = v
            .get("branch")
            .and_then(|b| serde_json::from_value(b.clone()).ok());
        if marker.is_none() && last_branch == Some(Branch::Reach) && branch == Some(Branch::Stay) {
            marker = Some(p);
        }
        last_branch = branch.or(last_branch);
        points.push(p);
    }
    Some(Overlay {
        label: label.to_string(),
        points,
        marker,
    })
}

fn render_cmd(
    config: &RunConfig,
    store: &Store,
    system: &SystemModel,
) -> Result<Summary, CliError> {
    let section = config.render_section();
    let spec = config.grid_spec()?;
    let outlines = Outlines {
        target: render::zero_contour(&Slice::of_fn(&spec, &section, |x| system.target_reward(x))?),
        obstacle: render::zero_contour(&Slice::of_fn(&spec, &section, |x| -system.constraint(x))?),
    };
    let mut overlays = Vec::new();
    let traj_dir = store.path(store::TRAJ_DIR);
    if traj_dir.is_dir() {
        let mut files: Vec<_> = std::fs::read_dir(&traj_dir)
            .map_err(|e| CliError::io(&traj_dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        files.sort();
        for path in files {
            let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
            let label = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let overlay = overlay_from_jsonl(&text, section.axes, &label)
                .ok_or_else(|| CliError::artifact(&path, "unreadable trajectory"))?;
            overlays.push(overlay);
        }
    }
    let mut written = Vec::new();
    for name in [store::H, store::HG, store::V, store::V_RA, store::H_QLEARN] {
        let Some(grid) = store.read_grid_if_present(name)? else {
            continue;
        };
        let stem = name.trim_end_matches(".csv");
        let s = Slice::of_grid(&grid, &section)?;
        store.write(
            &format!("{}/{stem}.pgm", store::FIG_DIR),
            render::to_pgm(&s, section.pixels_per_cell),
        )?;
        let title = format!("{stem} (config {})", store.stamp().config_hash);
        let svg = render::to_svg(&s, &title, section.pixels_per_cell, &outlines, &overlays);
        store.write(&format!("{}/{stem}.svg", store::FIG_DIR), svg)?;
        written.push(stem.to_string());
    }
    if written.is_empty() {
        return Err(CliError::MissingArtifact(store.path(store::H)));
    }
    Ok(Summary {
        line: format!(
            "rendered {} with {} trajectory overlays",
            written.join(", "),
            overlays.len()
        ),
        record: json!({ "figures": written, "overlays": overlays.len(), "axes": section.axes, "fixed": section.fixed }),
    })
}

fn export_cmd(config: &RunConfig, store: &Store) -> Result<Summary, CliError> {
    let h = store.read_grid(store::H)?;
    let v = store.read_grid(store::V)?;
    let as_area = set_area(&h, h_threshold(&h));
    let ras_area = set_area(&v, 0.0);
    let mut areas = json!({
        "benchmark": config.benchmark.to_string(),
        "as": { "area": as_area, "grid": store::H, "threshold": h_threshold(&h) },
        "ras": { "area": ras_area, "grid": store::V, "threshold": 0.0 },
    });
    let mut grids = vec![(store::H, h), (store::V, v)];
    for name in [store::HG, store::V_RA, store::H_QLEARN] {
        if let Some(g) = store.read_grid_if_present(name)? {
            if name == store::V_RA {
                areas["ra"] =
                    json!({ "area": set_area(&g, 0.0), "grid": store::V_RA, "threshold": 0.0 });
            }
            grids.push((name, g));
        }
    }
    for (name, g) in &grids {
        let stem = name.trim_end_matches(".csv");
        store.write(
            &format!("{}/{stem}.json", store::EXPORT_DIR),
            g.to_json(stem, Some(store.stamp())) + "\n",
        )?;
    }
    store.write_json(store::AREAS, &areas)?;
    if !(ras_area > as_area && as_area > 0.0) {
        return Err(CliError::Check(format!(
            "expected area(RAS) > area(AS) > 0, got RAS {ras_area} and AS {as_area}"
        )));
    }
    Ok(Summary {
        line: format!("area AS {as_area:.4}, RAS {ras_area:.4}"),
        record: areas,
    })
}

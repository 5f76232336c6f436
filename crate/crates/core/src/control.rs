//! Closed-loop evaluation of decentralized reactive power controllers
//! against the nonlinear power flow, with optional substation tap
//! collaboration and gap reporting against the batch optimum.

use chrono::NaiveDateTime;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::feeder::{downstream_order, FeederModel, Topology};
use crate::opf::{inverter_capacity, OpfConfig, OpfSolution};
use crate::powerflow::{solve_powerflow_with, Injections, PowerFlowSolution, SweepOptions};
use crate::regression::RegressionModel;
use crate::scenario::ScenarioSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerKind {
    None,
    ConstPf,
    Regression,
}

/// One inverter's control law. Controllers see only the local quadruple
/// (p_c, q_c, p_g, capacity); voltage never enters, so closed-loop
/// evaluation needs no fixed point between control and power flow.
#[derive(Debug, Clone)]
pub struct ControllerSpec {
    pub kind: ControllerKind,
    /// Lagging power factor for the constant-pf law.
    pub pf: f64,
    pub model: Option<RegressionModel>,
    /// Clamp regression predictions to the capacity band. The constant-pf
    /// law always clamps.
    pub clip: bool,
}

impl ControllerSpec {
    pub fn none() -> Self {
        ControllerSpec {
            kind: ControllerKind::None,
            pf: 0.9,
            model: None,
            clip: true,
        }
    }

    pub fn const_pf(pf: f64) -> Result<Self> {
        let spec = ControllerSpec {
            kind: ControllerKind::ConstPf,
            pf,
            model: None,
            clip: true,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn regression(model: RegressionModel) -> Self {
        ControllerSpec {
            kind: ControllerKind::Regression,
            pf: 0.9,
            model: Some(model),
            clip: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pf > 0.0 && self.pf <= 1.0) {
            return Err(Error::Config(format!(
                "power factor must lie in (0, 1], got {}",
                self.pf
            )));
        }
        if self.kind == ControllerKind::Regression && self.model.is_none() {
            return Err(Error::Config(
                "regression controller needs a model".into(),
            ));
        }
        Ok(())
    }
}

/// Local measurements available to one inverter's controller.
#[derive(Debug, Clone, Copy)]
pub struct LocalMeasurement {
    pub p_c: f64,
    pub q_c: f64,
    pub p_g: f64,
    pub q_cap: f64,
}

/// Reactive setpoint for one inverter from its local data only. Valid
/// specs never error.
pub fn controller_output(spec: &ControllerSpec, local: &LocalMeasurement) -> Result<f64> {
    spec.validate()?;
    let cap = local.q_cap;
    Ok(match spec.kind {
        ControllerKind::None => 0.0,
        ControllerKind::ConstPf => {
            let q = local.p_g * spec.pf.acos().tan();
            q.clamp(-cap, cap)
        }
        ControllerKind::Regression => {
            let model = spec.model.as_ref().expect("validated above");
            let q = model.predict(local.p_c, local.q_c, local.p_g, local.q_cap);
            if spec.clip {
                q.clamp(-cap, cap)
            } else {
                q
            }
        }
    })
}

/// Ideal ratio transformer at the substation: tap t scales the slack
/// squared voltage by (1 + t*tap_step)^2.
#[derive(Debug, Clone, Copy)]
pub struct LtcConfig {
    pub tap_step: f64,
    pub tap_range: i32,
    /// Squared-voltage target the feeder is steered toward.
    pub v_target: f64,
    /// Safety buffer above v_min, in squared-voltage units.
    pub margin: f64,
}

impl Default for LtcConfig {
    fn default() -> Self {
        LtcConfig {
            tap_step: 0.00625,
            tap_range: 16,
            v_target: 0.98 * 0.98,
            margin: 0.005,
        }
    }
}

impl LtcConfig {
    pub fn ratio(&self, tap: i32) -> f64 {
        1.0 + tap as f64 * self.tap_step
    }
}

/// Chooses the tap minimizing total deviation from the voltage target
/// subject to the minimum-voltage guard, ties toward tap 0. When no tap
/// satisfies the guard, falls back to the tap maximizing the minimum bus
/// voltage. Inverter outputs in `inj` are already fixed.
pub fn ltc_select_tap(
    model: &FeederModel,
    topo: &Topology,
    inj: &Injections,
    ltc: &LtcConfig,
    cfg: &OpfConfig,
    sweep: &SweepOptions,
) -> Result<(i32, PowerFlowSolution)> {
    let floor = cfg.v_min + ltc.margin;
    let prefer = |tap: i32, best: i32| -> bool {
        (tap.abs(), tap) < (best.abs(), best)
    };
    let mut feasible: Option<(f64, i32, PowerFlowSolution)> = None;
    let mut fallback: Option<(f64, i32, PowerFlowSolution)> = None;
    for tap in -ltc.tap_range..=ltc.tap_range {
        let ratio = ltc.ratio(tap);
        let v0 = ratio * ratio * cfg.slack_v;
        let sol = match solve_powerflow_with(model, topo, inj, v0, sweep) {
            Ok(s) => s,
            Err(_) => continue,
        };
        let v_min = sol.v.iter().copied().fold(f64::INFINITY, f64::min);
        if v_min >= floor {
            let dev: f64 = sol.v.iter().map(|v| (v - ltc.v_target).abs()).sum();
            let take = match &feasible {
                None => true,
                Some((d, t, _)) => dev < *d || (dev == *d && prefer(tap, *t)),
            };
            if take {
                feasible = Some((dev, tap, sol));
            }
            continue;
        }
        let take = match &fallback {
            None => true,
            Some((m, t, _)) => v_min > *m || (v_min == *m && prefer(tap, *t)),
        };
        if take {
            fallback = Some((v_min, tap, sol));
        }
    }
    feasible
        .or(fallback)
        .map(|(_, tap, sol)| (tap, sol))
        .ok_or_else(|| {
            Error::Simulation("no tap position admits a converged power flow".into())
        })
}

/// Realized operating point for one timestep.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub v: Vec<f64>,
    pub p_flow: Vec<f64>,
    pub q_flow: Vec<f64>,
    pub ell: Vec<f64>,
    /// Applied setpoints, one per inverter in model order.
    pub q_g: Vec<f64>,
    pub sub_p: f64,
    pub sub_q: f64,
    pub tap: Option<i32>,
    pub objective: f64,
}

impl StepResult {
    pub fn v_min(&self) -> f64 {
        self.v.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn v_max(&self) -> f64 {
        self.v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// One approach simulated over every timestep; non-converged steps keep
/// their error in place.
#[derive(Debug)]
pub struct ApproachRun {
    pub label: String,
    pub steps: Vec<Result<StepResult>>,
}

/// Runs over a shared scenario window; approaches are comparable row by
/// row.
#[derive(Debug)]
pub struct SimulationReport {
    pub timestamps: Vec<NaiveDateTime>,
    pub runs: Vec<ApproachRun>,
}

impl SimulationReport {
    /// Folds another report over the same window into this one.
    pub fn merge(&mut self, other: SimulationReport) -> Result<()> {
        if other.timestamps != self.timestamps {
            return Err(Error::Simulation(
                "cannot merge reports over different scenario windows".into(),
            ));
        }
        self.runs.extend(other.runs);
        Ok(())
    }

    pub fn run(&self, label: &str) -> Option<&ApproachRun> {
        self.runs.iter().find(|r| r.label == label)
    }
}

/// Canonical approach label from the controller mix.
pub fn approach_label(specs: &[ControllerSpec], ltc: bool) -> String {
    let base = if specs.iter().any(|s| s.kind == ControllerKind::Regression) {
        "regression"
    } else if specs.iter().any(|s| s.kind == ControllerKind::ConstPf) {
        "constpf"
    } else {
        "none"
    };
    if ltc {
        format!("{base}-ltc")
    } else {
        base.to_string()
    }
}

/// Objective evaluated on a nonlinear solution: total loss plus the
/// weighted sum of absolute voltage deviations over every bus.
pub fn objective_value(
    topo: &Topology,
    sol: &PowerFlowSolution,
    cfg: &OpfConfig,
) -> Result<f64> {
    if !sol.converged {
        return Err(Error::Simulation(
            "objective requires a converged power flow".into(),
        ));
    }
    let dev: f64 = sol.v.iter().map(|v| (v - cfg.v_ref).abs()).sum();
    Ok(sol.total_loss(topo) + cfg.gamma * dev)
}

fn run_step(
    model: &FeederModel,
    topo: &Topology,
    scen: &ScenarioSet,
    t: usize,
    specs: &[ControllerSpec],
    inv_bus: &[usize],
    ltc: Option<&LtcConfig>,
    cfg: &OpfConfig,
    sweep: &SweepOptions,
) -> Result<StepResult> {
    let mut inj = scen.injections_at(t);
    let mut q_applied = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let b = inv_bus[i];
        let cap = inverter_capacity(inj.p_g[b], model.inverters[i].s_rated)?;
        let q = controller_output(
            spec,
            &LocalMeasurement {
                p_c: inj.p_c[b],
                q_c: inj.q_c[b],
                p_g: inj.p_g[b],
                q_cap: cap,
            },
        )?;
        inj.q_g[b] = q;
        q_applied.push(q);
    }
    let (tap, sol) = match ltc {
        Some(l) => {
            let (tap, sol) = ltc_select_tap(model, topo, &inj, l, cfg, sweep)?;
            (Some(tap), sol)
        }
        None => (
            None,
            solve_powerflow_with(model, topo, &inj, cfg.slack_v, sweep)?,
        ),
    };
    let (sub_p, sub_q) = sol.substation_power(topo);
    let objective = objective_value(topo, &sol, cfg)?;
    Ok(StepResult {
        v: sol.v,
        p_flow: sol.p_flow,
        q_flow: sol.q_flow,
        ell: sol.ell,
        q_g: q_applied,
        sub_p,
        sub_q,
        tap,
        objective,
    })
}

/// Simulates one approach over the whole scenario window. Controllers act
/// on local measurements, the optional tap is chosen after their outputs
/// settle, and each step records the realized nonlinear operating point.
pub fn simulate(
    model: &FeederModel,
    scen: &ScenarioSet,
    specs: &[ControllerSpec],
    ltc: Option<&LtcConfig>,
    cfg: &OpfConfig,
    sweep: &SweepOptions,
) -> Result<SimulationReport> {
    scen.check_model(model)?;
    cfg.validate()?;
    if specs.len() != model.inverters.len() {
        return Err(Error::Config(format!(
            "{} controller specs for {} inverters",
            specs.len(),
            model.inverters.len()
        )));
    }
    for spec in specs {
        spec.validate()?;
    }
    let topo = downstream_order(model)?;
    let inv_bus: Vec<usize> = model
        .inverters
        .iter()
        .map(|inv| model.bus_index(&inv.bus).expect("validated model"))
        .collect();

    let steps: Vec<Result<StepResult>> = (0..scen.len())
        .into_par_iter()
        .map(|t| run_step(model, &topo, scen, t, specs, &inv_bus, ltc, cfg, sweep))
        .collect();

    Ok(SimulationReport {
        timestamps: scen.timestamps.clone(),
        runs: vec![ApproachRun {
            label: approach_label(specs, ltc.is_some()),
            steps,
        }],
    })
}

#[derive(Debug, Clone, Copy)]
pub struct GapStats {
    pub max: f64,
    pub mean: f64,
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
}

/// Comparison of one approach against the per-step optimum.
#[derive(Debug)]
pub struct ApproachSummary {
    pub label: String,
    pub n_steps: usize,
    pub n_failed: usize,
    /// Steps without a usable optimal objective (failed solve or J <= 0).
    pub n_excluded: usize,
    /// Relative gap per timestep; None where failed or excluded.
    pub gaps: Vec<Option<f64>>,
    pub gap_stats: Option<GapStats>,
    /// Per-step voltage envelope (min, max) over all buses.
    pub v_env: Vec<Option<(f64, f64)>>,
    pub v_min: f64,
    pub v_max: f64,
    pub sub_p_range: (f64, f64),
    pub sub_q_range: (f64, f64),
    /// (min, max) per-step reduction of substation reactive injection
    /// relative to the no-control run, when one is present.
    pub q_reduction_vs_none: Option<(f64, f64)>,
}

#[derive(Debug)]
pub struct GapReport {
    pub approaches: Vec<ApproachSummary>,
    pub notes: Vec<String>,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    // nearest-rank on a sorted slice
    let n = sorted.len();
    let idx = ((q * n as f64).ceil() as usize).clamp(1, n) - 1;
    sorted[idx]
}

/// Per-step relative gaps against the optimal objective plus run-level
/// envelopes. Steps whose optimal objective is missing or non-positive
/// are excluded from gap statistics and counted in the notes.
pub fn gap_report(sim: &SimulationReport, opf: &[Result<OpfSolution>]) -> Result<GapReport> {
    if opf.len() != sim.timestamps.len() {
        return Err(Error::Simulation(format!(
            "{} optimal solutions for {} timesteps",
            opf.len(),
            sim.timestamps.len()
        )));
    }
    let j_opf: Vec<Option<f64>> = opf.iter().map(|r| r.as_ref().ok().map(|s| s.objective)).collect();
    let none_q0: Option<Vec<Option<f64>>> = sim.run("none").map(|run| {
        run.steps
            .iter()
            .map(|s| s.as_ref().ok().map(|st| st.sub_q))
            .collect()
    });

    let mut report = GapReport {
        approaches: Vec::new(),
        notes: Vec::new(),
    };
    for run in &sim.runs {
        let mut summary = ApproachSummary {
            label: run.label.clone(),
            n_steps: run.steps.len(),
            n_failed: 0,
            n_excluded: 0,
            gaps: Vec::with_capacity(run.steps.len()),
            gap_stats: None,
            v_env: Vec::with_capacity(run.steps.len()),
            v_min: f64::INFINITY,
            v_max: f64::NEG_INFINITY,
            sub_p_range: (f64::INFINITY, f64::NEG_INFINITY),
            sub_q_range: (f64::INFINITY, f64::NEG_INFINITY),
            q_reduction_vs_none: None,
        };
        let mut reduction: Option<(f64, f64)> = None;
        for (t, step) in run.steps.iter().enumerate() {
            let step = match step {
                Ok(s) => s,
                Err(_) => {
                    summary.n_failed += 1;
                    summary.gaps.push(None);
                    summary.v_env.push(None);
                    continue;
                }
            };
            let (lo, hi) = (step.v_min(), step.v_max());
            summary.v_env.push(Some((lo, hi)));
            summary.v_min = summary.v_min.min(lo);
            summary.v_max = summary.v_max.max(hi);
            summary.sub_p_range.0 = summary.sub_p_range.0.min(step.sub_p);
            summary.sub_p_range.1 = summary.sub_p_range.1.max(step.sub_p);
            summary.sub_q_range.0 = summary.sub_q_range.0.min(step.sub_q);
            summary.sub_q_range.1 = summary.sub_q_range.1.max(step.sub_q);
            match j_opf[t] {
                Some(j) if j > 0.0 => summary.gaps.push(Some((step.objective - j) / j)),
                _ => {
                    summary.n_excluded += 1;
                    summary.gaps.push(None);
                }
            }
            if run.label != "none" {
                if let Some(q0) = none_q0.as_ref().and_then(|v| v[t]) {
                    let d = q0 - step.sub_q;
                    let (lo, hi) = reduction.unwrap_or((d, d));
                    reduction = Some((lo.min(d), hi.max(d)));
                }
            }
        }
        summary.q_reduction_vs_none = reduction;

        let mut valid: Vec<f64> = summary.gaps.iter().flatten().copied().collect();
        if !valid.is_empty() {
            valid.sort_by(|a, b| a.total_cmp(b));
            let mean = valid.iter().sum::<f64>() / valid.len() as f64;
            summary.gap_stats = Some(GapStats {
                max: *valid.last().unwrap(),
                mean,
                p50: percentile(&valid, 0.50),
                p90: percentile(&valid, 0.90),
                p99: percentile(&valid, 0.99),
            });
        }
        if summary.n_excluded > 0 {
            report.notes.push(format!(
                "{}: {} step(s) excluded from gap statistics (missing or non-positive optimal objective)",
                summary.label, summary.n_excluded
            ));
        }
        if summary.n_failed > 0 {
            report.notes.push(format!(
                "{}: {} step(s) failed to converge",
                summary.label, summary.n_failed
            ));
        }
        report.approaches.push(summary);
    }
    Ok(report)
}

//! Branch-flow power flow on radial feeders via backward/forward sweep.
//!
//! Per-line quantities are keyed by the downstream bus: `p_flow[b]` is the
//! sending-end active power on the line feeding bus `b`, and `ell[b]` the
//! squared current magnitude on that line. Slack entries stay zero.

use crate::error::{Error, Result};
use crate::feeder::{downstream_order, FeederModel, Topology};

/// Nodal injections in per-unit, indexed by model bus order. Consumption is
/// positive in `p_c`/`q_c`; generation is positive in `p_g`/`q_g`.
#[derive(Debug, Clone, PartialEq)]
pub struct Injections {
    pub p_c: Vec<f64>,
    pub q_c: Vec<f64>,
    pub p_g: Vec<f64>,
    pub q_g: Vec<f64>,
}

impl Injections {
    pub fn zeros(n: usize) -> Self {
        Injections {
            p_c: vec![0.0; n],
            q_c: vec![0.0; n],
            p_g: vec![0.0; n],
            q_g: vec![0.0; n],
        }
    }

    pub fn net_p(&self, bus: usize) -> f64 {
        self.p_c[bus] - self.p_g[bus]
    }

    pub fn net_q(&self, bus: usize) -> f64 {
        self.q_c[bus] - self.q_g[bus]
    }

    pub(crate) fn check(&self, n: usize) -> Result<()> {
        for (name, v) in [
            ("p_c", &self.p_c),
            ("q_c", &self.q_c),
            ("p_g", &self.p_g),
            ("q_g", &self.q_g),
        ] {
            if v.len() != n {
                return Err(Error::BadInjections(format!(
                    "{name} has length {} for {n} buses",
                    v.len()
                )));
            }
            if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                return Err(Error::BadInjections(format!(
                    "{name}[{i}] is not finite"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SweepOptions {
    /// Convergence tolerance on voltage change and equation residuals.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            tol: 1e-10,
            max_iter: 200,
        }
    }
}

/// Converged operating point. Voltages are squared magnitudes.
#[derive(Debug, Clone)]
pub struct PowerFlowSolution {
    pub v: Vec<f64>,
    pub p_flow: Vec<f64>,
    pub q_flow: Vec<f64>,
    pub ell: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl PowerFlowSolution {
    /// Total line loss sum(r * ell).
    pub fn total_loss(&self, topo: &Topology) -> f64 {
        topo.line_buses().map(|b| topo.line_r[b] * self.ell[b]).sum()
    }

    /// Net feed-in at the slack bus (sum over lines leaving it).
    pub fn substation_power(&self, topo: &Topology) -> (f64, f64) {
        let mut p = 0.0;
        let mut q = 0.0;
        for &c in &topo.children[topo.slack] {
            p += self.p_flow[c];
            q += self.q_flow[c];
        }
        (p, q)
    }
}

/// Equation residuals of a candidate operating point, one entry per line
/// (indexed by downstream bus, slack slot zero).
#[derive(Debug, Clone)]
pub struct ResidualReport {
    pub p_balance: Vec<f64>,
    pub q_balance: Vec<f64>,
    pub voltage_drop: Vec<f64>,
    pub current: Vec<f64>,
}

impl ResidualReport {
    pub fn max_abs(&self) -> f64 {
        self.p_balance
            .iter()
            .chain(&self.q_balance)
            .chain(&self.voltage_drop)
            .chain(&self.current)
            .fold(0.0f64, |m, r| m.max(r.abs()))
    }
}

/// Residuals of the branch-flow equations at (v, flows, ell) under `inj`.
pub fn residuals(
    topo: &Topology,
    inj: &Injections,
    sol: &PowerFlowSolution,
) -> ResidualReport {
    let n = topo.n_buses();
    let mut rep = ResidualReport {
        p_balance: vec![0.0; n],
        q_balance: vec![0.0; n],
        voltage_drop: vec![0.0; n],
        current: vec![0.0; n],
    };
    for b in topo.line_buses() {
        let a = topo.parent[b].expect("non-slack bus has parent");
        let (r, x) = (topo.line_r[b], topo.line_x[b]);
        let kids_p: f64 = topo.children[b].iter().map(|&c| sol.p_flow[c]).sum();
        let kids_q: f64 = topo.children[b].iter().map(|&c| sol.q_flow[c]).sum();
        rep.p_balance[b] = sol.p_flow[b] - r * sol.ell[b] - inj.net_p(b) - kids_p;
        rep.q_balance[b] = sol.q_flow[b] - x * sol.ell[b] - inj.net_q(b) - kids_q;
        rep.voltage_drop[b] = sol.v[b] - sol.v[a] + 2.0 * (r * sol.p_flow[b] + x * sol.q_flow[b])
            - (r * r + x * x) * sol.ell[b];
        rep.current[b] = sol.ell[b] - (sol.p_flow[b].powi(2) + sol.q_flow[b].powi(2)) / sol.v[a];
    }
    rep
}

/// Backward/forward sweep. `v0` is the squared slack voltage. Converged
/// solutions satisfy every branch-flow residual to within `opts.tol`.
pub fn solve_powerflow(
    model: &FeederModel,
    inj: &Injections,
    v0: f64,
    opts: &SweepOptions,
) -> Result<PowerFlowSolution> {
    let topo = downstream_order(model)?;
    solve_powerflow_with(model, &topo, inj, v0, opts)
}

/// Sweep with a precomputed topology; avoids re-deriving it in per-step loops.
pub fn solve_powerflow_with(
    model: &FeederModel,
    topo: &Topology,
    inj: &Injections,
    v0: f64,
    opts: &SweepOptions,
) -> Result<PowerFlowSolution> {
    let n = topo.n_buses();
    inj.check(n)?;
    if !(v0.is_finite() && v0 > 0.0) {
        return Err(Error::BadInjections(format!(
            "slack squared voltage must be positive, got {v0}"
        )));
    }

    let mut sol = PowerFlowSolution {
        v: vec![v0; n],
        p_flow: vec![0.0; n],
        q_flow: vec![0.0; n],
        ell: vec![0.0; n],
        iterations: 0,
        converged: false,
    };
    if n == 1 {
        sol.converged = true;
        return Ok(sol);
    }

    let mut v_prev = sol.v.clone();
    for it in 1..=opts.max_iter {
        sol.iterations = it;

        // Backward: accumulate sending-end flows leaf to root using current
        // loss estimates.
        for &b in topo.order.iter().rev() {
            if b == topo.slack {
                continue;
            }
            let kids_p: f64 = topo.children[b].iter().map(|&c| sol.p_flow[c]).sum();
            let kids_q: f64 = topo.children[b].iter().map(|&c| sol.q_flow[c]).sum();
            sol.p_flow[b] = inj.net_p(b) + kids_p + topo.line_r[b] * sol.ell[b];
            sol.q_flow[b] = inj.net_q(b) + kids_q + topo.line_x[b] * sol.ell[b];
        }

        // Forward: propagate voltages root to leaf, then refresh currents
        // from the sending-end voltage.
        for &b in &topo.order {
            if b == topo.slack {
                sol.v[b] = v0;
                continue;
            }
            let a = topo.parent[b].expect("non-slack bus has parent");
            let (r, x) = (topo.line_r[b], topo.line_x[b]);
            sol.v[b] = sol.v[a] - 2.0 * (r * sol.p_flow[b] + x * sol.q_flow[b])
                + (r * r + x * x) * sol.ell[b];
            if !(sol.v[b].is_finite() && sol.v[b] > 0.0) {
                return Err(Error::VoltageCollapse {
                    bus: model.buses[b].id.clone(),
                    iteration: it,
                });
            }
        }
        for &b in &topo.order {
            if b == topo.slack {
                continue;
            }
            let a = topo.parent[b].expect("non-slack bus has parent");
            sol.ell[b] = (sol.p_flow[b].powi(2) + sol.q_flow[b].powi(2)) / sol.v[a];
        }

        let dv = sol
            .v
            .iter()
            .zip(&v_prev)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        v_prev.copy_from_slice(&sol.v);
        if dv <= opts.tol && residuals(topo, inj, &sol).max_abs() <= opts.tol {
            sol.converged = true;
            return Ok(sol);
        }
    }

    let residual = residuals(topo, inj, &sol).max_abs();
    Err(Error::NoConvergence {
        max_iter: opts.max_iter,
        residual,
    })
}

//! Conic optimization: a small modeling layer (linear rows, variable bounds,
//! rotated second-order cone memberships) lowered to standard form and solved
//! by the internal homogeneous self-dual interior-point method.

mod cones;
mod ipm;
mod sparse;

pub use ipm::IpmOptions;

use crate::error::{Error, Result};
use cones::ConeSet;
use ipm::StandardForm;
use serde::{Deserialize, Serialize};
use sparse::CscMat;

/// Affine expression a'x + constant over problem variables.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn new() -> LinExpr {
        LinExpr::default()
    }

    pub fn var(i: usize) -> LinExpr {
        LinExpr {
            terms: vec![(i, 1.0)],
            constant: 0.0,
        }
    }

    pub fn constant(v: f64) -> LinExpr {
        LinExpr {
            terms: vec![],
            constant: v,
        }
    }

    pub fn term(mut self, i: usize, coef: f64) -> LinExpr {
        self.terms.push((i, coef));
        self
    }

    pub fn offset(mut self, v: f64) -> LinExpr {
        self.constant += v;
        self
    }
}

/// Membership u*v >= sum(w_i^2), u >= 0, v >= 0 over affine expressions.
#[derive(Debug, Clone)]
pub struct RotatedCone {
    pub u: LinExpr,
    pub v: LinExpr,
    pub w: Vec<LinExpr>,
}

#[derive(Debug, Clone)]
struct Row {
    expr: LinExpr,
    lo: f64,
    hi: f64,
}

/// Conic program: linear objective, two-sided linear rows, variable bounds,
/// rotated-cone memberships. Variables are indexed 0..n.
#[derive(Debug, Clone)]
pub struct ConicProblem {
    n: usize,
    objective: Vec<f64>,
    rows: Vec<Row>,
    lb: Vec<f64>,
    ub: Vec<f64>,
    cones: Vec<RotatedCone>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIter,
    Numerical,
}

#[derive(Debug, Clone)]
pub struct ConicSolution {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub duality_gap: f64,
    pub rel_gap: f64,
    pub primal_res: f64,
    pub dual_res: f64,
    pub iterations: usize,
}

impl ConicProblem {
    pub fn new(n_vars: usize) -> ConicProblem {
        ConicProblem {
            n: n_vars,
            objective: vec![0.0; n_vars],
            rows: Vec::new(),
            lb: vec![f64::NEG_INFINITY; n_vars],
            ub: vec![f64::INFINITY; n_vars],
            cones: Vec::new(),
        }
    }

    pub fn n_vars(&self) -> usize {
        self.n
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cones(&self) -> usize {
        self.cones.len()
    }

    pub fn set_objective(&mut self, var: usize, coef: f64) {
        self.objective[var] = coef;
    }

    /// lo <= expr <= hi; use equal bounds for an equality.
    pub fn add_row(&mut self, lo: f64, expr: LinExpr, hi: f64) {
        self.rows.push(Row { expr, lo, hi });
    }

    pub fn add_eq(&mut self, expr: LinExpr, rhs: f64) {
        self.add_row(rhs, expr, rhs);
    }

    pub fn set_bounds(&mut self, var: usize, lo: f64, hi: f64) {
        self.lb[var] = lo;
        self.ub[var] = hi;
    }

    pub fn add_rotated_cone(&mut self, u: LinExpr, v: LinExpr, w: Vec<LinExpr>) {
        self.cones.push(RotatedCone { u, v, w });
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::BadProblem("no variables".into()));
        }
        let check_expr = |e: &LinExpr, what: &str| -> Result<()> {
            if !e.constant.is_finite() {
                return Err(Error::BadProblem(format!("{what}: non-finite constant")));
            }
            for &(i, c) in &e.terms {
                if i >= self.n {
                    return Err(Error::BadProblem(format!(
                        "{what}: variable index {i} out of range"
                    )));
                }
                if !c.is_finite() {
                    return Err(Error::BadProblem(format!("{what}: non-finite coefficient")));
                }
            }
            Ok(())
        };
        for (k, r) in self.rows.iter().enumerate() {
            check_expr(&r.expr, &format!("row {k}"))?;
            if r.lo > r.hi {
                return Err(Error::InfeasibleBounds(format!(
                    "row {k} has lower bound {} above upper bound {}",
                    r.lo, r.hi
                )));
            }
            if r.lo == f64::NEG_INFINITY && r.hi == f64::INFINITY {
                return Err(Error::BadProblem(format!("row {k} is unbounded on both sides")));
            }
        }
        for i in 0..self.n {
            if self.lb[i] > self.ub[i] {
                return Err(Error::InfeasibleBounds(format!(
                    "variable {i} has lower bound {} above upper bound {}",
                    self.lb[i], self.ub[i]
                )));
            }
        }
        for (k, cone) in self.cones.iter().enumerate() {
            check_expr(&cone.u, &format!("cone {k} u"))?;
            check_expr(&cone.v, &format!("cone {k} v"))?;
            for (j, w) in cone.w.iter().enumerate() {
                check_expr(w, &format!("cone {k} w{j}"))?;
            }
            if cone.w.is_empty() {
                return Err(Error::BadProblem(format!("cone {k} has no w terms")));
            }
        }
        if !self.objective.iter().all(|c| c.is_finite()) {
            return Err(Error::BadProblem("non-finite objective coefficient".into()));
        }
        Ok(())
    }

    /// Lowers to (A, b, G, h, K). Problem variables map 1:1 onto standard-form
    /// variables; every row, bound, and cone coordinate becomes a slack.
    fn to_standard(&self) -> Result<StandardForm> {
        self.validate()?;

        let mut a_tr: Vec<(usize, usize, f64)> = Vec::new();
        let mut b: Vec<f64> = Vec::new();
        let mut g_tr: Vec<(usize, usize, f64)> = Vec::new();
        let mut h: Vec<f64> = Vec::new();

        for r in &self.rows {
            if r.lo == r.hi {
                let er = b.len();
                for &(i, c) in &r.expr.terms {
                    a_tr.push((er, i, c));
                }
                b.push(r.lo - r.expr.constant);
            } else {
                // expr <= hi  ->  a'x <= hi - k
                if r.hi < f64::INFINITY {
                    let gr = h.len();
                    for &(i, c) in &r.expr.terms {
                        g_tr.push((gr, i, c));
                    }
                    h.push(r.hi - r.expr.constant);
                }
                // expr >= lo  ->  -a'x <= k - lo
                if r.lo > f64::NEG_INFINITY {
                    let gr = h.len();
                    for &(i, c) in &r.expr.terms {
                        g_tr.push((gr, i, -c));
                    }
                    h.push(r.expr.constant - r.lo);
                }
            }
        }
        for i in 0..self.n {
            if self.lb[i] == self.ub[i] {
                let er = b.len();
                a_tr.push((er, i, 1.0));
                b.push(self.lb[i]);
                continue;
            }
            if self.ub[i] < f64::INFINITY {
                let gr = h.len();
                g_tr.push((gr, i, 1.0));
                h.push(self.ub[i]);
            }
            if self.lb[i] > f64::NEG_INFINITY {
                let gr = h.len();
                g_tr.push((gr, i, -1.0));
                h.push(-self.lb[i]);
            }
        }
        let nonneg = h.len();

        // Rotated cone (u, v, w): SOC rows (u+v, 2w_1..2w_k, u-v), since
        // (u+v)^2 - (u-v)^2 = 4uv.
        let mut socs = Vec::with_capacity(self.cones.len());
        for cone in &self.cones {
            let mut push_expr = |terms: &[(&LinExpr, f64)]| {
                let gr = h.len();
                let mut k = 0.0;
                for &(e, scale) in terms {
                    for &(i, c) in &e.terms {
                        g_tr.push((gr, i, -scale * c));
                    }
                    k += scale * e.constant;
                }
                h.push(k);
            };
            push_expr(&[(&cone.u, 1.0), (&cone.v, 1.0)]);
            for w in &cone.w {
                push_expr(&[(w, 2.0)]);
            }
            push_expr(&[(&cone.u, 1.0), (&cone.v, -1.0)]);
            socs.push(2 + cone.w.len());
        }

        let p = b.len();
        let m = h.len();
        Ok(StandardForm {
            n: self.n,
            c: self.objective.clone(),
            a: CscMat::from_triplets(p, self.n, &a_tr),
            b,
            g: CscMat::from_triplets(m, self.n, &g_tr),
            h,
            cones: ConeSet {
                nonneg,
                socs,
            },
        })
    }
}

/// Solves the problem with the interior-point method. Non-optimal statuses
/// are reported in the solution, not as errors; errors mean the problem
/// itself is malformed or the linear algebra failed outright.
pub fn solve_conic(problem: &ConicProblem, opts: &IpmOptions) -> Result<ConicSolution> {
    let sf = problem.to_standard()?;
    let r = ipm::solve_standard(&sf, opts)?;
    Ok(ConicSolution {
        status: r.status,
        objective: r.primal_obj,
        duality_gap: r.gap,
        rel_gap: r.rel_gap,
        primal_res: r.primal_res,
        dual_res: r.dual_res,
        iterations: r.iterations,
        x: r.x,
    })
}

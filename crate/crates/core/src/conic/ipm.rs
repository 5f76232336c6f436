//! Homogeneous self-dual interior-point method for conic programs in
//! standard form
//!
//!   minimize    c'x
//!   subject to  A x = b,   G x + s = h,   s in K,
//!
//! with K a product of a nonnegative orthant and second-order cones.
//! Nesterov-Todd scaled Newton directions with a Mehrotra
//! predictor-corrector; the embedding variables (tau, kappa) turn primal or
//! dual infeasibility into well-defined certificates instead of divergence.

use crate::error::{Error, Result};

use super::cones::{ConeSet, Scaling};
use super::sparse::{inf_norm, CscMat, LdlFactors, LdlSymbolic};
use super::SolveStatus;

#[derive(Debug, Clone)]
pub struct StandardForm {
    pub n: usize,
    pub c: Vec<f64>,
    /// p x n equality block.
    pub a: CscMat,
    pub b: Vec<f64>,
    /// m x n cone block.
    pub g: CscMat,
    pub h: Vec<f64>,
    pub cones: ConeSet,
}

#[derive(Debug, Clone, Copy)]
pub struct IpmOptions {
    pub max_iter: usize,
    /// Relative primal/dual feasibility tolerance.
    pub feas_tol: f64,
    /// Relative duality-gap tolerance.
    pub gap_tol: f64,
    /// Absolute duality-gap tolerance.
    pub abs_gap_tol: f64,
    /// Static regularization added to the KKT diagonal before factorization.
    pub static_reg: f64,
    /// Iterative refinement sweeps per KKT solve.
    pub refine: usize,
}

impl Default for IpmOptions {
    fn default() -> Self {
        IpmOptions {
            max_iter: 100,
            feas_tol: 1e-8,
            gap_tol: 1e-8,
            abs_gap_tol: 1e-10,
            static_reg: 1e-9,
            refine: 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IpmResult {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub primal_obj: f64,
    pub gap: f64,
    pub rel_gap: f64,
    pub primal_res: f64,
    pub dual_res: f64,
    pub iterations: usize,
}

// ---------------------------------------------------------------------------
// KKT system
// ---------------------------------------------------------------------------

/// Quasidefinite KKT matrix
///
///   [ 0   A'  G'  ]      (+reg on the x diagonal)
///   [ A   0   0   ]      (-reg on the y diagonal)
///   [ G   0  -W'W ]      (-reg on the z diagonal)
///
/// Pattern and ordering are fixed across iterations; only the scaling
/// blocks are refilled. Static regularization keeps LDL^T pivot-free; the
/// refined solves iterate against the unregularized operator.
struct Kkt {
    dim: usize,
    sym: LdlSymbolic,
    values: Vec<f64>,
    diag_sign: Vec<f64>,
    reg: f64,
    structural: Vec<(usize, f64)>,
    /// Regularized diagonal slots and their inertia sign.
    reg_diag: Vec<(usize, f64)>,
    lp_diag: Vec<usize>,
    /// Per cone: packed upper-triangle slots, column-major (j outer, i <= j).
    soc_blocks: Vec<Vec<usize>>,
    factors: Option<LdlFactors>,
}

impl Kkt {
    fn new(sf: &StandardForm, reg: f64) -> Kkt {
        let (n, p, m) = (sf.n, sf.b.len(), sf.h.len());
        let dim = n + p + m;
        let mut entries: Vec<(usize, usize)> = Vec::new();
        let mut structural_pending: Vec<(usize, f64)> = Vec::new(); // (entry index, value)
        let mut reg_pending: Vec<(usize, f64)> = Vec::new(); // (entry index, sign)

        for i in 0..n {
            reg_pending.push((entries.len(), 1.0));
            entries.push((i, i));
        }
        for col in 0..sf.a.n_cols {
            for ptr in sf.a.colptr[col]..sf.a.colptr[col + 1] {
                let row = sf.a.rowidx[ptr];
                structural_pending.push((entries.len(), sf.a.values[ptr]));
                entries.push((col, n + row));
            }
        }
        for r in 0..p {
            reg_pending.push((entries.len(), -1.0));
            entries.push((n + r, n + r));
        }
        for col in 0..sf.g.n_cols {
            for ptr in sf.g.colptr[col]..sf.g.colptr[col + 1] {
                let row = sf.g.rowidx[ptr];
                structural_pending.push((entries.len(), sf.g.values[ptr]));
                entries.push((col, n + p + row));
            }
        }
        let mut lp_entry = Vec::with_capacity(sf.cones.nonneg);
        for i in 0..sf.cones.nonneg {
            lp_entry.push(entries.len());
            entries.push((n + p + i, n + p + i));
        }
        let mut soc_entry: Vec<Vec<usize>> = Vec::with_capacity(sf.cones.socs.len());
        let mut off = sf.cones.nonneg;
        for &d in &sf.cones.socs {
            let mut block = Vec::with_capacity(d * (d + 1) / 2);
            for j in 0..d {
                for i in 0..=j {
                    block.push(entries.len());
                    entries.push((n + p + off + i, n + p + off + j));
                }
            }
            soc_entry.push(block);
            off += d;
        }

        let (sym, slots) = LdlSymbolic::new(dim, &entries);

        let structural = structural_pending
            .into_iter()
            .map(|(e, v)| (slots[e], v))
            .collect();
        let reg_diag = reg_pending
            .into_iter()
            .map(|(e, sign)| (slots[e], sign))
            .collect();
        let lp_diag = lp_entry.into_iter().map(|e| slots[e]).collect();
        let soc_blocks = soc_entry
            .into_iter()
            .map(|blk| blk.into_iter().map(|e| slots[e]).collect())
            .collect();

        let mut diag_sign = vec![1.0; dim];
        for i in 0..dim {
            diag_sign[sym.iperm[i]] = if i < n { 1.0 } else { -1.0 };
        }

        Kkt {
            dim,
            values: vec![0.0; entries.len()],
            sym,
            diag_sign,
            reg,
            structural,
            reg_diag,
            lp_diag,
            soc_blocks,
            factors: None,
        }
    }

    /// Refactor with the current scaling. `reg_scale` escalates the static
    /// regularization when the nominal factorization yields an unusable
    /// search direction near a cone boundary.
    fn refill_and_factor(&mut self, w: &Scaling, reg_scale: f64) -> Result<()> {
        let reg = self.reg * reg_scale;
        for &(slot, v) in &self.structural {
            self.values[slot] = v;
        }
        for &(slot, sign) in &self.reg_diag {
            self.values[slot] = sign * reg;
        }
        for (i, &slot) in self.lp_diag.iter().enumerate() {
            self.values[slot] = -(w.lp_w[i] * w.lp_w[i]) - reg;
        }
        for (k, block) in self.soc_blocks.iter().enumerate() {
            let sc = &w.soc[k];
            let mut idx = 0;
            for j in 0..sc.wbar.len() {
                for i in 0..=j {
                    let mut v = -sc.wtw_entry(i, j);
                    if i == j {
                        v -= reg;
                    }
                    self.values[block[idx]] = v;
                    idx += 1;
                }
            }
        }
        let f = self.sym.factor(&self.values, &self.diag_sign, reg.max(1e-13));
        if !f.d.iter().all(|d| d.is_finite()) {
            return Err(Error::BadProblem("KKT factorization produced non-finite pivots".into()));
        }
        self.factors = Some(f);
        Ok(())
    }

    /// Unregularized operator product, exact in the scaling.
    fn mul(&self, sf: &StandardForm, w: &Scaling, u: &[f64], out: &mut [f64]) {
        let (n, p, m) = (sf.n, sf.b.len(), sf.h.len());
        out.iter_mut().for_each(|v| *v = 0.0);
        let (ux, rest) = u.split_at(n);
        let (uy, uz) = rest.split_at(p);
        {
            let out_x = &mut out[0..n];
            sf.a.mul_t_acc(1.0, uy, out_x);
            sf.g.mul_t_acc(1.0, uz, out_x);
        }
        {
            let out_y = &mut out[n..n + p];
            sf.a.mul_acc(1.0, ux, out_y);
        }
        {
            let out_z = &mut out[n + p..n + p + m];
            sf.g.mul_acc(1.0, ux, out_z);
            let mut wu = vec![0.0; m];
            w.apply(&sf.cones, uz, &mut wu);
            let mut wwu = vec![0.0; m];
            w.apply(&sf.cones, &wu, &mut wwu);
            for i in 0..m {
                out_z[i] -= wwu[i];
            }
        }
    }

    fn solve_refined(
        &self,
        sf: &StandardForm,
        w: &Scaling,
        rhs: &[f64],
        refine: usize,
    ) -> Vec<f64> {
        let f = self.factors.as_ref().expect("factored");
        let mut x = vec![0.0; self.dim];
        self.sym.solve(f, rhs, &mut x);
        let mut resid = vec![0.0; self.dim];
        let mut dx = vec![0.0; self.dim];
        let residual = |x: &[f64], resid: &mut Vec<f64>| {
            self.mul(sf, w, x, resid);
            for i in 0..self.dim {
                resid[i] = rhs[i] - resid[i];
            }
            inf_norm(resid)
        };
        // Refinement measures against the unregularized operator; a sweep
        // that fails to shrink the residual is reverted, so an
        // ill-conditioned factorization can never make the solve worse.
        let mut err = residual(&x, &mut resid);
        for _ in 0..refine {
            if err <= 1e-14 * (1.0 + inf_norm(rhs)) {
                break;
            }
            self.sym.solve(f, &resid, &mut dx);
            for i in 0..self.dim {
                x[i] += dx[i];
            }
            let new_err = residual(&x, &mut resid);
            if new_err >= err {
                for i in 0..self.dim {
                    x[i] -= dx[i];
                }
                break;
            }
            err = new_err;
        }
        x
    }
}

// ---------------------------------------------------------------------------
// Main loop
// ---------------------------------------------------------------------------

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Step {
    dx: Vec<f64>,
    dy: Vec<f64>,
    dz: Vec<f64>,
    ds: Vec<f64>,
    dtau: f64,
    dkappa: f64,
    alpha: f64,
}

/// Brings a candidate point into the cone interior: if the smallest cone
/// eigenvalue is not safely positive, shifts along the identity.
fn into_interior(cones: &ConeSet, v: &mut [f64]) {
    let me = cones.min_eig(v);
    if me < 1e-8 * inf_norm(v).max(1.0) {
        let e = cones.identity();
        let shift = 1.0 - me;
        for i in 0..v.len() {
            v[i] += shift * e[i];
        }
    }
}

pub fn solve_standard(sf: &StandardForm, opts: &IpmOptions) -> Result<IpmResult> {
    let (n, p, m) = (sf.n, sf.b.len(), sf.h.len());
    if sf.c.len() != n || sf.a.n_rows != p || sf.a.n_cols != n || sf.g.n_rows != m
        || sf.g.n_cols != n || sf.h.len() != m || sf.cones.total_dim() != m
    {
        return Err(Error::BadProblem("inconsistent standard-form dimensions".into()));
    }
    if m == 0 {
        return Err(Error::BadProblem("conic solver needs at least one inequality row".into()));
    }
    let cones = &sf.cones;
    let deg = cones.degree() as f64;
    let (bnorm, hnorm, cnorm) = (inf_norm(&sf.b), inf_norm(&sf.h), inf_norm(&sf.c));

    let mut kkt = Kkt::new(sf, opts.static_reg);

    // Initial point from two solves under the identity scaling.
    let id = Scaling::identity(cones);
    kkt.refill_and_factor(&id, 1.0)?;
    let mut rhs = vec![0.0; kkt.dim];
    rhs[n..n + p].copy_from_slice(&sf.b);
    rhs[n + p..].copy_from_slice(&sf.h);
    let u = kkt.solve_refined(sf, &id, &rhs, opts.refine);
    let mut x = u[0..n].to_vec();
    let mut s: Vec<f64> = u[n + p..].iter().map(|v| -v).collect();
    into_interior(cones, &mut s);

    rhs.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..n {
        rhs[i] = -sf.c[i];
    }
    let u = kkt.solve_refined(sf, &id, &rhs, opts.refine);
    let mut y = u[n..n + p].to_vec();
    let mut z = u[n + p..].to_vec();
    into_interior(cones, &mut z);

    let mut tau = 1.0f64;
    let mut kappa = 1.0f64;

    let e = cones.identity();
    let mut rx = vec![0.0; n];
    let mut ry = vec![0.0; p];
    let mut rz = vec![0.0; m];
    let mut best = None;
    let mut iterations = 0;

    let finish = |status: SolveStatus,
                  x: &[f64],
                  tau: f64,
                  metrics: (f64, f64, f64, f64, f64, f64),
                  iterations: usize| {
        let scale = match status {
            SolveStatus::Infeasible | SolveStatus::Unbounded => 1.0,
            _ => tau,
        };
        let (pcost, _dcost, gap, relgap, pres, dres) = metrics;
        IpmResult {
            status,
            x: x.iter().map(|v| v / scale).collect(),
            primal_obj: pcost,
            gap,
            rel_gap: relgap,
            primal_res: pres,
            dual_res: dres,
            iterations,
        }
    };

    for iter in 0..=opts.max_iter {
        iterations = iter;

        // Residuals of the embedded optimality system.
        for i in 0..n {
            rx[i] = sf.c[i] * tau;
        }
        sf.a.mul_t_acc(1.0, &y, &mut rx);
        sf.g.mul_t_acc(1.0, &z, &mut rx);
        for i in 0..p {
            ry[i] = -sf.b[i] * tau;
        }
        sf.a.mul_acc(1.0, &x, &mut ry);
        for i in 0..m {
            rz[i] = s[i] - sf.h[i] * tau;
        }
        sf.g.mul_acc(1.0, &x, &mut rz);
        let cx = dot(&sf.c, &x);
        let by = dot(&sf.b, &y);
        let hz = dot(&sf.h, &z);
        let rt = kappa + cx + by + hz;

        let pcost = cx / tau;
        let dcost = -(by + hz) / tau;
        let gap = dot(&s, &z) / (tau * tau);
        let relgap = gap / pcost.abs().max(1.0);
        let pres = (inf_norm(&ry) / (1.0 + bnorm)).max(inf_norm(&rz) / (1.0 + hnorm)) / tau;
        let dres = inf_norm(&rx) / (1.0 + cnorm) / tau;
        let metrics = (pcost, dcost, gap, relgap, pres, dres);
        best = Some(metrics);

        if pres <= opts.feas_tol
            && dres <= opts.feas_tol
            && (gap <= opts.abs_gap_tol || relgap <= opts.gap_tol)
        {
            return Ok(finish(SolveStatus::Optimal, &x, tau, metrics, iter));
        }

        // Infeasibility certificates.
        if by + hz < 0.0 {
            let mut atygt = rx.clone();
            for i in 0..n {
                atygt[i] -= sf.c[i] * tau;
            }
            if inf_norm(&atygt) / -(by + hz) <= opts.feas_tol {
                return Ok(finish(SolveStatus::Infeasible, &x, tau, metrics, iter));
            }
        }
        if cx < 0.0 {
            let mut ax = vec![0.0; p];
            sf.a.mul_acc(1.0, &x, &mut ax);
            let mut gxs = s.clone();
            sf.g.mul_acc(1.0, &x, &mut gxs);
            if inf_norm(&ax).max(inf_norm(&gxs)) / -cx <= opts.feas_tol {
                let xc: Vec<f64> = x.iter().map(|v| v / -cx).collect();
                return Ok(finish(SolveStatus::Unbounded, &xc, tau, metrics, iter));
            }
        }

        if iter == opts.max_iter {
            break;
        }

        let mu = (dot(&s, &z) + tau * kappa) / (deg + 1.0);

        let w = match Scaling::compute(cones, &s, &z) {
            Some(w) => w,
            None => return Ok(finish(SolveStatus::Numerical, &x, tau, metrics, iter)),
        };

        let mut lam_sq = vec![0.0; m];
        cones.jprod(&w.lambda, &w.lambda, &mut lam_sq);

        // Direction quality collapses when the factorization loses accuracy
        // near a cone boundary; retrying with stronger regularization (and
        // refinement against the true operator) recovers a usable step.
        let mut chosen: Option<Step> = None;
        for reg_scale in [1.0, 1e2, 1e4] {
            kkt.refill_and_factor(&w, reg_scale)?;

            // Constant-column solve shared by both directions.
            let mut rhs1 = vec![0.0; kkt.dim];
            for i in 0..n {
                rhs1[i] = -sf.c[i];
            }
            rhs1[n..n + p].copy_from_slice(&sf.b);
            rhs1[n + p..].copy_from_slice(&sf.h);
            let u1 = kkt.solve_refined(sf, &w, &rhs1, opts.refine);
            let den = dot(&sf.c, &u1[0..n]) + dot(&sf.b, &u1[n..n + p])
                + dot(&sf.h, &u1[n + p..])
                - kappa / tau;
            if !den.is_finite() || den == 0.0 {
                continue;
            }

            // One Newton direction for a given complementarity target.
            let direction = |ds: &[f64], dk: f64, f_res: f64| -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, f64, f64) {
                let mut lam_div = vec![0.0; m];
                cones.jdiv(&w.lambda, ds, &mut lam_div);
                let mut w_ld = vec![0.0; m];
                w.apply(cones, &lam_div, &mut w_ld);

                let mut rhs2 = vec![0.0; kkt.dim];
                for i in 0..n {
                    rhs2[i] = -f_res * rx[i];
                }
                for i in 0..p {
                    rhs2[n + i] = -f_res * ry[i];
                }
                for i in 0..m {
                    rhs2[n + p + i] = -f_res * rz[i] - w_ld[i];
                }
                let u2 = kkt.solve_refined(sf, &w, &rhs2, opts.refine);

                let num = -f_res * rt - dk / tau
                    - dot(&sf.c, &u2[0..n])
                    - dot(&sf.b, &u2[n..n + p])
                    - dot(&sf.h, &u2[n + p..]);
                let dtau = num / den;

                let dx: Vec<f64> = (0..n).map(|i| u2[i] + dtau * u1[i]).collect();
                let dy: Vec<f64> = (0..p).map(|i| u2[n + i] + dtau * u1[n + i]).collect();
                let dz: Vec<f64> = (0..m).map(|i| u2[n + p + i] + dtau * u1[n + p + i]).collect();

                // ds_vec = W(lam_div - W dz)
                let mut wdz = vec![0.0; m];
                w.apply(cones, &dz, &mut wdz);
                let mut inner = vec![0.0; m];
                for i in 0..m {
                    inner[i] = lam_div[i] - wdz[i];
                }
                let mut ds_vec = vec![0.0; m];
                w.apply(cones, &inner, &mut ds_vec);
                let dkappa = (dk - kappa * dtau) / tau;
                (dx, dy, dz, ds_vec, dtau, dkappa)
            };

            // Predictor (affine) direction.
            let ds_aff: Vec<f64> = lam_sq.iter().map(|v| -v).collect();
            let (_dxa, _dya, dza, dsa, dta, dka) = direction(&ds_aff, -tau * kappa, 1.0);

            let mut alpha_aff = cones
                .step_to_boundary(&s, &dsa)
                .min(cones.step_to_boundary(&z, &dza));
            if dta < 0.0 {
                alpha_aff = alpha_aff.min(-tau / dta);
            }
            if dka < 0.0 {
                alpha_aff = alpha_aff.min(-kappa / dka);
            }
            let alpha_aff = alpha_aff.min(1.0);
            let sigma = (1.0 - alpha_aff).powi(3).clamp(0.0, 1.0);

            // Corrector: -lam o lam - (W^{-1} ds_a) o (W dz_a) + sigma mu e.
            let mut winv_dsa = vec![0.0; m];
            w.apply_inv(cones, &dsa, &mut winv_dsa);
            let mut wdza = vec![0.0; m];
            w.apply(cones, &dza, &mut wdza);
            let mut corr = vec![0.0; m];
            cones.jprod(&winv_dsa, &wdza, &mut corr);
            let ds_comb: Vec<f64> = (0..m)
                .map(|i| -lam_sq[i] - corr[i] + sigma * mu * e[i])
                .collect();
            let dk_comb = -tau * kappa - dta * dka + sigma * mu;

            let (dx, dy, dz, ds, dtau, dkappa) = direction(&ds_comb, dk_comb, 1.0 - sigma);
            // a degenerate factorization can emit non-finite directions;
            // skip to the next regularization attempt instead of stepping
            let finite = dtau.is_finite()
                && dkappa.is_finite()
                && dx.iter().chain(&dy).chain(&dz).chain(&ds).all(|v| v.is_finite());
            if !finite {
                continue;
            }

            let mut alpha = cones
                .step_to_boundary(&s, &ds)
                .min(cones.step_to_boundary(&z, &dz));
            if dtau < 0.0 {
                alpha = alpha.min(-tau / dtau);
            }
            if dkappa < 0.0 {
                alpha = alpha.min(-kappa / dkappa);
            }
            let alpha = (0.99 * alpha).min(1.0);
            if !alpha.is_finite() {
                continue;
            }
            if chosen.as_ref().is_none_or(|c| alpha > c.alpha) {
                chosen = Some(Step {
                    dx,
                    dy,
                    dz,
                    ds,
                    dtau,
                    dkappa,
                    alpha,
                });
            }
            if alpha >= 1e-4 {
                break;
            }
        }

        let Some(step) = chosen else {
            return Ok(finish(SolveStatus::Numerical, &x, tau, metrics, iter));
        };
        let mut alpha = step.alpha;
        // The boundary step is computed in floating point, so at long steps
        // the updated pair can round onto the boundary; shrink until both
        // iterates keep a strictly positive cone margin.
        for _ in 0..40 {
            let interior = |u: &[f64], du: &[f64]| {
                let cand: Vec<f64> = u.iter().zip(du).map(|(a, d)| a + alpha * d).collect();
                cones.min_eig(&cand) > 0.0
            };
            if interior(&s, &step.ds) && interior(&z, &step.dz) {
                break;
            }
            alpha *= 0.5;
        }
        if alpha < 1e-9 {
            return Ok(finish(SolveStatus::Numerical, &x, tau, metrics, iter));
        }

        for i in 0..n {
            x[i] += alpha * step.dx[i];
        }
        for i in 0..p {
            y[i] += alpha * step.dy[i];
        }
        for i in 0..m {
            z[i] += alpha * step.dz[i];
            s[i] += alpha * step.ds[i];
        }
        tau += alpha * step.dtau;
        kappa += alpha * step.dkappa;
        if !(tau > 0.0 && kappa > 0.0 && tau.is_finite()) {
            return Ok(finish(SolveStatus::Numerical, &x, tau.max(1e-300), best.unwrap(), iter));
        }
    }

    Ok(finish(SolveStatus::MaxIter, &x, tau, best.unwrap(), iterations))
}

//! Cone operations for the interior-point engine: Jordan algebra on the
//! nonnegative orthant and second-order cones, Nesterov-Todd scalings, and
//! step-to-boundary computations.
//!
//! Vectors over the cone product are stored contiguously: the nonnegative
//! block first, then each second-order cone (leading entry first).

/// Product cone R+^nonneg x SOC(d1) x SOC(d2) x ...
#[derive(Debug, Clone, PartialEq)]
pub struct ConeSet {
    pub nonneg: usize,
    pub socs: Vec<usize>,
}

impl ConeSet {
    pub fn total_dim(&self) -> usize {
        self.nonneg + self.socs.iter().sum::<usize>()
    }

    /// Barrier degree: 1 per orthant coordinate, 1 per second-order cone.
    pub fn degree(&self) -> usize {
        self.nonneg + self.socs.len()
    }

    pub fn identity(&self) -> Vec<f64> {
        let mut e = vec![0.0; self.total_dim()];
        for x in e.iter_mut().take(self.nonneg) {
            *x = 1.0;
        }
        let mut o = self.nonneg;
        for &d in &self.socs {
            e[o] = 1.0;
            o += d;
        }
        e
    }

    fn soc_ranges(&self) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        let mut o = self.nonneg;
        self.socs.iter().map(move |&d| {
            let r = o..o + d;
            o += d;
            r
        })
    }

    /// Smallest cone eigenvalue: min(u_i) on the orthant, u0 - |u1| on each
    /// second-order cone. Positive iff u is interior.
    pub fn min_eig(&self, u: &[f64]) -> f64 {
        let mut m = f64::INFINITY;
        for &x in &u[..self.nonneg] {
            m = m.min(x);
        }
        for r in self.soc_ranges() {
            let head = u[r.start];
            let tail = norm2(&u[r.start + 1..r.end]);
            m = m.min(head - tail);
        }
        m
    }

    /// Largest step alpha such that u + t*du stays in the cone for all
    /// t in [0, alpha]; requires u interior. Returns f64::INFINITY when the
    /// ray never leaves the cone.
    pub fn step_to_boundary(&self, u: &[f64], du: &[f64]) -> f64 {
        let mut alpha = f64::INFINITY;
        for i in 0..self.nonneg {
            if du[i] < 0.0 {
                alpha = alpha.min(-u[i] / du[i]);
            }
        }
        for r in self.soc_ranges() {
            alpha = alpha.min(soc_step(&u[r.clone()], &du[r]));
        }
        alpha
    }

    /// Jordan product u o v.
    pub fn jprod(&self, u: &[f64], v: &[f64], out: &mut [f64]) {
        for i in 0..self.nonneg {
            out[i] = u[i] * v[i];
        }
        for r in self.soc_ranges() {
            let (s, e) = (r.start, r.end);
            let mut dot = 0.0;
            for i in s..e {
                dot += u[i] * v[i];
            }
            for i in s + 1..e {
                out[i] = u[s] * v[i] + v[s] * u[i];
            }
            out[s] = dot;
        }
    }

    /// Jordan division: solves lambda o out = d. Requires lambda interior.
    pub fn jdiv(&self, lambda: &[f64], d: &[f64], out: &mut [f64]) {
        for i in 0..self.nonneg {
            out[i] = d[i] / lambda[i];
        }
        for r in self.soc_ranges() {
            let (s, e) = (r.start, r.end);
            let l0 = lambda[s];
            let mut l1d1 = 0.0;
            let mut l1sq = 0.0;
            for i in s + 1..e {
                l1d1 += lambda[i] * d[i];
                l1sq += lambda[i] * lambda[i];
            }
            let det = l0 * l0 - l1sq;
            let u0 = (l0 * d[s] - l1d1) / det;
            out[s] = u0;
            for i in s + 1..e {
                out[i] = (d[i] - u0 * lambda[i]) / l0;
            }
        }
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Boundary step for one second-order cone: smallest positive root of
/// |u0 + a*d0|^2 - |u1 + a*d1|^2 with u interior.
fn soc_step(u: &[f64], d: &[f64]) -> f64 {
    let n = u.len();
    let mut uu = u[0] * u[0];
    let mut ud = u[0] * d[0];
    let mut dd = d[0] * d[0];
    for i in 1..n {
        uu -= u[i] * u[i];
        ud -= u[i] * d[i];
        dd -= d[i] * d[i];
    }
    let (a, b, c) = (dd, 2.0 * ud, uu);
    if !(c > 0.0) || !a.is_finite() || !b.is_finite() {
        // rounding pushed the point onto or past the boundary, or the
        // direction is garbage; report that no positive step exists and
        // let the caller wind down via its short-step exit
        return 0.0;
    }
    let scale = a.abs().max(b.abs()).max(c.abs());
    if scale == 0.0 {
        return f64::INFINITY;
    }
    if a.abs() <= 1e-14 * scale {
        // effectively linear
        return if b < 0.0 { -c / b } else { f64::INFINITY };
    }
    let disc = b * b - 4.0 * a * c;
    if a > 0.0 {
        if b >= 0.0 || disc <= 0.0 {
            return f64::INFINITY;
        }
        // smallest positive root, in the cancellation-free form
        return 2.0 * c / (-b + disc.sqrt());
    }
    // a < 0: exactly one positive root in exact arithmetic; underflow in
    // the products can still spoil it, so fall back to a zero step
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    let (r1, r2) = (q / a, c / q);
    let root = if r1 > 0.0 { r1 } else { r2 };
    if root > 0.0 {
        root
    } else {
        0.0
    }
}

/// Nesterov-Todd scaling point for a strictly feasible (s, z) pair.
/// W is symmetric with lambda = W z = W^{-1} s.
#[derive(Debug, Clone)]
pub struct Scaling {
    /// Orthant: w_i = sqrt(s_i / z_i).
    pub lp_w: Vec<f64>,
    /// Per second-order cone: (eta, wbar) with W = eta * Wbar,
    /// Wbar = 2 wbar wbar' - J, wbar'J wbar = 1.
    pub soc: Vec<SocScaling>,
    pub lambda: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SocScaling {
    pub eta: f64,
    pub wbar: Vec<f64>,
}

impl Scaling {
    pub fn identity(cones: &ConeSet) -> Scaling {
        let soc = cones
            .socs
            .iter()
            .map(|&d| {
                let mut wbar = vec![0.0; d];
                wbar[0] = 1.0;
                SocScaling { eta: 1.0, wbar }
            })
            .collect();
        Scaling {
            lp_w: vec![1.0; cones.nonneg],
            soc,
            lambda: cones.identity(),
        }
    }

    pub fn compute(cones: &ConeSet, s: &[f64], z: &[f64]) -> Option<Scaling> {
        let mut lp_w = vec![0.0; cones.nonneg];
        let mut lambda = vec![0.0; cones.total_dim()];
        for i in 0..cones.nonneg {
            if s[i] <= 0.0 || z[i] <= 0.0 {
                return None;
            }
            lp_w[i] = (s[i] / z[i]).sqrt();
            lambda[i] = (s[i] * z[i]).sqrt();
        }
        let mut soc = Vec::with_capacity(cones.socs.len());
        for r in cones.soc_ranges() {
            let (st, en) = (r.start, r.end);
            let sres = s[st] * s[st] - norm2(&s[st + 1..en]).powi(2);
            let zres = z[st] * z[st] - norm2(&z[st + 1..en]).powi(2);
            if sres <= 0.0 || zres <= 0.0 || s[st] <= 0.0 || z[st] <= 0.0 {
                return None;
            }
            let (sa, za) = (sres.sqrt(), zres.sqrt());
            // gamma^2 = (1 + s_bar'z_bar)/2 makes wbar'J wbar = 1
            let mut dot = 0.0;
            for i in st..en {
                dot += s[i] * z[i];
            }
            let gamma = ((1.0 + dot / (sa * za)) / 2.0).sqrt();
            let d = en - st;
            let mut wbar = vec![0.0; d];
            wbar[0] = (s[st] / sa + z[st] / za) / (2.0 * gamma);
            for i in 1..d {
                wbar[i] = (s[st + i] / sa - z[st + i] / za) / (2.0 * gamma);
            }
            let eta = (sa / za).sqrt();
            let sc = SocScaling { eta, wbar };
            // lambda = eta * Wbar z on this cone
            sc.apply(&z[st..en], &mut lambda[st..en]);
            soc.push(sc);
        }
        Some(Scaling { lp_w, soc, lambda })
    }

    /// out = W u.
    pub fn apply(&self, cones: &ConeSet, u: &[f64], out: &mut [f64]) {
        for i in 0..cones.nonneg {
            out[i] = self.lp_w[i] * u[i];
        }
        for (k, r) in cones.soc_ranges().enumerate() {
            self.soc[k].apply(&u[r.clone()], &mut out[r]);
        }
    }

    /// out = W^{-1} u.
    pub fn apply_inv(&self, cones: &ConeSet, u: &[f64], out: &mut [f64]) {
        for i in 0..cones.nonneg {
            out[i] = u[i] / self.lp_w[i];
        }
        for (k, r) in cones.soc_ranges().enumerate() {
            self.soc[k].apply_inv(&u[r.clone()], &mut out[r]);
        }
    }
}

impl SocScaling {
    /// out = eta * (2 wbar (wbar'u) - J u) applied via the bordered form
    /// Wbar = [w0, w1'; w1, I + w1 w1'/(1+w0)].
    pub fn apply(&self, u: &[f64], out: &mut [f64]) {
        let w = &self.wbar;
        let d = w.len();
        let mut w1u1 = 0.0;
        for i in 1..d {
            w1u1 += w[i] * u[i];
        }
        out[0] = self.eta * (w[0] * u[0] + w1u1);
        let coef = u[0] + w1u1 / (1.0 + w[0]);
        for i in 1..d {
            out[i] = self.eta * (u[i] + coef * w[i]);
        }
    }

    /// Wbar^{-1} = J Wbar J, so the inverse only flips two signs.
    pub fn apply_inv(&self, u: &[f64], out: &mut [f64]) {
        let w = &self.wbar;
        let d = w.len();
        let mut w1u1 = 0.0;
        for i in 1..d {
            w1u1 += w[i] * u[i];
        }
        out[0] = (w[0] * u[0] - w1u1) / self.eta;
        let coef = -u[0] + w1u1 / (1.0 + w[0]);
        for i in 1..d {
            out[i] = (u[i] + coef * w[i]) / self.eta;
        }
    }

    /// Dense W'W = eta^2 (2 wbar wbar' - J) entry at (i, j).
    pub fn wtw_entry(&self, i: usize, j: usize) -> f64 {
        let w = &self.wbar;
        let jij = if i != j {
            0.0
        } else if i == 0 {
            1.0
        } else {
            -1.0
        };
        self.eta * self.eta * (2.0 * w[i] * w[j] - jij)
    }
}

//! Sparse matrix support for the interior-point solver: CSC storage, a
//! minimum-degree ordering, and an up-looking LDL^T factorization for
//! quasidefinite KKT systems (no pivoting; static regularization keeps the
//! diagonal away from zero, iterative refinement recovers accuracy).

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};

/// Column-compressed sparse matrix. Row indices are sorted within each
/// column and duplicates are summed at construction.
#[derive(Debug, Clone)]
pub struct CscMat {
    pub n_rows: usize,
    pub n_cols: usize,
    pub colptr: Vec<usize>,
    pub rowidx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CscMat {
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> CscMat {
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        order.sort_by_key(|&k| (triplets[k].1, triplets[k].0));
        let mut colptr = vec![0usize; n_cols + 1];
        let mut rowidx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for &k in &order {
            let (r, c, v) = triplets[k];
            debug_assert!(r < n_rows && c < n_cols);
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                rowidx.push(r);
                values.push(v);
                last = Some((r, c));
            }
            colptr[c + 1] = rowidx.len();
        }
        // forward-fill column pointers for empty columns
        for c in 0..n_cols {
            colptr[c + 1] = colptr[c + 1].max(colptr[c]);
        }
        CscMat {
            n_rows,
            n_cols,
            colptr,
            rowidx,
            values,
        }
    }

    /// y += alpha * A x
    pub fn mul_acc(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_cols);
        debug_assert_eq!(y.len(), self.n_rows);
        for c in 0..self.n_cols {
            let xc = alpha * x[c];
            if xc == 0.0 {
                continue;
            }
            for p in self.colptr[c]..self.colptr[c + 1] {
                y[self.rowidx[p]] += self.values[p] * xc;
            }
        }
    }

    /// y += alpha * A' x
    pub fn mul_t_acc(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_rows);
        debug_assert_eq!(y.len(), self.n_cols);
        for c in 0..self.n_cols {
            let mut acc = 0.0;
            for p in self.colptr[c]..self.colptr[c + 1] {
                acc += self.values[p] * x[self.rowidx[p]];
            }
            y[c] += alpha * acc;
        }
    }
}

/// Fill-reducing elimination order via exact minimum degree on the
/// undirected pattern. Ties break toward the smallest vertex index so the
/// ordering is deterministic. `colptr`/`rowidx` describe the upper triangle.
pub fn min_degree_order(n: usize, colptr: &[usize], rowidx: &[usize]) -> Vec<usize> {
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for c in 0..n {
        for p in colptr[c]..colptr[c + 1] {
            let r = rowidx[p];
            if r != c {
                adj[r].insert(c);
                adj[c].insert(r);
            }
        }
    }
    let mut heap: BinaryHeap<Reverse<(usize, usize)>> =
        (0..n).map(|v| Reverse((adj[v].len(), v))).collect();
    let mut gone = vec![false; n];
    let mut perm = Vec::with_capacity(n);
    while let Some(Reverse((deg, v))) = heap.pop() {
        if gone[v] || deg != adj[v].len() {
            continue;
        }
        gone[v] = true;
        perm.push(v);
        let nbrs: Vec<usize> = adj[v].iter().copied().collect();
        for &u in &nbrs {
            adj[u].remove(&v);
        }
        for i in 0..nbrs.len() {
            for j in (i + 1)..nbrs.len() {
                let (a, b) = (nbrs[i], nbrs[j]);
                if adj[a].insert(b) {
                    adj[b].insert(a);
                }
            }
        }
        for &u in &nbrs {
            heap.push(Reverse((adj[u].len(), u)));
        }
        adj[v].clear();
    }
    perm
}

const NONE: usize = usize::MAX;

/// Symbolic LDL^T of a permuted symmetric matrix held as upper-triangle CSC.
/// The pattern (and hence the permutation) is fixed; numeric refactorization
/// reuses it every interior-point iteration.
#[derive(Debug, Clone)]
pub struct LdlSymbolic {
    pub n: usize,
    /// perm[k] = original index eliminated at step k.
    pub perm: Vec<usize>,
    pub iperm: Vec<usize>,
    /// Upper-triangle CSC pattern of the permuted matrix.
    pub up_colptr: Vec<usize>,
    pub up_rowidx: Vec<usize>,
    etree: Vec<usize>,
    l_colptr: Vec<usize>,
}

/// Numeric factors L (strictly lower CSC, unit diagonal implied) and D.
#[derive(Debug, Clone)]
pub struct LdlFactors {
    pub l_colptr: Vec<usize>,
    pub l_rowidx: Vec<usize>,
    pub l_values: Vec<f64>,
    pub d: Vec<f64>,
    pub dinv: Vec<f64>,
    /// Diagonal entries bumped away from zero during factorization;
    /// only read by tests and kept as a cheap degeneracy probe.
    #[allow(dead_code)]
    pub n_bumped: usize,
}

impl LdlSymbolic {
    /// `entries` are unique upper-triangle coordinates (row <= col) of the
    /// ORIGINAL matrix; every diagonal must be present. Returns the symbolic
    /// factorization plus, for each input entry, its position in the permuted
    /// values array used by `factor`.
    pub fn new(n: usize, entries: &[(usize, usize)]) -> (LdlSymbolic, Vec<usize>) {
        debug_assert!(entries.iter().all(|&(r, c)| r <= c && c < n));

        // Ordering works on the original pattern; permuting first then
        // ordering would be equivalent.
        let pre = {
            let mut tr: Vec<(usize, usize, f64)> =
                entries.iter().map(|&(r, c)| (r, c, 1.0)).collect();
            tr.sort_by_key(|&(r, c, _)| (c, r));
            CscMat::from_triplets(n, n, &tr)
        };
        let perm = min_degree_order(n, &pre.colptr, &pre.rowidx);
        let mut iperm = vec![0usize; n];
        for (k, &v) in perm.iter().enumerate() {
            iperm[v] = k;
        }

        // Permuted upper-triangle pattern, remembering where each original
        // entry lands.
        let mut coords: Vec<(usize, usize)> = Vec::with_capacity(entries.len());
        for &(r, c) in entries {
            let (mut pr, mut pc) = (iperm[r], iperm[c]);
            if pr > pc {
                std::mem::swap(&mut pr, &mut pc);
            }
            coords.push((pr, pc));
        }
        let mut order: Vec<usize> = (0..coords.len()).collect();
        order.sort_by_key(|&k| (coords[k].1, coords[k].0));
        let mut up_colptr = vec![0usize; n + 1];
        let mut up_rowidx = Vec::with_capacity(coords.len());
        let mut slot = vec![0usize; coords.len()];
        let mut last: Option<(usize, usize)> = None;
        for &k in &order {
            let (r, c) = coords[k];
            debug_assert_ne!(last, Some((r, c)), "duplicate KKT entry ({r},{c})");
            last = Some((r, c));
            slot[k] = up_rowidx.len();
            up_rowidx.push(r);
            up_colptr[c + 1] = up_rowidx.len();
        }
        for c in 0..n {
            up_colptr[c + 1] = up_colptr[c + 1].max(up_colptr[c]);
        }

        // Elimination tree and per-column counts of L.
        let mut etree = vec![NONE; n];
        let mut lnz = vec![0usize; n];
        let mut work = vec![NONE; n];
        for j in 0..n {
            work[j] = j;
            for p in up_colptr[j]..up_colptr[j + 1] {
                let mut i = up_rowidx[p];
                if i == j {
                    continue;
                }
                while work[i] != j {
                    work[i] = j;
                    lnz[i] += 1;
                    if etree[i] == NONE {
                        etree[i] = j;
                    }
                    i = etree[i];
                }
            }
        }
        let mut l_colptr = vec![0usize; n + 1];
        for j in 0..n {
            l_colptr[j + 1] = l_colptr[j] + lnz[j];
        }

        (
            LdlSymbolic {
                n,
                perm,
                iperm,
                up_colptr,
                up_rowidx,
                etree,
                l_colptr,
            },
            slot,
        )
    }

    /// Numeric factorization. `values` is aligned with the permuted pattern
    /// (use the slots from `new`). `diag_sign[k]` gives the expected sign of
    /// D at permuted position k; magnitudes below `min_pivot` are bumped to
    /// keep the factorization alive.
    pub fn factor(&self, values: &[f64], diag_sign: &[f64], min_pivot: f64) -> LdlFactors {
        let n = self.n;
        let lnz_total = self.l_colptr[n];
        let mut l_rowidx = vec![0usize; lnz_total];
        let mut l_values = vec![0.0f64; lnz_total];
        let mut d = vec![0.0f64; n];
        let mut dinv = vec![0.0f64; n];
        let mut n_bumped = 0usize;

        let mut y_val = vec![0.0f64; n];
        let mut y_marker = vec![false; n];
        let mut y_idx = vec![0usize; n];
        let mut elim = vec![0usize; n];
        let mut l_fill = self.l_colptr.clone();

        for k in 0..n {
            let mut nnz_y = 0usize;
            for p in self.up_colptr[k]..self.up_colptr[k + 1] {
                let bidx = self.up_rowidx[p];
                if bidx == k {
                    d[k] = values[p];
                    continue;
                }
                y_val[bidx] = values[p];
                if !y_marker[bidx] {
                    y_marker[bidx] = true;
                    elim[0] = bidx;
                    let mut nnz_e = 1usize;
                    let mut next = self.etree[bidx];
                    while next != NONE && next < k {
                        if y_marker[next] {
                            break;
                        }
                        y_marker[next] = true;
                        elim[nnz_e] = next;
                        nnz_e += 1;
                        next = self.etree[next];
                    }
                    while nnz_e > 0 {
                        nnz_e -= 1;
                        y_idx[nnz_y] = elim[nnz_e];
                        nnz_y += 1;
                    }
                }
            }
            // Process pattern nodes in ascending elimination order (LIFO pops
            // each etree path bottom-up).
            while nnz_y > 0 {
                nnz_y -= 1;
                let cidx = y_idx[nnz_y];
                let yv = y_val[cidx];
                let fill_end = l_fill[cidx];
                for p in self.l_colptr[cidx]..fill_end {
                    y_val[l_rowidx[p]] -= l_values[p] * yv;
                }
                let lkj = yv * dinv[cidx];
                l_rowidx[fill_end] = k;
                l_values[fill_end] = lkj;
                l_fill[cidx] += 1;
                d[k] -= yv * lkj;
                y_val[cidx] = 0.0;
                y_marker[cidx] = false;
            }
            let sign = if diag_sign[k] < 0.0 { -1.0 } else { 1.0 };
            if !(d[k].is_finite()) || d[k] * sign < min_pivot {
                d[k] = sign * min_pivot.max(d[k].abs().max(min_pivot));
                n_bumped += 1;
            }
            dinv[k] = 1.0 / d[k];
        }

        LdlFactors {
            l_colptr: self.l_colptr.clone(),
            l_rowidx,
            l_values,
            d,
            dinv,
            n_bumped,
        }
    }

    /// Solves the ORIGINAL system K x = rhs given factors of P K P'.
    pub fn solve(&self, f: &LdlFactors, rhs: &[f64], out: &mut [f64]) {
        let n = self.n;
        debug_assert_eq!(rhs.len(), n);
        let mut w = vec![0.0f64; n];
        for k in 0..n {
            w[k] = rhs[self.perm[k]];
        }
        for j in 0..n {
            let wj = w[j];
            if wj != 0.0 {
                for p in f.l_colptr[j]..f.l_colptr[j + 1] {
                    w[f.l_rowidx[p]] -= f.l_values[p] * wj;
                }
            }
        }
        for j in 0..n {
            w[j] *= f.dinv[j];
        }
        for j in (0..n).rev() {
            let mut acc = w[j];
            for p in f.l_colptr[j]..f.l_colptr[j + 1] {
                acc -= f.l_values[p] * w[f.l_rowidx[p]];
            }
            w[j] = acc;
        }
        for k in 0..n {
            out[self.perm[k]] = w[k];
        }
    }
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

//! Dense bounded-variable revised simplex.
//!
//! Every row `i` gets a logical variable `r_i` so the constraint system reads
//! `A x - r = 0` with `lo <= (x, r) <= hi`. The basis inverse is kept
//! explicitly and updated by rank-one pivots; it is rebuilt from a
//! factorization of the structural kernel of the basis every
//! [`REFACTOR_EVERY`] pivots.

use alloc::vec;
use alloc::vec::Vec;

use super::{LinearModel, LpError, Relation, Sense, SolveResult, Status, VarKind};
use crate::linalg::{Lu, Matrix};
use crate::math::abs;

const REFACTOR_EVERY: usize = 64;
/// Internal primal feasibility tolerance.
const PRIMAL_TOL: f64 = 1e-9;
/// Reduced-cost tolerance.
const DUAL_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-9;
/// Consecutive degenerate pivots before switching to Bland's rule.
const STALL_LIMIT: usize = 50;
/// Steps this short count as degenerate for the stall detector.
const DEGENERATE_STEP: f64 = 1e-9;

#[derive(Debug, Clone)]
pub(crate) struct LpProblem {
    pub n: usize,
    pub m: usize,
    /// Structural columns: (row, value).
    cols: Vec<Vec<(usize, f64)>>,
    /// Rows: (structural column, value).
    rows: Vec<Vec<(usize, f64)>>,
    /// Minimization costs for all `n + m` variables.
    cost: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl LpProblem {
    pub fn from_model(model: &LinearModel) -> Self {
        let n = model.num_vars();
        let m = model.num_constraints();
        let mut cols = vec![Vec::new(); n];
        let mut rows = Vec::with_capacity(m);
        let mut lo = model.lower().to_vec();
        let mut hi = model.upper().to_vec();
        for (i, c) in model.constraints().iter().enumerate() {
            let mut row = Vec::with_capacity(c.terms.len());
            for &(v, a) in &c.terms {
                cols[v.0].push((i, a));
                row.push((v.0, a));
            }
            rows.push(row);
            let (l, h) = match c.relation {
                Relation::Le => (f64::NEG_INFINITY, c.rhs),
                Relation::Ge => (c.rhs, f64::INFINITY),
                Relation::Eq => (c.rhs, c.rhs),
            };
            lo.push(l);
            hi.push(h);
        }
        let mut p = Self {
            n,
            m,
            cols,
            rows,
            cost: vec![0.0; n + m],
            lo,
            hi,
        };
        p.set_costs(model);
        p
    }

    fn set_costs(&mut self, model: &LinearModel) {
        let sign = match model.sense() {
            Sense::Minimize => 1.0,
            Sense::Maximize => -1.0,
        };
        for (j, c) in model.objective().iter().enumerate() {
            self.cost[j] = sign * c;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum VarState {
    Basic,
    Lower,
    Upper,
    /// Nonbasic free variable resting at zero.
    Zero,
}

/// Snapshot of a basis that can be reinstalled later.
#[derive(Debug, Clone)]
pub(crate) struct Basis {
    head: Vec<usize>,
    state: Vec<VarState>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Outcome {
    Optimal,
    Infeasible,
    Unbounded,
}

enum DualOutcome {
    Optimal,
    Infeasible,
    /// Start basis was not dual feasible or the method stalled.
    GiveUp,
}

#[derive(Debug, Clone)]
pub(crate) struct Simplex {
    p: LpProblem,
    head: Vec<usize>,
    state: Vec<VarState>,
    x: Vec<f64>,
    binv: Matrix,
    since_refactor: usize,
    pub iterations: usize,
    y: Vec<f64>,
}

impl Simplex {
    pub fn new(p: LpProblem) -> Self {
        let (n, m) = (p.n, p.m);
        let mut s = Self {
            head: (n..n + m).collect(),
            state: vec![VarState::Lower; n + m],
            x: vec![0.0; n + m],
            binv: Matrix::zeros(m, m),
            since_refactor: 0,
            iterations: 0,
            y: vec![0.0; m],
            p,
        };
        s.slack_basis();
        s
    }

    fn slack_basis(&mut self) {
        let (n, m) = (self.p.n, self.p.m);
        self.head = (n..n + m).collect();
        for j in 0..n {
            self.state[j] = self.rest_state(j);
        }
        for i in 0..m {
            self.state[n + i] = VarState::Basic;
        }
        self.binv = Matrix::zeros(m, m);
        for i in 0..m {
            self.binv[(i, i)] = -1.0;
        }
        self.since_refactor = 0;
        self.place_nonbasic();
        self.compute_basic_values();
    }

    /// Preferred nonbasic state for variable `j` given its bounds.
    fn rest_state(&self, j: usize) -> VarState {
        let (lo, hi) = (self.p.lo[j], self.p.hi[j]);
        match (lo.is_finite(), hi.is_finite()) {
            (true, true) => {
                if abs(lo) <= abs(hi) {
                    VarState::Lower
                } else {
                    VarState::Upper
                }
            }
            (true, false) => VarState::Lower,
            (false, true) => VarState::Upper,
            (false, false) => VarState::Zero,
        }
    }

    /// Sets nonbasic variables to the bound their state names, repairing
    /// states that point at an infinite bound.
    fn place_nonbasic(&mut self) {
        for j in 0..self.p.n + self.p.m {
            let st = self.state[j];
            if st == VarState::Basic {
                continue;
            }
            let (lo, hi) = (self.p.lo[j], self.p.hi[j]);
            let st = match st {
                VarState::Lower if lo.is_finite() => VarState::Lower,
                VarState::Upper if hi.is_finite() => VarState::Upper,
                VarState::Zero if !lo.is_finite() && !hi.is_finite() => VarState::Zero,
                _ => self.rest_state(j),
            };
            self.state[j] = st;
            self.x[j] = match st {
                VarState::Lower => lo,
                VarState::Upper => hi,
                _ => 0.0,
            };
        }
    }

    pub fn set_costs(&mut self, model: &LinearModel) {
        self.p.set_costs(model);
    }

    pub fn set_bounds(&mut self, j: usize, lo: f64, hi: f64) {
        self.p.lo[j] = lo;
        self.p.hi[j] = hi;
    }

    pub fn snapshot(&self) -> Basis {
        Basis {
            head: self.head.clone(),
            state: self.state.clone(),
        }
    }

    /// Installs `basis` (refactorizing only if the basic set changed) and
    /// moves nonbasic variables onto their current bounds.
    pub fn restore(&mut self, basis: &Basis) {
        if basis.head != self.head {
            self.head.clone_from(&basis.head);
            self.state.clone_from(&basis.state);
            if self.refactor().is_err() {
                self.slack_basis();
                return;
            }
        } else {
            for (j, st) in basis.state.iter().enumerate() {
                if *st != VarState::Basic {
                    self.state[j] = *st;
                }
            }
        }
        self.place_nonbasic();
        self.compute_basic_values();
    }

    /// Call after bounds changed without a basis restore.
    pub fn bounds_changed(&mut self) {
        self.place_nonbasic();
        self.compute_basic_values();
    }

    fn column_axpy(&self, j: usize, scale: f64, out: &mut [f64]) {
        if j < self.p.n {
            for &(i, a) in &self.p.cols[j] {
                out[i] += a * scale;
            }
        } else {
            out[j - self.p.n] -= scale;
        }
    }

    fn compute_basic_values(&mut self) {
        let m = self.p.m;
        let mut v = vec![0.0; m];
        for j in 0..self.p.n + m {
            if self.state[j] != VarState::Basic && self.x[j] != 0.0 {
                self.column_axpy(j, self.x[j], &mut v);
            }
        }
        for i in 0..m {
            let s: f64 = self.binv.row(i).iter().zip(&v).map(|(b, vv)| b * vv).sum();
            self.x[self.head[i]] = -s;
        }
    }

    /// `B^{-1} a_j`
    fn ftran(&self, j: usize) -> Vec<f64> {
        let m = self.p.m;
        let mut out = vec![0.0; m];
        if j < self.p.n {
            for &(k, a) in &self.p.cols[j] {
                for (i, o) in out.iter_mut().enumerate() {
                    *o += self.binv[(i, k)] * a;
                }
            }
        } else {
            let k = j - self.p.n;
            for (i, o) in out.iter_mut().enumerate() {
                *o = -self.binv[(i, k)];
            }
        }
        out
    }

    /// `y = B^{-T} c_B`
    fn btran(&mut self, cb: &[f64]) {
        let m = self.p.m;
        self.y.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..m {
            let c = cb[i];
            if c == 0.0 {
                continue;
            }
            for (yk, b) in self.y.iter_mut().zip(self.binv.row(i)) {
                *yk += c * b;
            }
        }
    }

    fn reduced_cost(&self, j: usize, cj: f64) -> f64 {
        if j < self.p.n {
            cj - self.p.cols[j].iter().map(|&(i, a)| self.y[i] * a).sum::<f64>()
        } else {
            cj + self.y[j - self.p.n]
        }
    }

    /// Rebuilds the explicit inverse from the current basic set. Only the
    /// block of structural basic columns restricted to rows not covered by
    /// basic logicals needs factorizing.
    fn refactor(&mut self) -> Result<(), LpError> {
        let (n, m) = (self.p.n, self.p.m);
        let mut covered = vec![usize::MAX; m];
        let mut struct_pos = Vec::new();
        for (pos, &j) in self.head.iter().enumerate() {
            if j >= n {
                covered[j - n] = pos;
            } else {
                struct_pos.push(pos);
            }
        }
        let free_rows: Vec<usize> = (0..m).filter(|&i| covered[i] == usize::MAX).collect();
        let k = struct_pos.len();
        if free_rows.len() != k {
            return Err(LpError::Numerical);
        }
        let mut row_index = vec![usize::MAX; m];
        for (t, &i) in free_rows.iter().enumerate() {
            row_index[i] = t;
        }
        let mut kernel = Matrix::zeros(k, k);
        for (c, &pos) in struct_pos.iter().enumerate() {
            for &(i, a) in &self.p.cols[self.head[pos]] {
                if row_index[i] != usize::MAX {
                    kernel[(row_index[i], c)] = a;
                }
            }
        }
        let kinv = if k > 0 {
            Lu::factorize(&kernel).map_err(|_| LpError::Numerical)?.inverse()
        } else {
            Matrix::zeros(0, 0)
        };
        let mut binv = Matrix::zeros(m, m);
        for (c, &pos) in struct_pos.iter().enumerate() {
            for (t, &i) in free_rows.iter().enumerate() {
                binv[(pos, i)] = kinv[(c, t)];
            }
        }
        let mut col_of = vec![usize::MAX; n];
        for (c, &pos) in struct_pos.iter().enumerate() {
            col_of[self.head[pos]] = c;
        }
        // Logical at row i: x_pos = A[i, S] x_S - a_i.
        for i in 0..m {
            let pos = covered[i];
            if pos == usize::MAX {
                continue;
            }
            binv[(pos, i)] = -1.0;
            for &(j, a) in &self.p.rows[i] {
                let c = col_of[j];
                if c == usize::MAX {
                    continue;
                }
                for (t, &fr) in free_rows.iter().enumerate() {
                    binv[(pos, fr)] += a * kinv[(c, t)];
                }
            }
        }
        self.binv = binv;
        self.since_refactor = 0;
        Ok(())
    }

    fn pivot(&mut self, r: usize, alpha: &[f64]) {
        let m = self.p.m;
        let piv = alpha[r];
        {
            let row = self.binv.row_mut(r);
            row.iter_mut().for_each(|v| *v /= piv);
        }
        let pivot_row: Vec<f64> = self.binv.row(r).to_vec();
        for i in 0..m {
            if i == r || alpha[i] == 0.0 {
                continue;
            }
            let f = alpha[i];
            for (b, p) in self.binv.row_mut(i).iter_mut().zip(&pivot_row) {
                *b -= f * p;
            }
        }
        self.since_refactor += 1;
    }

    fn maybe_refactor(&mut self) -> Result<(), LpError> {
        if self.since_refactor >= REFACTOR_EVERY {
            if self.refactor().is_err() {
                self.slack_basis();
            } else {
                self.compute_basic_values();
            }
        }
        Ok(())
    }

    fn infeasibility(&self, j: usize) -> f64 {
        let v = self.x[j];
        if v < self.p.lo[j] - PRIMAL_TOL {
            self.p.lo[j] - v
        } else if v > self.p.hi[j] + PRIMAL_TOL {
            v - self.p.hi[j]
        } else {
            0.0
        }
    }

    fn iteration_cap(&self) -> usize {
        200 * (self.p.n + self.p.m) + 10_000
    }

    /// Full solve: dual simplex when the basis is dual feasible, otherwise
    /// (or on trouble) the composite primal simplex.
    ///
    /// A warm start that fails or exceeds a short iteration budget is
    /// retried once from the slack basis.
    pub fn solve(&mut self) -> Result<Outcome, LpError> {
        // The primal pass also confirms dual infeasibility, whose detection
        // is sensitive to the pivot tolerance.
        let _ = self.dual()?;
        let warm_cap = 20 * (self.p.n + self.p.m) + 1000;
        match self.primal_capped(warm_cap) {
            Err(LpError::Numerical) => {
                log::debug!("warm simplex start failed; restarting from the slack basis");
                self.slack_basis();
                self.primal()
            }
            r => r,
        }
    }

    pub fn primal(&mut self) -> Result<Outcome, LpError> {
        self.primal_capped(self.iteration_cap())
    }

    fn primal_capped(&mut self, cap: usize) -> Result<Outcome, LpError> {
        let total = self.p.n + self.p.m;
        let m = self.p.m;
        let mut degenerate_run = 0usize;
        let mut use_bland = false;
        let mut refactored_on_trouble = false;
        let mut local_iters = 0usize;
        let mut cb = vec![0.0; m];
        loop {
            self.maybe_refactor()?;
            local_iters += 1;
            if local_iters > cap {
                return Err(LpError::Numerical);
            }
            let mut phase1 = false;
            for i in 0..m {
                let j = self.head[i];
                let v = self.x[j];
                cb[i] = if v < self.p.lo[j] - PRIMAL_TOL {
                    phase1 = true;
                    -1.0
                } else if v > self.p.hi[j] + PRIMAL_TOL {
                    phase1 = true;
                    1.0
                } else {
                    0.0
                };
            }
            if !phase1 {
                for i in 0..m {
                    cb[i] = self.p.cost[self.head[i]];
                }
            }
            self.btran(&cb);

            // Pricing.
            let mut entering: Option<(usize, f64)> = None;
            for j in 0..total {
                let st = self.state[j];
                if st == VarState::Basic || self.p.lo[j] == self.p.hi[j] {
                    continue;
                }
                let cj = if phase1 { 0.0 } else { self.p.cost[j] };
                let d = self.reduced_cost(j, cj);
                let eligible = match st {
                    VarState::Lower => d < -DUAL_TOL,
                    VarState::Upper => d > DUAL_TOL,
                    VarState::Zero => abs(d) > DUAL_TOL,
                    VarState::Basic => false,
                };
                if !eligible {
                    continue;
                }
                if use_bland {
                    entering = Some((j, d));
                    break;
                }
                if entering.is_none_or(|(_, best)| abs(d) > abs(best)) {
                    entering = Some((j, d));
                }
            }
            let Some((q, dq)) = entering else {
                if phase1 {
                    if !refactored_on_trouble {
                        refactored_on_trouble = true;
                        self.force_refactor();
                        continue;
                    }
                    return Ok(Outcome::Infeasible);
                }
                if self.since_refactor > 0 && !refactored_on_trouble {
                    // Verify optimality on a fresh factorization.
                    refactored_on_trouble = true;
                    self.force_refactor();
                    continue;
                }
                return Ok(Outcome::Optimal);
            };
            let dir = if dq < 0.0 { 1.0 } else { -1.0 };
            let alpha = self.ftran(q);

            // Ratio test.
            let (lo_q, hi_q) = (self.p.lo[q], self.p.hi[q]);
            let mut t_best = if lo_q.is_finite() && hi_q.is_finite() {
                hi_q - lo_q
            } else {
                f64::INFINITY
            };
            let mut leave: Option<(usize, f64, f64)> = None; // (pos, bound value, |alpha|)
            for i in 0..m {
                let a = alpha[i];
                if abs(a) < PIVOT_TOL {
                    continue;
                }
                let j = self.head[i];
                let rate = -dir * a;
                let v = self.x[j];
                let (lo, hi) = (self.p.lo[j], self.p.hi[j]);
                let (lim, bound) = if rate < 0.0 {
                    if v > hi + PRIMAL_TOL {
                        ((v - hi) / -rate, hi)
                    } else if v < lo - PRIMAL_TOL || !lo.is_finite() {
                        continue;
                    } else {
                        ((v - lo).max(0.0) / -rate, lo)
                    }
                } else if v < lo - PRIMAL_TOL {
                    ((lo - v) / rate, lo)
                } else if v > hi + PRIMAL_TOL || !hi.is_finite() {
                    continue;
                } else {
                    ((hi - v).max(0.0) / rate, hi)
                };
                let better = match leave {
                    None => lim < t_best,
                    Some((bp, _, ba)) => {
                        if lim < t_best - 1e-12 {
                            true
                        } else if lim <= t_best + 1e-12 {
                            if use_bland {
                                j < self.head[bp]
                            } else {
                                abs(a) > ba
                            }
                        } else {
                            false
                        }
                    }
                };
                if better {
                    t_best = lim;
                    leave = Some((i, bound, abs(a)));
                }
            }
            if !t_best.is_finite() {
                if phase1 {
                    if !refactored_on_trouble {
                        refactored_on_trouble = true;
                        self.force_refactor();
                        continue;
                    }
                    return Err(LpError::Numerical);
                }
                return Ok(Outcome::Unbounded);
            }
            let t = t_best;
            if t <= DEGENERATE_STEP {
                degenerate_run += 1;
                if degenerate_run > STALL_LIMIT {
                    use_bland = true;
                }
            } else {
                degenerate_run = 0;
                use_bland = false;
            }
            self.iterations += 1;
            if t > 0.0 {
                self.x[q] += dir * t;
                for i in 0..m {
                    if alpha[i] != 0.0 {
                        let j = self.head[i];
                        self.x[j] -= dir * alpha[i] * t;
                    }
                }
            }
            match leave {
                None => {
                    // Bound flip of the entering variable.
                    self.state[q] = if dir > 0.0 {
                        VarState::Upper
                    } else {
                        VarState::Lower
                    };
                    self.x[q] = if dir > 0.0 { hi_q } else { lo_q };
                }
                Some((r, bound, _)) => {
                    let l = self.head[r];
                    self.x[l] = bound;
                    self.state[l] = if bound == self.p.lo[l] {
                        VarState::Lower
                    } else {
                        VarState::Upper
                    };
                    self.head[r] = q;
                    self.state[q] = VarState::Basic;
                    self.pivot(r, &alpha);
                }
            }
            refactored_on_trouble = false;
        }
    }

    fn force_refactor(&mut self) {
        if self.refactor().is_err() {
            self.slack_basis();
        } else {
            self.compute_basic_values();
        }
    }

    fn dual(&mut self) -> Result<DualOutcome, LpError> {
        let total = self.p.n + self.p.m;
        let m = self.p.m;
        let mut cb = vec![0.0; m];
        let cap = 20 * (self.p.n + self.p.m) + 1000;
        let mut d = vec![0.0; total];
        let mut alpha_r = vec![0.0; total];
        for _ in 0..cap {
            self.maybe_refactor()?;
            for i in 0..m {
                cb[i] = self.p.cost[self.head[i]];
            }
            self.btran(&cb);
            for j in 0..total {
                if self.state[j] == VarState::Basic {
                    d[j] = 0.0;
                    continue;
                }
                d[j] = self.reduced_cost(j, self.p.cost[j]);
                if self.p.lo[j] == self.p.hi[j] {
                    continue;
                }
                let ok = match self.state[j] {
                    VarState::Lower => d[j] >= -1e-7,
                    VarState::Upper => d[j] <= 1e-7,
                    VarState::Zero => abs(d[j]) <= 1e-7,
                    VarState::Basic => true,
                };
                if !ok {
                    return Ok(DualOutcome::GiveUp);
                }
            }
            // Leaving row: largest primal infeasibility.
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..m {
                let inf = self.infeasibility(self.head[i]);
                if inf > 0.0 && leave.is_none_or(|(_, b)| inf > b) {
                    leave = Some((i, inf));
                }
            }
            let Some((r, _)) = leave else {
                return Ok(DualOutcome::Optimal);
            };
            let jr = self.head[r];
            let below = self.x[jr] < self.p.lo[jr];
            // Row r of B^{-1} [A | -I].
            let rho: Vec<f64> = self.binv.row(r).to_vec();
            alpha_r.iter_mut().for_each(|v| *v = 0.0);
            for (i, &ri) in rho.iter().enumerate() {
                if ri == 0.0 {
                    continue;
                }
                for &(j, a) in &self.p.rows[i] {
                    alpha_r[j] += ri * a;
                }
                alpha_r[self.p.n + i] = -ri;
            }
            let mut enter: Option<(usize, f64, f64)> = None; // (j, ratio, |alpha|)
            for j in 0..total {
                let st = self.state[j];
                if st == VarState::Basic || self.p.lo[j] == self.p.hi[j] {
                    continue;
                }
                let a = alpha_r[j];
                if abs(a) < PIVOT_TOL {
                    continue;
                }
                // x_r changes by -a per unit increase of x_j.
                let eligible = match (st, below) {
                    (VarState::Lower, true) => a < 0.0,
                    (VarState::Upper, true) => a > 0.0,
                    (VarState::Lower, false) => a > 0.0,
                    (VarState::Upper, false) => a < 0.0,
                    (VarState::Zero, _) => true,
                    (VarState::Basic, _) => false,
                };
                if !eligible {
                    continue;
                }
                let ratio = abs(d[j]) / abs(a);
                let better = match enter {
                    None => true,
                    Some((_, br, ba)) => ratio < br - 1e-12 || (ratio <= br + 1e-12 && abs(a) > ba),
                };
                if better {
                    enter = Some((j, ratio, abs(a)));
                }
            }
            let Some((q, _, _)) = enter else {
                return Ok(DualOutcome::Infeasible);
            };
            let alpha = self.ftran(q);
            if abs(alpha[r]) < PIVOT_TOL || abs(alpha[r] - alpha_r[q]) > 1e-6 * (1.0 + abs(alpha[r])) {
                self.force_refactor();
                continue;
            }
            let target = if below { self.p.lo[jr] } else { self.p.hi[jr] };
            let delta = (self.x[jr] - target) / alpha[r];
            self.x[q] += delta;
            for i in 0..m {
                if alpha[i] != 0.0 {
                    let j = self.head[i];
                    self.x[j] -= alpha[i] * delta;
                }
            }
            self.x[jr] = target;
            self.state[jr] = if below { VarState::Lower } else { VarState::Upper };
            self.head[r] = q;
            self.state[q] = VarState::Basic;
            self.pivot(r, &alpha);
            self.iterations += 1;
        }
        Ok(DualOutcome::GiveUp)
    }

    /// Minimization objective of the current point.
    pub fn objective(&self) -> f64 {
        (0..self.p.n).map(|j| self.p.cost[j] * self.x[j]).sum()
    }

    pub fn values(&self) -> &[f64] {
        &self.x[..self.p.n]
    }

    pub fn result(&mut self, model: &LinearModel, outcome: Outcome) -> SolveResult {
        let n = self.p.n;
        let status = match outcome {
            Outcome::Optimal => Status::Optimal,
            Outcome::Infeasible => Status::Infeasible,
            Outcome::Unbounded => Status::Unbounded,
        };
        if status != Status::Optimal {
            return SolveResult {
                status,
                x: Vec::new(),
                duals: Vec::new(),
                reduced_costs: Vec::new(),
                objective: f64::NAN,
                bound: f64::NAN,
                milp_gap: f64::NAN,
                node_count: 0,
                iterations: self.iterations,
                wall_time: 0.0,
            };
        }
        let m = self.p.m;
        let mut cb = vec![0.0; m];
        for i in 0..m {
            cb[i] = self.p.cost[self.head[i]];
        }
        self.btran(&cb);
        let sign = match model.sense() {
            Sense::Minimize => 1.0,
            Sense::Maximize => -1.0,
        };
        let mut x = self.x[..n].to_vec();
        for (j, v) in x.iter_mut().enumerate() {
            if model.kinds()[j] == VarKind::Binary {
                // Snap integral binaries exactly.
                if abs(*v) < 1e-9 {
                    *v = 0.0;
                } else if abs(*v - 1.0) < 1e-9 {
                    *v = 1.0;
                }
            }
        }
        let reduced: Vec<f64> = (0..n)
            .map(|j| sign * self.reduced_cost(j, self.p.cost[j]))
            .collect();
        let duals: Vec<f64> = self.y.iter().map(|v| sign * v).collect();
        let objective = model.objective_value(&x);
        SolveResult {
            status,
            x,
            duals,
            reduced_costs: reduced,
            objective,
            bound: objective,
            milp_gap: 0.0,
            node_count: 0,
            iterations: self.iterations,
            wall_time: 0.0,
        }
    }
}

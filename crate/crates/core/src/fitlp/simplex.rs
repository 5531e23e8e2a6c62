//! Bounded-variable revised primal simplex.
//!
//! Dense basis inverse, sparse columns, Dantzig pricing with a Bland fallback
//! after long degenerate streaks. Deterministic: ties break on the smallest
//! column index, so identical inputs give identical pivot sequences.

use crate::config::Tolerances;
use crate::error::{Error, Result};

/// Row relation of a [`LinearProgram`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rel {
    Eq,
    Le,
    Ge,
}

#[derive(Debug, Clone)]
pub struct LpRow {
    pub coeffs: Vec<(usize, f64)>,
    pub rel: Rel,
    pub rhs: f64,
}

/// `min c.x  s.t.  rows, lower <= x <= upper` with sparse rows.
/// Bounds may be infinite.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub num_vars: usize,
    pub objective: Vec<f64>,
    pub rows: Vec<LpRow>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LinearProgram {
    pub fn validate(&self) -> Result<()> {
        if self.objective.len() != self.num_vars
            || self.lower.len() != self.num_vars
            || self.upper.len() != self.num_vars
        {
            return Err(Error::Parameter("LP vector lengths disagree".into()));
        }
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(Error::Parameter("objective must be finite".into()));
        }
        for (l, u) in self.lower.iter().zip(&self.upper) {
            if l > u {
                return Err(Error::Parameter(format!("empty bound range [{l}, {u}]")));
            }
        }
        for row in &self.rows {
            for &(j, v) in &row.coeffs {
                if j >= self.num_vars || !v.is_finite() {
                    return Err(Error::Parameter("bad row coefficient".into()));
                }
            }
            if !row.rhs.is_finite() {
                return Err(Error::Parameter("row rhs must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    /// Values of the structural variables.
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

/// Sparse column-major matrix.
#[derive(Debug, Clone, Default)]
pub(crate) struct Csc {
    pub ptr: Vec<usize>,
    pub idx: Vec<u32>,
    pub val: Vec<f64>,
}

impl Csc {
    pub fn from_cols(cols: &[Vec<(u32, f64)>]) -> Self {
        let nnz = cols.iter().map(Vec::len).sum();
        let mut ptr = Vec::with_capacity(cols.len() + 1);
        let mut idx = Vec::with_capacity(nnz);
        let mut val = Vec::with_capacity(nnz);
        ptr.push(0);
        for c in cols {
            for &(i, v) in c {
                idx.push(i);
                val.push(v);
            }
            ptr.push(idx.len());
        }
        Csc { ptr, idx, val }
    }

    pub fn col(&self, j: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.ptr[j], self.ptr[j + 1]);
        (&self.idx[a..b], &self.val[a..b])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VStat {
    Basic,
    AtLower,
    AtUpper,
    /// Free variable parked at zero.
    FreeZero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum SolveStatus {
    Optimal,
    Unbounded,
}

/// Equality-form problem `A z = b, l <= z <= u` plus a simplex state.
pub(crate) struct Core {
    m: usize,
    n: usize,
    cols: Csc,
    cost: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    rhs: Vec<f64>,

    basis: Vec<usize>,
    vstat: Vec<VStat>,
    /// Dense row-major basis inverse.
    binv: Vec<f64>,
    /// Values of the basic variables, aligned with `basis`.
    xb: Vec<f64>,
    pub iterations: usize,

    // scratch buffers
    pi: Vec<f64>,
    w: Vec<f64>,
}

const DEGENERATE_STREAK_LIMIT: usize = 120;
const REFACTOR_INTERVAL: usize = 6000;
const XB_REFRESH_INTERVAL: usize = 500;
const PIVOT_MIN: f64 = 1e-8;

impl Core {
    pub fn new(
        m: usize,
        cols: Vec<Vec<(u32, f64)>>,
        cost: Vec<f64>,
        lower: Vec<f64>,
        upper: Vec<f64>,
        rhs: Vec<f64>,
    ) -> Self {
        let n = cols.len();
        Core {
            m,
            n,
            cols: Csc::from_cols(&cols),
            cost,
            lower,
            upper,
            rhs,
            basis: Vec::new(),
            vstat: vec![VStat::AtLower; n],
            binv: Vec::new(),
            xb: Vec::new(),
            iterations: 0,
            pi: vec![0.0; m],
            w: vec![0.0; m],
        }
    }

    fn nonbasic_value(&self, j: usize) -> f64 {
        match self.vstat[j] {
            VStat::AtLower => self.lower[j],
            VStat::AtUpper => self.upper[j],
            VStat::FreeZero => 0.0,
            VStat::Basic => unreachable!("basic variable has no parked value"),
        }
    }

    /// Default parked status for a nonbasic column.
    fn park_status(lower: f64, upper: f64) -> VStat {
        if lower.is_finite() {
            VStat::AtLower
        } else if upper.is_finite() {
            VStat::AtUpper
        } else {
            VStat::FreeZero
        }
    }

    /// Install a basis (one column per row) and park all other columns.
    pub fn set_basis(&mut self, basis: Vec<usize>) {
        assert_eq!(basis.len(), self.m);
        for j in 0..self.n {
            self.vstat[j] = Self::park_status(self.lower[j], self.upper[j]);
        }
        for &j in &basis {
            self.vstat[j] = VStat::Basic;
        }
        self.basis = basis;
        self.refactor();
        self.recompute_xb();
    }

    /// Install a basis together with a known basis inverse (callers that can
    /// write it down directly skip the `O(m^3)` factorization).
    pub fn set_basis_with_binv(&mut self, basis: Vec<usize>, binv: Vec<f64>) {
        assert_eq!(basis.len(), self.m);
        assert_eq!(binv.len(), self.m * self.m);
        for j in 0..self.n {
            self.vstat[j] = Self::park_status(self.lower[j], self.upper[j]);
        }
        for &j in &basis {
            self.vstat[j] = VStat::Basic;
        }
        self.basis = basis;
        self.binv = binv;
        self.recompute_xb();
    }

    /// Rebuild the dense basis inverse by Gauss-Jordan elimination.
    fn refactor(&mut self) {
        let m = self.m;
        let mut mat = vec![0.0; m * m]; // basis matrix, row-major
        for (pos, &j) in self.basis.iter().enumerate() {
            let (idx, val) = self.cols.col(j);
            for (&i, &v) in idx.iter().zip(val) {
                mat[i as usize * m + pos] = v;
            }
        }
        let mut inv = vec![0.0; m * m];
        for i in 0..m {
            inv[i * m + i] = 1.0;
        }
        for col in 0..m {
            // partial pivoting
            let mut piv_row = col;
            let mut piv_abs = mat[col * m + col].abs();
            for r in (col + 1)..m {
                let a = mat[r * m + col].abs();
                if a > piv_abs {
                    piv_abs = a;
                    piv_row = r;
                }
            }
            if piv_abs < 1e-12 {
                // Singular basis should not happen; keep going with a tiny
                // pivot rather than abort, the feasibility check will fail
                // loudly downstream.
                piv_abs = piv_abs.max(1e-300);
            }
            if piv_row != col {
                for c in 0..m {
                    mat.swap(piv_row * m + c, col * m + c);
                    inv.swap(piv_row * m + c, col * m + c);
                }
            }
            let piv = mat[col * m + col];
            let inv_piv = 1.0 / piv;
            for c in 0..m {
                mat[col * m + c] *= inv_piv;
                inv[col * m + c] *= inv_piv;
            }
            for r in 0..m {
                if r == col {
                    continue;
                }
                let f = mat[r * m + col];
                if f != 0.0 {
                    for c in 0..m {
                        mat[r * m + c] -= f * mat[col * m + c];
                        inv[r * m + c] -= f * inv[col * m + c];
                    }
                }
            }
        }
        self.binv = inv;
    }

    /// xb = B^-1 (b - A_N x_N)
    fn recompute_xb(&mut self) {
        let m = self.m;
        let mut r = self.rhs.clone();
        for j in 0..self.n {
            if self.vstat[j] == VStat::Basic {
                continue;
            }
            let xj = self.nonbasic_value(j);
            if xj != 0.0 {
                let (idx, val) = self.cols.col(j);
                for (&i, &v) in idx.iter().zip(val) {
                    r[i as usize] -= v * xj;
                }
            }
        }
        let mut xb = vec![0.0; m];
        for i in 0..m {
            let row = &self.binv[i * m..(i + 1) * m];
            let mut acc = 0.0;
            for k in 0..m {
                acc += row[k] * r[k];
            }
            xb[i] = acc;
        }
        self.xb = xb;
    }

    /// pi = c_B B^-1, skipping zero basic costs.
    fn compute_pi(&mut self) {
        let m = self.m;
        self.pi.iter_mut().for_each(|p| *p = 0.0);
        for pos in 0..m {
            let cb = self.cost[self.basis[pos]];
            if cb != 0.0 {
                let row = &self.binv[pos * m..(pos + 1) * m];
                for k in 0..m {
                    self.pi[k] += cb * row[k];
                }
            }
        }
    }

    fn reduced_cost(&self, j: usize) -> f64 {
        let (idx, val) = self.cols.col(j);
        let mut d = self.cost[j];
        for (&i, &v) in idx.iter().zip(val) {
            d -= self.pi[i as usize] * v;
        }
        d
    }

    /// w = B^-1 A_e
    fn ftran(&mut self, e: usize) {
        let m = self.m;
        self.w.iter_mut().for_each(|x| *x = 0.0);
        let (idx, val) = self.cols.col(e);
        for (&i, &v) in idx.iter().zip(val) {
            let k = i as usize;
            if v != 0.0 {
                for r in 0..m {
                    self.w[r] += self.binv[r * m + k] * v;
                }
            }
        }
    }

    /// Run primal simplex from the installed basis to optimality.
    pub fn primal(&mut self, tol: &Tolerances) -> Result<SolveStatus> {
        if self.m == 0 {
            // No rows: every variable sits at its cheapest bound.
            for j in 0..self.n {
                let c = self.cost[j];
                self.vstat[j] = if c > 0.0 {
                    if self.lower[j].is_finite() {
                        VStat::AtLower
                    } else {
                        return Ok(SolveStatus::Unbounded);
                    }
                } else if c < 0.0 {
                    if self.upper[j].is_finite() {
                        VStat::AtUpper
                    } else {
                        return Ok(SolveStatus::Unbounded);
                    }
                } else {
                    Self::park_status(self.lower[j], self.upper[j])
                };
            }
            return Ok(SolveStatus::Optimal);
        }
        let mut degenerate_streak = 0usize;
        let mut bland = false;
        let iter_cap = 400_000usize.max(200 * (self.m + self.n));
        let mut since_refresh = 0usize;
        let mut since_refactor = 0usize;
        loop {
            if self.iterations > iter_cap {
                return Err(Error::Internal(format!(
                    "simplex exceeded {iter_cap} iterations"
                )));
            }
            self.compute_pi();
            // Pricing.
            let mut entering: Option<(usize, f64, i8)> = None; // (col, |d|, dir)
            for j in 0..self.n {
                if self.vstat[j] == VStat::Basic || self.lower[j] == self.upper[j] {
                    continue;
                }
                let d = self.reduced_cost(j);
                let (eligible, dir) = match self.vstat[j] {
                    VStat::AtLower => (d < -tol.lp_opt, 1i8),
                    VStat::AtUpper => (d > tol.lp_opt, -1i8),
                    VStat::FreeZero => (d.abs() > tol.lp_opt, if d < 0.0 { 1 } else { -1 }),
                    VStat::Basic => unreachable!(),
                };
                if !eligible {
                    continue;
                }
                if bland {
                    entering = Some((j, d.abs(), dir));
                    break;
                }
                match entering {
                    Some((_, best, _)) if d.abs() <= best => {}
                    _ => entering = Some((j, d.abs(), dir)),
                }
            }
            let Some((e, _, dir)) = entering else {
                return Ok(SolveStatus::Optimal);
            };
            let dir = dir as f64;
            self.ftran(e);

            // Ratio test: x_e moves by dir * theta, basics by -w * dir * theta.
            let mut theta = f64::INFINITY;
            let mut leaving: Option<(usize, bool)> = None; // (basis pos, hits_upper)
            let mut leaving_pivot = 0.0f64;
            for r in 0..self.m {
                let rate = -dir * self.w[r];
                if rate.abs() <= PIVOT_MIN {
                    continue;
                }
                let bj = self.basis[r];
                let (limit, hits_upper) = if rate < 0.0 {
                    if self.lower[bj].is_finite() {
                        ((self.xb[r] - self.lower[bj]) / -rate, false)
                    } else {
                        continue;
                    }
                } else if self.upper[bj].is_finite() {
                    ((self.upper[bj] - self.xb[r]) / rate, true)
                } else {
                    continue;
                };
                let limit = limit.max(0.0);
                let better = limit < theta - 1e-12
                    || (limit < theta + 1e-12
                        && leaving.map_or(true, |_| self.w[r].abs() > leaving_pivot.abs()));
                if better {
                    theta = limit;
                    leaving = Some((r, hits_upper));
                    leaving_pivot = self.w[r];
                }
            }
            // Bound flip of the entering variable itself.
            let span = self.upper[e] - self.lower[e];
            if span.is_finite() && span < theta {
                theta = span;
                leaving = None;
            }
            if theta.is_infinite() {
                return Ok(SolveStatus::Unbounded);
            }

            if theta.abs() <= 1e-11 {
                degenerate_streak += 1;
                if degenerate_streak > DEGENERATE_STREAK_LIMIT {
                    bland = true;
                }
            } else {
                degenerate_streak = 0;
                bland = false;
            }

            self.iterations += 1;
            since_refresh += 1;
            since_refactor += 1;

            match leaving {
                None => {
                    // Bound flip, basis unchanged.
                    let step = dir * theta;
                    for r in 0..self.m {
                        if self.w[r] != 0.0 {
                            self.xb[r] -= self.w[r] * step;
                        }
                    }
                    self.vstat[e] = match self.vstat[e] {
                        VStat::AtLower => VStat::AtUpper,
                        VStat::AtUpper => VStat::AtLower,
                        s => s,
                    };
                }
                Some((r, hits_upper)) => {
                    let step = dir * theta;
                    let entering_value = if self.vstat[e] == VStat::Basic {
                        unreachable!()
                    } else {
                        self.nonbasic_value(e) + step
                    };
                    for i in 0..self.m {
                        if self.w[i] != 0.0 {
                            self.xb[i] -= self.w[i] * step;
                        }
                    }
                    let old = self.basis[r];
                    self.vstat[old] = if hits_upper { VStat::AtUpper } else { VStat::AtLower };
                    self.vstat[e] = VStat::Basic;
                    self.basis[r] = e;
                    self.xb[r] = entering_value;
                    // Eta update of B^-1.
                    let m = self.m;
                    let piv = self.w[r];
                    let inv_piv = 1.0 / piv;
                    for c in 0..m {
                        self.binv[r * m + c] *= inv_piv;
                    }
                    // Split borrows: copy pivot row once.
                    let pivot_row: Vec<f64> = self.binv[r * m..(r + 1) * m].to_vec();
                    for i in 0..m {
                        if i == r {
                            continue;
                        }
                        let f = self.w[i];
                        if f != 0.0 {
                            let row = &mut self.binv[i * m..(i + 1) * m];
                            for c in 0..m {
                                row[c] -= f * pivot_row[c];
                            }
                        }
                    }
                }
            }

            if since_refactor >= REFACTOR_INTERVAL {
                self.refactor();
                self.recompute_xb();
                since_refactor = 0;
                since_refresh = 0;
            } else if since_refresh >= XB_REFRESH_INTERVAL {
                self.recompute_xb();
                since_refresh = 0;
            }
        }
    }

    /// Value of every column in the current solution.
    pub fn solution(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.n];
        for j in 0..self.n {
            if self.vstat[j] != VStat::Basic {
                x[j] = self.nonbasic_value(j);
            }
        }
        for (pos, &j) in self.basis.iter().enumerate() {
            x[j] = self.xb[pos];
        }
        x
    }

    pub fn objective_value(&self) -> f64 {
        self.solution()
            .iter()
            .zip(&self.cost)
            .map(|(x, c)| x * c)
            .sum()
    }

    /// Row duals of the current basis.
    pub fn duals(&mut self) -> Vec<f64> {
        self.compute_pi();
        self.pi.clone()
    }

    /// Worst bound violation across basic variables.
    pub fn primal_infeasibility(&self) -> f64 {
        let mut worst = 0.0f64;
        for (pos, &j) in self.basis.iter().enumerate() {
            let v = self.xb[pos];
            worst = worst.max(self.lower[j] - v).max(v - self.upper[j]);
        }
        worst
    }

    pub fn set_costs(&mut self, cost: Vec<f64>) {
        assert_eq!(cost.len(), self.n);
        self.cost = cost;
    }

    pub fn pin_column(&mut self, j: usize, value: f64) {
        self.lower[j] = value;
        self.upper[j] = value;
    }
}

/// Solve a general LP: convert rows to equality form with slacks, find a
/// feasible basis with phase-1 artificials, then optimize.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution> {
    lp.validate()?;
    let tol = Tolerances::DEFAULT;
    let m = lp.rows.len();
    let n_struct = lp.num_vars;
    let n_slack = lp.rows.iter().filter(|r| r.rel != Rel::Eq).count();

    let mut cols: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n_struct];
    let mut lower = lp.lower.clone();
    let mut upper = lp.upper.clone();
    let mut cost = lp.objective.clone();
    let mut rhs = Vec::with_capacity(m);
    for (i, row) in lp.rows.iter().enumerate() {
        for &(j, v) in &row.coeffs {
            if v != 0.0 {
                cols[j].push((i as u32, v));
            }
        }
        rhs.push(row.rhs);
    }
    // Slacks: Le row -> +s, Ge row -> -s, s >= 0.
    for (i, row) in lp.rows.iter().enumerate() {
        match row.rel {
            Rel::Eq => {}
            Rel::Le => {
                cols.push(vec![(i as u32, 1.0)]);
                lower.push(0.0);
                upper.push(f64::INFINITY);
                cost.push(0.0);
            }
            Rel::Ge => {
                cols.push(vec![(i as u32, -1.0)]);
                lower.push(0.0);
                upper.push(f64::INFINITY);
                cost.push(0.0);
            }
        }
    }
    let n_real = n_struct + n_slack;

    if m == 0 {
        let mut core = Core::new(0, cols, cost, lower, upper, rhs);
        core.set_basis(Vec::new());
        match core.primal(&tol)? {
            SolveStatus::Optimal => {
                let x = core.solution()[..n_struct].to_vec();
                let objective = core.objective_value();
                return Ok(LpSolution { x, objective, iterations: core.iterations });
            }
            SolveStatus::Unbounded => return Err(Error::Unbounded("LP is unbounded".into())),
        }
    }

    // Residual of the all-parked point decides artificial signs.
    let mut residual = rhs.clone();
    for (j, col) in cols.iter().enumerate() {
        let xj = if lower[j].is_finite() {
            lower[j]
        } else if upper[j].is_finite() {
            upper[j]
        } else {
            0.0
        };
        if xj != 0.0 {
            for &(i, v) in col {
                residual[i as usize] -= v * xj;
            }
        }
    }
    let mut basis = Vec::with_capacity(m);
    for (i, &r) in residual.iter().enumerate() {
        let sign = if r >= 0.0 { 1.0 } else { -1.0 };
        cols.push(vec![(i as u32, sign)]);
        lower.push(0.0);
        upper.push(f64::INFINITY);
        cost.push(0.0);
        basis.push(n_real + i);
    }

    let n_total = n_real + m;
    let phase1_cost: Vec<f64> = (0..n_total).map(|j| if j >= n_real { 1.0 } else { 0.0 }).collect();
    let real_cost = {
        let mut c = cost.clone();
        for v in c.iter_mut().skip(n_real) {
            *v = 0.0;
        }
        c
    };

    let mut core = Core::new(m, cols, phase1_cost, lower, upper, rhs);
    // The artificial basis matrix is diag(sign), its own inverse.
    let mut binv = vec![0.0; m * m];
    for (i, &r) in residual.iter().enumerate() {
        binv[i * m + i] = if r >= 0.0 { 1.0 } else { -1.0 };
    }
    core.set_basis_with_binv(basis, binv);

    match core.primal(&tol)? {
        SolveStatus::Unbounded => {
            return Err(Error::Internal("phase-1 objective unbounded".into()));
        }
        SolveStatus::Optimal => {}
    }
    if core.objective_value() > 1e-7 {
        return Err(Error::Infeasible(format!(
            "LP infeasible (phase-1 objective {:.3e})",
            core.objective_value()
        )));
    }

    // Phase 2: pin artificials at zero and restore the real costs.
    for j in n_real..n_total {
        core.pin_column(j, 0.0);
    }
    core.set_costs(real_cost);
    core.recompute_xb();
    match core.primal(&tol)? {
        SolveStatus::Unbounded => Err(Error::Unbounded("LP is unbounded".into())),
        SolveStatus::Optimal => {
            let infeas = core.primal_infeasibility();
            if infeas > 1e-6 {
                return Err(Error::Internal(format!(
                    "simplex finished with residual {infeas:.3e}"
                )));
            }
            let x = core.solution()[..n_struct].to_vec();
            let objective = x.iter().zip(&lp.objective).map(|(x, c)| x * c).sum();
            Ok(LpSolution { x, objective, iterations: core.iterations })
        }
    }
}

//! Fit of the shared speed step function and per-arc lengths.
//!
//! Given sample times `S_i` (shared by all arcs leaving node `i`), the fit
//! chooses a speed step function `y(t)` on the union grid and, implicitly, one
//! integral value `x_{ijk}` per arc and sample time. The linear program
//! minimizes the summed per-arc spread `max_k x_{ijk} - min_k x_{ijk}` subject
//! to `y >= rho`; the fitted auxiliary graph takes `v = y*` and per-arc length
//! `L_ij = mean_k x*_{ijk}`.
//!
//! [`assemble_fit_lp`] materializes the explicit LP (equalities defining
//! `x_{ijk}`, spread rows, bounds). [`solve_fit`] solves the same program
//! through an equivalent reduced dual whose row count is independent of the
//! number of sample times, which keeps dense-basis simplex practical at full
//! discretizations; the two routes are cross-checked in tests.

pub mod simplex;

pub use simplex::{solve_lp, LinearProgram, LpRow, LpSolution, Rel};

use crate::config::Tolerances;
use crate::error::{Error, Result};
use crate::tdgraph::{
    eval_travel_time, AuxiliaryGraph, SpeedProfile, TimeDependentGraph, TimeGrid,
};
use simplex::{Core, SolveStatus};

/// Per-node sample time sets and the union grid they induce.
#[derive(Debug, Clone)]
pub struct OmegaSelection {
    per_node_sets: Vec<Vec<f64>>,
    union: Vec<f64>,
    grid: TimeGrid,
}

impl OmegaSelection {
    /// `per_node_sets[i]` holds the sample times shared by every arc leaving
    /// vertex `i` (depot included). Times are sorted, deduplicated within
    /// 1e-9 and snapped to the canonical union grid values.
    pub fn new(per_node_sets: Vec<Vec<f64>>, horizon: f64) -> Result<Self> {
        let tol = Tolerances::DEFAULT.time_eq;
        if per_node_sets.len() < 2 {
            return Err(Error::Parameter("need sets for the depot and customers".into()));
        }
        if !(horizon > 0.0) {
            return Err(Error::Parameter("horizon must be positive".into()));
        }
        let mut sets = Vec::with_capacity(per_node_sets.len());
        for (i, set) in per_node_sets.into_iter().enumerate() {
            if set.is_empty() {
                return Err(Error::Parameter(format!("sample set of node {i} is empty")));
            }
            let mut s = set;
            s.sort_by(|a, b| a.partial_cmp(b).unwrap());
            s.dedup_by(|a, b| (*a - *b).abs() <= tol);
            for &t in &s {
                if !(0.0..=horizon + tol).contains(&t) {
                    return Err(Error::Parameter(format!(
                        "sample time {t} of node {i} outside [0, {horizon}]"
                    )));
                }
            }
            sets.push(s);
        }
        // Union grid breakpoints: 0, horizon and every sample time.
        let mut all: Vec<f64> = vec![0.0, horizon];
        for s in &sets {
            all.extend_from_slice(s);
        }
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        all.dedup_by(|a, b| (*a - *b).abs() <= tol);
        // Snap possible near-duplicates of the endpoints.
        all[0] = 0.0;
        let last = all.len() - 1;
        if (all[last] - horizon).abs() <= tol {
            all[last] = horizon;
        }
        let grid = TimeGrid::new(all.clone())?;
        // Snap set times to canonical grid values.
        for s in &mut sets {
            for t in s.iter_mut() {
                let pos = nearest_index(&all, *t, tol).ok_or_else(|| {
                    Error::Internal(format!("sample time {t} lost while building union grid"))
                })?;
                *t = all[pos];
            }
            s.dedup();
        }
        let union = {
            let mut u: Vec<f64> = sets.iter().flatten().copied().collect();
            u.sort_by(|a, b| a.partial_cmp(b).unwrap());
            u.dedup();
            u
        };
        Ok(OmegaSelection { per_node_sets: sets, union, grid })
    }

    pub fn node_set(&self, i: usize) -> &[f64] {
        &self.per_node_sets[i]
    }

    pub fn num_nodes(&self) -> usize {
        self.per_node_sets.len()
    }

    /// Number of distinct sample times across all nodes.
    pub fn union_size(&self) -> usize {
        self.union.len()
    }

    pub fn union(&self) -> &[f64] {
        &self.union
    }

    /// Union grid: breakpoints are the sample times plus 0 and the horizon.
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Default speed floor: reciprocal of the narrowest union-grid interval.
    pub fn default_rho(&self) -> f64 {
        let min_width = (0..self.grid.num_intervals())
            .map(|h| self.grid.interval_width(h))
            .fold(f64::INFINITY, f64::min);
        1.0 / min_width
    }
}

fn nearest_index(sorted: &[f64], t: f64, tol: f64) -> Option<usize> {
    let up = sorted.partition_point(|&b| b < t);
    for cand in [up.wrapping_sub(1), up] {
        if let Some(&v) = sorted.get(cand) {
            if (v - t).abs() <= tol {
                return Some(cand);
            }
        }
    }
    None
}

/// Integral window of one (arc, sample) pair: coefficients of the speed
/// variables over the union-grid intervals `start..start+band.len()`.
#[derive(Debug, Clone)]
pub struct CoefficientRow {
    pub sample_time: f64,
    pub tau: f64,
    pub start: usize,
    pub band: Vec<f64>,
}

impl CoefficientRow {
    /// Coefficient for interval `h` (0 outside the band).
    pub fn at(&self, h: usize) -> f64 {
        if h < self.start || h >= self.start + self.band.len() {
            0.0
        } else {
            self.band[h - self.start]
        }
    }
}

/// All integral windows, arcs ordered row-major over ordered vertex pairs.
#[derive(Debug, Clone)]
pub struct CoefficientMatrix {
    arcs: Vec<(usize, usize)>,
    rows: Vec<Vec<CoefficientRow>>,
    grid: TimeGrid,
}

impl CoefficientMatrix {
    pub fn arcs(&self) -> &[(usize, usize)] {
        &self.arcs
    }

    pub fn arc_rows(&self, arc: usize) -> &[CoefficientRow] {
        &self.rows[arc]
    }

    pub fn num_arcs(&self) -> usize {
        self.arcs.len()
    }

    pub fn num_pairs(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn num_intervals(&self) -> usize {
        self.grid.num_intervals()
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }
}

/// Evaluate the integral windows on the union grid. For each arc `(i, j)` and
/// sample time `T_k` of `S_i`, the window covers `[T_k, T_k + tau_ij(T_k)]`;
/// the last grid interval is extended past the horizon so that arrivals after
/// `T` are billed entirely at the final speed.
pub fn build_coefficients(
    g: &TimeDependentGraph,
    sel: &OmegaSelection,
) -> Result<CoefficientMatrix> {
    if sel.num_nodes() != g.num_vertices() {
        return Err(Error::Parameter(format!(
            "selection covers {} nodes, graph has {}",
            sel.num_nodes(),
            g.num_vertices()
        )));
    }
    let grid = sel.grid().clone();
    let bp = grid.breakpoints();
    let h_count = grid.num_intervals();
    let mut arcs = Vec::new();
    let mut rows = Vec::new();
    for i in 0..g.num_vertices() {
        for j in 0..g.num_vertices() {
            if i == j {
                continue;
            }
            let f = g.arc(i, j);
            let mut arc_rows = Vec::with_capacity(sel.node_set(i).len());
            for &t_k in sel.node_set(i) {
                let tau = eval_travel_time(f, t_k)?;
                let arrival = t_k + tau;
                let start = grid.interval_of(t_k);
                let mut band = Vec::new();
                for h in start..h_count {
                    let lo = t_k.max(bp[h]);
                    let hi = if h == h_count - 1 { arrival } else { arrival.min(bp[h + 1]) };
                    let a = (hi - lo).max(0.0);
                    band.push(a);
                    if h < h_count - 1 && bp[h + 1] >= arrival {
                        break;
                    }
                }
                // Trim a trailing zero (window ends exactly on a boundary).
                while band.len() > 1 && *band.last().unwrap() == 0.0 {
                    band.pop();
                }
                arc_rows.push(CoefficientRow { sample_time: t_k, tau, start, band });
            }
            arcs.push((i, j));
            rows.push(arc_rows);
        }
    }
    Ok(CoefficientMatrix { arcs, rows, grid })
}

/// The fit program: integral windows plus the speed floor `rho`, with the
/// variable and row indexing of the explicit LP form.
///
/// Variable order: `y_h` (union-grid intervals), then one `x` per (arc, k)
/// pair in arc-major order, then per arc the pair (`x_lo`, `x_hi`).
/// Row order: all defining equalities (arc-major, k-minor), then per (arc, k)
/// the two spread rows `x - x_lo >= 0` and `x_hi - x >= 0`.
#[derive(Debug, Clone)]
pub struct FitProblem {
    coefficients: CoefficientMatrix,
    rho: f64,
    /// Start of each arc's pair block in the flat pair indexing.
    pair_offsets: Vec<usize>,
    num_pairs: usize,
}

impl FitProblem {
    pub fn new(coefficients: CoefficientMatrix, rho: f64) -> Result<Self> {
        if !(rho > 0.0) {
            return Err(Error::Parameter(format!("rho must be positive, got {rho}")));
        }
        if coefficients.num_arcs() == 0 {
            return Err(Error::Parameter("empty arc set".into()));
        }
        let mut pair_offsets = Vec::with_capacity(coefficients.num_arcs());
        let mut acc = 0;
        for rows in &coefficients.rows {
            pair_offsets.push(acc);
            acc += rows.len();
        }
        Ok(FitProblem { coefficients, rho, pair_offsets, num_pairs: acc })
    }

    pub fn coefficients(&self) -> &CoefficientMatrix {
        &self.coefficients
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn num_pairs(&self) -> usize {
        self.num_pairs
    }

    /// Flat pair index of (arc, k).
    pub fn pair_index(&self, arc: usize, k: usize) -> usize {
        self.pair_offsets[arc] + k
    }

    // Variable indexing of the explicit LP.
    pub fn y_var(&self, h: usize) -> usize {
        debug_assert!(h < self.coefficients.num_intervals());
        h
    }

    pub fn x_var(&self, arc: usize, k: usize) -> usize {
        self.coefficients.num_intervals() + self.pair_index(arc, k)
    }

    pub fn x_lo_var(&self, arc: usize) -> usize {
        self.coefficients.num_intervals() + self.num_pairs + 2 * arc
    }

    pub fn x_hi_var(&self, arc: usize) -> usize {
        self.x_lo_var(arc) + 1
    }

    pub fn num_vars(&self) -> usize {
        self.coefficients.num_intervals() + self.num_pairs + 2 * self.coefficients.num_arcs()
    }

    /// Rows of the explicit LP: one defining equality per pair plus the two
    /// spread rows per pair.
    pub fn num_rows(&self) -> usize {
        3 * self.num_pairs
    }

    /// Materialize the explicit LP.
    pub fn explicit_lp(&self) -> LinearProgram {
        let co = &self.coefficients;
        let h_count = co.num_intervals();
        let n = self.num_vars();
        let mut objective = vec![0.0; n];
        let mut lower = vec![0.0; n];
        let upper = vec![f64::INFINITY; n];
        for h in 0..h_count {
            lower[self.y_var(h)] = self.rho;
        }
        for arc in 0..co.num_arcs() {
            objective[self.x_hi_var(arc)] = 1.0;
            objective[self.x_lo_var(arc)] = -1.0;
        }
        let mut rows = Vec::with_capacity(self.num_rows());
        for (arc, arc_rows) in co.rows.iter().enumerate() {
            for (k, row) in arc_rows.iter().enumerate() {
                let mut coeffs: Vec<(usize, f64)> = row
                    .band
                    .iter()
                    .enumerate()
                    .filter(|(_, &a)| a != 0.0)
                    .map(|(off, &a)| (self.y_var(row.start + off), a))
                    .collect();
                coeffs.push((self.x_var(arc, k), -1.0));
                rows.push(LpRow { coeffs, rel: Rel::Eq, rhs: 0.0 });
            }
        }
        for (arc, arc_rows) in co.rows.iter().enumerate() {
            for k in 0..arc_rows.len() {
                rows.push(LpRow {
                    coeffs: vec![(self.x_var(arc, k), 1.0), (self.x_lo_var(arc), -1.0)],
                    rel: Rel::Ge,
                    rhs: 0.0,
                });
                rows.push(LpRow {
                    coeffs: vec![(self.x_hi_var(arc), 1.0), (self.x_var(arc, k), -1.0)],
                    rel: Rel::Ge,
                    rhs: 0.0,
                });
            }
        }
        LinearProgram { num_vars: n, objective, rows, lower, upper }
    }
}

/// Build the fit program and its explicit LP form.
pub fn assemble_fit_lp(
    coefficients: CoefficientMatrix,
    rho: f64,
) -> Result<(FitProblem, LinearProgram)> {
    let problem = FitProblem::new(coefficients, rho)?;
    let lp = problem.explicit_lp();
    Ok((problem, lp))
}

/// Optimal fit: speed values on the union grid, per-pair integral values and
/// the per-arc spread statistics.
#[derive(Debug, Clone)]
pub struct FitSolution {
    pub arcs: Vec<(usize, usize)>,
    /// Speed value per union-grid interval.
    pub y: Vec<f64>,
    /// Integral value per (arc, k).
    pub x: Vec<Vec<f64>>,
    pub x_lo: Vec<f64>,
    pub x_hi: Vec<f64>,
    /// Arithmetic mean of `x` per arc; the extracted arc length.
    pub x_tilde: Vec<f64>,
    /// `x[arc][k] - x_tilde[arc]`.
    pub residuals: Vec<Vec<f64>>,
    /// Total fitting deviation: sum of per-arc spreads.
    pub zeta_star: f64,
    pub iterations: usize,
}

/// Solve the fit program.
///
/// Internally this optimizes the dual of the reduced program in which every
/// `x_{ijk}` is substituted by its defining integral. The dual has one row per
/// union-grid interval plus two per arc, independent of how many sample times
/// each arc carries, and its row duals are exactly the optimal speeds. The
/// optimum value is identical to the explicit LP's.
pub fn solve_fit(problem: &FitProblem) -> Result<FitSolution> {
    let tol = Tolerances::DEFAULT;
    let co = &problem.coefficients;
    let h_count = co.num_intervals();
    let n_arcs = co.num_arcs();
    let n_pairs = problem.num_pairs();
    let rho = problem.rho();

    // Dual rows: one per interval (speed stationarity), then one per arc for
    // the max-side weights, one per arc for the min-side weights.
    let m = h_count + 2 * n_arcs;
    let row_interval = |h: usize| h;
    let row_max = |arc: usize| h_count + arc;
    let row_min = |arc: usize| h_count + n_arcs + arc;

    let n_cols = 2 * n_pairs + h_count + 2 * n_arcs;
    let mut cols: Vec<Vec<(u32, f64)>> = Vec::with_capacity(n_cols);
    let mut cost = vec![0.0; n_cols];
    let lower = vec![0.0; n_cols];
    let upper = vec![f64::INFINITY; n_cols];
    let mut rhs = vec![0.0; m];
    for arc in 0..n_arcs {
        rhs[row_max(arc)] = 1.0;
        rhs[row_min(arc)] = 1.0;
    }

    // Max-side columns, one per pair.
    for (arc, rows) in co.rows.iter().enumerate() {
        for row in rows {
            let mut col: Vec<(u32, f64)> = row
                .band
                .iter()
                .enumerate()
                .filter(|(_, &a)| a != 0.0)
                .map(|(off, &a)| (row_interval(row.start + off) as u32, a))
                .collect();
            col.push((row_max(arc) as u32, 1.0));
            cols.push(col);
        }
    }
    // Min-side columns.
    for (arc, rows) in co.rows.iter().enumerate() {
        for row in rows {
            let mut col: Vec<(u32, f64)> = row
                .band
                .iter()
                .enumerate()
                .filter(|(_, &a)| a != 0.0)
                .map(|(off, &a)| (row_interval(row.start + off) as u32, -a))
                .collect();
            col.push((row_min(arc) as u32, 1.0));
            cols.push(col);
        }
    }
    // Speed-floor columns: these carry the dual objective.
    let gamma_base = 2 * n_pairs;
    for h in 0..h_count {
        cols.push(vec![(row_interval(h) as u32, -1.0)]);
        cost[gamma_base + h] = -rho;
    }
    // Slack of the max-side convexity row, surplus of the min side.
    for arc in 0..n_arcs {
        cols.push(vec![(row_max(arc) as u32, 1.0)]);
        cols.push(vec![(row_min(arc) as u32, -1.0)]);
    }

    // Crash basis: per arc put unit weight on the sample with the largest
    // travel time on both sides (their interval contributions cancel), and
    // make every floor column basic at zero. The basis matrix is then its own
    // inverse in block form.
    let mut khat = Vec::with_capacity(n_arcs);
    for rows in &co.rows {
        let mut best = 0usize;
        for (k, row) in rows.iter().enumerate() {
            if row.tau > rows[best].tau {
                best = k;
            }
        }
        khat.push(best);
    }
    let mut basis = vec![0usize; m];
    for h in 0..h_count {
        basis[row_interval(h)] = gamma_base + h;
    }
    for arc in 0..n_arcs {
        basis[row_max(arc)] = problem.pair_index(arc, khat[arc]);
        basis[row_min(arc)] = n_pairs + problem.pair_index(arc, khat[arc]);
    }
    let mut binv = vec![0.0; m * m];
    for h in 0..h_count {
        binv[row_interval(h) * m + row_interval(h)] = -1.0;
    }
    for arc in 0..n_arcs {
        binv[row_max(arc) * m + row_max(arc)] = 1.0;
        binv[row_min(arc) * m + row_min(arc)] = 1.0;
        let row = &co.rows[arc][khat[arc]];
        for (off, &a) in row.band.iter().enumerate() {
            let h = row_interval(row.start + off);
            binv[h * m + row_max(arc)] = a;
            binv[h * m + row_min(arc)] = -a;
        }
    }

    let mut core = Core::new(m, cols, cost, lower, upper, rhs);
    core.set_basis_with_binv(basis, binv);
    match core.primal(&tol)? {
        SolveStatus::Unbounded => {
            return Err(Error::Internal(
                "fit dual unbounded: the fit program should always be feasible".into(),
            ));
        }
        SolveStatus::Optimal => {}
    }
    let infeas = core.primal_infeasibility();
    if infeas > 1e-6 {
        return Err(Error::Internal(format!(
            "fit dual finished with residual {infeas:.3e}"
        )));
    }

    // The speeds are the duals of the interval rows.
    let duals = core.duals();
    let y: Vec<f64> = (0..h_count).map(|h| duals[row_interval(h)].max(rho)).collect();

    // Everything else follows from y.
    let mut x = Vec::with_capacity(n_arcs);
    let mut x_lo = Vec::with_capacity(n_arcs);
    let mut x_hi = Vec::with_capacity(n_arcs);
    let mut x_tilde = Vec::with_capacity(n_arcs);
    let mut residuals = Vec::with_capacity(n_arcs);
    let mut zeta = 0.0;
    for rows in &co.rows {
        let vals: Vec<f64> = rows
            .iter()
            .map(|row| {
                row.band
                    .iter()
                    .enumerate()
                    .map(|(off, &a)| a * y[row.start + off])
                    .sum()
            })
            .collect();
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        zeta += hi - lo;
        residuals.push(vals.iter().map(|v| v - mean).collect());
        x.push(vals);
        x_lo.push(lo);
        x_hi.push(hi);
        x_tilde.push(mean);
    }

    // Strong duality check: the dual objective must match the recomputed
    // primal spread. A disagreement means a numerically broken basis.
    let dual_obj = -core.objective_value();
    if (dual_obj - zeta).abs() > 1e-5 * (1.0 + zeta.abs()) {
        return Err(Error::Internal(format!(
            "fit duality gap: dual {dual_obj:.9}, recomputed {zeta:.9}"
        )));
    }

    Ok(FitSolution {
        arcs: co.arcs.clone(),
        y,
        x,
        x_lo,
        x_hi,
        x_tilde,
        residuals,
        zeta_star: zeta,
        iterations: core.iterations,
    })
}

/// Turn a fit solution into the auxiliary graph (`v = y*`, `L = x_tilde`).
/// Arcs whose extracted length is zero are reported, not silently accepted:
/// such arcs have identically zero travel time.
pub fn extract_auxiliary(
    sol: &FitSolution,
    sel: &OmegaSelection,
) -> Result<(AuxiliaryGraph, Vec<(usize, usize)>)> {
    let n = sel.num_nodes() - 1;
    let profile = SpeedProfile::new(sel.grid().clone(), sol.y.clone())?;
    let size = n + 1;
    let mut lengths = vec![0.0; size * size];
    let mut degenerate = Vec::new();
    for (arc, &(i, j)) in sol.arcs.iter().enumerate() {
        let length = sol.x_tilde[arc];
        if length <= 0.0 {
            degenerate.push((i, j));
        }
        lengths[i * size + j] = length.max(0.0);
    }
    let graph = AuxiliaryGraph::new(profile, n, lengths)?;
    Ok((graph, degenerate))
}

/// Write the explicit LP in a human-readable linear-program text format.
///
/// Row order matches [`FitProblem`]: defining equalities `eq_<i>_<j>_k<k>`
/// first (arc-major), then per pair the spread rows `lo_<i>_<j>_k<k>` and
/// `hi_<i>_<j>_k<k>`. Variables are `y<h>`, `x_<i>_<j>_k<k>`, `xlo_<i>_<j>`
/// and `xhi_<i>_<j>`.
pub fn dump_lp(problem: &FitProblem, out: &mut impl std::io::Write) -> Result<()> {
    let co = problem.coefficients();
    writeln!(out, "\\ fit lp, {} rows", problem.num_rows())?;
    writeln!(out, "Minimize")?;
    write!(out, " obj:")?;
    for &(i, j) in co.arcs() {
        write!(out, " + xhi_{i}_{j} - xlo_{i}_{j}")?;
    }
    writeln!(out)?;
    writeln!(out, "Subject To")?;
    for (arc, &(i, j)) in co.arcs().iter().enumerate() {
        for (k, row) in co.arc_rows(arc).iter().enumerate() {
            write!(out, " eq_{i}_{j}_k{k}:")?;
            for (off, &a) in row.band.iter().enumerate() {
                if a != 0.0 {
                    write!(out, " + {a:.12} y{}", row.start + off)?;
                }
            }
            writeln!(out, " - x_{i}_{j}_k{k} = 0")?;
        }
    }
    for (arc, &(i, j)) in co.arcs().iter().enumerate() {
        for k in 0..co.arc_rows(arc).len() {
            writeln!(out, " lo_{i}_{j}_k{k}: x_{i}_{j}_k{k} - xlo_{i}_{j} >= 0")?;
            writeln!(out, " hi_{i}_{j}_k{k}: xhi_{i}_{j} - x_{i}_{j}_k{k} >= 0")?;
        }
    }
    writeln!(out, "Bounds")?;
    for h in 0..co.num_intervals() {
        writeln!(out, " y{h} >= {:.12}", problem.rho())?;
    }
    writeln!(out, "End")?;
    Ok(())
}

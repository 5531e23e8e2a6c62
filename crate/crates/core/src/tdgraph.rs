//! Time-dependent graph model: piecewise-linear travel time functions, the
//! stepwise-speed evaluator for the auxiliary graph, and path duration
//! recursions.

use crate::config::Tolerances;
use crate::error::{Error, Result};

/// Partition of the planning horizon `[0, T]` into `H` intervals.
///
/// Breakpoints are strictly increasing, start at 0 and end at the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    breakpoints: Vec<f64>,
}

impl TimeGrid {
    pub fn new(breakpoints: Vec<f64>) -> Result<Self> {
        if breakpoints.len() < 2 {
            return Err(Error::Parameter(
                "time grid needs at least two breakpoints".into(),
            ));
        }
        if breakpoints[0] != 0.0 {
            return Err(Error::Parameter(format!(
                "time grid must start at 0, got {}",
                breakpoints[0]
            )));
        }
        for w in breakpoints.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::Parameter(format!(
                    "time grid breakpoints must be strictly increasing ({} then {})",
                    w[0], w[1]
                )));
            }
        }
        if breakpoints.iter().any(|t| !t.is_finite()) {
            return Err(Error::Parameter("non-finite grid breakpoint".into()));
        }
        Ok(TimeGrid { breakpoints })
    }

    /// Uniform grid with `intervals` equal pieces on `[0, horizon]`.
    pub fn uniform(horizon: f64, intervals: usize) -> Result<Self> {
        if intervals == 0 || !(horizon > 0.0) {
            return Err(Error::Parameter("uniform grid needs horizon > 0, H >= 1".into()));
        }
        let mut pts: Vec<f64> = (0..intervals)
            .map(|h| horizon * h as f64 / intervals as f64)
            .collect();
        pts.push(horizon);
        TimeGrid::new(pts)
    }

    pub fn horizon_t(&self) -> f64 {
        *self.breakpoints.last().unwrap()
    }

    /// Number of intervals `H`.
    pub fn num_intervals(&self) -> usize {
        self.breakpoints.len() - 1
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn interval_width(&self, h: usize) -> f64 {
        self.breakpoints[h + 1] - self.breakpoints[h]
    }

    /// Index `h` with `t` in the half-open interval `[T_h, T_{h+1})`.
    /// Times at or past the horizon land in the last interval.
    pub fn interval_of(&self, t: f64) -> usize {
        let last = self.num_intervals() - 1;
        if t >= self.breakpoints[last] {
            return last;
        }
        // partition_point: first breakpoint strictly greater than t.
        let up = self.breakpoints.partition_point(|&b| b <= t);
        up.saturating_sub(1).min(last)
    }
}

/// Travel time of one arc as breakpoint samples with linear interpolation.
///
/// Interpolation happens on *arrival* times `t + tau(t)`: the convex
/// combination of two nondecreasing endpoint arrivals stays monotone even in
/// floating point, which the exact subset dynamic program relies on.
#[derive(Debug, Clone, PartialEq)]
pub struct TravelTimeFunction {
    samples: Vec<(f64, f64)>,
    /// Arrival time `t + tau` per sample, precomputed.
    arrivals: Vec<f64>,
}

impl TravelTimeFunction {
    /// `samples` must have strictly increasing times starting at 0, and all
    /// travel times strictly positive. FIFO is *not* enforced here; use
    /// [`validate_fifo`] (graph construction rejects violating arcs).
    pub fn new(samples: Vec<(f64, f64)>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::Parameter(
                "travel time function needs at least two samples".into(),
            ));
        }
        if samples[0].0 != 0.0 {
            return Err(Error::Parameter(format!(
                "first sample must be at t=0, got {}",
                samples[0].0
            )));
        }
        for w in samples.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::Parameter(format!(
                    "sample times must be strictly increasing ({} then {})",
                    w[0].0, w[1].0
                )));
            }
        }
        for &(t, tau) in &samples {
            if !t.is_finite() || !tau.is_finite() || !(tau > 0.0) {
                return Err(Error::Parameter(format!(
                    "travel time must be finite and positive, got tau({t}) = {tau}"
                )));
            }
        }
        let arrivals = samples.iter().map(|&(t, tau)| t + tau).collect();
        Ok(TravelTimeFunction { samples, arrivals })
    }

    /// Constant function `tau(t) = value` on `[0, horizon]`.
    pub fn constant(value: f64, horizon: f64) -> Result<Self> {
        TravelTimeFunction::new(vec![(0.0, value), (horizon, value)])
    }

    pub fn samples(&self) -> &[(f64, f64)] {
        &self.samples
    }

    /// Last sample time; the function is constant from here on.
    pub fn end_time(&self) -> f64 {
        self.samples.last().unwrap().0
    }

    /// Largest sampled travel time (the exact maximum for a piecewise-linear
    /// function).
    pub fn max_value(&self) -> f64 {
        self.samples.iter().map(|&(_, tau)| tau).fold(f64::MIN, f64::max)
    }

    /// Arrival time `t + tau(t)`. Monotone nondecreasing in `t` (given FIFO
    /// samples) including in floating point.
    pub fn eval_arrival(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(Error::Domain(format!("travel time queried at t = {t} < 0")));
        }
        let n = self.samples.len();
        let t_end = self.samples[n - 1].0;
        if t >= t_end {
            // Constant in the long run.
            return Ok(t + self.samples[n - 1].1);
        }
        let seg = {
            let up = self.samples.partition_point(|&(ts, _)| ts <= t);
            up.saturating_sub(1).min(n - 2)
        };
        let (t0, _) = self.samples[seg];
        let (t1, _) = self.samples[seg + 1];
        if t == t0 {
            return Ok(self.arrivals[seg]);
        }
        if t == t1 {
            return Ok(self.arrivals[seg + 1]);
        }
        let a0 = self.arrivals[seg];
        let a1 = self.arrivals[seg + 1];
        let lambda = (t - t0) / (t1 - t0);
        let raw = a0 + lambda * (a1 - a0);
        // Clamp so rounding can never break monotonicity across segments.
        Ok(raw.max(a0.min(a1)).min(a0.max(a1)))
    }
}

/// Travel time `tau(t)` of `f`: piecewise-linear on the sampled range,
/// constant extension past the last sample. Negative `t` is a domain error.
pub fn eval_travel_time(f: &TravelTimeFunction, t: f64) -> Result<f64> {
    Ok(f.eval_arrival(t)? - t)
}

/// One FIFO violation: between samples `index` and `index + 1` the arrival
/// time decreases by `decrease`.
#[derive(Debug, Clone, PartialEq)]
pub struct FifoViolation {
    pub index: usize,
    pub decrease: f64,
}

/// Check arrival monotonicity at consecutive samples, which is sufficient for
/// a piecewise-linear function. Empty result means FIFO holds.
pub fn validate_fifo(f: &TravelTimeFunction) -> Vec<FifoViolation> {
    let tol = Tolerances::DEFAULT.fifo;
    let mut out = Vec::new();
    for (idx, w) in f.arrivals.windows(2).enumerate() {
        let decrease = w[0] - w[1];
        if decrease > tol {
            out.push(FifoViolation { index: idx, decrease });
        }
    }
    out
}

/// Complete time-dependent digraph over depot 0 and customers `1..=n`.
#[derive(Debug, Clone)]
pub struct TimeDependentGraph {
    n: usize,
    /// Flat `(n+1) x (n+1)` arc table, `None` on the diagonal.
    arcs: Vec<Option<TravelTimeFunction>>,
    grid: TimeGrid,
    coordinates: Vec<[f64; 2]>,
}

impl TimeDependentGraph {
    /// Build from an arc table. Every off-diagonal function must be present
    /// and FIFO-valid; offending arcs are listed in the error.
    pub fn new(
        n: usize,
        arcs: Vec<Option<TravelTimeFunction>>,
        grid: TimeGrid,
        coordinates: Vec<[f64; 2]>,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::Parameter("graph needs at least one customer".into()));
        }
        let size = n + 1;
        if arcs.len() != size * size {
            return Err(Error::Parameter(format!(
                "arc table must have {} entries, got {}",
                size * size,
                arcs.len()
            )));
        }
        if coordinates.len() != size {
            return Err(Error::Parameter(format!(
                "need {} coordinates, got {}",
                size,
                coordinates.len()
            )));
        }
        let mut bad = Vec::new();
        for i in 0..size {
            for j in 0..size {
                let slot = &arcs[i * size + j];
                if i == j {
                    if slot.is_some() {
                        return Err(Error::Parameter(format!("diagonal arc ({i},{i}) present")));
                    }
                    continue;
                }
                match slot {
                    None => return Err(Error::Parameter(format!("missing arc ({i},{j})"))),
                    Some(f) => {
                        if !validate_fifo(f).is_empty() {
                            bad.push((i, j));
                        }
                    }
                }
            }
        }
        if !bad.is_empty() {
            return Err(Error::Parameter(format!(
                "arcs violate the FIFO property: {bad:?}"
            )));
        }
        Ok(TimeDependentGraph { n, arcs, grid, coordinates })
    }

    /// Convenience constructor: one travel-time function per ordered pair via
    /// `make(i, j)`.
    pub fn from_fn(
        n: usize,
        grid: TimeGrid,
        coordinates: Vec<[f64; 2]>,
        mut make: impl FnMut(usize, usize) -> Result<TravelTimeFunction>,
    ) -> Result<Self> {
        let size = n + 1;
        let mut arcs = Vec::with_capacity(size * size);
        for i in 0..size {
            for j in 0..size {
                if i == j {
                    arcs.push(None);
                } else {
                    arcs.push(Some(make(i, j)?));
                }
            }
        }
        TimeDependentGraph::new(n, arcs, grid, coordinates)
    }

    pub fn num_customers(&self) -> usize {
        self.n
    }

    pub fn num_vertices(&self) -> usize {
        self.n + 1
    }

    pub fn horizon_t(&self) -> f64 {
        self.grid.horizon_t()
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn coordinates(&self) -> &[[f64; 2]] {
        &self.coordinates
    }

    pub fn arc(&self, i: usize, j: usize) -> &TravelTimeFunction {
        self.arcs[i * (self.n + 1) + j]
            .as_ref()
            .unwrap_or_else(|| panic!("no arc ({i},{j})"))
    }

    /// True when every arc function is constant over time.
    pub fn is_time_invariant(&self) -> bool {
        self.arcs.iter().flatten().all(|f| {
            let first = f.samples[0].1;
            f.samples.iter().all(|&(_, tau)| (tau - first).abs() <= 1e-12 * first.abs().max(1.0))
        })
    }
}

/// Customer visiting order of a tour; depot 0 is implicit at both ends.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Tour {
    order: Vec<usize>,
}

impl Tour {
    pub fn new(order: Vec<usize>, n: usize) -> Result<Self> {
        if order.len() != n {
            return Err(Error::InvalidPath(format!(
                "tour visits {} customers, expected {}",
                order.len(),
                n
            )));
        }
        let mut seen = vec![false; n + 1];
        for &v in &order {
            if v == 0 || v > n || seen[v] {
                return Err(Error::InvalidPath(format!("vertex {v} invalid or repeated")));
            }
            seen[v] = true;
        }
        Ok(Tour { order })
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Depot - customers - depot vertex sequence.
    pub fn full_path(&self) -> Vec<usize> {
        let mut p = Vec::with_capacity(self.order.len() + 2);
        p.push(0);
        p.extend_from_slice(&self.order);
        p.push(0);
        p
    }
}

/// Duration of traversing `path` starting at time `t0`, following the
/// recursion `z_k = z_{k-1} + tau(t0 + z_{k-1})`. Empty and single-vertex
/// paths have duration 0.
pub fn path_duration(g: &TimeDependentGraph, path: &[usize], t0: f64) -> Result<f64> {
    if !(t0 >= 0.0) {
        return Err(Error::Domain(format!("start time {t0} < 0")));
    }
    if path.len() <= 1 {
        return Ok(0.0);
    }
    let mut t = t0;
    for w in path.windows(2) {
        if w[0] == w[1] {
            return Err(Error::InvalidPath(format!("repeated consecutive vertex {}", w[0])));
        }
        t = g.arc(w[0], w[1]).eval_arrival(t)?;
    }
    Ok(t - t0)
}

/// Objective value of a tour: departure from the depot at time 0.
pub fn tour_duration(g: &TimeDependentGraph, tour: &Tour) -> Result<f64> {
    path_duration(g, &tour.full_path(), 0.0)
}

/// Arrival time at every customer of the tour, in visiting order.
pub fn tour_arrivals(g: &TimeDependentGraph, tour: &Tour) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(tour.order.len());
    let mut t = 0.0;
    let mut prev = 0usize;
    for &v in &tour.order {
        t = g.arc(prev, v).eval_arrival(t)?;
        out.push(t);
        prev = v;
    }
    Ok(out)
}

/// Shared stepwise speed `v(t)`: one value per grid interval, extended with
/// the last value past the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedProfile {
    grid: TimeGrid,
    values: Vec<f64>,
    /// Cumulative distance `Y(T_h)` covered from time 0 up to breakpoint `h`.
    cumulative: Vec<f64>,
}

impl SpeedProfile {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.num_intervals() {
            return Err(Error::Parameter(format!(
                "profile needs {} speed values, got {}",
                grid.num_intervals(),
                values.len()
            )));
        }
        if values.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::Parameter("speeds must be positive and finite".into()));
        }
        let mut cumulative = Vec::with_capacity(values.len() + 1);
        let mut acc = 0.0;
        cumulative.push(0.0);
        for (h, &v) in values.iter().enumerate() {
            acc += v * grid.interval_width(h);
            cumulative.push(acc);
        }
        Ok(SpeedProfile { grid, values, cumulative })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn speed_at(&self, t: f64) -> f64 {
        if t >= self.grid.horizon_t() {
            *self.values.last().unwrap()
        } else {
            self.values[self.grid.interval_of(t)]
        }
    }

    /// `Y(t) = integral of v over [0, t]`, with constant extension past `T`.
    pub fn cumulative_at(&self, t: f64) -> f64 {
        let horizon = self.grid.horizon_t();
        if t >= horizon {
            return self.cumulative[self.values.len()] + (t - horizon) * self.values.last().unwrap();
        }
        let h = self.grid.interval_of(t);
        self.cumulative[h] + (t - self.grid.breakpoints()[h]) * self.values[h]
    }

    /// `integral of v over [a, b]`.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        self.cumulative_at(b) - self.cumulative_at(a)
    }
}

/// Auxiliary graph: a shared speed profile plus one nonnegative length per
/// arc. Travel times follow from consuming the length across speed periods,
/// so the graph is path ranking invariant by construction.
#[derive(Debug, Clone)]
pub struct AuxiliaryGraph {
    profile: SpeedProfile,
    n: usize,
    /// Flat `(n+1) x (n+1)` length table, 0 on the diagonal.
    lengths: Vec<f64>,
}

impl AuxiliaryGraph {
    pub fn new(profile: SpeedProfile, n: usize, lengths: Vec<f64>) -> Result<Self> {
        let size = n + 1;
        if lengths.len() != size * size {
            return Err(Error::Parameter(format!(
                "length table must have {} entries, got {}",
                size * size,
                lengths.len()
            )));
        }
        if lengths.iter().any(|&l| !(l >= 0.0) || !l.is_finite()) {
            return Err(Error::Parameter("arc lengths must be nonnegative".into()));
        }
        Ok(AuxiliaryGraph { profile, n, lengths })
    }

    pub fn profile(&self) -> &SpeedProfile {
        &self.profile
    }

    pub fn num_customers(&self) -> usize {
        self.n
    }

    pub fn length(&self, i: usize, j: usize) -> f64 {
        self.lengths[i * (self.n + 1) + j]
    }

    /// Sum of arc lengths along a vertex sequence.
    pub fn path_length(&self, path: &[usize]) -> f64 {
        path.windows(2).map(|w| self.length(w[0], w[1])).sum()
    }

    /// Long-run travel time `L_ij / v_{H-1}`, the constant value for
    /// departures at or past the horizon.
    pub fn long_run_travel_time(&self, i: usize, j: usize) -> f64 {
        self.length(i, j) / self.profile.values().last().unwrap()
    }
}

/// Stepwise-speed travel time: consume the arc length period by period from
/// start time `t`. For `t` at or past the horizon the last speed applies and
/// the result is `L / v_{H-1}` exactly.
pub fn igp_travel_time(a: &AuxiliaryGraph, i: usize, j: usize, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("travel time queried at t = {t} < 0")));
    }
    let length = a.length(i, j);
    igp_travel_time_raw(&a.profile, length, t)
}

/// Evaluator on a bare profile + length (used by the generator as well).
pub fn igp_travel_time_raw(profile: &SpeedProfile, length: f64, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("travel time queried at t = {t} < 0")));
    }
    let grid = profile.grid();
    let values = profile.values();
    let last = values.len() - 1;
    if t >= grid.horizon_t() {
        return Ok(length / values[last]);
    }
    let mut k = grid.interval_of(t);
    let mut remaining = length;
    let mut pos = t;
    let mut arrival = pos + remaining / values[k];
    while k < last && arrival > grid.breakpoints()[k + 1] {
        remaining -= values[k] * (grid.breakpoints()[k + 1] - pos);
        pos = grid.breakpoints()[k + 1];
        k += 1;
        arrival = pos + remaining / values[k];
    }
    Ok(arrival - t)
}

/// Path duration on the auxiliary graph, same recursion as [`path_duration`].
pub fn auxiliary_duration(a: &AuxiliaryGraph, path: &[usize], t0: f64) -> Result<f64> {
    if !(t0 >= 0.0) {
        return Err(Error::Domain(format!("start time {t0} < 0")));
    }
    if path.len() <= 1 {
        return Ok(0.0);
    }
    let mut t = t0;
    for w in path.windows(2) {
        if w[0] == w[1] {
            return Err(Error::InvalidPath(format!("repeated consecutive vertex {}", w[0])));
        }
        t += igp_travel_time(a, w[0], w[1], t)?;
    }
    Ok(t - t0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_point(t1: f64, tau0: f64, tau1: f64) -> TravelTimeFunction {
        TravelTimeFunction::new(vec![(0.0, tau0), (t1, tau1)]).unwrap()
    }

    #[test]
    fn eval_constant_function() {
        let f = TravelTimeFunction::constant(10.0, 100.0).unwrap();
        assert_relative_eq!(eval_travel_time(&f, 3.0).unwrap(), 10.0, max_relative = 1e-12);
    }

    #[test]
    fn eval_extends_constant_past_horizon() {
        let f = two_point(100.0, 5.0, 15.0);
        assert_eq!(eval_travel_time(&f, 150.0).unwrap(), 15.0);
    }

    #[test]
    fn eval_interpolates_linearly() {
        let f = two_point(100.0, 5.0, 15.0);
        assert_relative_eq!(eval_travel_time(&f, 50.0).unwrap(), 10.0, max_relative = 1e-12);
    }

    #[test]
    fn eval_rejects_negative_time() {
        let f = TravelTimeFunction::constant(10.0, 100.0).unwrap();
        assert!(matches!(eval_travel_time(&f, -1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn arrival_is_monotone_under_dense_sampling() {
        // Steep descent with slope exactly -1 keeps arrival constant; still FIFO.
        let f = TravelTimeFunction::new(vec![(0.0, 20.0), (10.0, 10.0), (30.0, 12.0)]).unwrap();
        assert!(validate_fifo(&f).is_empty());
        let mut prev = f.eval_arrival(0.0).unwrap();
        for s in 1..=10_000 {
            let t = 40.0 * s as f64 / 10_000.0;
            let a = f.eval_arrival(t).unwrap();
            assert!(a >= prev, "arrival decreased at t={t}");
            prev = a;
        }
    }

    #[test]
    fn fifo_flags_decreasing_arrival() {
        let f = TravelTimeFunction::new(vec![(0.0, 10.0), (5.0, 0.5)]).unwrap();
        let v = validate_fifo(&f);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].index, 0);
        assert_relative_eq!(v[0].decrease, 4.5, max_relative = 1e-12);
    }

    #[test]
    fn fifo_accepts_constant() {
        let f = TravelTimeFunction::constant(10.0, 50.0).unwrap();
        assert!(validate_fifo(&f).is_empty());
    }

    #[test]
    fn fifo_accepts_stepwise_speed_functions() {
        // Oracle: dense sampling of t + tau(t) over the horizon and beyond.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let h = rng.gen_range(1..=6);
            let grid = TimeGrid::uniform(120.0, h).unwrap();
            let values: Vec<f64> = (0..h).map(|_| rng.gen_range(0.3..2.0)).collect();
            let profile = SpeedProfile::new(grid, values).unwrap();
            let length = rng.gen_range(5.0..80.0);
            // Sample the evaluator on a grid fine enough to catch any kink.
            let samples: Vec<(f64, f64)> = (0..=600)
                .map(|s| {
                    let t = 140.0 * s as f64 / 600.0;
                    (t, igp_travel_time_raw(&profile, length, t).unwrap())
                })
                .collect();
            let f = TravelTimeFunction::new(samples).unwrap();
            assert!(validate_fifo(&f).is_empty());
            let mut prev = 0.0f64;
            for s in 0..10_000 {
                let t = 150.0 * s as f64 / 10_000.0;
                let arr = t + igp_travel_time_raw(&profile, length, t).unwrap();
                assert!(arr >= prev - 1e-9);
                prev = arr;
            }
        }
    }

    fn small_graph() -> TimeDependentGraph {
        // Arcs: tau_01 = 10 constant, tau_12(t) = 5 + 0.1 t on [0, 100],
        // everything else constant 30.
        let grid = TimeGrid::new(vec![0.0, 100.0]).unwrap();
        TimeDependentGraph::from_fn(2, grid, vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]], |i, j| {
            match (i, j) {
                (0, 1) => TravelTimeFunction::constant(10.0, 100.0),
                (1, 2) => TravelTimeFunction::new(vec![(0.0, 5.0), (100.0, 15.0)]),
                _ => TravelTimeFunction::constant(30.0, 100.0),
            }
        })
        .unwrap()
    }

    #[test]
    fn single_vertex_path_has_zero_duration() {
        let g = small_graph();
        assert_eq!(path_duration(&g, &[1], 17.0).unwrap(), 0.0);
        assert_eq!(path_duration(&g, &[], 0.0).unwrap(), 0.0);
    }

    #[test]
    fn path_duration_follows_recursion() {
        let g = small_graph();
        // Oracle: step-by-step simulation. Leave 0 at t=0, arrive 1 at 10,
        // tau_12(10) = 5 + 1 = 6, total 16.
        let z = path_duration(&g, &[0, 1, 2], 0.0).unwrap();
        let mut t = 0.0;
        for (i, j) in [(0usize, 1usize), (1, 2)] {
            t += eval_travel_time(g.arc(i, j), t).unwrap();
        }
        assert_relative_eq!(z, t, max_relative = 1e-12);
        assert_relative_eq!(z, 16.0, max_relative = 1e-12);
    }

    #[test]
    fn constant_graph_duration_is_sum_of_constants() {
        let grid = TimeGrid::new(vec![0.0, 60.0]).unwrap();
        let g = TimeDependentGraph::from_fn(
            3,
            grid,
            vec![[0.0, 0.0]; 4],
            |i, j| TravelTimeFunction::constant(3.0 + (i + 2 * j) as f64, 60.0),
        )
        .unwrap();
        let path = [0usize, 2, 1, 3];
        let expect: f64 = path.windows(2).map(|w| 3.0 + (w[0] + 2 * w[1]) as f64).sum();
        assert_relative_eq!(path_duration(&g, &path, 12.0).unwrap(), expect, max_relative = 1e-12);
    }

    #[test]
    fn path_duration_rejects_repeated_vertex() {
        let g = small_graph();
        assert!(matches!(
            path_duration(&g, &[0, 1, 1, 2], 0.0),
            Err(Error::InvalidPath(_))
        ));
    }

    fn profile_two_periods() -> SpeedProfile {
        let grid = TimeGrid::new(vec![0.0, 10.0, 20.0]).unwrap();
        SpeedProfile::new(grid, vec![1.0, 2.0]).unwrap()
    }

    #[test]
    fn igp_constant_speed() {
        let grid = TimeGrid::new(vec![0.0, 10.0]).unwrap();
        let profile = SpeedProfile::new(grid, vec![1.0]).unwrap();
        assert_relative_eq!(
            igp_travel_time_raw(&profile, 5.0, 0.0).unwrap(),
            5.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn igp_crosses_period_boundary() {
        // 10 units in period 0 at speed 1, remaining 2 at speed 2 -> 11.
        let profile = profile_two_periods();
        assert_relative_eq!(
            igp_travel_time_raw(&profile, 12.0, 0.0).unwrap(),
            11.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn igp_starts_mid_period() {
        // From t=8: 2 units by t=10, remaining 4 at speed 2 -> 4 total.
        let profile = profile_two_periods();
        assert_relative_eq!(
            igp_travel_time_raw(&profile, 6.0, 8.0).unwrap(),
            4.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn igp_long_run_value_is_exact() {
        let profile = profile_two_periods();
        let aux = AuxiliaryGraph::new(profile, 1, vec![0.0, 7.0, 7.0, 0.0]).unwrap();
        for t in [20.0, 25.0, 1000.0] {
            assert_eq!(igp_travel_time(&aux, 0, 1, t).unwrap(), 7.0 / 2.0);
        }
        assert_eq!(aux.long_run_travel_time(0, 1), 3.5);
    }

    /// Numeric inversion of the conservation identity: find tau with
    /// integral(t, t+tau) = L by bisection, independently of the evaluator.
    fn invert_integral(profile: &SpeedProfile, length: f64, t: f64) -> f64 {
        let mut lo = 0.0f64;
        let mut hi = 1.0f64;
        while profile.integral(t, t + hi) < length {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if profile.integral(t, t + mid) < length {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn igp_agrees_with_integral_inversion() {
        let profile = profile_two_periods();
        for (length, t) in [(12.0, 0.0), (6.0, 8.0), (3.0, 19.5), (40.0, 2.5)] {
            let tau = igp_travel_time_raw(&profile, length, t).unwrap();
            let oracle = invert_integral(&profile, length, t);
            assert_relative_eq!(tau, oracle, epsilon = 1e-9);
        }
    }

    #[test]
    fn igp_conservation_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..200 {
            let h = rng.gen_range(1..=8);
            let grid = TimeGrid::uniform(480.0, h).unwrap();
            let values: Vec<f64> = (0..h).map(|_| rng.gen_range(0.2..2.5)).collect();
            let profile = SpeedProfile::new(grid, values).unwrap();
            for _ in 0..50 {
                let length = rng.gen_range(0.1..200.0);
                let t = rng.gen_range(0.0..600.0);
                let tau = igp_travel_time_raw(&profile, length, t).unwrap();
                let covered = profile.integral(t, t + tau);
                assert!(
                    (covered - length).abs() <= 1e-9 * length.max(1.0),
                    "conservation broke: covered {covered}, length {length}"
                );
            }
        }
    }

    #[test]
    fn auxiliary_duration_trivial_cases() {
        let profile = profile_two_periods();
        let aux = AuxiliaryGraph::new(profile, 2, vec![0.0; 9]).unwrap();
        assert_eq!(auxiliary_duration(&aux, &[1], 3.0).unwrap(), 0.0);
    }

    #[test]
    fn auxiliary_duration_unit_speed_sums_lengths() {
        let grid = TimeGrid::new(vec![0.0, 100.0]).unwrap();
        let profile = SpeedProfile::new(grid, vec![1.0]).unwrap();
        let mut lengths = vec![0.0; 16];
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    lengths[i * 4 + j] = (1 + i + 3 * j) as f64;
                }
            }
        }
        let aux = AuxiliaryGraph::new(profile, 3, lengths).unwrap();
        let path = [0usize, 2, 3, 1];
        assert_relative_eq!(
            auxiliary_duration(&aux, &path, 5.0).unwrap(),
            aux.path_length(&path),
            max_relative = 1e-12
        );
    }

    #[test]
    fn auxiliary_duration_conserves_total_length() {
        // Property behind ranking invariance: the integral of the speed over
        // the traversal of any path equals its total length.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let h = rng.gen_range(1..=6);
            let grid = TimeGrid::uniform(240.0, h).unwrap();
            let values: Vec<f64> = (0..h).map(|_| rng.gen_range(0.3..2.0)).collect();
            let profile = SpeedProfile::new(grid, values).unwrap();
            let mut lengths = vec![0.0; 16];
            for i in 0..4 {
                for j in 0..4 {
                    if i != j {
                        lengths[i * 4 + j] = rng.gen_range(1.0..60.0);
                    }
                }
            }
            let aux = AuxiliaryGraph::new(profile.clone(), 3, lengths).unwrap();
            let path = [0usize, 1, 2, 3];
            let t0 = rng.gen_range(0.0..240.0);
            let z = auxiliary_duration(&aux, &path, t0).unwrap();
            let total: f64 = aux.path_length(&path);
            let covered = profile.integral(t0, t0 + z);
            assert!((covered - total).abs() <= 1e-8 * total.max(1.0));
        }
    }

    #[test]
    fn fifo_closure_along_paths() {
        // Later departure never yields earlier arrival for whole paths.
        let g = small_graph();
        let path = [0usize, 1, 2];
        let mut prev_arrival = f64::MIN;
        for s in 0..500 {
            let t0 = 120.0 * s as f64 / 500.0;
            let arrival = t0 + path_duration(&g, &path, t0).unwrap();
            assert!(arrival >= prev_arrival - 1e-9);
            prev_arrival = arrival;
        }
    }

    #[test]
    fn ranking_invariance_on_auxiliary_graph() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let grid = TimeGrid::uniform(120.0, 4).unwrap();
        let values: Vec<f64> = (0..4).map(|_| rng.gen_range(0.4..1.8)).collect();
        let profile = SpeedProfile::new(grid, values).unwrap();
        let mut lengths = vec![0.0; 25];
        for i in 0..5 {
            for j in 0..5 {
                if i != j {
                    lengths[i * 5 + j] = rng.gen_range(1.0..40.0);
                }
            }
        }
        let aux = AuxiliaryGraph::new(profile, 4, lengths).unwrap();
        let paths = [
            vec![0usize, 1, 2, 3, 4],
            vec![0usize, 2, 1, 4, 3],
            vec![0usize, 3, 4, 1, 2],
            vec![0usize, 4, 3, 2, 1],
        ];
        for a in 0..paths.len() {
            for b in (a + 1)..paths.len() {
                let la = aux.path_length(&paths[a]);
                let lb = aux.path_length(&paths[b]);
                for s in 0..10 {
                    let t = 240.0 * s as f64 / 10.0;
                    let za = auxiliary_duration(&aux, &paths[a], t).unwrap();
                    let zb = auxiliary_duration(&aux, &paths[b], t).unwrap();
                    if (la - lb).abs() <= 1e-9 {
                        assert!((za - zb).abs() <= 1e-8);
                    } else if la < lb {
                        assert!(za <= zb + 1e-8);
                    } else {
                        assert!(zb <= za + 1e-8);
                    }
                }
            }
        }
    }

    #[test]
    fn tour_validation() {
        assert!(Tour::new(vec![1, 2, 3], 3).is_ok());
        assert!(Tour::new(vec![1, 2, 2], 3).is_err());
        assert!(Tour::new(vec![1, 2], 3).is_err());
        assert!(Tour::new(vec![0, 1, 2], 3).is_err());
    }

    #[test]
    fn graph_rejects_fifo_violations() {
        let grid = TimeGrid::new(vec![0.0, 10.0]).unwrap();
        let bad = TimeDependentGraph::from_fn(1, grid, vec![[0.0, 0.0]; 2], |i, _| {
            if i == 0 {
                TravelTimeFunction::new(vec![(0.0, 10.0), (5.0, 1.0)])
            } else {
                TravelTimeFunction::constant(5.0, 10.0)
            }
        });
        assert!(matches!(bad, Err(Error::Parameter(_))));
    }
}

//! Numeric tolerances shared across the crate.
//!
//! All times are minutes stored as `f64`. Every comparison tolerance lives in
//! this one record so tests and solvers agree on what "equal" means.

#[derive(Debug, Clone, Copy)]
pub struct Tolerances {
    /// Two time instants closer than this are the same sample point.
    pub time_eq: f64,
    /// Allowed arrival-time decrease before a FIFO violation is reported.
    pub fifo: f64,
    /// Tie window on path durations when comparing rankings.
    pub duration_tie: f64,
    /// Relative tolerance of the length-conservation identity of the
    /// stepwise-speed travel time evaluator.
    pub integral_rel: f64,
    /// Feasibility tolerance of the LP solver (bound and row residuals).
    pub lp_feas: f64,
    /// Optimality tolerance of the LP solver (reduced costs).
    pub lp_opt: f64,
    /// A fitting deviation below this counts as a perfect fit.
    pub zeta_perfect: f64,
    /// Cost comparisons in the tour solvers.
    pub cost_eq: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            time_eq: 1e-9,
            fifo: 1e-9,
            duration_tie: 1e-8,
            integral_rel: 1e-9,
            lp_feas: 1e-9,
            lp_opt: 1e-9,
            zeta_perfect: 1e-6,
            cost_eq: 1e-9,
        }
    }
}

impl Tolerances {
    pub const DEFAULT: Tolerances = Tolerances {
        time_eq: 1e-9,
        fifo: 1e-9,
        duration_tie: 1e-8,
        integral_rel: 1e-9,
        lp_feas: 1e-9,
        lp_opt: 1e-9,
        zeta_perfect: 1e-6,
        cost_eq: 1e-9,
    };
}

//! Exact time-dependent solvers at desk scale.
//!
//! The subset dynamic program stores the earliest arrival per (visited set,
//! last customer) state. Under FIFO a later departure can never yield an
//! earlier arrival, so the earliest arrival dominates and the program is
//! exact with `O(2^n n^2)` travel-time evaluations.

use crate::atsp::permute_lex;
use crate::error::{Error, Result};
use crate::tdgraph::{path_duration, validate_fifo, TimeDependentGraph, Tour};

const DP_MAX_CUSTOMERS: usize = 16;
const BRUTE_MAX_CUSTOMERS: usize = 9;

/// Minimum-duration tour with departure at time 0, by earliest-arrival
/// dynamic programming over customer subsets. Ties between co-optimal final
/// states resolve to the lexicographically smallest reconstructed tour.
pub fn solve_tdtsp_exact(g: &TimeDependentGraph) -> Result<(Tour, f64)> {
    let n = g.num_customers();
    if n > DP_MAX_CUSTOMERS {
        return Err(Error::Capacity(format!(
            "dynamic program guard: {n} customers > {DP_MAX_CUSTOMERS}"
        )));
    }
    for i in 0..g.num_vertices() {
        for j in 0..g.num_vertices() {
            if i != j && !validate_fifo(g.arc(i, j)).is_empty() {
                return Err(Error::Parameter(format!(
                    "arc ({i},{j}) violates FIFO; earliest-arrival dominance would be unsound"
                )));
            }
        }
    }

    let full = (1usize << n) - 1;
    let states = 1usize << n;
    // arrival[mask * n + (last - 1)] = earliest arrival at `last` having
    // visited exactly `mask`.
    let mut arrival = vec![f64::INFINITY; states * n];
    let mut parent = vec![u8::MAX; states * n];
    for last in 1..=n {
        let mask = 1usize << (last - 1);
        arrival[mask * n + last - 1] = g.arc(0, last).eval_arrival(0.0)?;
    }
    for mask in 1..=full {
        for last in 1..=n {
            if mask & (1 << (last - 1)) == 0 {
                continue;
            }
            let t = arrival[mask * n + last - 1];
            if !t.is_finite() {
                continue;
            }
            for next in 1..=n {
                if mask & (1 << (next - 1)) != 0 {
                    continue;
                }
                let nmask = mask | (1 << (next - 1));
                let cand = g.arc(last, next).eval_arrival(t)?;
                let slot = nmask * n + next - 1;
                if cand < arrival[slot] {
                    arrival[slot] = cand;
                    parent[slot] = last as u8;
                }
            }
        }
    }

    // Close the tour; collect every last vertex achieving the exact minimum.
    let mut best = f64::INFINITY;
    let mut finals: Vec<usize> = Vec::new();
    for last in 1..=n {
        let t = arrival[full * n + last - 1];
        if !t.is_finite() {
            continue;
        }
        let total = g.arc(last, 0).eval_arrival(t)?;
        if total < best {
            best = total;
            finals = vec![last];
        } else if total == best {
            finals.push(last);
        }
    }
    if finals.is_empty() {
        return Err(Error::Internal("dynamic program found no tour".into()));
    }
    let mut best_tour: Option<Tour> = None;
    for &last in &finals {
        let mut order = Vec::with_capacity(n);
        let mut mask = full;
        let mut v = last;
        while v != 0 {
            order.push(v);
            let p = parent[mask * n + v - 1];
            mask &= !(1 << (v - 1));
            v = if p == u8::MAX { 0 } else { p as usize };
        }
        order.reverse();
        let tour = Tour::new(order, n)?;
        if best_tour.as_ref().map_or(true, |t| tour.order() < t.order()) {
            best_tour = Some(tour);
        }
    }
    let tour = best_tour.unwrap();
    // Re-evaluate through the shared recursion; the operation sequence is
    // identical, so the value matches the table bit for bit.
    let duration = path_duration(g, &tour.full_path(), 0.0)?;
    Ok((tour, duration))
}

/// Enumerate every tour in lexicographic order and keep the first optimum.
pub fn brute_force_tdtsp(g: &TimeDependentGraph) -> Result<(Tour, f64)> {
    let n = g.num_customers();
    if n > BRUTE_MAX_CUSTOMERS {
        return Err(Error::Capacity(format!(
            "brute force guard: {n} customers > {BRUTE_MAX_CUSTOMERS}"
        )));
    }
    let mut order: Vec<usize> = (1..=n).collect();
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut failure: Option<Error> = None;
    permute_lex(&mut order, 0, &mut |perm| {
        if failure.is_some() {
            return;
        }
        let mut path = Vec::with_capacity(n + 2);
        path.push(0);
        path.extend_from_slice(perm);
        path.push(0);
        match path_duration(g, &path, 0.0) {
            Ok(z) => {
                if best.as_ref().map_or(true, |(_, b)| z < *b) {
                    best = Some((perm.to_vec(), z));
                }
            }
            Err(e) => failure = Some(e),
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let (order, duration) = best.unwrap();
    Ok((Tour::new(order, n)?, duration))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atsp::{solve_atsp, CostMatrix};
    use crate::tdgraph::{eval_travel_time, TimeGrid, TravelTimeFunction};
    use crate::testutil::random_fifo_graph;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_customer_is_forced() {
        let grid = TimeGrid::new(vec![0.0, 100.0]).unwrap();
        let g = TimeDependentGraph::from_fn(1, grid, vec![[0.0, 0.0]; 2], |i, _| {
            if i == 0 {
                TravelTimeFunction::new(vec![(0.0, 10.0), (100.0, 20.0)])
            } else {
                TravelTimeFunction::new(vec![(0.0, 7.0), (100.0, 9.0)])
            }
        })
        .unwrap();
        let (tour, z) = solve_tdtsp_exact(&g).unwrap();
        assert_eq!(tour.order(), &[1]);
        // tau_01(0) = 10, then tau_10(10) = 7 + 10/100 * 2 = 7.2
        let t1 = eval_travel_time(g.arc(0, 1), 0.0).unwrap();
        let back = eval_travel_time(g.arc(1, 0), t1).unwrap();
        assert_relative_eq!(z, t1 + back, max_relative = 1e-12);
    }

    #[test]
    fn two_customers_both_orders_checked() {
        let grid = TimeGrid::new(vec![0.0, 50.0]).unwrap();
        let g = TimeDependentGraph::from_fn(2, grid, vec![[0.0, 0.0]; 3], |i, j| {
            TravelTimeFunction::constant(1.0 + (2 * i + 3 * j) as f64, 50.0)
        })
        .unwrap();
        let z12 = path_duration(&g, &[0, 1, 2, 0], 0.0).unwrap();
        let z21 = path_duration(&g, &[0, 2, 1, 0], 0.0).unwrap();
        let (_, z) = brute_force_tdtsp(&g).unwrap();
        assert_eq!(z, z12.min(z21));
    }

    #[test]
    fn uniform_graph_ties_resolve_lexicographically() {
        let grid = TimeGrid::new(vec![0.0, 50.0]).unwrap();
        let g = TimeDependentGraph::from_fn(3, grid, vec![[0.0, 0.0]; 4], |_, _| {
            TravelTimeFunction::constant(5.0, 50.0)
        })
        .unwrap();
        let (tour, z) = brute_force_tdtsp(&g).unwrap();
        assert_eq!(tour.order(), &[1, 2, 3]);
        assert_relative_eq!(z, 20.0);
    }

    #[test]
    fn time_invariant_matches_atsp() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let n = rng.gen_range(2..=7);
            let grid = TimeGrid::new(vec![0.0, 100.0]).unwrap();
            let mut costs = vec![vec![0.0; n + 1]; n + 1];
            for (i, row) in costs.iter_mut().enumerate() {
                for (j, c) in row.iter_mut().enumerate() {
                    if i != j {
                        *c = rng.gen_range(2.0..40.0);
                    }
                }
            }
            let costs_ref = costs.clone();
            let g = TimeDependentGraph::from_fn(n, grid, vec![[0.0, 0.0]; n + 1], |i, j| {
                TravelTimeFunction::constant(costs_ref[i][j], 100.0)
            })
            .unwrap();
            let (_, z) = solve_tdtsp_exact(&g).unwrap();
            let c = CostMatrix::from_fn(n + 1, |i, j| costs[i][j]).unwrap();
            let atsp = solve_atsp(&c).unwrap();
            assert!((z - atsp.cost).abs() <= 1e-9, "{z} vs {}", atsp.cost);
        }
    }

    #[test]
    fn dp_equals_brute_force_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for case in 0..300 {
            let n = rng.gen_range(2..=8);
            let g = random_fifo_graph(n, &mut rng);
            let (_, dp) = solve_tdtsp_exact(&g).unwrap();
            let (_, bf) = brute_force_tdtsp(&g).unwrap();
            assert_eq!(dp, bf, "case {case}: dp {dp} vs brute {bf}");
        }
    }

    #[test]
    fn congestion_never_decreases_the_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..20 {
            let n = rng.gen_range(2..=6);
            let g = random_fifo_graph(n, &mut rng);
            let bump = rng.gen_range(0.5..5.0);
            let slower = TimeDependentGraph::from_fn(
                n,
                g.grid().clone(),
                g.coordinates().to_vec(),
                |i, j| {
                    let samples: Vec<(f64, f64)> = g
                        .arc(i, j)
                        .samples()
                        .iter()
                        .map(|&(t, tau)| (t, tau + bump))
                        .collect();
                    TravelTimeFunction::new(samples)
                },
            )
            .unwrap();
            let (_, base) = solve_tdtsp_exact(&g).unwrap();
            let (_, worse) = solve_tdtsp_exact(&slower).unwrap();
            assert!(worse >= base - 1e-9);
        }
    }

    #[test]
    fn dp_guard_and_fifo_refusal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = random_fifo_graph(2, &mut rng);
        assert!(solve_tdtsp_exact(&g).is_ok());
        // 17 customers exceeds the guard.
        let grid = TimeGrid::new(vec![0.0, 10.0]).unwrap();
        let big = TimeDependentGraph::from_fn(17, grid, vec![[0.0, 0.0]; 18], |_, _| {
            TravelTimeFunction::constant(1.0, 10.0)
        })
        .unwrap();
        assert!(matches!(solve_tdtsp_exact(&big), Err(Error::Capacity(_))));
    }
}

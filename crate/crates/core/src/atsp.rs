//! Exact time-invariant ATSP solver: assignment-relaxation branch-and-bound
//! with subtour branching, plus a permutation brute force used as oracle.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::tdgraph::Tour;

/// Forbidden-arc sentinel. Large enough to dominate any real cost, small
/// enough that sums of a few of them stay far from overflow.
pub const FORBIDDEN: f64 = 1e15;

/// `(n+1) x (n+1)` nonnegative cost table over depot 0 and customers; the
/// diagonal is forbidden.
#[derive(Debug, Clone)]
pub struct CostMatrix {
    size: usize,
    costs: Vec<f64>,
}

impl CostMatrix {
    pub fn new(size: usize, costs: Vec<f64>) -> Result<Self> {
        if size < 2 {
            return Err(Error::Parameter("cost matrix needs size >= 2".into()));
        }
        if costs.len() != size * size {
            return Err(Error::Parameter(format!(
                "cost matrix needs {} entries, got {}",
                size * size,
                costs.len()
            )));
        }
        for i in 0..size {
            for j in 0..size {
                let c = costs[i * size + j];
                if i != j && (!c.is_finite() || c < 0.0) && c < FORBIDDEN {
                    return Err(Error::Parameter(format!(
                        "cost ({i},{j}) must be a nonnegative real, got {c}"
                    )));
                }
            }
        }
        let mut costs = costs;
        for i in 0..size {
            costs[i * size + i] = FORBIDDEN;
        }
        Ok(CostMatrix { size, costs })
    }

    pub fn from_fn(size: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut costs = vec![0.0; size * size];
        for i in 0..size {
            for j in 0..size {
                costs[i * size + j] = if i == j { FORBIDDEN } else { f(i, j) };
            }
        }
        CostMatrix::new(size, costs)
    }

    /// Number of vertices (customers + depot).
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn num_customers(&self) -> usize {
        self.size - 1
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.costs[i * self.size + j]
    }

    /// Tour cost depot -> order -> depot, summed in visiting order.
    pub fn tour_cost(&self, tour: &Tour) -> f64 {
        let mut c = 0.0;
        let mut prev = 0usize;
        for &v in tour.order() {
            c += self.at(prev, v);
            prev = v;
        }
        c + self.at(prev, 0)
    }
}

/// Result of an exact ATSP solve.
#[derive(Debug, Clone)]
pub struct AtspSolution {
    pub tour: Tour,
    /// Re-evaluated cost of `tour` (not the relaxation value).
    pub cost: f64,
    /// Branch-and-bound nodes expanded (1 when the root relaxation is a tour).
    pub nodes_explored: usize,
    /// True when the search ran to completion.
    pub proof: bool,
}

/// Min-cost perfect matching rows -> columns by the shortest augmenting path
/// method with potentials. Deterministic. Returns the assignment and its
/// cost; an assignment forced through a forbidden entry is infeasible.
pub fn solve_assignment(c: &CostMatrix) -> Result<(Vec<usize>, f64)> {
    let n = c.size;
    // 1-based arrays with a sentinel column 0.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1]; // p[col] = row matched to col
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = c.at(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            if !delta.is_finite() {
                return Err(Error::Infeasible(
                    "assignment has a row with no allowed column".into(),
                ));
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
    }
    let mut cost = 0.0;
    for (i, &j) in assignment.iter().enumerate() {
        let cij = c.at(i, j);
        if cij >= FORBIDDEN / 2.0 {
            return Err(Error::Infeasible(
                "assignment forced through a forbidden arc".into(),
            ));
        }
        cost += cij;
    }
    Ok((assignment, cost))
}

/// Cycles of a permutation, each rotated to start at its smallest vertex and
/// listed in order of that smallest vertex.
fn cycles_of(assignment: &[usize]) -> Vec<Vec<usize>> {
    let n = assignment.len();
    let mut seen = vec![false; n];
    let mut cycles = Vec::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        let mut cyc = Vec::new();
        let mut v = start;
        while !seen[v] {
            seen[v] = true;
            cyc.push(v);
            v = assignment[v];
        }
        cycles.push(cyc);
    }
    cycles
}

fn tour_from_cycle(cycle: &[usize], size: usize) -> Result<Tour> {
    // Rotate so the tour starts right after the depot.
    let pos = cycle.iter().position(|&v| v == 0).expect("cycle without depot");
    let order: Vec<usize> = (1..cycle.len()).map(|s| cycle[(pos + s) % cycle.len()]).collect();
    Tour::new(order, size - 1)
}

/// Patch all assignment cycles into one tour by repeatedly applying the
/// cheapest two-arc merge, giving the initial incumbent.
fn patch_cycles(c: &CostMatrix, cycles: &[Vec<usize>]) -> Option<(Tour, f64)> {
    let mut succ: Vec<usize> = vec![0; c.size];
    for cyc in cycles {
        for (idx, &v) in cyc.iter().enumerate() {
            succ[v] = cyc[(idx + 1) % cyc.len()];
        }
    }
    let mut cycle_id: Vec<usize> = vec![0; c.size];
    for (id, cyc) in cycles.iter().enumerate() {
        for &v in cyc {
            cycle_id[v] = id;
        }
    }
    let mut remaining = cycles.len();
    while remaining > 1 {
        // Cheapest patch over all pairs of arcs in distinct cycles:
        // (a -> succ_a) and (b -> succ_b) become (a -> succ_b), (b -> succ_a).
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..c.size {
            for b in 0..c.size {
                if cycle_id[a] == cycle_id[b] {
                    continue;
                }
                let delta = c.at(a, succ[b]) + c.at(b, succ[a])
                    - c.at(a, succ[a])
                    - c.at(b, succ[b]);
                if delta < FORBIDDEN / 2.0 && best.map_or(true, |(d, _, _)| delta < d) {
                    best = Some((delta, a, b));
                }
            }
        }
        let (_, a, b) = best?;
        let (sa, sb) = (succ[a], succ[b]);
        succ[a] = sb;
        succ[b] = sa;
        // b's cycle got absorbed into a's.
        let keep = cycle_id[a];
        let mut v = succ[a];
        while v != a {
            cycle_id[v] = keep;
            v = succ[v];
        }
        remaining -= 1;
    }
    let mut cycle = Vec::with_capacity(c.size);
    let mut v = 0usize;
    loop {
        cycle.push(v);
        v = succ[v];
        if v == 0 {
            break;
        }
    }
    if cycle.len() != c.size {
        return None;
    }
    let tour = tour_from_cycle(&cycle, c.size).ok()?;
    let cost = c.tour_cost(&tour);
    Some((tour, cost))
}

struct Node {
    bound: f64,
    depth: usize,
    seq: usize,
    excluded: Vec<(usize, usize)>,
    included: Vec<(usize, usize)>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.seq == other.seq
    }
}
impl Eq for Node {}
impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap: invert so the smallest bound pops first;
        // ties prefer the deeper node, then insertion order.
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| self.depth.cmp(&other.depth))
            .then_with(|| other.seq.cmp(&self.seq))
    }
}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn apply_constraints(base: &CostMatrix, excluded: &[(usize, usize)], included: &[(usize, usize)]) -> CostMatrix {
    let mut m = base.clone();
    for &(i, j) in excluded {
        m.costs[i * m.size + j] = FORBIDDEN;
    }
    for &(i, j) in included {
        for jj in 0..m.size {
            if jj != j {
                m.costs[i * m.size + jj] = FORBIDDEN;
            }
        }
        for ii in 0..m.size {
            if ii != i {
                m.costs[ii * m.size + j] = FORBIDDEN;
            }
        }
    }
    m
}

/// Provably optimal ATSP tour by best-first branch-and-bound on the
/// assignment relaxation. Branching splits on the shortest subtour of the
/// relaxation, excluding its arcs in fixed order while forcing the preceding
/// ones in. Deterministic.
pub fn solve_atsp(c: &CostMatrix) -> Result<AtspSolution> {
    if c.size > 60 {
        return Err(Error::Capacity(format!(
            "branch-and-bound guard: {} vertices > 60",
            c.size
        )));
    }
    let prune_margin = 1e-9;
    let mut incumbent: Option<(Tour, f64)> = None;
    let mut heap = BinaryHeap::new();
    let mut seq = 0usize;
    let mut nodes_explored = 0usize;

    let (root_assignment, root_bound) = solve_assignment(c)?;
    // Seed the incumbent by patching the root relaxation into a tour.
    if let Some((tour, cost)) = patch_cycles(c, &cycles_of(&root_assignment)) {
        incumbent = Some((tour, cost));
    }
    heap.push(Node { bound: root_bound, depth: 0, seq, excluded: vec![], included: vec![] });

    while let Some(node) = heap.pop() {
        if let Some((_, inc)) = &incumbent {
            if node.bound >= inc + prune_margin {
                break; // best-first: every remaining node is at least as bad
            }
        }
        nodes_explored += 1;
        let constrained = apply_constraints(c, &node.excluded, &node.included);
        let (assignment, bound) = match solve_assignment(&constrained) {
            Ok(r) => r,
            Err(Error::Infeasible(_)) => continue,
            Err(e) => return Err(e),
        };
        if bound >= FORBIDDEN / 2.0 {
            continue;
        }
        if let Some((_, inc)) = &incumbent {
            if bound >= inc + prune_margin {
                continue;
            }
        }
        let cycles = cycles_of(&assignment);
        if cycles.len() == 1 {
            let tour = tour_from_cycle(&cycles[0], c.size)?;
            let cost = c.tour_cost(&tour);
            if incumbent.as_ref().map_or(true, |(_, inc)| cost < *inc) {
                incumbent = Some((tour, cost));
            }
            continue;
        }
        // Branch on the shortest subtour; cycles_of orders ties by their
        // smallest vertex already.
        let branch_cycle = cycles.iter().min_by_key(|cyc| cyc.len()).unwrap();
        let arcs: Vec<(usize, usize)> = branch_cycle
            .iter()
            .enumerate()
            .map(|(idx, &v)| (v, branch_cycle[(idx + 1) % branch_cycle.len()]))
            .collect();
        for t in 0..arcs.len() {
            let mut excluded = node.excluded.clone();
            excluded.push(arcs[t]);
            let mut included = node.included.clone();
            included.extend_from_slice(&arcs[..t]);
            let constrained_child = apply_constraints(c, &excluded, &included);
            match solve_assignment(&constrained_child) {
                Ok((_, child_bound)) => {
                    if child_bound < FORBIDDEN / 2.0 {
                        let keep = incumbent
                            .as_ref()
                            .map_or(true, |(_, inc)| child_bound < inc + prune_margin);
                        if keep {
                            seq += 1;
                            heap.push(Node {
                                bound: child_bound,
                                depth: node.depth + 1,
                                seq,
                                excluded,
                                included,
                            });
                        }
                    }
                }
                Err(Error::Infeasible(_)) => {}
                Err(e) => return Err(e),
            }
        }
    }

    let (tour, cost) = incumbent
        .ok_or_else(|| Error::Infeasible("no Hamiltonian tour under the constraints".into()))?;
    Ok(AtspSolution { tour, cost, nodes_explored, proof: true })
}

/// Exhaustive enumeration in lexicographic order; the returned tour is the
/// lexicographically smallest optimum.
pub fn brute_force_atsp(c: &CostMatrix) -> Result<AtspSolution> {
    let n = c.num_customers();
    if n > 9 {
        return Err(Error::Capacity(format!("brute force guard: {n} customers > 9")));
    }
    let mut order: Vec<usize> = (1..=n).collect();
    let mut best: Option<(Vec<usize>, f64)> = None;
    permute_lex(&mut order, 0, &mut |perm| {
        let mut cost = 0.0;
        let mut prev = 0usize;
        for &v in perm {
            cost += c.at(prev, v);
            prev = v;
        }
        cost += c.at(prev, 0);
        if best.as_ref().map_or(true, |(_, b)| cost < *b) {
            best = Some((perm.to_vec(), cost));
        }
    });
    let (order, cost) = best.unwrap();
    if cost >= FORBIDDEN / 2.0 {
        return Err(Error::Infeasible("every tour uses a forbidden arc".into()));
    }
    let tour = Tour::new(order, n)?;
    Ok(AtspSolution { tour, cost, nodes_explored: 0, proof: true })
}

/// Visit all permutations of `items[at..]` in lexicographic order (assuming
/// the suffix starts sorted).
pub(crate) fn permute_lex(items: &mut Vec<usize>, at: usize, visit: &mut impl FnMut(&[usize])) {
    if at == items.len() {
        visit(items);
        return;
    }
    for pick in at..items.len() {
        let v = items.remove(pick);
        items.insert(at, v);
        permute_lex(items, at + 1, visit);
        let v = items.remove(at);
        items.insert(pick, v);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn matrix(rows: &[&[f64]]) -> CostMatrix {
        let n = rows.len();
        CostMatrix::from_fn(n, |i, j| rows[i][j]).unwrap()
    }

    #[test]
    fn assignment_forced_two_by_two() {
        let c = matrix(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let (a, cost) = solve_assignment(&c).unwrap();
        assert_eq!(a, vec![1, 0]);
        assert_relative_eq!(cost, 2.0);
    }

    #[test]
    fn assignment_three_by_three() {
        // The only candidate derangements are the two 3-cycles; 0->2->1->0
        // costs 1 + 1 + 1 = 3, the other costs 6.
        let c = matrix(&[&[0.0, 2.0, 1.0], &[1.0, 0.0, 2.0], &[2.0, 1.0, 0.0]]);
        let (a, cost) = solve_assignment(&c).unwrap();
        assert_relative_eq!(cost, 3.0);
        assert_eq!(a, vec![2, 0, 1]);
    }

    #[test]
    fn assignment_uniform_costs() {
        for n in 2..=6 {
            let c = CostMatrix::from_fn(n, |_, _| 2.5).unwrap();
            let (_, cost) = solve_assignment(&c).unwrap();
            assert_relative_eq!(cost, 2.5 * n as f64, epsilon = 1e-9);
        }
    }

    #[test]
    fn assignment_detects_infeasible_row() {
        let c = CostMatrix::from_fn(3, |i, _| if i == 1 { FORBIDDEN } else { 1.0 }).unwrap();
        assert!(matches!(solve_assignment(&c), Err(Error::Infeasible(_))));
    }

    /// Independent oracle: assignment by brute force over all permutations.
    fn brute_assignment(c: &CostMatrix) -> f64 {
        let n = c.size();
        let mut cols: Vec<usize> = (0..n).collect();
        let mut best = f64::INFINITY;
        permute_lex(&mut cols, 0, &mut |perm| {
            let cost: f64 = perm.iter().enumerate().map(|(i, &j)| c.at(i, j)).sum();
            if cost < best {
                best = cost;
            }
        });
        best
    }

    #[test]
    fn assignment_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..100 {
            let n = rng.gen_range(2..=6);
            let c = CostMatrix::from_fn(n, |_, _| rng.gen_range(0.0..10.0)).unwrap();
            let (_, cost) = solve_assignment(&c).unwrap();
            assert_relative_eq!(cost, brute_assignment(&c), epsilon = 1e-9);
        }
    }

    #[test]
    fn atsp_uniform_costs() {
        let c = CostMatrix::from_fn(5, |_, _| 1.0).unwrap();
        let sol = solve_atsp(&c).unwrap();
        assert_relative_eq!(sol.cost, 5.0);
        let brute = brute_force_atsp(&c).unwrap();
        assert_relative_eq!(brute.cost, 5.0);
    }

    #[test]
    fn brute_force_single_customer() {
        let c = matrix(&[&[0.0, 4.0], &[7.0, 0.0]]);
        let sol = brute_force_atsp(&c).unwrap();
        assert_eq!(sol.tour.order(), &[1]);
        assert_relative_eq!(sol.cost, 11.0);
    }

    #[test]
    fn atsp_matches_brute_force_on_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for case in 0..200 {
            let size = rng.gen_range(3..=9);
            let c = CostMatrix::from_fn(size, |_, _| rng.gen_range(1.0..100.0)).unwrap();
            let bb = solve_atsp(&c).unwrap();
            let bf = brute_force_atsp(&c).unwrap();
            assert_eq!(bb.cost, bf.cost, "case {case}: {} vs {}", bb.cost, bf.cost);
            assert_relative_eq!(c.tour_cost(&bb.tour), bb.cost);
        }
    }

    #[test]
    fn tight_relaxation_means_single_node() {
        // Costs that make the cyclic shift 0 -> 1 -> 2 -> 3 -> 0 the clear
        // assignment optimum, so the relaxation is already a tour.
        let c = CostMatrix::from_fn(4, |i, j| if j == (i + 1) % 4 { 1.0 } else { 50.0 }).unwrap();
        let sol = solve_atsp(&c).unwrap();
        assert_eq!(sol.nodes_explored, 1);
        assert_relative_eq!(sol.cost, 4.0);
        assert!(sol.proof);
    }

    #[test]
    fn scale_invariance_of_the_optimal_tour() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = CostMatrix::from_fn(6, |_, _| rng.gen_range(1.0..50.0)).unwrap();
        let base = solve_atsp(&c).unwrap();
        for alpha in [0.25, 3.0, 17.5] {
            let scaled = CostMatrix::from_fn(6, |i, j| alpha * c.at(i, j)).unwrap();
            let sol = solve_atsp(&scaled).unwrap();
            assert_relative_eq!(sol.cost, alpha * base.cost, max_relative = 1e-9);
        }
    }

    #[test]
    fn optimal_cost_below_random_tours() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let c = CostMatrix::from_fn(8, |_, _| rng.gen_range(1.0..40.0)).unwrap();
        let sol = solve_atsp(&c).unwrap();
        for _ in 0..1000 {
            let mut order: Vec<usize> = (1..=7).collect();
            for i in (1..order.len()).rev() {
                let j = rng.gen_range(0..=i);
                order.swap(i, j);
            }
            let tour = Tour::new(order, 7).unwrap();
            assert!(sol.cost <= c.tour_cost(&tour) + 1e-9);
        }
    }

    #[test]
    fn capacity_guards() {
        let c = CostMatrix::from_fn(11, |_, _| 1.0).unwrap();
        assert!(matches!(brute_force_atsp(&c), Err(Error::Capacity(_))));
        let big = CostMatrix::from_fn(61, |_, _| 1.0).unwrap();
        assert!(matches!(solve_atsp(&big), Err(Error::Capacity(_))));
    }
}

//! Shared helpers for unit tests.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tdgraph::{TimeDependentGraph, TimeGrid, TravelTimeFunction};

/// Random FIFO-valid graph: per-arc samples with slopes clipped at -1.
pub(crate) fn random_fifo_graph(n: usize, rng: &mut ChaCha8Rng) -> TimeDependentGraph {
    let horizon = 120.0;
    let grid = TimeGrid::new(vec![0.0, horizon]).unwrap();
    let coords: Vec<[f64; 2]> = (0..=n)
        .map(|_| [rng.gen_range(0.0..50.0), rng.gen_range(0.0..50.0)])
        .collect();
    TimeDependentGraph::from_fn(n, grid, coords, |_, _| {
        let pts = 4usize;
        let mut samples = Vec::with_capacity(pts + 1);
        for s in 0..=pts {
            let t = horizon * s as f64 / pts as f64;
            samples.push((t, rng.gen_range(4.0..30.0)));
        }
        for k in 1..samples.len() {
            let min_tau = samples[k - 1].1 - (samples[k].0 - samples[k - 1].0);
            if samples[k].1 < min_tau {
                samples[k].1 = min_tau;
            }
        }
        TravelTimeFunction::new(samples)
    })
    .unwrap()
}

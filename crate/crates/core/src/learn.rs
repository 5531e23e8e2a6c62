//! Arrival-time estimation: customer zoning by K-means, per-zone average
//! arrival labels from solved instances, and a small feedforward regressor
//! from zone occupancy counts to zone arrival estimates.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tdgraph::{tour_arrivals, TimeDependentGraph, Tour};

/// Customer zoning: nearest-centroid assignment in the plane.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Zoning {
    pub k: usize,
    pub centroids: Vec<[f64; 2]>,
}

impl Zoning {
    /// Zone of a point; ties go to the lowest zone index.
    pub fn zone_of(&self, p: [f64; 2]) -> usize {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (k, c) in self.centroids.iter().enumerate() {
            let d = sq_dist(p, *c);
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        best
    }

    /// Zone occupancy of the customers of a graph (depot excluded).
    pub fn counts(&self, g: &TimeDependentGraph) -> Vec<usize> {
        let mut counts = vec![0usize; self.k];
        for i in 1..g.num_vertices() {
            counts[self.zone_of(g.coordinates()[i])] += 1;
        }
        counts
    }
}

fn sq_dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

/// Sum of squared distances of every point to its nearest centroid.
pub fn kmeans_objective(points: &[[f64; 2]], zoning: &Zoning) -> f64 {
    points
        .iter()
        .map(|&p| sq_dist(p, zoning.centroids[zoning.zone_of(p)]))
        .sum()
}

/// Lloyd iterations from a k-means++ start until the assignment stops
/// changing or 300 rounds. Deterministic per seed; the objective never
/// increases between rounds.
pub fn kmeans_fit(points: &[[f64; 2]], k: usize, seed: u64) -> Result<Zoning> {
    if k == 0 || k > points.len() {
        return Err(Error::Parameter(format!(
            "need 1 <= k <= {} points, got k = {k}",
            points.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // k-means++ seeding.
    let mut centroids: Vec<[f64; 2]> = Vec::with_capacity(k);
    centroids.push(points[rng.gen_range(0..points.len())]);
    let mut dist: Vec<f64> = points.iter().map(|&p| sq_dist(p, centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total <= 0.0 {
            // All mass on existing centroids; pick the first unused point.
            points
                .iter()
                .position(|p| centroids.iter().all(|c| sq_dist(*p, *c) > 0.0))
                .unwrap_or(0)
        } else {
            let mut target = rng.gen_range(0.0..total);
            let mut chosen = points.len() - 1;
            for (i, &d) in dist.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        };
        let c = points[next];
        centroids.push(c);
        for (i, &p) in points.iter().enumerate() {
            dist[i] = dist[i].min(sq_dist(p, c));
        }
    }

    let mut assignment = vec![usize::MAX; points.len()];
    for _round in 0..300 {
        let zoning = Zoning { k, centroids: centroids.clone() };
        let new_assignment: Vec<usize> = points.iter().map(|&p| zoning.zone_of(p)).collect();
        if new_assignment == assignment {
            break;
        }
        assignment = new_assignment;
        let mut sums = vec![[0.0f64; 2]; k];
        let mut counts = vec![0usize; k];
        for (i, &p) in points.iter().enumerate() {
            let z = assignment[i];
            sums[z][0] += p[0];
            sums[z][1] += p[1];
            counts[z] += 1;
        }
        for z in 0..k {
            if counts[z] > 0 {
                centroids[z] = [sums[z][0] / counts[z] as f64, sums[z][1] / counts[z] as f64];
            } else {
                // Re-seed an empty zone with the point farthest from its
                // centroid (lowest index on ties).
                let far = (0..points.len())
                    .max_by(|&a, &b| {
                        let da = sq_dist(points[a], centroids[assignment[a]]);
                        let db = sq_dist(points[b], centroids[assignment[b]]);
                        da.partial_cmp(&db).unwrap().then(b.cmp(&a))
                    })
                    .unwrap();
                centroids[z] = points[far];
            }
        }
    }
    Ok(Zoning { k, centroids })
}

/// Zone occupancy counts and zone-averaged arrival targets of one solved
/// instance. Zones with no visited customer are masked.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingExample {
    pub counts: Vec<usize>,
    pub targets: Vec<f64>,
    pub mask: Vec<bool>,
}

/// Arrival times of the tour's customers, averaged per zone.
pub fn make_labels(
    g: &TimeDependentGraph,
    optimal_tour: &Tour,
    zoning: &Zoning,
) -> Result<TrainingExample> {
    let arrivals = tour_arrivals(g, optimal_tour)?;
    let k = zoning.k;
    let mut sums = vec![0.0f64; k];
    let mut counts = vec![0usize; k];
    for (&customer, &arrival) in optimal_tour.order().iter().zip(&arrivals) {
        let z = zoning.zone_of(g.coordinates()[customer]);
        sums[z] += arrival;
        counts[z] += 1;
    }
    let mut targets = vec![0.0f64; k];
    let mut mask = vec![false; k];
    for z in 0..k {
        if counts[z] > 0 {
            targets[z] = sums[z] / counts[z] as f64;
            mask[z] = true;
        }
    }
    Ok(TrainingExample { counts, targets, mask })
}

/// Training hyperparameters of the regressor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Fraction of examples assigned to training (rest validates).
    pub train_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { hidden: 5, epochs: 4000, learning_rate: 0.02, train_fraction: 0.9 }
    }
}

/// Zone arrival-time regressor: counts (length K) -> estimates (length K),
/// one tanh hidden layer, linear output. Weights plus the per-zone absolute
/// error calibration used to widen the sampling windows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EtaModel {
    pub schema_version: u32,
    pub zoning: Zoning,
    pub hidden: usize,
    /// hidden x k
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    /// k x hidden
    pub w2: Vec<Vec<f64>>,
    pub b2: Vec<f64>,
    pub per_zone_mae: Vec<f64>,
    pub seed: u64,
    pub epochs: usize,
    pub final_loss: f64,
    pub r_squared: f64,
}

impl EtaModel {
    pub fn k(&self) -> usize {
        self.zoning.k
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: EtaModel = serde_json::from_str(text)
            .map_err(|e| Error::Schema(format!("model file: {e}")))?;
        if model.schema_version != 1 {
            return Err(Error::Schema(format!(
                "unsupported model schema version {}",
                model.schema_version
            )));
        }
        let k = model.zoning.k;
        if model.zoning.centroids.len() != k
            || model.w1.len() != model.hidden
            || model.w1.iter().any(|r| r.len() != k)
            || model.b1.len() != model.hidden
            || model.w2.len() != k
            || model.w2.iter().any(|r| r.len() != model.hidden)
            || model.b2.len() != k
            || model.per_zone_mae.len() != k
        {
            return Err(Error::Schema("model dimensions are inconsistent".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        EtaModel::from_json(&text)
    }
}

fn forward(model: &EtaModel, counts_f: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let hidden: Vec<f64> = model
        .w1
        .iter()
        .zip(&model.b1)
        .map(|(row, b)| {
            let s: f64 = row.iter().zip(counts_f).map(|(w, x)| w * x).sum();
            (s + b).tanh()
        })
        .collect();
    let out: Vec<f64> = model
        .w2
        .iter()
        .zip(&model.b2)
        .map(|(row, b)| {
            let s: f64 = row.iter().zip(&hidden).map(|(w, h)| w * h).sum();
            s + b
        })
        .collect();
    (hidden, out)
}

/// Forward pass; arrival estimates are clamped at zero.
pub fn mlp_predict(model: &EtaModel, counts: &[usize]) -> Result<Vec<f64>> {
    if counts.len() != model.k() {
        return Err(Error::Parameter(format!(
            "expected {} zone counts, got {}",
            model.k(),
            counts.len()
        )));
    }
    let counts_f: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let (_, out) = forward(model, &counts_f);
    Ok(out.into_iter().map(|v| v.max(0.0)).collect())
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: usize,
}

impl Adam {
    fn new(len: usize) -> Self {
        Adam { m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let bc1 = 1.0 - B1.powi(self.t as i32);
        let bc2 = 1.0 - B2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * grads[i];
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * grads[i] * grads[i];
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= lr * mhat / (vhat.sqrt() + EPS);
        }
    }
}

/// Train the regressor by full-batch adaptive gradient descent on the masked
/// mean squared error. Examples are shuffled once (seeded) and split
/// train/validation by `train_fraction`; the per-zone absolute errors and the
/// coefficient of determination are measured on the validation split.
/// Deterministic per seed.
pub fn mlp_train(
    examples: &[TrainingExample],
    zoning: &Zoning,
    seed: u64,
    config: &TrainConfig,
) -> Result<EtaModel> {
    let k = zoning.k;
    if examples.len() < 2 {
        return Err(Error::Training("need at least two examples".into()));
    }
    for (i, ex) in examples.iter().enumerate() {
        if ex.counts.len() != k || ex.targets.len() != k || ex.mask.len() != k {
            return Err(Error::Training(format!("example {i} has inconsistent width")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..examples.len()).collect();
    for i in (1..idx.len()).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    let n_train = ((examples.len() as f64 * config.train_fraction).round() as usize)
        .clamp(1, examples.len() - 1);
    let (train_idx, valid_idx) = idx.split_at(n_train);

    let hidden = config.hidden;
    let mut model = EtaModel {
        schema_version: 1,
        zoning: zoning.clone(),
        hidden,
        w1: vec![vec![0.0; k]; hidden],
        b1: vec![0.0; hidden],
        w2: vec![vec![0.0; hidden]; k],
        b2: vec![0.0; k],
        per_zone_mae: vec![0.0; k],
        seed,
        epochs: config.epochs,
        final_loss: 0.0,
        r_squared: 0.0,
    };
    let s1 = (6.0 / (k + hidden) as f64).sqrt();
    for row in model.w1.iter_mut() {
        for w in row.iter_mut() {
            *w = rng.gen_range(-s1..s1);
        }
    }
    for row in model.w2.iter_mut() {
        for w in row.iter_mut() {
            *w = rng.gen_range(-s1..s1);
        }
    }
    // Start the output bias at the masked target mean so the linear layer
    // does not have to climb from zero to minutes-scale values.
    let mut t_sum = 0.0;
    let mut t_cnt = 0usize;
    for &e in train_idx {
        for z in 0..k {
            if examples[e].mask[z] {
                t_sum += examples[e].targets[z];
                t_cnt += 1;
            }
        }
    }
    if t_cnt == 0 {
        return Err(Error::Training("every training target is masked".into()));
    }
    let t_mean = t_sum / t_cnt as f64;
    model.b2.iter_mut().for_each(|b| *b = t_mean);

    let counts_f: Vec<Vec<f64>> = examples
        .iter()
        .map(|e| e.counts.iter().map(|&c| c as f64).collect())
        .collect();

    let n_params = hidden * k + hidden + k * hidden + k;
    let mut adam = Adam::new(n_params);
    let mut grads = vec![0.0; n_params];
    let mut params = vec![0.0; n_params];
    let pack = |model: &EtaModel, params: &mut [f64]| {
        let mut p = 0;
        for row in &model.w1 {
            for &w in row {
                params[p] = w;
                p += 1;
            }
        }
        for &b in &model.b1 {
            params[p] = b;
            p += 1;
        }
        for row in &model.w2 {
            for &w in row {
                params[p] = w;
                p += 1;
            }
        }
        for &b in &model.b2 {
            params[p] = b;
            p += 1;
        }
    };
    let unpack = |model: &mut EtaModel, params: &[f64]| {
        let mut p = 0;
        for row in model.w1.iter_mut() {
            for w in row.iter_mut() {
                *w = params[p];
                p += 1;
            }
        }
        for b in model.b1.iter_mut() {
            *b = params[p];
            p += 1;
        }
        for row in model.w2.iter_mut() {
            for w in row.iter_mut() {
                *w = params[p];
                p += 1;
            }
        }
        for b in model.b2.iter_mut() {
            *b = params[p];
            p += 1;
        }
    };
    pack(&model, &mut params);

    let mut last_loss = f64::INFINITY;
    for epoch in 0..config.epochs {
        unpack(&mut model, &params);
        grads.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        let mut terms = 0usize;
        for &e in train_idx {
            let x = &counts_f[e];
            let (h, out) = forward(&model, x);
            let ex = &examples[e];
            // Output error, masked.
            let mut delta_out = vec![0.0; k];
            for z in 0..k {
                if ex.mask[z] {
                    let err = out[z] - ex.targets[z];
                    loss += err * err;
                    terms += 1;
                    delta_out[z] = err;
                }
            }
            // Backprop through the linear output and the tanh hidden layer.
            let mut delta_h = vec![0.0; hidden];
            for z in 0..k {
                let d = delta_out[z];
                if d != 0.0 {
                    for q in 0..hidden {
                        delta_h[q] += d * model.w2[z][q];
                    }
                }
            }
            for q in 0..hidden {
                delta_h[q] *= 1.0 - h[q] * h[q];
            }
            let mut p = 0;
            for q in 0..hidden {
                for f in 0..k {
                    grads[p] += delta_h[q] * x[f];
                    p += 1;
                }
            }
            for q in 0..hidden {
                grads[p] += delta_h[q];
                p += 1;
            }
            for z in 0..k {
                for q in 0..hidden {
                    grads[p] += delta_out[z] * h[q];
                    p += 1;
                }
            }
            for z in 0..k {
                grads[p] += delta_out[z];
                p += 1;
            }
        }
        let scale = 2.0 / terms.max(1) as f64;
        grads.iter_mut().for_each(|g| *g *= scale);
        loss /= terms.max(1) as f64;
        if !loss.is_finite() {
            return Err(Error::Training(format!(
                "loss diverged at epoch {epoch}: {loss}"
            )));
        }
        last_loss = loss;
        adam.step(&mut params, &grads, config.learning_rate);
    }
    unpack(&mut model, &params);
    model.final_loss = last_loss;

    // Validation calibration: per-zone mean absolute error, falling back to
    // the training split and then to the global error for zones that never
    // appear unmasked in the validation set.
    let zone_mae = |idxs: &[usize], model: &EtaModel| -> (Vec<f64>, Vec<usize>, f64, usize) {
        let mut abs_sum = vec![0.0f64; k];
        let mut cnt = vec![0usize; k];
        let mut total = 0.0;
        let mut total_cnt = 0usize;
        for &e in idxs {
            let (_, out) = forward(model, &counts_f[e]);
            for z in 0..k {
                if examples[e].mask[z] {
                    let err = (out[z].max(0.0) - examples[e].targets[z]).abs();
                    abs_sum[z] += err;
                    cnt[z] += 1;
                    total += err;
                    total_cnt += 1;
                }
            }
        }
        (abs_sum, cnt, total, total_cnt)
    };
    let (v_abs, v_cnt, v_total, v_n) = zone_mae(valid_idx, &model);
    let (t_abs, t_cnt2, t_total, t_n) = zone_mae(train_idx, &model);
    let global = if v_n > 0 {
        v_total / v_n as f64
    } else if t_n > 0 {
        t_total / t_n as f64
    } else {
        0.0
    };
    for z in 0..k {
        model.per_zone_mae[z] = if v_cnt[z] > 0 {
            v_abs[z] / v_cnt[z] as f64
        } else if t_cnt2[z] > 0 {
            t_abs[z] / t_cnt2[z] as f64
        } else {
            global
        };
    }

    // Coefficient of determination on the validation split.
    let mut v_targets = Vec::new();
    let mut v_preds = Vec::new();
    for &e in valid_idx {
        let (_, out) = forward(&model, &counts_f[e]);
        for z in 0..k {
            if examples[e].mask[z] {
                v_targets.push(examples[e].targets[z]);
                v_preds.push(out[z].max(0.0));
            }
        }
    }
    model.r_squared = if v_targets.len() >= 2 {
        let mean = v_targets.iter().sum::<f64>() / v_targets.len() as f64;
        let ss_tot: f64 = v_targets.iter().map(|t| (t - mean) * (t - mean)).sum();
        let ss_res: f64 = v_targets
            .iter()
            .zip(&v_preds)
            .map(|(t, p)| (t - p) * (t - p))
            .sum();
        if ss_tot > 0.0 {
            1.0 - ss_res / ss_tot
        } else {
            0.0
        }
    } else {
        0.0
    };
    Ok(model)
}

/// Predicted arrival time and error width of one customer: the estimate of
/// its zone given the instance's zone occupancy, and that zone's calibrated
/// absolute error.
pub fn eta_for_customer(
    model: &EtaModel,
    g: &TimeDependentGraph,
    customer: usize,
) -> Result<(f64, f64)> {
    if customer == 0 || customer >= g.num_vertices() {
        return Err(Error::Parameter(format!("customer {customer} out of range")));
    }
    let counts = model.zoning.counts(g);
    let preds = mlp_predict(model, &counts)?;
    let zone = model.zoning.zone_of(g.coordinates()[customer]);
    Ok((preds[zone], model.per_zone_mae[zone]))
}

/// Per-zone error statistics of a model against labeled examples, formatted
/// by the CLI as a table with mean error, mean absolute error and the
/// standard deviation of the error.
#[derive(Debug, Clone)]
pub struct ZoneErrorReport {
    /// (zone, mean error, mean absolute error, standard error) rows.
    pub rows: Vec<(usize, f64, f64, f64)>,
    pub average: (f64, f64, f64),
}

pub fn zone_error_report(model: &EtaModel, examples: &[TrainingExample]) -> ZoneErrorReport {
    let k = model.k();
    let mut errs: Vec<Vec<f64>> = vec![Vec::new(); k];
    for ex in examples {
        if let Ok(preds) = mlp_predict(model, &ex.counts) {
            for z in 0..k {
                if ex.mask[z] {
                    errs[z].push(preds[z] - ex.targets[z]);
                }
            }
        }
    }
    let stats = |v: &[f64]| -> (f64, f64, f64) {
        if v.is_empty() {
            return (0.0, 0.0, 0.0);
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let mae = v.iter().map(|e| e.abs()).sum::<f64>() / n;
        let var = v.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;
        (mean, mae, var.sqrt())
    };
    let rows: Vec<(usize, f64, f64, f64)> = (0..k)
        .map(|z| {
            let (m, a, s) = stats(&errs[z]);
            (z + 1, m, a, s)
        })
        .collect();
    let all: Vec<f64> = errs.into_iter().flatten().collect();
    let average = stats(&all);
    ZoneErrorReport { rows, average }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tdgraph::{path_duration, TimeGrid, TravelTimeFunction};
    use approx::assert_relative_eq;

    fn grid_points(n: usize) -> Vec<[f64; 2]> {
        (0..n).map(|i| [(i % 7) as f64 * 3.0, (i / 7) as f64 * 2.5]).collect()
    }

    #[test]
    fn kmeans_single_cluster_is_the_mean() {
        let pts = vec![[0.0, 0.0], [2.0, 0.0], [1.0, 3.0]];
        let z = kmeans_fit(&pts, 1, 0).unwrap();
        assert_relative_eq!(z.centroids[0][0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(z.centroids[0][1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn kmeans_separates_two_far_clusters() {
        let pts = vec![[0.0, 0.0], [0.0, 1.0], [100.0, 0.0], [100.0, 1.0]];
        let z = kmeans_fit(&pts, 2, 7).unwrap();
        let mut xs: Vec<f64> = z.centroids.iter().map(|c| c[0]).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_relative_eq!(xs[0], 0.0, epsilon = 1e-9);
        assert_relative_eq!(xs[1], 100.0, epsilon = 1e-9);
        for c in &z.centroids {
            assert_relative_eq!(c[1], 0.5, epsilon = 1e-9);
        }
    }

    #[test]
    fn kmeans_objective_never_increases() {
        use rand::Rng;
        use rand::SeedableRng;
        // The fixpoint the fit returns cannot be improved by one more manual
        // Lloyd round (recomputed objective as independent oracle).
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let pts: Vec<[f64; 2]> =
            (0..200).map(|_| [rng.gen_range(0.0..50.0), rng.gen_range(0.0..50.0)]).collect();
        for seed in 0..6 {
            let fitted = kmeans_fit(&pts, 6, seed).unwrap();
            let obj = kmeans_objective(&pts, &fitted);
            let mut sums = vec![[0.0f64; 2]; 6];
            let mut counts = vec![0usize; 6];
            for &p in &pts {
                let z = fitted.zone_of(p);
                sums[z][0] += p[0];
                sums[z][1] += p[1];
                counts[z] += 1;
            }
            let centroids: Vec<[f64; 2]> = (0..6)
                .map(|z| {
                    if counts[z] > 0 {
                        [sums[z][0] / counts[z] as f64, sums[z][1] / counts[z] as f64]
                    } else {
                        fitted.centroids[z]
                    }
                })
                .collect();
            let again = Zoning { k: 6, centroids };
            assert!(kmeans_objective(&pts, &again) <= obj + 1e-9);
        }
    }

    #[test]
    fn kmeans_rejects_too_many_clusters() {
        let pts = grid_points(3);
        assert!(matches!(kmeans_fit(&pts, 4, 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn kmeans_deterministic_per_seed() {
        let pts = grid_points(40);
        let a = kmeans_fit(&pts, 5, 9).unwrap();
        let b = kmeans_fit(&pts, 5, 9).unwrap();
        assert_eq!(a.centroids, b.centroids);
    }

    fn labeled_graph() -> (TimeDependentGraph, Tour, Zoning) {
        let grid = TimeGrid::new(vec![0.0, 200.0]).unwrap();
        let coords = vec![[0.0, 0.0], [0.0, 1.0], [0.0, 2.0], [50.0, 0.0], [50.0, 1.0]];
        let g = TimeDependentGraph::from_fn(4, grid, coords, |i, j| {
            TravelTimeFunction::constant(10.0 + ((i * 3 + j) % 5) as f64, 200.0)
        })
        .unwrap();
        let tour = Tour::new(vec![1, 2, 3, 4], 4).unwrap();
        let zoning = Zoning { k: 3, centroids: vec![[0.0, 1.5], [50.0, 0.5], [500.0, 500.0]] };
        (g, tour, zoning)
    }

    #[test]
    fn labels_average_arrivals_per_zone() {
        let (g, tour, zoning) = labeled_graph();
        let ex = make_labels(&g, &tour, &zoning).unwrap();
        // Arrival times along 0 -> 1 -> 2 -> 3 -> 4.
        let mut arrivals = Vec::new();
        let mut path = vec![0];
        for &v in tour.order() {
            path.push(v);
            arrivals.push(path_duration(&g, &path, 0.0).unwrap());
        }
        assert_eq!(ex.counts, vec![2, 2, 0]);
        assert!(ex.mask[0] && ex.mask[1] && !ex.mask[2]);
        assert_relative_eq!(ex.targets[0], (arrivals[0] + arrivals[1]) / 2.0, epsilon = 1e-12);
        assert_relative_eq!(ex.targets[1], (arrivals[2] + arrivals[3]) / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn label_consistency_identity() {
        // Count-weighted mean of the zone targets equals the plain mean of
        // the customer arrivals.
        let (g, tour, zoning) = labeled_graph();
        let ex = make_labels(&g, &tour, &zoning).unwrap();
        let arrivals = tour_arrivals(&g, &tour).unwrap();
        let mean = arrivals.iter().sum::<f64>() / arrivals.len() as f64;
        let weighted: f64 = ex
            .targets
            .iter()
            .zip(&ex.counts)
            .map(|(t, &c)| t * c as f64)
            .sum::<f64>()
            / tour.order().len() as f64;
        assert_relative_eq!(weighted, mean, epsilon = 1e-12);
    }

    #[test]
    fn single_customer_zone_gets_its_arrival() {
        let (g, tour, _) = labeled_graph();
        let zoning = Zoning {
            k: 5,
            centroids: vec![[0.0, 1.0], [0.0, 2.0], [50.0, 0.0], [50.0, 1.0], [9e9, 9e9]],
        };
        let ex = make_labels(&g, &tour, &zoning).unwrap();
        let arrivals = tour_arrivals(&g, &tour).unwrap();
        for (pos, &c) in tour.order().iter().enumerate() {
            let z = zoning.zone_of(g.coordinates()[c]);
            assert_relative_eq!(ex.targets[z], arrivals[pos], epsilon = 1e-12);
        }
        assert!(!ex.mask[4]);
    }

    fn synthetic_examples(
        k: usize,
        n: usize,
        f: impl Fn(usize, &[usize]) -> f64,
    ) -> Vec<TrainingExample> {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(500);
        (0..n)
            .map(|_| {
                let counts: Vec<usize> = (0..k).map(|_| rng.gen_range(0..5)).collect();
                let targets: Vec<f64> = (0..k).map(|z| f(z, &counts)).collect();
                TrainingExample { counts, targets, mask: vec![true; k] }
            })
            .collect()
    }

    #[test]
    fn constant_targets_are_learned_to_high_accuracy() {
        let k = 4;
        let examples = synthetic_examples(k, 60, |_, _| 250.0);
        let zoning = Zoning { k, centroids: vec![[0.0, 0.0]; 4] };
        let model = mlp_train(&examples, &zoning, 1, &TrainConfig::default()).unwrap();
        assert!(model.final_loss < 1e-4, "loss {}", model.final_loss);
        let preds = mlp_predict(&model, &[1, 2, 3, 4]).unwrap();
        for p in preds {
            assert!((p - 250.0).abs() < 0.5, "prediction {p}");
        }
    }

    #[test]
    fn linear_targets_beat_the_mean_baseline() {
        let k = 5;
        let examples = synthetic_examples(k, 120, |z, counts| {
            40.0 * counts[z] as f64 + 30.0 * z as f64 + 50.0
        });
        let zoning = Zoning { k, centroids: vec![[0.0, 0.0]; 5] };
        let model = mlp_train(&examples, &zoning, 3, &TrainConfig::default()).unwrap();
        // Baseline: predict the global target mean everywhere.
        let mean = examples.iter().flat_map(|e| e.targets.iter()).sum::<f64>()
            / (examples.len() * k) as f64;
        let baseline_mae = examples
            .iter()
            .flat_map(|e| e.targets.iter().map(|t| (t - mean).abs()))
            .sum::<f64>()
            / (examples.len() * k) as f64;
        let model_mae = model.per_zone_mae.iter().sum::<f64>() / k as f64;
        assert!(
            model_mae < baseline_mae,
            "model {model_mae} vs baseline {baseline_mae}"
        );
        assert!(model.r_squared > 0.5, "r2 {}", model.r_squared);
    }

    #[test]
    fn predictions_have_width_k_and_stay_finite() {
        let k = 3;
        let examples = synthetic_examples(k, 20, |z, _| 100.0 + z as f64);
        let zoning = Zoning { k, centroids: vec![[0.0, 0.0]; 3] };
        let model = mlp_train(&examples, &zoning, 5, &TrainConfig::default()).unwrap();
        let preds = mlp_predict(&model, &[0, 0, 0]).unwrap();
        assert_eq!(preds.len(), k);
        assert!(preds.iter().all(|p| p.is_finite() && *p >= 0.0));
        assert!(matches!(mlp_predict(&model, &[0, 0]), Err(Error::Parameter(_))));
        // Permuting counts generally changes the outputs.
        let a = mlp_predict(&model, &[3, 0, 1]).unwrap();
        let b = mlp_predict(&model, &[0, 3, 1]).unwrap();
        assert!(a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-9));
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let k = 3;
        let examples = synthetic_examples(k, 30, |z, counts| 10.0 * counts[z] as f64 + z as f64);
        let zoning = Zoning { k, centroids: vec![[0.0, 0.0]; 3] };
        let a = mlp_train(&examples, &zoning, 11, &TrainConfig::default()).unwrap();
        let b = mlp_train(&examples, &zoning, 11, &TrainConfig::default()).unwrap();
        assert_eq!(a.w1, b.w1);
        assert_eq!(a.w2, b.w2);
        assert_eq!(a.per_zone_mae, b.per_zone_mae);
    }

    #[test]
    fn eta_lookup_shares_zone_values() {
        let (g, tour, zoning) = labeled_graph();
        let examples: Vec<TrainingExample> =
            (0..10).map(|_| make_labels(&g, &tour, &zoning).unwrap()).collect();
        let model = mlp_train(&examples, &zoning, 2, &TrainConfig::default()).unwrap();
        let (f1, e1) = eta_for_customer(&model, &g, 1).unwrap();
        let (f2, e2) = eta_for_customer(&model, &g, 2).unwrap();
        // Customers 1 and 2 share a zone.
        assert_eq!(f1, f2);
        assert_eq!(e1, e2);
        assert!(e1 >= 0.0);
        let preds = mlp_predict(&model, &model.zoning.counts(&g)).unwrap();
        let z = model.zoning.zone_of(g.coordinates()[1]);
        assert_eq!(f1, preds[z]);
    }

    #[test]
    fn model_serialization_round_trips() {
        let k = 3;
        let examples = synthetic_examples(k, 20, |z, _| 60.0 + z as f64);
        let zoning = Zoning { k, centroids: vec![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]] };
        let model = mlp_train(&examples, &zoning, 8, &TrainConfig::default()).unwrap();
        let text = model.to_json();
        let back = EtaModel::from_json(&text).unwrap();
        assert_eq!(model.w1, back.w1);
        assert_eq!(model.per_zone_mae, back.per_zone_mae);
        assert_eq!(text, back.to_json());
        assert!(EtaModel::from_json("{}").is_err());
    }
}

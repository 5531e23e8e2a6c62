//! Persistence and the synthetic benchmark harness: instance files, the
//! seeded generator, results CSV and the training pipeline.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{
    dev_percent, htsp_baseline, mlpl_htsp, pl_htsp, BoundResult, Discretization, Method,
};
use crate::error::{Error, Result};
use crate::fitlp::OmegaSelection;
use crate::learn::{
    kmeans_fit, make_labels, mlp_train, zone_error_report, EtaModel, TrainConfig,
    TrainingExample, ZoneErrorReport,
};
use crate::oracle::solve_tdtsp_exact;
use crate::tdgraph::{
    igp_travel_time_raw, SpeedProfile, TimeDependentGraph, TimeGrid, TravelTimeFunction,
};

pub const INSTANCE_SCHEMA: &str = "tdtsp-instance";
pub const INSTANCE_VERSION: u32 = 1;
pub const RESULTS_HEADER: &str =
    "instance,BK,ub,dev_pct,time_s,method,zeta_star,omega_size,bk_provenance";

/// Parameters of the synthetic instance generator.
///
/// Customers are placed around `k_spatial` cluster centers in a square of
/// side `area`. Base travel times come from one shared stepwise speed
/// profile (uniform periods with a two-peak congestion shape of relative
/// depth `congestion_amplitude`) applied to per-arc lengths derived from
/// Euclidean distances with a directed jitter. With `perturbation` 0 the
/// stored functions are exactly the shared-profile travel times; positive
/// values multiply each arc by smooth seeded noise of that relative
/// amplitude, followed by a FIFO repair pass.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct GeneratorConfig {
    pub n: usize,
    pub k_spatial: usize,
    pub horizon: f64,
    pub h_periods: usize,
    pub base_speed: f64,
    pub congestion_amplitude: f64,
    pub area: f64,
    pub cluster_spread: f64,
    pub length_jitter: f64,
    pub min_length: f64,
    pub perturbation: f64,
    /// Extra uniform sample spacing added on top of the structural
    /// breakpoints of each travel time function.
    pub sample_step: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n: 10,
            k_spatial: 4,
            horizon: 480.0,
            h_periods: 4,
            base_speed: 1.0,
            congestion_amplitude: 0.35,
            area: 120.0,
            cluster_spread: 14.0,
            length_jitter: 0.15,
            min_length: 6.0,
            perturbation: 0.0,
            sample_step: 30.0,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Parameter("generator needs n >= 1".into()));
        }
        if self.k_spatial == 0 {
            return Err(Error::Parameter("generator needs k_spatial >= 1".into()));
        }
        if !(self.horizon > 0.0) || self.h_periods == 0 {
            return Err(Error::Parameter("generator needs horizon > 0 and h_periods >= 1".into()));
        }
        if !(self.base_speed > 0.0) {
            return Err(Error::Parameter("base_speed must be positive".into()));
        }
        if !(0.0..=0.9).contains(&self.congestion_amplitude) {
            return Err(Error::Parameter("congestion_amplitude must be in [0, 0.9]".into()));
        }
        if !(0.0..0.95).contains(&self.perturbation) {
            return Err(Error::Parameter(
                "perturbation must be in [0, 0.95); larger values cannot be FIFO-repaired \
                 without losing positivity"
                    .into(),
            ));
        }
        if !(self.area > 0.0) || !(self.cluster_spread >= 0.0) {
            return Err(Error::Parameter("area must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.length_jitter) {
            return Err(Error::Parameter("length_jitter must be in [0, 1)".into()));
        }
        if !(self.min_length >= 0.0) {
            return Err(Error::Parameter("min_length must be nonnegative".into()));
        }
        if !(self.sample_step > 0.0) {
            return Err(Error::Parameter("sample_step must be positive".into()));
        }
        Ok(())
    }
}

pub fn load_generator_config(path: &Path) -> Result<GeneratorConfig> {
    let text = std::fs::read_to_string(path)?;
    let cfg: GeneratorConfig =
        serde_json::from_str(&text).map_err(|e| Error::Schema(format!("config file: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ArcRecord {
    pub from: usize,
    pub to: usize,
    pub samples: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Provenance {
    pub seed: u64,
    pub perturbation: f64,
    pub profile_breakpoints: Vec<f64>,
    pub profile_speeds: Vec<f64>,
    pub config: GeneratorConfig,
}

/// On-disk instance: versioned schema with explicit per-arc sample lists, so
/// perturbed (non-shared-profile) travel times are representable.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct InstanceFile {
    pub schema: String,
    pub version: u32,
    pub name: String,
    pub n: usize,
    pub horizon_t: f64,
    pub coordinates: Vec<[f64; 2]>,
    pub arcs: Vec<ArcRecord>,
    pub provenance: Option<Provenance>,
}

impl InstanceFile {
    /// Validate the schema and build the graph; FIFO violations are rejected
    /// with the offending arcs listed.
    pub fn to_graph(&self) -> Result<TimeDependentGraph> {
        if self.schema != INSTANCE_SCHEMA {
            return Err(Error::Schema(format!(
                "unknown schema '{}', expected '{INSTANCE_SCHEMA}'",
                self.schema
            )));
        }
        if self.version != INSTANCE_VERSION {
            return Err(Error::Schema(format!(
                "unsupported instance version {}",
                self.version
            )));
        }
        if !(self.horizon_t > 0.0) {
            return Err(Error::Schema("horizon_t must be positive".into()));
        }
        let size = self.n + 1;
        if self.coordinates.len() != size {
            return Err(Error::Schema(format!(
                "expected {} coordinates (depot + customers), found {}",
                size,
                self.coordinates.len()
            )));
        }
        let mut slots: Vec<Option<TravelTimeFunction>> = vec![None; size * size];
        for (pos, arc) in self.arcs.iter().enumerate() {
            if arc.from >= size || arc.to >= size || arc.from == arc.to {
                return Err(Error::Schema(format!(
                    "arc entry {pos} ({}, {}) out of range",
                    arc.from, arc.to
                )));
            }
            if slots[arc.from * size + arc.to].is_some() {
                return Err(Error::Schema(format!(
                    "duplicate arc entry ({}, {})",
                    arc.from, arc.to
                )));
            }
            let f = TravelTimeFunction::new(arc.samples.clone()).map_err(|e| {
                Error::Schema(format!("arc ({}, {}): {e}", arc.from, arc.to))
            })?;
            let last = f.end_time();
            if (last - self.horizon_t).abs() > 1e-9 {
                return Err(Error::Schema(format!(
                    "arc ({}, {}): samples end at {last}, horizon is {}",
                    arc.from, arc.to, self.horizon_t
                )));
            }
            slots[arc.from * size + arc.to] = Some(f);
        }
        let grid = TimeGrid::new(vec![0.0, self.horizon_t])?;
        TimeDependentGraph::new(self.n, slots, grid, self.coordinates.clone()).map_err(|e| {
            match e {
                Error::Parameter(msg) => Error::Schema(msg),
                other => other,
            }
        })
    }

    /// Canonical serialized form: arcs sorted by (from, to).
    pub fn canonicalize(&mut self) {
        self.arcs.sort_by_key(|a| (a.from, a.to));
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("instance serializes")
    }
}

pub fn save_instance(file: &InstanceFile, path: &Path) -> Result<()> {
    std::fs::write(path, file.to_json() + "\n")?;
    Ok(())
}

pub fn load_instance(path: &Path) -> Result<(InstanceFile, TimeDependentGraph)> {
    let text = std::fs::read_to_string(path)?;
    let file: InstanceFile = serde_json::from_str(&text)
        .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    let graph = file.to_graph().map_err(|e| match e {
        Error::Schema(msg) => Error::Schema(format!("{}: {msg}", path.display())),
        Error::Parameter(msg) => Error::Schema(format!("{}: {msg}", path.display())),
        other => other,
    })?;
    Ok((file, graph))
}

/// Two-peak congestion shape on [0, 1], maximum close to 1.
fn congestion_shape(x: f64) -> f64 {
    let g = |c: f64, w: f64| (-((x - c) / w) * ((x - c) / w)).exp();
    g(0.28, 0.13) + g(0.72, 0.13)
}

fn box_muller(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Departure times at which the shared-profile travel time of an arc of
/// length `length` has a kink: the profile breakpoints themselves plus the
/// departure preimages of each breakpoint arrival.
fn kink_times(profile: &SpeedProfile, length: f64) -> Vec<f64> {
    let bp = profile.grid().breakpoints();
    let horizon = profile.grid().horizon_t();
    let mut ts: Vec<f64> = bp.to_vec();
    for &b in bp.iter().skip(1) {
        let target = profile.cumulative_at(b) - length;
        if target <= 0.0 {
            continue;
        }
        // Invert the cumulative distance.
        let mut t = None;
        for h in 0..profile.values().len() {
            let c0 = profile.cumulative_at(bp[h]);
            let c1 = profile.cumulative_at(bp[h + 1]);
            if target >= c0 && target <= c1 {
                t = Some(bp[h] + (target - c0) / profile.values()[h]);
                break;
            }
        }
        if let Some(t) = t {
            if t > 0.0 && t < horizon {
                ts.push(t);
            }
        }
    }
    ts
}

/// Generate one instance. Deterministic per config; `perturbation = 0`
/// stores travel times that are exactly the shared-profile evaluation at
/// every sample (the sample grid contains all kinks, so the stored
/// piecewise-linear function coincides with the profile evaluation
/// everywhere).
pub fn generate_instance(cfg: &GeneratorConfig, name: &str) -> Result<InstanceFile> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let size = cfg.n + 1;

    // Speed profile on uniform periods snapped to the sample grid so the
    // discretization can express it.
    let h = cfg.h_periods;
    let mut bp: Vec<f64> = (0..=h)
        .map(|q| {
            let raw = cfg.horizon * q as f64 / h as f64;
            (raw / cfg.sample_step).round() * cfg.sample_step
        })
        .collect();
    bp[0] = 0.0;
    bp[h] = cfg.horizon;
    bp.dedup();
    if bp.len() < 2 {
        return Err(Error::Parameter("sample_step too coarse for the horizon".into()));
    }
    let grid = TimeGrid::new(bp.clone())?;
    let speeds: Vec<f64> = (0..grid.num_intervals())
        .map(|q| {
            let mid = 0.5 * (grid.breakpoints()[q] + grid.breakpoints()[q + 1]) / cfg.horizon;
            let jitter = 1.0 + 0.04 * rng.gen_range(-1.0..1.0);
            (cfg.base_speed * (1.0 - cfg.congestion_amplitude * congestion_shape(mid)) * jitter)
                .max(0.05 * cfg.base_speed)
        })
        .collect();
    let profile = SpeedProfile::new(grid, speeds.clone())?;

    // Customer placement around spatial cluster centers; depot at the middle.
    let centers: Vec<[f64; 2]> = (0..cfg.k_spatial)
        .map(|_| {
            [
                rng.gen_range(0.1 * cfg.area..0.9 * cfg.area),
                rng.gen_range(0.1 * cfg.area..0.9 * cfg.area),
            ]
        })
        .collect();
    let mut coordinates = Vec::with_capacity(size);
    coordinates.push([0.5 * cfg.area, 0.5 * cfg.area]);
    for _ in 0..cfg.n {
        let c = centers[rng.gen_range(0..centers.len())];
        let x = (c[0] + cfg.cluster_spread * box_muller(&mut rng)).clamp(0.0, cfg.area);
        let y = (c[1] + cfg.cluster_spread * box_muller(&mut rng)).clamp(0.0, cfg.area);
        coordinates.push([x, y]);
    }

    // Directed lengths with jitter, then per-arc sampled travel times.
    let mut arcs = Vec::with_capacity(size * size - size);
    for i in 0..size {
        for j in 0..size {
            if i == j {
                continue;
            }
            let dx = coordinates[i][0] - coordinates[j][0];
            let dy = coordinates[i][1] - coordinates[j][1];
            let dist = (dx * dx + dy * dy).sqrt().max(cfg.min_length);
            let jitter = 1.0 + cfg.length_jitter * rng.gen_range(-1.0f64..1.0);
            let length = dist * jitter;

            // Smooth multiplicative noise field of amplitude `perturbation`.
            let waves: Vec<(f64, f64, f64)> = (0..3)
                .map(|q| {
                    (
                        rng.gen_range(0.3..1.0),
                        (q + 1) as f64 * rng.gen_range(0.8..1.2),
                        rng.gen_range(0.0..std::f64::consts::TAU),
                    )
                })
                .collect();
            let norm: f64 = waves.iter().map(|w| w.0).sum();
            let noise = |t: f64| -> f64 {
                waves
                    .iter()
                    .map(|&(c, f, p)| c * (std::f64::consts::TAU * f * t / cfg.horizon + p).sin())
                    .sum::<f64>()
                    / norm
            };

            let mut ts = kink_times(&profile, length);
            let mut q = 0usize;
            loop {
                let t = q as f64 * cfg.sample_step;
                if t >= cfg.horizon {
                    break;
                }
                ts.push(t);
                q += 1;
            }
            ts.push(cfg.horizon);
            ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
            ts.dedup_by(|a, b| (*a - *b).abs() <= 1e-9);

            let mut samples: Vec<(f64, f64)> = ts
                .iter()
                .map(|&t| {
                    let tau = igp_travel_time_raw(&profile, length, t)?;
                    let factor = 1.0 + cfg.perturbation * noise(t);
                    Ok((t, tau * factor))
                })
                .collect::<Result<_>>()?;
            // Forward FIFO repair: arrival times may not decrease.
            for k in 1..samples.len() {
                let min_tau = samples[k - 1].1 - (samples[k].0 - samples[k - 1].0);
                if samples[k].1 < min_tau {
                    samples[k].1 = min_tau;
                }
            }
            if samples.iter().any(|&(_, tau)| !(tau > 0.0)) {
                return Err(Error::Domain(format!(
                    "FIFO repair of arc ({i},{j}) drove a travel time to zero; \
                     lower the perturbation"
                )));
            }
            arcs.push(ArcRecord { from: i, to: j, samples });
        }
    }

    let mut file = InstanceFile {
        schema: INSTANCE_SCHEMA.into(),
        version: INSTANCE_VERSION,
        name: name.to_string(),
        n: cfg.n,
        horizon_t: cfg.horizon,
        coordinates,
        arcs,
        provenance: Some(Provenance {
            seed: cfg.seed,
            perturbation: cfg.perturbation,
            profile_breakpoints: bp,
            profile_speeds: speeds,
            config: cfg.clone(),
        }),
    };
    file.canonicalize();
    // The generator must only emit loadable instances.
    file.to_graph()?;
    Ok(file)
}

/// Where a best-known value comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BkProvenance {
    DpExact,
    BestOfHeuristics,
}

impl BkProvenance {
    pub fn name(&self) -> &'static str {
        match self {
            BkProvenance::DpExact => "dp_exact",
            BkProvenance::BestOfHeuristics => "best_of_heuristics",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "dp_exact" => Ok(BkProvenance::DpExact),
            "best_of_heuristics" => Ok(BkProvenance::BestOfHeuristics),
            other => Err(Error::Schema(format!("unknown bk provenance '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ResultsRow {
    pub instance: String,
    pub bk: f64,
    pub ub: f64,
    pub dev_pct: f64,
    pub time_s: f64,
    pub method: Method,
    pub zeta_star: Option<f64>,
    pub omega_size: usize,
    pub bk_provenance: BkProvenance,
}

#[derive(Debug, Clone)]
pub struct MethodSummary {
    pub method: Method,
    pub count: usize,
    pub avg_dev: f64,
    pub min_dev: f64,
    pub max_dev: f64,
    pub avg_time: f64,
    pub min_time: f64,
    pub max_time: f64,
}

#[derive(Debug, Clone)]
pub struct ResultsTable {
    pub rows: Vec<ResultsRow>,
    pub summary: Vec<MethodSummary>,
    /// (instance, error) pairs for runs that failed; the benchmark continues
    /// past them.
    pub failures: Vec<(String, String)>,
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub methods: Vec<Method>,
    pub step_minutes: f64,
    pub rho: Option<f64>,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions { methods: vec![Method::Htsp], step_minutes: 5.0, rho: None }
    }
}

fn summarize(rows: &[ResultsRow]) -> Vec<MethodSummary> {
    let mut methods: Vec<Method> = rows.iter().map(|r| r.method).collect();
    methods.sort();
    methods.dedup();
    methods
        .into_iter()
        .map(|m| {
            let devs: Vec<f64> = rows.iter().filter(|r| r.method == m).map(|r| r.dev_pct).collect();
            let times: Vec<f64> = rows.iter().filter(|r| r.method == m).map(|r| r.time_s).collect();
            let n = devs.len() as f64;
            MethodSummary {
                method: m,
                count: devs.len(),
                avg_dev: devs.iter().sum::<f64>() / n,
                min_dev: devs.iter().copied().fold(f64::INFINITY, f64::min),
                max_dev: devs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                avg_time: times.iter().sum::<f64>() / n,
                min_time: times.iter().copied().fold(f64::INFINITY, f64::min),
                max_time: times.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect()
}

/// Run the selected heuristics on one loaded instance and produce its rows.
pub fn benchmark_instance(
    name: &str,
    graph: &TimeDependentGraph,
    options: &BenchOptions,
    model: Option<&EtaModel>,
) -> Result<Vec<ResultsRow>> {
    if options.methods.is_empty() {
        return Err(Error::Parameter("no methods selected".into()));
    }
    if options.methods.contains(&Method::MlplHtsp) && model.is_none() {
        return Err(Error::Parameter("the prediction-guided method needs a model".into()));
    }
    let d = Discretization::new(options.step_minutes, graph.horizon_t())?;
    let mut methods = options.methods.clone();
    methods.sort();
    methods.dedup();
    let mut results: Vec<BoundResult> = Vec::new();
    for m in &methods {
        let res = match m {
            Method::Htsp => htsp_baseline(graph)?,
            Method::PlHtsp => pl_htsp(graph, &d, options.rho)?,
            Method::MlplHtsp => mlpl_htsp(graph, model.unwrap(), &d, options.rho)?,
        };
        results.push(res);
    }
    let (bk, provenance) = if graph.num_customers() <= 16 {
        let (_, opt) = solve_tdtsp_exact(graph)?;
        (opt, BkProvenance::DpExact)
    } else {
        let best = results.iter().map(|r| r.ub).fold(f64::INFINITY, f64::min);
        (best, BkProvenance::BestOfHeuristics)
    };
    results
        .into_iter()
        .map(|r| {
            Ok(ResultsRow {
                instance: name.to_string(),
                bk,
                ub: r.ub,
                dev_pct: dev_percent(r.ub, bk)?,
                time_s: r.wall_time,
                method: r.method,
                zeta_star: r.zeta_star,
                omega_size: r.omega_size,
                bk_provenance: provenance,
            })
        })
        .collect()
}

/// Run every `.json` instance under `dir` through the selected methods.
/// Instances run in parallel; per-instance failures are recorded and the run
/// continues. Rows are ordered by (instance, method).
pub fn run_benchmark(
    dir: &Path,
    options: &BenchOptions,
    model: Option<&EtaModel>,
) -> Result<ResultsTable> {
    if options.methods.contains(&Method::MlplHtsp) && model.is_none() {
        return Err(Error::Parameter("the prediction-guided method needs a model".into()));
    }
    let mut paths: Vec<std::path::PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().map_or(false, |x| x == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Parameter(format!("no .json instances in {}", dir.display())));
    }
    let outcomes: Vec<(String, std::result::Result<Vec<ResultsRow>, String>)> = paths
        .par_iter()
        .map(|path| {
            let name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string());
            let rows = load_instance(path)
                .and_then(|(_, graph)| benchmark_instance(&name, &graph, options, model))
                .map_err(|e| e.to_string());
            (name, rows)
        })
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (name, outcome) in outcomes {
        match outcome {
            Ok(mut r) => rows.append(&mut r),
            Err(e) => failures.push((name, e)),
        }
    }
    rows.sort_by(|a, b| a.instance.cmp(&b.instance).then(a.method.cmp(&b.method)));
    let summary = summarize(&rows);
    Ok(ResultsTable { rows, summary, failures })
}

/// CSV text of a results table: fixed header, one row per (instance, method),
/// then the summary and failures as `#` comment lines.
pub fn results_csv_string(table: &ResultsTable) -> String {
    let mut out = String::new();
    out.push_str(RESULTS_HEADER);
    out.push('\n');
    for r in &table.rows {
        let zeta = r.zeta_star.map(|z| format!("{z:.6e}")).unwrap_or_default();
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.2},{:.3},{},{},{},{}\n",
            r.instance,
            r.bk,
            r.ub,
            r.dev_pct,
            r.time_s,
            r.method.name(),
            zeta,
            r.omega_size,
            r.bk_provenance.name()
        ));
    }
    out.push_str("# summary,method,count,avg_dev_pct,min_dev_pct,max_dev_pct,avg_time_s,min_time_s,max_time_s\n");
    for s in &table.summary {
        out.push_str(&format!(
            "# summary,{},{},{:.2},{:.2},{:.2},{:.3},{:.3},{:.3}\n",
            s.method.name(),
            s.count,
            s.avg_dev,
            s.min_dev,
            s.max_dev,
            s.avg_time,
            s.min_time,
            s.max_time
        ));
    }
    for (name, err) in &table.failures {
        out.push_str(&format!("# failed,{name},{err}\n"));
    }
    out
}

pub fn write_results_csv(table: &ResultsTable, path: &Path) -> Result<()> {
    std::fs::write(path, results_csv_string(table))?;
    Ok(())
}

/// Parse the data rows of a results CSV (comments and the header skipped).
pub fn parse_results_csv(text: &str) -> Result<Vec<ResultsRow>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Schema("empty results file".into()))?;
    if header.trim() != RESULTS_HEADER {
        return Err(Error::Schema(format!("unexpected header '{header}'")));
    }
    let mut rows = Vec::new();
    for (idx, line) in lines.enumerate() {
        if line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(Error::Schema(format!(
                "row {}: expected 9 fields, found {}",
                idx + 2,
                fields.len()
            )));
        }
        let parse_f = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::Schema(format!("row {}: bad {what} '{s}'", idx + 2)))
        };
        rows.push(ResultsRow {
            instance: fields[0].to_string(),
            bk: parse_f(fields[1], "BK")?,
            ub: parse_f(fields[2], "ub")?,
            dev_pct: parse_f(fields[3], "dev_pct")?,
            time_s: parse_f(fields[4], "time_s")?,
            method: Method::parse(fields[5])?,
            zeta_star: if fields[6].is_empty() {
                None
            } else {
                Some(parse_f(fields[6], "zeta_star")?)
            },
            omega_size: fields[7]
                .parse::<usize>()
                .map_err(|_| Error::Schema(format!("row {}: bad omega_size", idx + 2)))?,
            bk_provenance: BkProvenance::parse(fields[8])?,
        });
    }
    Ok(rows)
}

/// How training instances are labeled with tours.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelSource {
    /// Exact subset dynamic program (requires n <= 16).
    DpExact,
    /// Worst-case-cost baseline tour; cheap at any size.
    Htsp,
    /// Exact when the size guard allows it, baseline otherwise.
    Auto,
}

impl LabelSource {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dp" | "dp_exact" => Ok(LabelSource::DpExact),
            "htsp" => Ok(LabelSource::Htsp),
            "auto" => Ok(LabelSource::Auto),
            other => Err(Error::Parameter(format!("unknown label source '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: EtaModel,
    pub examples: Vec<TrainingExample>,
    pub report: ZoneErrorReport,
}

/// Full training pipeline: pool the customer coordinates of all instances,
/// fit the zoning, label every instance with a solved tour, then train the
/// regressor. Instances run in parallel during labeling.
pub fn train_pipeline(
    graphs: &[(String, TimeDependentGraph)],
    k: usize,
    seed: u64,
    labels: LabelSource,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if graphs.len() < 2 {
        return Err(Error::Parameter("training needs at least two instances".into()));
    }
    let mut points = Vec::new();
    for (_, g) in graphs {
        points.extend_from_slice(&g.coordinates()[1..]);
    }
    let zoning = kmeans_fit(&points, k, seed)?;
    let examples: Vec<TrainingExample> = graphs
        .par_iter()
        .map(|(name, g)| -> Result<TrainingExample> {
            let tour = match labels {
                LabelSource::DpExact => solve_tdtsp_exact(g)?.0,
                LabelSource::Htsp => htsp_baseline(g)?.tour,
                LabelSource::Auto => {
                    if g.num_customers() <= 16 {
                        solve_tdtsp_exact(g)?.0
                    } else {
                        htsp_baseline(g)?.tour
                    }
                }
            };
            make_labels(g, &tour, &zoning)
                .map_err(|e| Error::Training(format!("{name}: {e}")))
        })
        .collect::<Result<_>>()?;
    let model = mlp_train(&examples, &zoning, seed, config)?;
    let report = zone_error_report(&model, &examples);
    Ok(TrainOutcome { model, examples, report })
}

/// Load all instances of a directory, sorted by file name.
pub fn load_instance_dir(dir: &Path) -> Result<Vec<(String, TimeDependentGraph)>> {
    let mut paths: Vec<std::path::PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().map_or(false, |x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let (file, graph) = load_instance(p)?;
            Ok((file.name, graph))
        })
        .collect()
}

/// Fit selection diagnostics used by callers that want LP sizes without
/// running the whole bound.
pub fn selection_for(
    g: &TimeDependentGraph,
    method: Method,
    model: Option<&EtaModel>,
    step_minutes: f64,
) -> Result<Option<OmegaSelection>> {
    let d = Discretization::new(step_minutes, g.horizon_t())?;
    match method {
        Method::Htsp => Ok(None),
        Method::PlHtsp => Ok(Some(crate::bounds::build_omega_full(g, &d)?)),
        Method::MlplHtsp => {
            let model = model
                .ok_or_else(|| Error::Parameter("the prediction-guided method needs a model".into()))?;
            Ok(Some(crate::bounds::build_omega_ml(model, g, &d)?))
        }
    }
}

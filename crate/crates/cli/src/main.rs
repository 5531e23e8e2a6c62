//! Command line driver: generate synthetic instances, train the arrival-time
//! model, solve single instances and run benchmark sweeps.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tdtsp_core::bounds::{
    htsp_baseline, mlpl_htsp, optimality_diagnostic, pl_htsp, Discretization, Method,
};
use tdtsp_core::error::{Error, Result};
use tdtsp_core::fitlp::{build_coefficients, dump_lp, FitProblem};
use tdtsp_core::io::{
    generate_instance, load_generator_config, load_instance, load_instance_dir, run_benchmark,
    save_instance, selection_for, train_pipeline, write_results_csv, BenchOptions, LabelSource,
};
use tdtsp_core::learn::{EtaModel, TrainConfig};
use tdtsp_core::oracle::solve_tdtsp_exact;

#[derive(Parser)]
#[command(
    name = "tdtsp",
    about = "Upper bounds for the time-dependent travelling salesman problem",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate seeded synthetic instances.
    Generate(GenerateArgs),
    /// Train the arrival-time model on a directory of instances.
    Train(TrainArgs),
    /// Solve one instance with one heuristic.
    Solve(SolveArgs),
    /// Run a benchmark sweep over a directory and write a results CSV.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Generator config (JSON). Defaults apply for missing fields.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if absent).
    #[arg(long)]
    out: PathBuf,
    /// Number of instances; seeds are config.seed, config.seed + 1, ...
    #[arg(long, default_value_t = 1)]
    count: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory of training instances.
    #[arg(long)]
    instances: PathBuf,
    /// Number of zones.
    #[arg(long, default_value_t = 6)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Where to write the model (JSON). A per-zone error table goes to
    /// `<model-out>.errors.csv`.
    #[arg(long)]
    model_out: PathBuf,
    /// Tour source for the labels: dp (exact), htsp, or auto.
    #[arg(long, default_value = "dp")]
    labels: String,
    #[arg(long, default_value_t = 4000)]
    epochs: usize,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    instance: PathBuf,
    /// htsp, pl or mlpl.
    #[arg(long)]
    method: String,
    /// Model file (required for mlpl).
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 5.0)]
    step_minutes: f64,
    /// Speed floor: "auto" or a positive number.
    #[arg(long, default_value = "auto")]
    rho: String,
    /// Write the fit LP in text form to this path.
    #[arg(long)]
    dump_lp: Option<PathBuf>,
    /// Skip the exact reference solve (otherwise run when n <= 16).
    #[arg(long, default_value_t = false)]
    no_bk: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    dir: PathBuf,
    /// Comma-separated subset of htsp,pl,mlpl.
    #[arg(long, default_value = "htsp")]
    methods: String,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5.0)]
    step_minutes: f64,
    #[arg(long, default_value = "auto")]
    rho: String,
}

fn parse_rho(s: &str) -> Result<Option<f64>> {
    if s.trim().eq_ignore_ascii_case("auto") {
        return Ok(None);
    }
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::Parameter(format!("rho must be 'auto' or a number, got '{s}'")))?;
    if !(v > 0.0) {
        return Err(Error::Parameter(format!("rho must be positive, got {v}")));
    }
    Ok(Some(v))
}

fn parse_methods(s: &str) -> Result<Vec<Method>> {
    s.split(',').map(Method::parse).collect()
}

fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    let base = load_generator_config(&args.config)?;
    if args.count == 0 {
        return Err(Error::Parameter("count must be at least 1".into()));
    }
    std::fs::create_dir_all(&args.out)?;
    for idx in 0..args.count {
        let mut cfg = base.clone();
        cfg.seed = base.seed + idx as u64;
        let name = format!("{}_I_{}", base.seed, idx);
        let file = generate_instance(&cfg, &name)?;
        let path = args.out.join(format!("{name}.json"));
        save_instance(&file, &path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let labels = LabelSource::parse(&args.labels)?;
    let graphs = load_instance_dir(&args.instances)?;
    println!("training on {} instances, k = {}", graphs.len(), args.k);
    let config = TrainConfig { epochs: args.epochs, ..TrainConfig::default() };
    let outcome = train_pipeline(&graphs, args.k, args.seed, labels, &config)?;
    outcome.model.save(&args.model_out)?;
    println!(
        "model written to {} (final loss {:.4}, R^2 {:.3})",
        args.model_out.display(),
        outcome.model.final_loss,
        outcome.model.r_squared
    );
    println!("zone | mean error | mean absolute error | standard error");
    let mut errors_csv = String::from("zone,mean_error,mean_absolute_error,standard_error\n");
    for &(zone, mean, mae, std) in &outcome.report.rows {
        println!("{zone:>4} | {mean:>10.2} | {mae:>19.2} | {std:>14.2}");
        errors_csv.push_str(&format!("{zone},{mean:.4},{mae:.4},{std:.4}\n"));
    }
    let (am, aa, astd) = outcome.report.average;
    println!(" avg | {am:>10.2} | {aa:>19.2} | {astd:>14.2}");
    errors_csv.push_str(&format!("average,{am:.4},{aa:.4},{astd:.4}\n"));
    let errors_path = {
        let mut p = args.model_out.as_os_str().to_owned();
        p.push(".errors.csv");
        PathBuf::from(p)
    };
    std::fs::write(&errors_path, errors_csv)?;
    println!("error table written to {}", errors_path.display());
    Ok(())
}

fn cmd_solve(args: &SolveArgs) -> Result<()> {
    let method = Method::parse(&args.method)?;
    let rho = parse_rho(&args.rho)?;
    let (file, graph) = load_instance(&args.instance)?;
    let model = match &args.model {
        Some(path) => Some(EtaModel::load(path)?),
        None => None,
    };
    if method == Method::MlplHtsp && model.is_none() {
        return Err(Error::Parameter("--method mlpl requires --model".into()));
    }
    println!(
        "instance {}: n = {}, horizon = {} min",
        file.name,
        graph.num_customers(),
        graph.horizon_t()
    );

    if let Some(dump_path) = &args.dump_lp {
        if let Some(sel) = selection_for(&graph, method, model.as_ref(), args.step_minutes)? {
            let co = build_coefficients(&graph, &sel)?;
            let problem = FitProblem::new(co, rho.unwrap_or_else(|| sel.default_rho()))?;
            let mut out = std::io::BufWriter::new(std::fs::File::create(dump_path)?);
            dump_lp(&problem, &mut out)?;
            println!("fit LP written to {}", dump_path.display());
        } else {
            println!("note: the baseline has no fit LP to dump");
        }
    }

    let d = Discretization::new(args.step_minutes, graph.horizon_t())?;
    let result = match method {
        Method::Htsp => htsp_baseline(&graph)?,
        Method::PlHtsp => pl_htsp(&graph, &d, rho)?,
        Method::MlplHtsp => mlpl_htsp(&graph, model.as_ref().unwrap(), &d, rho)?,
    };
    println!(
        "method {}: ub = {:.6} min, aux cost = {:.6}, time = {:.3} s",
        result.method.name(),
        result.ub,
        result.aux_cost,
        result.wall_time
    );
    if let Some(z) = result.zeta_star {
        println!(
            "fit: zeta_star = {:.6e}, omega size = {}, lp rows = {}",
            z, result.omega_size, result.lp_rows
        );
        println!("{}", optimality_diagnostic(&result, &graph)?);
    }
    println!("tour: 0 -> {:?} -> 0", result.tour.order());

    if !args.no_bk && graph.num_customers() <= 16 {
        let (_, bk) = solve_tdtsp_exact(&graph)?;
        let dev = tdtsp_core::bounds::dev_percent(result.ub, bk)?;
        println!("BK (dp_exact) = {bk:.6}, DEV={dev:.2}%");
    }
    Ok(())
}

fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let methods = parse_methods(&args.methods)?;
    let rho = parse_rho(&args.rho)?;
    let model = match &args.model {
        Some(path) => Some(EtaModel::load(path)?),
        None => None,
    };
    let options = BenchOptions { methods, step_minutes: args.step_minutes, rho };
    let table = run_benchmark(&args.dir, &options, model.as_ref())?;
    write_results_csv(&table, &args.out)?;
    println!(
        "{} rows ({} failures) written to {}",
        table.rows.len(),
        table.failures.len(),
        args.out.display()
    );
    for s in &table.summary {
        println!(
            "{:>5}: avg DEV {:.2}% [{:.2}, {:.2}], avg time {:.3} s [{:.3}, {:.3}] over {}",
            s.method.name(),
            s.avg_dev,
            s.min_dev,
            s.max_dev,
            s.avg_time,
            s.min_time,
            s.max_time,
            s.count
        );
    }
    for (name, err) in &table.failures {
        eprintln!("failed {name}: {err}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Train(args) => cmd_train(args),
        Command::Solve(args) => cmd_solve(args),
        Command::Bench(args) => cmd_bench(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

mod config;
mod verify;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use bouligand_landweber::experiments::{add_noise, run_noise_free, run_table, write_table};
use bouligand_landweber::forward::solve_forward;
use bouligand_landweber::landweber::{check_parameters, run};
use bouligand_landweber::record::{sidecar_path, write_run, ConfigSummary};
use bouligand_landweber::{
    ExactData, ExactFields, ForwardProblem, GridFunction, LandweberConfig, NoiseSpec, Role, Start,
};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::Serialize;

use config::{pick, required, FileConfig};

#[derive(Parser)]
#[command(
    name = "bouligand",
    version,
    about = "Landweber inversion for -Δy + max(y,0) = u on the unit square"
)]
struct Cli {
    /// JSON file with default values for any flag (keys are flag names).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the forward problem for one source.
    Forward(ForwardArgs),
    /// Iterate on exact data for a fixed number of steps.
    NoiseFree(NoiseFreeArgs),
    /// Reconstruct the source from noisy data with discrepancy stopping.
    Invert(InvertArgs),
    /// Run one inversion per (noise level, seed) pair.
    Table(TableArgs),
    /// Run the verification instruments.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct MeshArgs {
    /// Vertices per side of the uniform mesh.
    #[arg(long)]
    n: Option<usize>,
    /// Width of the zero strip of the exact state.
    #[arg(long)]
    beta: Option<f64>,
}

#[derive(Args)]
struct ParamArgs {
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    /// Bias amplitude of the source-based start; also recorded as the ball radius.
    #[arg(long)]
    rho: Option<f64>,
    /// Estimate of the subderivative norm; sets the step (2 - 2 mu)/lbar^2.
    #[arg(long)]
    lbar: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Start each Newton solve from the previous state.
    #[arg(long)]
    warm_start: bool,
}

#[derive(Args)]
struct ForwardArgs {
    #[command(flatten)]
    mesh: MeshArgs,
    /// Source field CSV, or `builtin-exact` for the manufactured source.
    #[arg(long)]
    source: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct NoiseFreeArgs {
    #[command(flatten)]
    mesh: MeshArgs,
    /// `zero` or `source`.
    #[arg(long)]
    start: Option<String>,
    #[arg(long)]
    iters: Option<usize>,
    #[command(flatten)]
    params: ParamArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InvertArgs {
    #[command(flatten)]
    mesh: MeshArgs,
    #[arg(long)]
    start: Option<String>,
    /// Rescale the noise to this M-norm.
    #[arg(long, conflicts_with = "sigma")]
    delta_target: Option<f64>,
    /// Standard deviation of the nodal noise.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    params: ParamArgs,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the final iterate as a field CSV.
    #[arg(long)]
    iterate_out: Option<PathBuf>,
}

#[derive(Args)]
struct TableArgs {
    #[command(flatten)]
    mesh: MeshArgs,
    #[arg(long)]
    start: Option<String>,
    /// Comma-separated noise levels.
    #[arg(long, value_delimiter = ',')]
    deltas: Option<Vec<f64>>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[command(flatten)]
    params: ParamArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct VerifyArgs {
    /// `oracle`, `tcc`, `adjoint` or `all`.
    #[arg(long)]
    suite: Option<String>,
    /// Mesh for the tcc and adjoint suites (default 64).
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Trials per mesh for the oracle and adjoint suites.
    #[arg(long)]
    trials: Option<usize>,
    /// Number of random pairs in the tcc survey.
    #[arg(long)]
    pairs: Option<usize>,
    /// M-radius of the tcc survey ball around the exact source.
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn exact_data(mesh: &MeshArgs, params: Option<&ParamArgs>, file: &FileConfig) -> Result<ExactData> {
    let d = ExactData::default();
    let beta = pick(mesh.beta, file.beta).unwrap_or(d.beta);
    let rho = pick(params.and_then(|p| p.rho), file.rho).unwrap_or(d.rho);
    Ok(ExactData::new(beta, rho)?)
}

fn landweber_config(p: &ParamArgs, file: &FileConfig) -> Result<LandweberConfig> {
    let d = LandweberConfig::default();
    let mut cfg = LandweberConfig::constant_step(
        pick(p.mu, file.mu).unwrap_or(d.mu),
        pick(p.tau, file.tau).unwrap_or(d.tau),
        pick(p.rho, file.rho).unwrap_or(d.rho),
        pick(p.lbar, file.lbar).unwrap_or(d.lbar),
    );
    cfg.max_iterations = pick(p.max_iter, file.max_iter).unwrap_or(d.max_iterations);
    cfg.warm_start = p.warm_start || file.warm_start.unwrap_or(false);
    cfg.validate()?;
    let check = check_parameters(&cfg, cfg.lbar);
    info!(
        "step {:.6}, parameter conditions {:.6} and {:.6} (negative means satisfied)",
        cfg.step_max, check.choice, check.choice_aux
    );
    Ok(cfg)
}

fn problem(mesh: &MeshArgs, file: &FileConfig) -> Result<ForwardProblem> {
    let n = required(mesh.n, file.n, "n")?;
    Ok(ForwardProblem::positive_part(n)?)
}

fn start(flag: Option<String>, file: &FileConfig) -> Result<Start> {
    let s = required(flag, file.start.clone(), "start")?;
    Ok(Start::from_str(&s)?)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

#[derive(Serialize)]
struct ForwardSummary {
    nodes_per_side: usize,
    source: String,
    ssn_iterations: usize,
    final_residual: f64,
    active_nodes: usize,
}

fn forward(args: ForwardArgs, file: &FileConfig) -> Result<()> {
    let p = problem(&args.mesh, file)?;
    let out = required(args.out, file.out.clone(), "out")?;
    let source = required(args.source, file.source.clone(), "source")?;
    let u: GridFunction = if source == "builtin-exact" {
        let fields: ExactFields = exact_data(&args.mesh, None, file)?.fields(&p.mesh())?;
        fields.source
    } else {
        let f = File::open(&source).with_context(|| format!("opening source {source}"))?;
        let u = GridFunction::read_csv(BufReader::new(f))?;
        if u.mesh() != p.mesh() {
            bail!(
                "source {source} has {} vertices per side, expected {}",
                u.mesh().nodes_per_side(),
                p.mesh().nodes_per_side()
            );
        }
        u.with_role(Role::Source)
    };
    let sol = solve_forward(&p, &u, None)?;
    let mut w = create(&out)?;
    sol.y.write_csv(&mut w)?;
    w.flush()?;
    let summary = ForwardSummary {
        nodes_per_side: p.mesh().nodes_per_side(),
        source,
        ssn_iterations: sol.ssn_iterations,
        final_residual: sol.final_residual,
        active_nodes: sol.active_pattern.iter().filter(|&&s| s > 0).count(),
    };
    write_json(&sidecar_path(&out), &summary)?;
    print_json(&summary)
}

fn noise_free(args: NoiseFreeArgs, file: &FileConfig) -> Result<()> {
    let p = problem(&args.mesh, file)?;
    let out = required(args.out, file.out.clone(), "out")?;
    let start = start(args.start, file)?;
    let iters = required(args.iters, file.iters, "iters")?;
    let exact = exact_data(&args.mesh, Some(&args.params), file)?;
    let mut cfg = landweber_config(&args.params, file)?;
    if iters > cfg.max_iterations {
        bail!("--iters {iters} exceeds --max-iter {}", cfg.max_iterations);
    }
    let record = run_noise_free(&p, &exact, start, iters, &cfg)?;
    cfg.max_iterations = iters.max(1);
    let summary = write_run(&out, &record, &cfg, &p.mesh())?;
    print_json(&summary)
}

fn invert(args: InvertArgs, file: &FileConfig) -> Result<()> {
    let p = problem(&args.mesh, file)?;
    let out = required(args.out, file.out.clone(), "out")?;
    let start = start(args.start, file)?;
    let seed = pick(args.seed, file.seed).unwrap_or(0);
    let noise = match (args.delta_target, args.sigma, file.delta_target, file.sigma) {
        (Some(d), _, _, _) => NoiseSpec::target(seed, d),
        (_, Some(s), _, _) => NoiseSpec::sigma(seed, s),
        (_, _, Some(_), Some(_)) => bail!("config file sets both delta-target and sigma"),
        (_, _, Some(d), None) => NoiseSpec::target(seed, d),
        (_, _, None, Some(s)) => NoiseSpec::sigma(seed, s),
        _ => bail!("one of --delta-target or --sigma is required"),
    };
    let exact = exact_data(&args.mesh, Some(&args.params), file)?;
    let fields: ExactFields = exact.fields(&p.mesh())?;
    let (data, delta) = add_noise(&fields.state, &noise, p.mass())?;
    info!("noise level {delta:.6e}");
    let cfg = landweber_config(&args.params, file)?.with_delta(delta);
    let record = run(&p, &data, &cfg, &start.field(&fields), Some(&fields.source))?;
    if let Some(msg) = &record.failure {
        warn!("run stopped early: {msg}");
    }
    let summary = write_run(&out, &record, &cfg, &p.mesh())?;
    if let Some(path) = args.iterate_out {
        let mut w = create(&path)?;
        record.final_iterate.write_csv(&mut w)?;
        w.flush()?;
    }
    print_json(&summary)
}

#[derive(Serialize)]
struct TableSummary {
    nodes_per_side: usize,
    start: String,
    deltas: Vec<f64>,
    seeds: Vec<u64>,
    noise: &'static str,
    config: ConfigSummary,
}

fn table(args: TableArgs, file: &FileConfig) -> Result<()> {
    let p = problem(&args.mesh, file)?;
    let out = required(args.out, file.out.clone(), "out")?;
    let start = start(args.start, file)?;
    let deltas = required(args.deltas, file.deltas.clone(), "deltas")?;
    let seeds = required(args.seeds, file.seeds.clone(), "seeds")?;
    let exact = exact_data(&args.mesh, Some(&args.params), file)?;
    let cfg = landweber_config(&args.params, file)?;
    let cells = run_table(&p, &exact, &deltas, start, &seeds, &cfg)?;
    let rows: Vec<_> = cells.into_iter().map(|c| c.row).collect();
    for r in &rows {
        info!(
            "seed {} delta {:.4e}: N = {}, E = {:.4e}, R = {:.3}, {}",
            r.seed, r.delta, r.stopping_index, r.rel_error, r.rate, r.reason
        );
    }
    let mut w = create(&out)?;
    write_table(&rows, &mut w)?;
    w.flush()?;
    write_json(
        &sidecar_path(&out),
        &TableSummary {
            nodes_per_side: p.mesh().nodes_per_side(),
            start: start.to_string(),
            deltas,
            seeds,
            noise: "rescaled to target, ChaCha8 standard normal draws per interior node",
            config: ConfigSummary::new(&cfg),
        },
    )?;
    print!("{}", std::fs::read_to_string(&out)?);
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let file = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Forward(a) => forward(a, &file),
        Command::NoiseFree(a) => noise_free(a, &file),
        Command::Invert(a) => invert(a, &file),
        Command::Table(a) => table(a, &file),
        Command::Verify(a) => verify::run(a, &file),
    }
}

//! Command-line experiment runner for sketched ridgeless least squares.
//!
//! Subcommands emit CSV artifacts plus a `manifest.json` echoing the exact
//! configuration and seed, so every output can be regenerated byte-for-byte.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use sketched_ridgeless::error::{Error, Result};
use sketched_ridgeless::experiment::{
    bench_time, reproduce_figure, run_sweep, Scale, SweepConfig, BENCH_CSV_HEADER,
};
use sketched_ridgeless::measures::SpectralMeasure;
use sketched_ridgeless::sketch::SketchKind;
use sketched_ridgeless::theory::{
    clt_params, limit_for, optimal_clt_variance, theory_csv_row, CltStatistic, SketchFamily,
    THEORY_CSV_HEADER,
};
use sketched_ridgeless::tuning::{optimal_m_closed, optimal_m_grid, psi_grid};

const DEFAULT_SEED: u64 = 123_456_789;

#[derive(Parser)]
#[command(
    name = "sketched-ridgeless",
    version,
    about = "Sketched ridgeless least squares: theory curves, Monte-Carlo sweeps, sketch-size tuning, fluctuation parameters, figure reproduction, timing benchmarks"
)]
struct Cli {
    /// Size of the worker pool for parallel sections (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Output directory for CSV artifacts and the manifest.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Emit the asymptotic risk curve over a ψ-grid as CSV.
    TheoryCurve(TheoryCurveArgs),
    /// Run a seeded Monte-Carlo sweep from a JSON config file.
    Simulate(SimulateArgs),
    /// Select the optimal sketch size by closed form or theory-grid search.
    Tune(TuneArgs),
    /// Emit Gaussian fluctuation parameters of the risk around its limit.
    Clt(CltArgs),
    /// Reproduce a numbered experiment protocol (1-6) at desk or full scale.
    ReproduceFigure(ReproduceFigureArgs),
    /// Measure median-of-five wall times for full vs sketched fits.
    BenchTime(BenchTimeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Orthogonal,
    Iid,
}

impl From<FamilyArg> for SketchFamily {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Orthogonal => SketchFamily::Orthogonal,
            FamilyArg::Iid => SketchFamily::Iid,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Haar,
    Srht,
    Iid,
}

impl From<KindArg> for SketchKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Haar => SketchKind::HaarOrthogonal,
            KindArg::Srht => SketchKind::Srht,
            KindArg::Iid => SketchKind::IidGaussian,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Desk,
    Full,
}

impl From<ScaleArg> for Scale {
    fn from(s: ScaleArg) -> Self {
        match s {
            ScaleArg::Desk => Scale::Desk,
            ScaleArg::Full => Scale::Full,
        }
    }
}

#[derive(Args)]
struct TheoryCurveArgs {
    /// Aspect ratio φ = lim p/n.
    #[arg(long)]
    phi: f64,
    /// Signal scale α (E‖β‖² = α²).
    #[arg(long)]
    alpha: f64,
    /// Noise level σ.
    #[arg(long)]
    sigma: f64,
    /// Sketch family the limit is computed for.
    #[arg(long, value_enum, default_value = "orthogonal")]
    family: FamilyArg,
    /// ψ-grid step; the grid is {δ, 2δ, …} ∪ {1}.
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    /// Covariance spectrum H: path to a JSON file or inline JSON
    /// ({"kind":"discrete","atoms":[[x,w],…]} or {"kind":"mp","psi":ψ});
    /// defaults to the isotropic point mass at 1.
    #[arg(long)]
    spectrum: Option<String>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Sweep configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's replication count.
    #[arg(long)]
    reps: Option<usize>,
    /// Redraw the design matrix every replication instead of fixing it.
    #[arg(long)]
    redraw_x: bool,
}

#[derive(Args)]
struct TuneArgs {
    /// Signal scale α.
    #[arg(long)]
    alpha: f64,
    /// Noise level σ.
    #[arg(long)]
    sigma: f64,
    /// Aspect ratio φ.
    #[arg(long)]
    phi: f64,
    /// Sample size the selected ψ* is converted to m* = ⌊ψ*n⌋ with.
    #[arg(long)]
    n: usize,
    /// Sketch family for grid search.
    #[arg(long, value_enum, default_value = "orthogonal")]
    family: FamilyArg,
    /// ψ-grid step for grid search.
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    /// Covariance spectrum (file path or inline JSON). Isotropic spectra use
    /// the closed form; anything else forces grid search.
    #[arg(long)]
    spectrum: Option<String>,
}

#[derive(Args)]
struct CltArgs {
    /// Which risk functional the fluctuation statement is about.
    #[arg(long, value_enum, default_value = "integrated")]
    stat: StatArg,
    /// Signal scale α.
    #[arg(long)]
    alpha: f64,
    /// Noise level σ.
    #[arg(long)]
    sigma: f64,
    /// Fourth moment ν₄ of the standardized design entries (3 = Gaussian).
    #[arg(long, default_value_t = 3.0)]
    nu4: f64,
    /// Feature count of the plug-in ratio r = p/m.
    #[arg(long)]
    p: usize,
    /// Sketch size of the plug-in ratio r = p/m.
    #[arg(long)]
    m: usize,
    /// Also report the limiting fluctuation variance of the optimally
    /// sketched estimator at this aspect ratio.
    #[arg(long)]
    optimal_phi: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum StatArg {
    Integrated,
    Conditional,
}

#[derive(Args)]
struct ReproduceFigureArgs {
    /// Protocol number, 1 through 6.
    id: u8,
    /// desk = 100 replications, full = 500.
    #[arg(long, value_enum, default_value = "desk")]
    scale: ScaleArg,
    /// Base seed; identical seeds give byte-identical CSVs.
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
}

#[derive(Args)]
struct BenchTimeArgs {
    /// Rows of the design.
    #[arg(long)]
    n: usize,
    /// Columns of the design.
    #[arg(long)]
    p: usize,
    /// Comma-separated downsampling ratios in (0, 1].
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.25,0.5,0.75,1.0")]
    psi: Vec<f64>,
    /// Sketch kind to time.
    #[arg(long, value_enum, default_value = "srht")]
    kind: KindArg,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
}

/// Reads a spectrum argument: a path to a JSON file if one exists, otherwise
/// inline JSON; absent means the isotropic point mass at 1.
fn parse_spectrum(arg: &Option<String>) -> Result<SpectralMeasure> {
    match arg {
        None => SpectralMeasure::point_mass(1.0),
        Some(text) => {
            let path = Path::new(text);
            if path.exists() {
                SpectralMeasure::from_json(&fs::read_to_string(path)?)
            } else {
                SpectralMeasure::from_json(text)
            }
        }
    }
}

fn write_artifact(out: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    fs::create_dir_all(out)?;
    let path = out.join(name);
    fs::write(&path, contents)?;
    println!("wrote {}", path.display());
    Ok(path)
}

fn write_manifest(out: &Path, manifest: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    write_artifact(out, "manifest.json", &(text + "\n"))?;
    Ok(())
}

fn run_theory_curve(out: &Path, args: &TheoryCurveArgs) -> Result<()> {
    let h = parse_spectrum(&args.spectrum)?;
    let family: SketchFamily = args.family.into();
    let mut csv = String::from(THEORY_CSV_HEADER);
    csv.push('\n');
    let mut skipped = 0usize;
    for psi in psi_grid(args.delta)? {
        match limit_for(&h, family, args.phi, psi, args.alpha, args.sigma) {
            Ok(limit) => {
                csv.push_str(&theory_csv_row(args.phi, psi, family, &limit));
                csv.push('\n');
            }
            // No finite limit at the interpolation threshold.
            Err(_) => skipped += 1,
        }
    }
    write_artifact(out, "theory_curve.csv", &csv)?;
    if skipped > 0 {
        println!("skipped {skipped} grid points at or beyond the interpolation threshold");
    }
    write_manifest(
        out,
        &json!({
            "command": "theory-curve",
            "package_version": env!("CARGO_PKG_VERSION"),
            "phi": args.phi,
            "alpha": args.alpha,
            "sigma": args.sigma,
            "family": family.name(),
            "delta": args.delta,
            "spectrum": serde_json::from_str::<serde_json::Value>(&h.to_json()).unwrap(),
            "artifacts": ["theory_curve.csv"],
        }),
    )
}

fn run_simulate(out: &Path, args: &SimulateArgs) -> Result<()> {
    let mut config = SweepConfig::from_json(&fs::read_to_string(&args.config)?)?;
    if let Some(seed) = args.seed {
        config.base_seed = seed;
    }
    if let Some(reps) = args.reps {
        config.replications = reps;
    }
    if args.redraw_x {
        config.redraw_x = true;
    }
    config.validate()?;
    let result = run_sweep(&config)?;
    write_artifact(out, "sweep.csv", &result.to_csv())?;
    write_manifest(
        out,
        &json!({
            "command": "simulate",
            "package_version": env!("CARGO_PKG_VERSION"),
            "seed": config.base_seed,
            "config": serde_json::from_str::<serde_json::Value>(&config.to_json()).unwrap(),
            "artifacts": ["sweep.csv"],
        }),
    )
}

fn run_tune(out: &Path, args: &TuneArgs) -> Result<()> {
    let h = parse_spectrum(&args.spectrum)?;
    let family: SketchFamily = args.family.into();
    let isotropic_h = matches!(
        &h,
        SpectralMeasure::Discrete { atoms } if atoms.len() == 1 && (atoms[0].0 - 1.0).abs() < 1e-12
    );
    let choice = if isotropic_h && matches!(family, SketchFamily::Orthogonal) {
        optimal_m_closed(args.alpha, args.sigma, args.phi, args.n)?
    } else {
        optimal_m_grid(&h, family, args.alpha, args.sigma, args.phi, args.n, args.delta)?
    };
    println!(
        "m* = {} (psi* = {}, case {}, limiting risk {})",
        choice.m_star,
        choice.psi_star(),
        choice.case.name(),
        choice.attained_risk
    );
    write_artifact(out, "tune.csv", &choice.trace_csv())?;
    write_manifest(
        out,
        &json!({
            "command": "tune",
            "package_version": env!("CARGO_PKG_VERSION"),
            "alpha": args.alpha,
            "sigma": args.sigma,
            "phi": args.phi,
            "n": args.n,
            "family": family.name(),
            "delta": args.delta,
            "spectrum": serde_json::from_str::<serde_json::Value>(&h.to_json()).unwrap(),
            "mode": choice.mode,
            "m_star": choice.m_star,
            "case": choice.case.name(),
            "attained_risk": choice.attained_risk,
            "artifacts": ["tune.csv"],
        }),
    )
}

const CLT_CSV_HEADER: &str = "statistic,p,m,alpha,sigma,nu4,scale,mean,variance,centering";

fn run_clt(out: &Path, args: &CltArgs) -> Result<()> {
    let stat = match args.stat {
        StatArg::Integrated => CltStatistic::IntegratedRisk,
        StatArg::Conditional => CltStatistic::ConditionalRisk,
    };
    let stat_name = match args.stat {
        StatArg::Integrated => "integrated",
        StatArg::Conditional => "conditional",
    };
    let params = clt_params(stat, args.alpha, args.sigma, args.nu4, args.p, args.m)?;
    let mut csv = String::from(CLT_CSV_HEADER);
    csv.push('\n');
    csv.push_str(&format!(
        "{},{},{},{},{},{},{},{},{},{}\n",
        stat_name,
        args.p,
        args.m,
        args.alpha,
        args.sigma,
        args.nu4,
        params.scale.name(),
        params.mean,
        params.variance,
        params.centering
    ));
    write_artifact(out, "clt.csv", &csv)?;
    println!(
        "{stat_name}: {}·(risk − {}) ⇒ N({}, {})",
        params.scale.name(),
        params.centering,
        params.mean,
        params.variance
    );
    let mut optimal = None;
    if let Some(phi) = args.optimal_phi {
        if !(phi.is_finite() && phi > 0.0) {
            return Err(Error::Domain(format!("optimal-phi must be positive, got {phi}")));
        }
        let v = optimal_clt_variance(args.alpha, args.sigma, phi, args.nu4);
        println!("optimally sketched fluctuation variance at phi = {phi}: {v}");
        optimal = Some(json!({"phi": phi, "variance": v}));
    }
    write_manifest(
        out,
        &json!({
            "command": "clt",
            "package_version": env!("CARGO_PKG_VERSION"),
            "statistic": stat_name,
            "alpha": args.alpha,
            "sigma": args.sigma,
            "nu4": args.nu4,
            "p": args.p,
            "m": args.m,
            "optimal": optimal,
            "artifacts": ["clt.csv"],
        }),
    )
}

fn run_reproduce_figure(out: &Path, args: &ReproduceFigureArgs) -> Result<()> {
    let scale: Scale = args.scale.into();
    let artifacts = reproduce_figure(args.id, scale, args.seed)?;
    let mut names = Vec::new();
    for artifact in &artifacts {
        write_artifact(out, &artifact.name, &artifact.contents)?;
        names.push(artifact.name.clone());
    }
    write_manifest(
        out,
        &json!({
            "command": "reproduce-figure",
            "package_version": env!("CARGO_PKG_VERSION"),
            "id": args.id,
            "scale": scale.name(),
            "seed": args.seed,
            "replications": scale.replications(),
            "artifacts": names,
        }),
    )
}

fn run_bench_time(out: &Path, args: &BenchTimeArgs) -> Result<()> {
    let kind: SketchKind = args.kind.into();
    let csv = bench_time(args.n, args.p, &args.psi, kind, args.seed)?;
    debug_assert!(csv.starts_with(BENCH_CSV_HEADER));
    write_artifact(out, "bench.csv", &csv)?;
    write_manifest(
        out,
        &json!({
            "command": "bench-time",
            "package_version": env!("CARGO_PKG_VERSION"),
            "n": args.n,
            "p": args.p,
            "psi": args.psi,
            "kind": kind.name(),
            "seed": args.seed,
            "artifacts": ["bench.csv"],
        }),
    )
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(workers) = cli.workers {
        if workers == 0 {
            return Err(Error::Config("worker count must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    }
    match &cli.command {
        Command::TheoryCurve(args) => run_theory_curve(&cli.out, args),
        Command::Simulate(args) => run_simulate(&cli.out, args),
        Command::Tune(args) => run_tune(&cli.out, args),
        Command::Clt(args) => run_clt(&cli.out, args),
        Command::ReproduceFigure(args) => run_reproduce_figure(&cli.out, args),
        Command::BenchTime(args) => run_bench_time(&cli.out, args),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

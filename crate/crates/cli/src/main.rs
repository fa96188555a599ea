use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use shapecert::bench::io::{load_model, load_observation, result_to_json, save_json, save_model, save_observation};
use shapecert::bench::trials::{write_aggregates_csv, write_records_csv};
use shapecert::bench::{generate, run_trials, SynthConfig, TrialSettings};
use shapecert::certify::{reconstruct, SolveSettings};
use shapecert::relax::Variant;
use shapecert::robust::{reconstruct_robust, GncSettings};
use shapecert::sdp::SdpSettings;
use shapecert::Error;

/// Largest K for which the dense relaxation is allowed without --force-full.
const FULL_MAX_K: usize = 5;

#[derive(Parser)]
#[command(name = "shapecert", version, about = "Certifiable shape and pose reconstruction from 2D landmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic instance (model, observation and ground truth files).
    Synth(SynthArgs),
    /// Reconstruct shape coefficients and pose from a model and an observation.
    Reconstruct(ReconstructArgs),
    /// Run Monte Carlo trials on synthetic instances and write CSV statistics.
    Bench(BenchArgs),
}

#[derive(Args)]
struct SolverArgs {
    /// Relaxation variant: `reduced` or `full`.
    #[arg(long, default_value = "reduced")]
    variant: Variant,
    /// Allow the full relaxation for more than 5 basis shapes.
    #[arg(long)]
    force_full: bool,
    /// Target for the SDP residuals and duality gap.
    #[arg(long, default_value_t = 1e-8)]
    sdp_tol: f64,
    #[arg(long, default_value_t = 100)]
    sdp_max_iter: usize,
}

impl SolverArgs {
    fn settings(&self, k: usize) -> Result<SolveSettings, Error> {
        if self.variant == Variant::Full2 && k > FULL_MAX_K && !self.force_full {
            return Err(Error::InvalidArgument(format!(
                "the full relaxation is limited to K <= {FULL_MAX_K} (got K = {k}); pass --force-full to override"
            )));
        }
        Ok(SolveSettings {
            variant: self.variant,
            sdp: SdpSettings {
                tol: self.sdp_tol,
                max_iter: self.sdp_max_iter,
                ..SdpSettings::default()
            },
            ..SolveSettings::default()
        })
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long = "K", default_value_t = 5)]
    k: usize,
    #[arg(long = "N", default_value_t = 100)]
    n: usize,
    /// Standard deviation of the per-coordinate landmark noise.
    #[arg(long, default_value_t = 0.01)]
    noise: f64,
    /// Number of nonzero coefficients (0 draws all of them).
    #[arg(long, default_value_t = 0)]
    sparse: usize,
    /// Fraction of landmarks replaced by outliers.
    #[arg(long, default_value_t = 0.0)]
    outliers: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for model.json, obs.json and truth.json.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ReconstructArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    obs: PathBuf,
    /// Sparsity weight, in normalized units.
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
    /// Run the outlier-robust loop (requires --cbar).
    #[arg(long)]
    robust: bool,
    /// Inlier threshold on reprojection residuals, in landmark units.
    #[arg(long)]
    cbar: Option<f64>,
    /// Result file; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit with status 2 when the result is not certified.
    #[arg(long)]
    require_cert: bool,
    /// Write the assembled SDP in sparse text form to this file.
    #[arg(long)]
    dump_sdp: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long = "K", default_value_t = 5)]
    k: usize,
    #[arg(long = "N", default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 0.01)]
    noise: f64,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 0.0)]
    outliers: f64,
    #[arg(long, default_value_t = 0)]
    sparse: usize,
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
    #[arg(long)]
    robust: bool,
    /// Inlier threshold for --robust; defaults to 5 sqrt(2) times --noise.
    #[arg(long)]
    cbar: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-trial CSV; aggregates go next to it with a `_summary` suffix.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
}

fn synth(args: &SynthArgs) -> Result<ExitCode, Error> {
    let cfg = SynthConfig {
        k: args.k,
        n: args.n,
        noise_sigma: args.noise,
        sparse_support: args.sparse,
        outlier_rate: args.outliers,
        seed: args.seed,
        alpha: 0.0,
    };
    let inst = generate(&cfg)?;
    std::fs::create_dir_all(&args.out_dir)?;
    save_model(args.out_dir.join("model.json"), &inst.model)?;
    save_observation(args.out_dir.join("obs.json"), &inst.obs)?;
    let r = &inst.truth.rotation;
    let truth = serde_json::json!({
        "c": inst.truth.coeffs,
        "R": (0..3).flat_map(|i| (0..3).map(move |j| r[(i, j)])).collect::<Vec<f64>>(),
        "t": [inst.truth.translation.x, inst.truth.translation.y],
        "outliers": inst.truth.outliers,
    });
    save_json(args.out_dir.join("truth.json"), &truth)?;
    eprintln!("wrote instance files to {}", args.out_dir.display());
    Ok(ExitCode::SUCCESS)
}

fn dump_sdp(
    path: &Path,
    model: &shapecert::model::DeformableModel,
    obs: &shapecert::model::Observation,
    alpha: f64,
    settings: &SolveSettings,
) -> Result<(), Error> {
    use shapecert::certify::LANDMARK_HEADROOM;
    use shapecert::poly::PolyProgram;
    use shapecert::preprocess::{eliminate_translation, normalize_with_headroom};
    use shapecert::relax::{assemble_sdp, build_basis};

    let (nmodel, nobs) = normalize_with_headroom(model, obs, LANDMARK_HEADROOM)?;
    let prob = eliminate_translation(&nmodel, &nobs, alpha)?;
    let prog = PolyProgram::new(&prob, settings.constraints);
    let relaxation = assemble_sdp(&prog, &build_basis(prob.num_bases(), settings.variant)?)?;
    relaxation.write_sparse_text(io::BufWriter::new(File::create(path)?))
}

fn reconstruct_cmd(args: &ReconstructArgs) -> Result<ExitCode, Error> {
    let model = load_model(&args.model)?;
    let obs = load_observation(&args.obs)?;
    let settings = args.solver.settings(model.num_bases())?;
    if let Some(path) = &args.dump_sdp {
        dump_sdp(path, &model, &obs, args.alpha, &settings)?;
    }
    let recon = if args.robust {
        let cbar = args
            .cbar
            .ok_or_else(|| Error::InvalidArgument("--robust needs an explicit --cbar".into()))?;
        let gnc = GncSettings {
            alpha: args.alpha,
            solve: settings,
            ..GncSettings::new(cbar)
        };
        let report = reconstruct_robust(&model, &obs, &gnc)?;
        for d in &report.diagnostics {
            eprintln!("note: {d}");
        }
        eprintln!("robust loop: {:?} after {} iterations", report.status, report.state.tau);
        report.reconstruction
    } else {
        let report = reconstruct(&model, &obs, args.alpha, &settings)?;
        eprintln!(
            "sdp {} in {} iterations, {:.3} s",
            report.sdp_status, report.sdp_iterations, report.sdp_time
        );
        report.reconstruction
    };
    eprintln!(
        "gamma {:.6e}  f_hat {:.6e}  eta {:.2e}  corank {}  certified {}",
        recon.f_lower, recon.f_upper, recon.eta, recon.corank, recon.certified
    );
    let json = result_to_json(&recon)?;
    match &args.out {
        Some(path) => std::fs::write(path, json)?,
        None => writeln!(io::stdout(), "{json}")?,
    }
    if args.require_cert && !recon.certified {
        eprintln!("result is not certified");
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn summary_path(csv: &Path) -> PathBuf {
    let stem = csv.file_stem().and_then(|s| s.to_str()).unwrap_or("bench");
    csv.with_file_name(format!("{stem}_summary.csv"))
}

fn bench(args: &BenchArgs) -> Result<ExitCode, Error> {
    let cfg = SynthConfig {
        k: args.k,
        n: args.n,
        noise_sigma: args.noise,
        sparse_support: args.sparse,
        outlier_rate: args.outliers,
        seed: args.seed,
        alpha: args.alpha,
    };
    let settings = TrialSettings {
        solve: args.solver.settings(args.k)?,
        robust: args.robust,
        cbar: args.cbar,
    };
    let summary = run_trials(&cfg, &settings, args.trials)?;
    for r in summary.records.iter().filter(|r| !r.completed()) {
        eprintln!("trial {} (seed {}) failed: {}", r.trial, r.seed, r.error.as_deref().unwrap_or(""));
    }
    if let Some(path) = &args.csv {
        write_records_csv(&summary.records, File::create(path)?)?;
        let agg = summary_path(path);
        write_aggregates_csv(&summary.aggregates, File::create(&agg)?)?;
        eprintln!("wrote {} and {}", path.display(), agg.display());
    }
    let stdout = io::stdout();
    let mut lock = stdout.lock();
    write_aggregates_csv(&summary.aggregates, &mut lock)?;
    lock.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Reconstruct(a) => reconstruct_cmd(a),
        Command::Bench(a) => bench(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

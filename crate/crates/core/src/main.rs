use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use bmc::data::Threshold;
use bmc::experiment::{
    make_trial, run_movielens, run_sweep, write_trial_table, Manifest, MovieLensConfig, RhoSource,
    SolverSettings, SweepGrid, SyntheticConfig,
};
use bmc::observation::{write_observations, ObservationModel};
use bmc::{Error, Qpf, Result};

#[derive(Debug, Parser)]
#[command(name = "bmc", version, about = "Binary matrix completion experiments")]
struct Cli {
    /// Master seed; every random quantity is derived from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Independent trials per grid point.
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Output directory for CSVs and the manifest [default: out].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Quantization function: `probit:SIGMA`, `logistic` or `logistic:SLOPE`.
    #[arg(long, global = true)]
    qpf: Option<Qpf>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Relative error versus gamma of the PUNU risk.
    SynthPunu {
        #[command(flatten)]
        synth: SynthArgs,
        /// Grid points on [0, 1].
        #[arg(long, default_value_t = 21)]
        points: usize,
    },
    /// Relative error versus eta of the PNU risk.
    SynthPnu {
        #[command(flatten)]
        synth: SynthArgs,
        /// Grid points on [-1, 1].
        #[arg(long, default_value_t = 21)]
        points: usize,
    },
    /// Relative error over the (PN, PU, NU) weight simplex.
    SynthTri {
        #[command(flatten)]
        synth: SynthArgs,
        /// Simplex lattice resolution (step 1/m).
        #[arg(long, default_value_t = 20)]
        m: usize,
    },
    /// MovieLens sign-prediction evaluation.
    Movielens(MovieLensArgs),
    /// Print L_alpha, beta_alpha and U_alpha of the quantization function.
    Constants {
        #[arg(long, value_delimiter = ',', default_value = "1")]
        alpha: Vec<f64>,
    },
    /// Re-run the command recorded in a manifest.
    Rerun {
        manifest: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ObsModel {
    Bernoulli,
    Multinomial,
    Allatonce,
}

#[derive(Debug, Args)]
struct SolverArgs {
    /// Initial step size.
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    #[arg(long, default_value_t = 500)]
    max_iters: usize,
    /// Relative objective decrease over 5 steps that counts as converged.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Starting factor rank (defaults to the rank parameter).
    #[arg(long)]
    k_init: Option<usize>,
    /// Largest factor rank (defaults to the starting rank).
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long, default_value_t = 1)]
    k_growth: usize,
    #[arg(long, default_value_t = 1e-3)]
    rank_tol: f64,
}

impl SolverArgs {
    fn settings(&self) -> SolverSettings {
        SolverSettings {
            tau: self.tau,
            max_iters: self.max_iters,
            tol: self.tol,
            k_init: self.k_init,
            k_max: self.k_max,
            k_growth: self.k_growth,
            rank_tol: self.rank_tol,
        }
    }
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Matrix shape as `D1xD2` (defaults to 100x100, or 300x300 for the simplex grid).
    #[arg(long, value_parser = parse_dims)]
    dims: Option<(usize, usize)>,
    #[arg(long, default_value_t = 10)]
    rank: usize,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Misobservation rate used for sampling.
    #[arg(long, default_value_t = 0.85)]
    rho: f64,
    /// Misobservation rate handed to the risk, if different from the sampling rate.
    #[arg(long, conflicts_with = "plugin_rho")]
    rho_assumed: Option<f64>,
    /// Estimate the rate handed to the risk from each sample.
    #[arg(long)]
    plugin_rho: bool,
    #[arg(long, value_enum, default_value_t = ObsModel::Bernoulli)]
    obs_model: ObsModel,
    /// Also write each trial's observed entries as `observations_trial{T}.csv`.
    #[arg(long)]
    export_observations: bool,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Debug, Args)]
struct MovieLensArgs {
    /// Path to the tab-separated ratings file.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 5000)]
    n_validation: usize,
    #[arg(long, default_value_t = 5000)]
    n_test: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.5,1,2,4")]
    alphas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "5,10,20,40")]
    ranks: Vec<usize>,
    /// Simplex lattice resolution for the weight search.
    #[arg(long, default_value_t = 20)]
    m: usize,
    /// Binarization threshold: `auto` (mean rating) or a number.
    #[arg(long, default_value = "auto", value_parser = parse_threshold)]
    threshold: Threshold,
    /// Predict +1 iff f(X - offset) >= 1/2.
    #[arg(long, default_value_t = 0.0)]
    offset: f64,
    /// Misobservation rate (defaults to the training plug-in estimate).
    #[arg(long)]
    rho: Option<f64>,
    #[command(flatten)]
    solver: SolverArgs,
}

fn parse_dims(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once(['x', 'X']).ok_or("expected D1xD2")?;
    let d1 = a.parse().map_err(|e| format!("{a}: {e}"))?;
    let d2 = b.parse().map_err(|e| format!("{b}: {e}"))?;
    Ok((d1, d2))
}

fn parse_threshold(s: &str) -> std::result::Result<Threshold, String> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(Threshold::Auto);
    }
    s.parse().map(Threshold::Fixed).map_err(|e| format!("{s}: {e}"))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::from(e).context(format!("creating {}", path.display())))
}

fn synthetic_config(cli: &Cli, s: &SynthArgs, default_d: usize, default_qpf: Qpf) -> SyntheticConfig {
    let (d1, d2) = s.dims.unwrap_or((default_d, default_d));
    SyntheticConfig {
        d1,
        d2,
        rank: s.rank,
        alpha: s.alpha,
        qpf: cli.qpf.unwrap_or(default_qpf),
        rho: s.rho,
        rho_source: match (s.rho_assumed, s.plugin_rho) {
            (Some(r), _) => RhoSource::Assumed(r),
            (None, true) => RhoSource::PlugIn,
            (None, false) => RhoSource::True,
        },
        model: match s.obs_model {
            ObsModel::Bernoulli => ObservationModel::MultiBernoulli,
            ObsModel::Multinomial => ObservationModel::Multinomial,
            ObsModel::Allatonce => ObservationModel::AllAtOnce,
        },
        trials: cli.trials.unwrap_or(10),
        seed: cli.seed,
        solver: s.solver.settings(),
    }
}

fn record_solver(m: &mut Manifest, s: &SolverSettings) {
    m.set("solver.tau", s.tau);
    m.set("solver.max_iters", s.max_iters);
    m.set("solver.tol", s.tol);
    m.set("solver.k_init", s.k_init.map_or("rank".into(), |k| k.to_string()));
    m.set("solver.k_max", s.k_max.map_or("k_init".into(), |k| k.to_string()));
    m.set("solver.k_growth", s.k_growth);
    m.set("solver.rank_tol", s.rank_tol);
}

fn run_synthetic(
    out: &Path,
    name: &str,
    cfg: SyntheticConfig,
    grid: SweepGrid,
    export: bool,
    manifest: &mut Manifest,
) -> Result<()> {
    if let RhoSource::Assumed(r) = cfg.rho_source {
        if r != cfg.rho {
            eprintln!("note: the risk uses rho={r} while observations are sampled with rho={}", cfg.rho);
        }
    }
    if export {
        for t in 0..cfg.trials {
            let trial = make_trial(&cfg, t)?;
            write_observations(create(&out.join(format!("observations_trial{t}.csv")))?, &trial.observation)?;
        }
    }
    manifest.set("dims", format!("{}x{}", cfg.d1, cfg.d2));
    manifest.set("rank", cfg.rank);
    manifest.set("alpha", cfg.alpha);
    manifest.set("max_norm", cfg.alpha * (cfg.rank as f64).sqrt());
    manifest.set("qpf", cfg.qpf);
    manifest.set("rho", cfg.rho);
    manifest.set("rho_source", format!("{:?}", cfg.rho_source));
    manifest.set("obs_model", format!("{:?}", cfg.model));
    manifest.set("trials", cfg.trials);
    manifest.set("grid", format!("{grid:?}"));
    record_solver(manifest, &cfg.solver);
    let result = run_sweep(&cfg, grid)?;
    result.write_csv(create(&out.join(format!("{name}.csv")))?)?;
    manifest.record_sweep(&result, cfg.d1 * cfg.d2);
    let best = result.best();
    log::info!("best point {} with mean error {}", best.point, best.mean);
    manifest.set("best.point", best.point);
    manifest.set("best.mean_error", best.mean);
    Ok(())
}

fn movielens(cli: &Cli, out_dir: &Path, args: &MovieLensArgs, manifest: &mut Manifest) -> Result<()> {
    let cfg = MovieLensConfig {
        data_path: args.data.clone(),
        n_validation: args.n_validation,
        n_test: args.n_test,
        trials: cli.trials.unwrap_or(10),
        seed: cli.seed,
        alpha_grid: args.alphas.clone(),
        rank_grid: args.ranks.clone(),
        ternary_m: args.m,
        threshold: args.threshold,
        offset: args.offset,
        rho: args.rho,
        qpf: cli.qpf.unwrap_or(Qpf::Logistic),
        solver: args.solver.settings(),
    };
    for (k, v) in [
        ("data", cfg.data_path.display().to_string()),
        ("n_validation", cfg.n_validation.to_string()),
        ("n_test", cfg.n_test.to_string()),
        ("trials", cfg.trials.to_string()),
        ("alpha_grid", format!("{:?}", cfg.alpha_grid)),
        ("rank_grid", format!("{:?}", cfg.rank_grid)),
        ("ternary_m", cfg.ternary_m.to_string()),
        ("offset", cfg.offset.to_string()),
        ("qpf", cfg.qpf.to_string()),
    ] {
        manifest.set(k, v);
    }
    record_solver(manifest, &cfg.solver);
    let report = run_movielens(&cfg)?;
    manifest.set("records", report.records);
    manifest.set("dims", format!("{}x{}", report.dims.0, report.dims.1));
    manifest.set("threshold", report.threshold);
    manifest.set("chosen.alpha", report.alpha);
    manifest.set("chosen.rank", report.rank);
    if report.training_only() {
        println!("training-only run: no held-out samples, no error tables");
        return Ok(());
    }
    let out = |name: &str| create(&out_dir.join(name));
    report.write_stage_one(out("movielens_stage1.csv")?)?;
    report.write_weight_grid(out("movielens_weights_validation.csv")?, false)?;
    if cfg.n_test > 0 {
        report.write_weight_grid(out("movielens_weights_test.csv")?, true)?;
    }
    for (name, trials) in [("pn", &report.pn), ("tri", &report.tri)] {
        write_trial_table(out(&format!("movielens_{name}_validation.csv"))?, trials, false)?;
        if cfg.n_test > 0 {
            write_trial_table(out(&format!("movielens_{name}_test.csv"))?, trials, true)?;
        }
        for t in trials.iter() {
            manifest.set(format!("{name}.trial.{}.seed", t.trial), t.seed);
            manifest.set(format!("{name}.trial.{}.rho", t.trial), t.rho);
            manifest.set(
                format!("{name}.trial.{}.validation_error", t.trial),
                t.validation.overall_rate(),
            );
            if let Some(test) = &t.test {
                manifest.set(format!("{name}.trial.{}.test_error", t.trial), test.overall_rate());
            }
        }
    }
    if let Some(w) = report.best_weights {
        manifest.set("best.weights", format!("{},{},{}", w.pn, w.pu, w.nu));
    }
    Ok(())
}

fn constants(q: Qpf, alphas: &[f64]) -> Result<()> {
    println!("qpf,alpha,l_alpha,beta_alpha,u_alpha");
    for &a in alphas {
        println!("{q},{a},{},{},{}", q.l_alpha(a)?, q.beta_alpha(a)?, q.u_alpha(a)?);
    }
    Ok(())
}

/// `argv` with any `--out` replaced by `out`.
fn with_out(argv: &[String], out: &Path) -> Vec<String> {
    let mut kept = Vec::with_capacity(argv.len() + 2);
    let mut args = argv.iter();
    while let Some(a) = args.next() {
        if a == "--out" {
            args.next();
        } else if !a.starts_with("--out=") {
            kept.push(a.clone());
        }
    }
    kept.push("--out".into());
    kept.push(out.display().to_string());
    kept
}

fn run(argv: Vec<String>) -> Result<()> {
    let cli = Cli::parse_from(&argv);
    if let Command::Rerun { manifest } = &cli.command {
        let text = fs::read_to_string(manifest)
            .map_err(|e| Error::from(e).context(format!("reading {}", manifest.display())))?;
        let m = Manifest::parse(&text)?;
        let mut recorded: Vec<String> = (0..)
            .map_while(|i| m.get(&format!("argv.{i}")).map(str::to_string))
            .collect();
        if recorded.is_empty() {
            return Err(Error::Parse { line: 0, reason: "manifest records no command line".into() });
        }
        if let Some(out) = &cli.out {
            recorded = with_out(&recorded, out);
        }
        return run(recorded);
    }
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    if let Command::Constants { alpha } = &cli.command {
        return constants(cli.qpf.unwrap_or(Qpf::Logistic), alpha);
    }

    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&out)
        .map_err(|e| Error::from(e).context(format!("creating {}", out.display())))?;
    let start = Instant::now();
    let (name, mut manifest) = match &cli.command {
        Command::SynthPunu { .. } => ("punu", Manifest::new("synth-punu")),
        Command::SynthPnu { .. } => ("pnu", Manifest::new("synth-pnu")),
        Command::SynthTri { .. } => ("tri", Manifest::new("synth-tri")),
        Command::Movielens(_) => ("movielens", Manifest::new("movielens")),
        Command::Constants { .. } | Command::Rerun { .. } => unreachable!("handled above"),
    };
    for (i, arg) in argv.iter().enumerate() {
        manifest.set(format!("argv.{i}"), arg);
    }
    manifest.set("seed", cli.seed);
    let probit = Qpf::probit(0.1)?;
    match &cli.command {
        Command::SynthPunu { synth, points } => {
            let cfg = synthetic_config(&cli, synth, 100, probit);
            run_synthetic(&out, name, cfg, SweepGrid::GammaLine(*points), synth.export_observations, &mut manifest)?
        }
        Command::SynthPnu { synth, points } => {
            let cfg = synthetic_config(&cli, synth, 100, probit);
            run_synthetic(&out, name, cfg, SweepGrid::EtaLine(*points), synth.export_observations, &mut manifest)?
        }
        Command::SynthTri { synth, m } => {
            let cfg = synthetic_config(&cli, synth, 300, Qpf::scaled_logistic(7.0)?);
            run_synthetic(&out, name, cfg, SweepGrid::Ternary(*m), synth.export_observations, &mut manifest)?
        }
        Command::Movielens(args) => movielens(&cli, &out, args, &mut manifest)?,
        Command::Constants { .. } | Command::Rerun { .. } => unreachable!("handled above"),
    }
    manifest.set("duration_secs", start.elapsed().as_secs_f64());
    let path = out.join(format!("{name}.manifest"));
    manifest.write(create(&path)?)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(std::env::args().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

//! Experiment drivers: synthetic risk sweeps, the ternary weight grid and the
//! MovieLens evaluation, plus CSV and manifest emission.

mod movielens;

use std::fmt;
use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::{relative_frobenius_error, DenseMatrix, TernaryObservation};
use crate::observation::{
    quantize, sample_observations, synthesize_target, ObservationBudget, ObservationConfig,
    ObservationModel, SynthesisConfig,
};
use crate::qpf::Qpf;
use crate::risk::{EntryLossKind, RiskWeights};
use crate::rng::{derive_seed, Phase};
use crate::solver::{solve, SolverConfig};

pub use movielens::{
    run_movielens, write_trial_table, MovieLensConfig, MovieLensReport, StageOneRow, TrialAccuracy,
    WeightRow,
};

/// Sampling grid over risk hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepGrid {
    /// `gamma` of the PUNU risk on `[0, 1]`, `n` evenly spaced points.
    GammaLine(usize),
    /// `eta` of the PNU risk on `[-1, 1]`, `n` evenly spaced points.
    EtaLine(usize),
    /// Simplex lattice with step `1/m`.
    Ternary(usize),
}

/// One point of a [`SweepGrid`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridPoint {
    Gamma(f64),
    Eta(f64),
    Tri(RiskWeights),
}

impl GridPoint {
    pub fn kind(&self) -> EntryLossKind {
        match *self {
            GridPoint::Gamma(gamma) => EntryLossKind::Punu { gamma },
            GridPoint::Eta(eta) => EntryLossKind::Pnu { eta },
            GridPoint::Tri(w) => EntryLossKind::Tri(w),
        }
    }
}

impl fmt::Display for GridPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridPoint::Gamma(g) => write!(f, "{g}"),
            GridPoint::Eta(e) => write!(f, "{e}"),
            GridPoint::Tri(w) => write!(f, "{},{},{}", w.pn, w.pu, w.nu),
        }
    }
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        let (n, min) = match *self {
            SweepGrid::GammaLine(n) | SweepGrid::EtaLine(n) => (n, 2),
            SweepGrid::Ternary(m) => (m, 1),
        };
        if n < min {
            return Err(Error::invalid("resolution", format!("{n} is below {min}")));
        }
        Ok(())
    }

    /// Points in ascending coordinate order. Endpoints and the center of an
    /// odd eta line are exact.
    pub fn points(&self) -> Vec<GridPoint> {
        match *self {
            SweepGrid::GammaLine(n) => {
                let last = (n - 1) as f64;
                (0..n).map(|i| GridPoint::Gamma(i as f64 / last)).collect()
            }
            SweepGrid::EtaLine(n) => {
                let last = (n - 1) as f64;
                (0..n)
                    .map(|i| GridPoint::Eta((2.0 * i as f64 - last) / last))
                    .collect()
            }
            SweepGrid::Ternary(m) => {
                let mf = m as f64;
                let mut pts = Vec::with_capacity((m + 1) * (m + 2) / 2);
                for i in 0..=m {
                    for j in 0..=(m - i) {
                        let k = m - i - j;
                        pts.push(GridPoint::Tri(RiskWeights {
                            pn: i as f64 / mf,
                            pu: j as f64 / mf,
                            nu: k as f64 / mf,
                        }));
                    }
                }
                pts
            }
        }
    }

    pub fn csv_header(&self) -> &'static str {
        match self {
            SweepGrid::GammaLine(_) => "gamma,mean_error,std_error",
            SweepGrid::EtaLine(_) => "eta,mean_error,std_error",
            SweepGrid::Ternary(_) => "gamma_pn,gamma_pu,gamma_nu,mean_error,std_error",
        }
    }
}

/// Solver knobs shared by every solve of an experiment. Constraint
/// parameters are derived per experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub tau: f64,
    pub max_iters: usize,
    pub tol: f64,
    /// Starting rank; `None` uses the target rank.
    pub k_init: Option<usize>,
    /// Largest rank; `None` uses the starting rank.
    pub k_max: Option<usize>,
    pub k_growth: usize,
    pub rank_tol: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tau: 1.0,
            max_iters: 500,
            tol: 1e-6,
            k_init: None,
            k_max: None,
            k_growth: 1,
            rank_tol: 1e-3,
        }
    }
}

impl SolverSettings {
    /// Config for the constraint set `K_max(alpha, alpha sqrt(r))`.
    pub fn config(&self, alpha: f64, rank: usize, seed: u64) -> SolverConfig {
        let k_init = self.k_init.unwrap_or(rank);
        SolverConfig {
            alpha,
            max_norm: alpha * (rank as f64).sqrt(),
            tau: self.tau,
            max_iters: self.max_iters,
            tol: self.tol,
            k_init,
            k_max: self.k_max.unwrap_or(k_init).max(k_init),
            k_growth: self.k_growth,
            rank_tol: self.rank_tol,
            seed,
        }
    }
}

/// How the risk learns the misobservation rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RhoSource {
    /// Use the sampling rate.
    True,
    /// Use a fixed, possibly wrong, value.
    Assumed(f64),
    /// `1 - |Omega| / (d1 d2)` of each sampled observation.
    PlugIn,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    pub d1: usize,
    pub d2: usize,
    pub rank: usize,
    pub alpha: f64,
    pub qpf: Qpf,
    /// Sampling misobservation rate.
    pub rho: f64,
    pub rho_source: RhoSource,
    pub model: ObservationModel,
    pub trials: usize,
    pub seed: u64,
    pub solver: SolverSettings,
}

impl SyntheticConfig {
    /// The synthetic setting with `d x d` targets, rank 10, `alpha = 1`,
    /// `rho = 0.85` and 10 trials.
    pub fn standard(d: usize, qpf: Qpf) -> Self {
        Self {
            d1: d,
            d2: d,
            rank: 10,
            alpha: 1.0,
            qpf,
            rho: 0.85,
            rho_source: RhoSource::True,
            model: ObservationModel::MultiBernoulli,
            trials: 10,
            seed: 0,
            solver: SolverSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::invalid("trials", "must be positive"));
        }
        self.qpf.validate()?;
        SynthesisConfig { d1: self.d1, d2: self.d2, rank: self.rank, alpha: self.alpha, seed: 0 }
            .validate()?;
        self.solver.config(self.alpha, self.rank, 0).validate(self.d1, self.d2)
    }
}

/// Everything random about one synthetic trial, shared by all grid points.
#[derive(Debug, Clone)]
pub struct SyntheticTrial {
    pub index: usize,
    pub seed: u64,
    pub target: DenseMatrix,
    pub observation: TernaryObservation,
    /// Misobservation rate handed to the risk.
    pub rho: f64,
}

/// Seed of trial `t` under master seed `seed`.
pub fn trial_seed(seed: u64, t: usize) -> u64 {
    derive_seed(seed, Phase::Trial, t as u32)
}

pub fn make_trial(cfg: &SyntheticConfig, index: usize) -> Result<SyntheticTrial> {
    let seed = trial_seed(cfg.seed, index);
    let target = synthesize_target(&SynthesisConfig {
        d1: cfg.d1,
        d2: cfg.d2,
        rank: cfg.rank,
        alpha: cfg.alpha,
        seed,
    })?
    .matrix;
    let y = quantize(&target, &cfg.qpf, seed);
    let obs_cfg = ObservationConfig {
        model: cfg.model,
        budget: ObservationBudget::Rho(cfg.rho),
        ..ObservationConfig::bernoulli(cfg.rho, seed)
    };
    let (observation, _) = sample_observations(&y, &obs_cfg)?;
    let rho = match cfg.rho_source {
        RhoSource::True => cfg.rho,
        RhoSource::Assumed(r) => r,
        RhoSource::PlugIn => observation.plugin_rho(),
    };
    Ok(SyntheticTrial { index, seed, target, observation, rho })
}

/// Solves one trial under one risk; returns the relative Frobenius error and
/// the final (summed) risk.
pub fn trial_outcome(
    cfg: &SyntheticConfig,
    trial: &SyntheticTrial,
    kind: EntryLossKind,
) -> Result<(f64, f64)> {
    let solver = cfg.solver.config(cfg.alpha, cfg.rank, trial.seed);
    let report = solve(&trial.observation, kind, &cfg.qpf, trial.rho, &solver)?;
    Ok((relative_frobenius_error(&report.estimate, &trial.target)?, report.objective()))
}

/// Solves one trial under one risk and returns the relative Frobenius error.
pub fn trial_error(cfg: &SyntheticConfig, trial: &SyntheticTrial, kind: EntryLossKind) -> Result<f64> {
    Ok(trial_outcome(cfg, trial, kind)?.0)
}

/// Aggregated errors at one grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub point: GridPoint,
    /// Per-trial errors in trial order.
    pub errors: Vec<f64>,
    /// Per-trial final risk, summed over cells.
    pub objectives: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl SweepRow {
    pub fn new(point: GridPoint, errors: Vec<f64>, objectives: Vec<f64>) -> Self {
        let (mean, std) = mean_std(&errors);
        Self { point, errors, objectives, mean, std }
    }
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub grid: SweepGrid,
    pub rows: Vec<SweepRow>,
    pub trial_seeds: Vec<u64>,
}

impl SweepResult {
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{}", self.grid.csv_header())?;
        for row in &self.rows {
            writeln!(w, "{},{},{}", row.point, row.mean, row.std)?;
        }
        Ok(())
    }

    /// Row with the smallest mean error (first on ties).
    pub fn best(&self) -> &SweepRow {
        self.rows
            .iter()
            .reduce(|best, r| if r.mean < best.mean { r } else { best })
            .expect("grids are nonempty")
    }

    pub fn row(&self, point: GridPoint) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.point == point)
    }
}

/// Runs every `(grid point, trial)` solve. Trials are generated once and
/// shared by all grid points.
pub fn run_sweep(cfg: &SyntheticConfig, grid: SweepGrid) -> Result<SweepResult> {
    cfg.validate()?;
    grid.validate()?;
    let trials: Vec<SyntheticTrial> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| make_trial(cfg, t).map_err(|e| e.context(format!("trial {t}"))))
        .collect::<Result<_>>()?;
    let points = grid.points();
    let jobs: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|p| (0..trials.len()).map(move |t| (p, t)))
        .collect();
    let outcomes: Vec<(f64, f64)> = jobs
        .par_iter()
        .map(|&(p, t)| {
            trial_outcome(cfg, &trials[t], points[p].kind())
                .map_err(|e| e.context(format!("grid point {} trial {t}", points[p])))
        })
        .collect::<Result<_>>()?;
    let rows = points
        .iter()
        .enumerate()
        .map(|(p, &point)| {
            let chunk = &outcomes[p * trials.len()..(p + 1) * trials.len()];
            SweepRow::new(point, chunk.iter().map(|o| o.0).collect(), chunk.iter().map(|o| o.1).collect())
        })
        .collect();
    Ok(SweepResult { grid, rows, trial_seeds: trials.iter().map(|t| t.seed).collect() })
}

pub fn run_punu_sweep(cfg: &SyntheticConfig, points: usize) -> Result<SweepResult> {
    run_sweep(cfg, SweepGrid::GammaLine(points))
}

pub fn run_pnu_sweep(cfg: &SyntheticConfig, points: usize) -> Result<SweepResult> {
    run_sweep(cfg, SweepGrid::EtaLine(points))
}

pub fn run_tri_grid(cfg: &SyntheticConfig, m: usize) -> Result<SweepResult> {
    run_sweep(cfg, SweepGrid::Ternary(m))
}

/// Ordered `key=value` lines describing a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(experiment: &str) -> Self {
        let mut m = Self::default();
        m.set("experiment", experiment);
        m.set("version", env!("CARGO_PKG_VERSION"));
        m
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        let key = key.into();
        let value = value.to_string().replace('\n', "\\n");
        match self.entries.iter_mut().find(|(k, _)| *k == key) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((key, value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    /// Records per-trial seeds and errors of a sweep.
    /// Records per-trial seeds, errors and final risks; `cells` turns risk
    /// sums into per-cell averages.
    pub fn record_sweep(&mut self, result: &SweepResult, cells: usize) {
        for (t, seed) in result.trial_seeds.iter().enumerate() {
            self.set(format!("trial.{t}.seed"), seed);
        }
        for (p, row) in result.rows.iter().enumerate() {
            self.set(format!("point.{p}"), row.point);
            let errs: Vec<String> = row.errors.iter().map(f64::to_string).collect();
            self.set(format!("point.{p}.errors"), errs.join(" "));
            let sums: Vec<String> = row.objectives.iter().map(f64::to_string).collect();
            let means: Vec<String> =
                row.objectives.iter().map(|o| (o / cells as f64).to_string()).collect();
            self.set(format!("point.{p}.risk_sum"), sums.join(" "));
            self.set(format!("point.{p}.risk_mean"), means.join(" "));
        }
    }

    pub fn write(&self, mut w: impl Write) -> Result<()> {
        for (k, v) in &self.entries {
            writeln!(w, "{k}={v}")?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Self::default();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: n + 1,
                reason: "expected key=value".into(),
            })?;
            m.entries.push((k.to_string(), v.to_string()));
        }
        Ok(m)
    }
}

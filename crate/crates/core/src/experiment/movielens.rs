use std::io::Write;
use std::path::PathBuf;

use rayon::prelude::*;

use crate::data::{
    binarize, dedup_keep_last, infer_dims, read_movielens, sign_accuracy, split, AccuracyReport,
    BucketError, RatingRecord, Split, SplitSpec, Threshold,
};
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::qpf::Qpf;
use crate::risk::{EntryLossKind, RiskWeights};
use crate::solver::solve;

use super::{mean_std, trial_seed, GridPoint, SolverSettings, SweepGrid};

#[derive(Debug, Clone, PartialEq)]
pub struct MovieLensConfig {
    pub data_path: PathBuf,
    pub n_validation: usize,
    pub n_test: usize,
    pub trials: usize,
    pub seed: u64,
    pub alpha_grid: Vec<f64>,
    pub rank_grid: Vec<usize>,
    /// Ternary grid resolution for the weight search.
    pub ternary_m: usize,
    pub threshold: Threshold,
    /// Decision rule predicts `+1` iff `f(X_ij - offset) >= 1/2`.
    pub offset: f64,
    /// Misobservation rate; `None` uses the training plug-in estimate.
    pub rho: Option<f64>,
    pub qpf: Qpf,
    pub solver: SolverSettings,
}

impl MovieLensConfig {
    pub fn new(data_path: PathBuf) -> Self {
        Self {
            data_path,
            n_validation: 5000,
            n_test: 5000,
            trials: 10,
            seed: 0,
            alpha_grid: vec![0.5, 1.0, 2.0, 4.0],
            rank_grid: vec![5, 10, 20, 40],
            ternary_m: 20,
            threshold: Threshold::Auto,
            offset: 0.0,
            rho: None,
            qpf: Qpf::Logistic,
            solver: SolverSettings::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        self.qpf.validate()?;
        if self.trials == 0 {
            return Err(Error::invalid("trials", "must be positive"));
        }
        if self.alpha_grid.is_empty() || self.rank_grid.is_empty() {
            return Err(Error::invalid("grid", "alpha and rank grids must be nonempty"));
        }
        if let Some(a) = self.alpha_grid.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
            return Err(Error::invalid("alpha", format!("{a} is not positive")));
        }
        if self.rank_grid.contains(&0) {
            return Err(Error::invalid("rank", "must be positive"));
        }
        SweepGrid::Ternary(self.ternary_m).validate()
    }
}

/// Held-out accuracy of one solve.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialAccuracy {
    pub trial: usize,
    pub seed: u64,
    pub rho: f64,
    pub validation: AccuracyReport,
    pub test: Option<AccuracyReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageOneRow {
    pub alpha: f64,
    pub rank: usize,
    pub validation_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightRow {
    pub weights: RiskWeights,
    pub validation_error: f64,
    pub test_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MovieLensReport {
    pub records: usize,
    pub dims: (usize, usize),
    pub threshold: f64,
    pub alpha: f64,
    pub rank: usize,
    /// Empty in training-only mode.
    pub stage_one: Vec<StageOneRow>,
    pub weight_grid: Vec<WeightRow>,
    pub best_weights: Option<RiskWeights>,
    pub pn: Vec<TrialAccuracy>,
    pub tri: Vec<TrialAccuracy>,
}

impl MovieLensReport {
    pub fn training_only(&self) -> bool {
        self.pn.is_empty()
    }

    /// Weight-grid CSV of validation or test error on the tuning split.
    pub fn write_weight_grid(&self, mut w: impl Write, test: bool) -> Result<()> {
        writeln!(w, "{}", SweepGrid::Ternary(1).csv_header())?;
        for row in &self.weight_grid {
            let err = if test { row.test_error.unwrap_or(f64::NAN) } else { row.validation_error };
            writeln!(w, "{},{},{},{},0", row.weights.pn, row.weights.pu, row.weights.nu, err)?;
        }
        Ok(())
    }

    pub fn write_stage_one(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "alpha,rank,validation_error")?;
        for row in &self.stage_one {
            writeln!(w, "{},{},{}", row.alpha, row.rank, row.validation_error)?;
        }
        Ok(())
    }
}

/// Per-rating table averaged over trials: `count` is pooled, `error` is the
/// mean of per-trial rates.
pub fn write_trial_table(
    mut w: impl Write,
    trials: &[TrialAccuracy],
    test: bool,
) -> Result<()> {
    let reports: Vec<&AccuracyReport> = trials
        .iter()
        .filter_map(|t| if test { t.test.as_ref() } else { Some(&t.validation) })
        .collect();
    writeln!(w, "rating,count,error")?;
    let line = |w: &mut dyn Write, label: String, pick: &dyn Fn(&AccuracyReport) -> BucketError| {
        let buckets: Vec<BucketError> = reports.iter().map(|r| pick(r)).collect();
        let count: usize = buckets.iter().map(|b| b.count).sum();
        let rates: Vec<f64> = buckets.iter().filter_map(BucketError::rate).collect();
        let err = if rates.is_empty() { f64::NAN } else { mean_std(&rates).0 };
        writeln!(w, "{label},{count},{err}")
    };
    for rating in 0..5 {
        line(&mut w, (rating + 1).to_string(), &|r| r.per_rating[rating])?;
    }
    line(&mut w, "overall".into(), &|r| r.overall)?;
    Ok(())
}

struct Prepared {
    dims: (usize, usize),
    threshold: f64,
    records: Vec<RatingRecord>,
}

struct TrialData {
    trial: usize,
    seed: u64,
    split: Split,
    train: crate::matrix::TernaryObservation,
    rho: f64,
}

fn prepare_trial(cfg: &MovieLensConfig, prep: &Prepared, trial: usize) -> Result<TrialData> {
    let seed = trial_seed(cfg.seed, trial);
    let parts = split(
        &prep.records,
        SplitSpec { n_validation: cfg.n_validation, n_test: cfg.n_test, seed },
    )?;
    let train = binarize(&parts.train, Threshold::Fixed(prep.threshold), Some(prep.dims))?
        .observation;
    let rho = cfg.rho.unwrap_or_else(|| train.plugin_rho());
    Ok(TrialData { trial, seed, split: parts, train, rho })
}

fn fit(
    cfg: &MovieLensConfig,
    data: &TrialData,
    kind: EntryLossKind,
    alpha: f64,
    rank: usize,
) -> Result<DenseMatrix> {
    let solver = cfg.solver.config(alpha, rank, data.seed);
    Ok(solve(&data.train, kind, &cfg.qpf, data.rho, &solver)?.estimate)
}

fn evaluate(
    cfg: &MovieLensConfig,
    prep: &Prepared,
    data: &TrialData,
    estimate: &DenseMatrix,
) -> Result<TrialAccuracy> {
    let q = cfg.qpf;
    let validation = sign_accuracy(estimate, &data.split.validation, prep.threshold, &q, cfg.offset)?;
    let test = if data.split.test.is_empty() {
        None
    } else {
        Some(sign_accuracy(estimate, &data.split.test, prep.threshold, &q, cfg.offset)?)
    };
    Ok(TrialAccuracy { trial: data.trial, seed: data.seed, rho: data.rho, validation, test })
}

/// Two-stage MovieLens evaluation: `(alpha, r)` by PN validation error, then
/// TRI weights at that setting, both on the first trial's split; finally PN
/// and the best TRI point on every trial's split.
pub fn run_movielens(cfg: &MovieLensConfig) -> Result<MovieLensReport> {
    cfg.validate()?;
    let raw = read_movielens(&cfg.data_path)?;
    let records = dedup_keep_last(&raw);
    if records.is_empty() {
        return Err(Error::invalid("data", format!("{} holds no ratings", cfg.data_path.display())));
    }
    let prep = Prepared {
        dims: infer_dims(&records),
        threshold: cfg.threshold.resolve(&records)?,
        records,
    };
    let mut report = MovieLensReport {
        records: prep.records.len(),
        dims: prep.dims,
        threshold: prep.threshold,
        alpha: cfg.alpha_grid[0],
        rank: cfg.rank_grid[0],
        stage_one: Vec::new(),
        weight_grid: Vec::new(),
        best_weights: None,
        pn: Vec::new(),
        tri: Vec::new(),
    };
    let first = prepare_trial(cfg, &prep, 0)?;

    if cfg.n_validation == 0 {
        log::info!("no validation samples; fitting PN on all training data only");
        fit(cfg, &first, EntryLossKind::Pn, report.alpha, report.rank)?;
        return Ok(report);
    }

    let settings: Vec<(f64, usize)> = cfg
        .alpha_grid
        .iter()
        .flat_map(|&a| cfg.rank_grid.iter().map(move |&r| (a, r)))
        .collect();
    report.stage_one = settings
        .par_iter()
        .map(|&(alpha, rank)| {
            let est = fit(cfg, &first, EntryLossKind::Pn, alpha, rank)
                .map_err(|e| e.context(format!("stage one alpha={alpha} rank={rank}")))?;
            let acc = evaluate(cfg, &prep, &first, &est)?;
            log::info!("stage one alpha={alpha} rank={rank}: {}", acc.validation.overall_rate());
            Ok(StageOneRow { alpha, rank, validation_error: acc.validation.overall_rate() })
        })
        .collect::<Result<_>>()?;
    let chosen = report
        .stage_one
        .iter()
        .reduce(|b, r| if r.validation_error < b.validation_error { r } else { b })
        .expect("grid is nonempty");
    (report.alpha, report.rank) = (chosen.alpha, chosen.rank);

    let points = SweepGrid::Ternary(cfg.ternary_m).points();
    report.weight_grid = points
        .par_iter()
        .map(|p| {
            let GridPoint::Tri(weights) = *p else { unreachable!("ternary grid") };
            let est = fit(cfg, &first, EntryLossKind::Tri(weights), report.alpha, report.rank)
                .map_err(|e| e.context(format!("weights {p}")))?;
            let acc = evaluate(cfg, &prep, &first, &est)?;
            log::info!("weights {p}: {}", acc.validation.overall_rate());
            Ok(WeightRow {
                weights,
                validation_error: acc.validation.overall_rate(),
                test_error: acc.test.as_ref().map(AccuracyReport::overall_rate),
            })
        })
        .collect::<Result<_>>()?;
    let best = report
        .weight_grid
        .iter()
        .reduce(|b, r| if r.validation_error < b.validation_error { r } else { b })
        .expect("grid is nonempty")
        .weights;
    report.best_weights = Some(best);

    let trials: Vec<TrialData> = std::iter::once(Ok(first))
        .chain((1..cfg.trials).map(|t| prepare_trial(cfg, &prep, t)))
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, EntryLossKind)> = (0..trials.len())
        .flat_map(|t| [(t, EntryLossKind::Pn), (t, EntryLossKind::Tri(best))])
        .collect();
    let results: Vec<TrialAccuracy> = jobs
        .par_iter()
        .map(|&(t, kind)| {
            let est = fit(cfg, &trials[t], kind, report.alpha, report.rank)
                .map_err(|e| e.context(format!("trial {t}")))?;
            evaluate(cfg, &prep, &trials[t], &est)
        })
        .collect::<Result<_>>()?;
    for (acc, (_, kind)) in results.into_iter().zip(&jobs) {
        match kind {
            EntryLossKind::Pn => report.pn.push(acc),
            _ => report.tri.push(acc),
        }
    }
    Ok(report)
}

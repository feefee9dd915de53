//! Factorized projected gradient descent over the max-norm ball.
//!
//! The estimate is kept as `X = U V^T` with `U: d1 x k`, `V: d2 x k`. One
//! iteration takes a joint gradient step on both factors (both computed from
//! the pre-step pair), rescales every row whose squared l2 norm exceeds the
//! budget `R`, and finally shrinks both factors by a common scalar when
//! `max |X_ij|` exceeds `alpha`.
//!
//! Step size: a step that raises the objective (or makes it non-finite) is
//! rejected and `tau` is halved; after 20 consecutive accepted steps `tau`
//! grows by 10%. The recorded objective trace is therefore non-increasing.

use crate::error::{Error, Result};
use crate::matrix::{dot, relative_frobenius_error, DenseMatrix, Label, TernaryObservation};
use crate::qpf::Qpf;
use crate::risk::{EntryLossKind, Risk};
use crate::rng::{substream, unit_f64, Phase};

const CONVERGENCE_WINDOW: usize = 5;
const GROWTH_STREAK: usize = 20;
const GROWTH_FACTOR: f64 = 1.1;
/// A solve stalls once `tau` falls this far below its initial value.
const STALL_RATIO: f64 = 1e-12;

/// A factorization `X = U V^T` of rank `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPair {
    pub u: DenseMatrix,
    pub v: DenseMatrix,
}

impl FactorPair {
    pub fn new(u: DenseMatrix, v: DenseMatrix) -> Result<Self> {
        if u.cols() != v.cols() {
            return Err(Error::invalid(
                "factors",
                format!("U has {} columns but V has {}", u.cols(), v.cols()),
            ));
        }
        Ok(Self { u, v })
    }

    pub fn rank(&self) -> usize {
        self.u.cols()
    }

    pub fn product(&self) -> DenseMatrix {
        self.u.mul_transpose(&self.v).expect("factor ranks agree")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Entry-wise bound on the estimate.
    pub alpha: f64,
    /// Budget `R` on squared row norms of both factors.
    pub max_norm: f64,
    /// Initial step size.
    pub tau: f64,
    pub max_iters: usize,
    /// Relative objective decrease over a 5-step window that counts as converged.
    pub tol: f64,
    pub k_init: usize,
    pub k_max: usize,
    pub k_growth: usize,
    /// Relative Frobenius change between successive ranks that stops growth.
    pub rank_tol: f64,
    pub seed: u64,
}

impl SolverConfig {
    /// Defaults for everything except the constraint set.
    pub fn new(alpha: f64, max_norm: f64) -> Self {
        Self {
            alpha,
            max_norm,
            tau: 1.0,
            max_iters: 1000,
            tol: 1e-6,
            k_init: 1,
            k_max: 1,
            k_growth: 1,
            rank_tol: 1e-3,
            seed: 0,
        }
    }

    pub fn validate(&self, d1: usize, d2: usize) -> Result<()> {
        let positive = |name: &'static str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(name, format!("{v} is not positive")))
            }
        };
        positive("alpha", self.alpha)?;
        positive("max_norm", self.max_norm)?;
        positive("tau", self.tau)?;
        positive("tol", self.tol)?;
        positive("rank_tol", self.rank_tol)?;
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters", "must be positive"));
        }
        if self.k_init == 0 || self.k_growth == 0 {
            return Err(Error::invalid("k_init", "rank schedule entries must be positive"));
        }
        if self.k_init > self.k_max || self.k_max > d1.max(d2) {
            return Err(Error::invalid(
                "k_max",
                format!(
                    "need k_init ({}) <= k_max ({}) <= {}",
                    self.k_init,
                    self.k_max,
                    d1.max(d2)
                ),
            ));
        }
        Ok(())
    }
}

/// One fixed-rank stage of a rank-escalation solve.
#[derive(Debug, Clone, PartialEq)]
pub struct RankStage {
    pub k: usize,
    pub iterations: usize,
    pub objective: f64,
    /// Relative Frobenius change from the previous stage's estimate.
    pub change: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub estimate: DenseMatrix,
    pub factors: FactorPair,
    pub final_k: usize,
    /// Objective after initialization and after every accepted step.
    pub objective_trace: Vec<f64>,
    /// Step attempts across all stages, rejected ones included.
    pub iterations_used: usize,
    pub converged: bool,
    pub step_halvings: usize,
    pub final_tau: f64,
    pub stages: Vec<RankStage>,
}

impl SolveReport {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace is never empty")
    }
}

/// State visible to an iteration observer.
#[derive(Debug)]
pub struct Iterate<'a> {
    pub factors: &'a FactorPair,
    pub estimate: &'a DenseMatrix,
    pub objective: f64,
    pub tau: f64,
}

/// `U - tau G V` and `V - tau G^T U`, both from the pre-step factors.
pub fn gradient_step(f: &FactorPair, g: &DenseMatrix, tau: f64) -> FactorPair {
    let (d1, d2) = g.shape();
    assert_eq!((f.u.rows(), f.v.rows()), (d1, d2), "gradient shape must match factors");
    let k = f.rank();
    let mut gv = vec![0.0; d1 * k];
    let mut gtu = vec![0.0; d2 * k];
    for i in 0..d1 {
        let ui = f.u.row(i);
        let gv_i = &mut gv[i * k..(i + 1) * k];
        for (j, &gij) in g.row(i).iter().enumerate() {
            if gij == 0.0 {
                continue;
            }
            let vj = f.v.row(j);
            for (acc, &v) in gv_i.iter_mut().zip(vj) {
                *acc += gij * v;
            }
            let gtu_j = &mut gtu[j * k..(j + 1) * k];
            for (acc, &u) in gtu_j.iter_mut().zip(ui) {
                *acc += gij * u;
            }
        }
    }
    let step = |m: &DenseMatrix, d: &[f64]| {
        let data = m.as_slice().iter().zip(d).map(|(x, dx)| x - tau * dx).collect();
        DenseMatrix::from_vec_unchecked(m.rows(), m.cols(), data)
    };
    FactorPair {
        u: step(&f.u, &gv),
        v: step(&f.v, &gtu),
    }
}

fn project_rows(m: &mut DenseMatrix, budget: f64) {
    for i in 0..m.rows() {
        let row = m.row_mut(i);
        let mut norm2 = dot(row, row);
        if norm2 <= budget {
            continue;
        }
        let scale = (budget / norm2).sqrt();
        row.iter_mut().for_each(|x| *x *= scale);
        // rounding can leave the row a hair above budget
        norm2 = dot(row, row);
        while norm2 > budget {
            row.iter_mut().for_each(|x| *x *= 1.0 - f64::EPSILON);
            norm2 = dot(row, row);
        }
    }
}

/// Rescales every row of `U` and `V` whose squared l2 norm exceeds `budget`
/// onto the sphere of squared radius `budget`. Idempotent.
pub fn project_max_norm(f: &FactorPair, budget: f64) -> FactorPair {
    let mut out = f.clone();
    project_rows(&mut out.u, budget);
    project_rows(&mut out.v, budget);
    out
}

/// Shrinks both factors by `sqrt(alpha / max|UV^T|)` when the product
/// exceeds `alpha`; otherwise returns them unchanged.
pub fn rescale_infinity(f: &FactorPair, alpha: f64) -> FactorPair {
    rescale_with_product(f.clone(), f.product(), alpha).0
}

/// Returns the rescaled factors together with their product.
fn rescale_with_product(
    mut f: FactorPair,
    mut product: DenseMatrix,
    alpha: f64,
) -> (FactorPair, DenseMatrix) {
    let peak = product.infinity_norm();
    if peak > alpha {
        let c = (alpha / peak).sqrt();
        f.u = f.u.scaled(c);
        f.v = f.v.scaled(c);
        product = f.product();
    }
    (f, product)
}

/// Appends `extra` columns to both factors: zeros plus uniform noise of
/// magnitude at most `noise`.
pub fn pad_factors(f: &FactorPair, extra: usize, noise: f64, seed: u64) -> FactorPair {
    let k = f.rank();
    let mut rng = substream(seed, Phase::WarmStart, (k + extra) as u32);
    let mut pad = |m: &DenseMatrix| {
        let mut data = Vec::with_capacity(m.rows() * (k + extra));
        for i in 0..m.rows() {
            data.extend_from_slice(m.row(i));
            for _ in 0..extra {
                let u = unit_f64(&mut rng);
                data.push(if noise == 0.0 { 0.0 } else { noise * (2.0 * u - 1.0) });
            }
        }
        DenseMatrix::from_vec_unchecked(m.rows(), k + extra, data)
    };
    let u = pad(&f.u);
    let v = pad(&f.v);
    FactorPair { u, v }
}

/// Uniform random factors scaled so `max |UV^T| = alpha / 2`, then projected.
pub fn initial_factors(d1: usize, d2: usize, k: usize, cfg: &SolverConfig) -> FactorPair {
    let mut rng = substream(cfg.seed, Phase::SolverInit, k as u32);
    let mut draw = |rows: usize| {
        let data = (0..rows * k).map(|_| 2.0 * unit_f64(&mut rng) - 1.0).collect();
        DenseMatrix::from_vec_unchecked(rows, k, data)
    };
    let mut f = FactorPair { u: draw(d1), v: draw(d2) };
    let peak = f.product().infinity_norm();
    if peak > 0.0 {
        let c = (0.5 * cfg.alpha / peak).sqrt();
        f.u = f.u.scaled(c);
        f.v = f.v.scaled(c);
    }
    project_max_norm(&f, cfg.max_norm)
}

struct Problem {
    risk: Risk,
    labels: Vec<Label>,
    d1: usize,
    d2: usize,
}

impl Problem {
    fn new(a: &TernaryObservation, kind: EntryLossKind, q: &Qpf, rho: f64) -> Result<Self> {
        if a.is_empty() {
            return Err(Error::invalid("observation", "no observed entries"));
        }
        let (d1, d2) = a.shape();
        Ok(Problem {
            risk: Risk::new(kind, *q, rho)?,
            labels: a.labels(),
            d1,
            d2,
        })
    }
}

fn run_fixed_rank(
    problem: &Problem,
    cfg: &SolverConfig,
    init: FactorPair,
    observer: &mut dyn FnMut(&Iterate<'_>),
) -> Result<SolveReport> {
    let k = init.rank();
    let mut grad = vec![0.0; problem.labels.len()];
    let mut cand_grad = vec![0.0; problem.labels.len()];

    let (mut factors, mut estimate) = {
        let product = init.product();
        rescale_with_product(init, product, cfg.alpha)
    };
    let mut objective = problem.risk.total_and_gradient(&estimate, &problem.labels, &mut grad);
    if !objective.is_finite() {
        return Err(Error::NonFiniteObjective { iteration: 0, rank: k });
    }
    let mut tau = cfg.tau;
    let mut trace = vec![objective];
    let mut attempts = 0;
    let mut streak = 0;
    let mut halvings = 0;
    let mut converged = false;
    observer(&Iterate { factors: &factors, estimate: &estimate, objective, tau });

    while attempts < cfg.max_iters {
        attempts += 1;
        let g = DenseMatrix::from_vec_unchecked(problem.d1, problem.d2, std::mem::take(&mut grad));
        let stepped = project_max_norm(&gradient_step(&factors, &g, tau), cfg.max_norm);
        grad = g.into_vec();
        let product = stepped.product();
        let (cand, cand_estimate) = rescale_with_product(stepped, product, cfg.alpha);
        let cand_objective =
            problem.risk.total_and_gradient(&cand_estimate, &problem.labels, &mut cand_grad);

        if cand_objective.is_finite() && cand_objective <= objective {
            factors = cand;
            estimate = cand_estimate;
            objective = cand_objective;
            std::mem::swap(&mut grad, &mut cand_grad);
            trace.push(objective);
            observer(&Iterate { factors: &factors, estimate: &estimate, objective, tau });
            streak += 1;
            if streak == GROWTH_STREAK {
                tau *= GROWTH_FACTOR;
                streak = 0;
            }
            if trace.len() > CONVERGENCE_WINDOW {
                let past = trace[trace.len() - 1 - CONVERGENCE_WINDOW];
                let scale = past.abs().max(f64::MIN_POSITIVE);
                if (past - objective) <= cfg.tol * scale {
                    converged = true;
                    break;
                }
            }
        } else {
            tau *= 0.5;
            halvings += 1;
            streak = 0;
            if tau < cfg.tau * STALL_RATIO {
                log::debug!("step size stalled at {tau:e} (rank {k}); stopping");
                converged = true;
                break;
            }
        }
    }

    Ok(SolveReport {
        estimate,
        factors,
        final_k: k,
        objective_trace: trace,
        iterations_used: attempts,
        converged,
        step_halvings: halvings,
        final_tau: tau,
        stages: vec![RankStage { k, iterations: attempts, objective, change: None }],
    })
}

/// Projected gradient descent at a fixed rank `k` from a random feasible start.
pub fn solve_fixed_rank(
    a: &TernaryObservation,
    kind: EntryLossKind,
    q: &Qpf,
    rho: f64,
    cfg: &SolverConfig,
    k: usize,
) -> Result<SolveReport> {
    solve_fixed_rank_observed(a, kind, q, rho, cfg, k, &mut |_| {})
}

/// [`solve_fixed_rank`], calling `observer` on the initial point and every
/// accepted iterate.
pub fn solve_fixed_rank_observed(
    a: &TernaryObservation,
    kind: EntryLossKind,
    q: &Qpf,
    rho: f64,
    cfg: &SolverConfig,
    k: usize,
    observer: &mut dyn FnMut(&Iterate<'_>),
) -> Result<SolveReport> {
    let (d1, d2) = a.shape();
    if k == 0 || k > d1.max(d2) {
        return Err(Error::invalid("k", format!("{k} is outside [1, {}]", d1.max(d2))));
    }
    cfg.validate(d1, d2)
        .or_else(|e| if cfg.k_max < k { Ok(()) } else { Err(e) })?;
    let problem = Problem::new(a, kind, q, rho)?;
    run_fixed_rank(&problem, cfg, initial_factors(d1, d2, k, cfg), observer)
}

/// Rank escalation: solves at `k_init`, `k_init + k_growth`, ... `<= k_max`,
/// warm-starting each rank from the previous factors. Growth stops once the
/// estimate moves by less than `rank_tol` (relative Frobenius), and the
/// report of the smaller rank is returned.
pub fn solve(
    a: &TernaryObservation,
    kind: EntryLossKind,
    q: &Qpf,
    rho: f64,
    cfg: &SolverConfig,
) -> Result<SolveReport> {
    let (d1, d2) = a.shape();
    cfg.validate(d1, d2)?;
    let problem = Problem::new(a, kind, q, rho)?;
    let mut observer = |_: &Iterate<'_>| {};

    let mut k = cfg.k_init;
    let mut report = run_fixed_rank(&problem, cfg, initial_factors(d1, d2, k, cfg), &mut observer)?;
    let mut stages = report.stages.clone();
    let mut attempts = report.iterations_used;
    let mut halvings = report.step_halvings;

    while k + cfg.k_growth <= cfg.k_max {
        let next_k = k + cfg.k_growth;
        let padded = pad_factors(&report.factors, cfg.k_growth, 1e-6 * cfg.alpha, cfg.seed);
        let warm = project_max_norm(&padded, cfg.max_norm);
        let next = run_fixed_rank(&problem, cfg, warm, &mut observer)?;
        let change = if report.estimate.frobenius_norm() > 0.0 {
            relative_frobenius_error(&next.estimate, &report.estimate)?
        } else {
            next.estimate.frobenius_norm()
        };
        attempts += next.iterations_used;
        halvings += next.step_halvings;
        stages.push(RankStage { change: Some(change), ..next.stages[0].clone() });
        if change < cfg.rank_tol {
            break;
        }
        report = next;
        k = next_k;
    }

    report.final_k = k;
    report.iterations_used = attempts;
    report.step_halvings = halvings;
    report.stages = stages;
    Ok(report)
}

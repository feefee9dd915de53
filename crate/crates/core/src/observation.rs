//! Synthetic targets, stochastic quantization and the observation samplers.
//!
//! Quantization and index sampling draw from separate random streams
//! ([`Phase::Quantize`] and [`Phase::Sample`]), so `Y` and `Omega` are
//! independent even under a shared seed.

use std::io::Write;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, SamplingDistribution, Sign, SignMatrix, TernaryObservation};
use crate::qpf::Qpf;
use crate::rng::{substream, unit_f64, Phase};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthesisConfig {
    pub d1: usize,
    pub d2: usize,
    pub rank: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d1 == 0 || self.d2 == 0 {
            return Err(Error::invalid("dims", "matrix sides must be positive"));
        }
        if self.rank == 0 || self.rank > self.d1.min(self.d2) {
            return Err(Error::invalid(
                "rank",
                format!("{} must lie in [1, {}]", self.rank, self.d1.min(self.d2)),
            ));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::invalid("alpha", format!("{} is not positive", self.alpha)));
        }
        Ok(())
    }
}

/// A synthetic low-rank target together with the factors that produced it.
#[derive(Debug, Clone)]
pub struct SyntheticTarget {
    pub matrix: DenseMatrix,
    /// `d1 x r`, already carrying the normalization scale.
    pub left: DenseMatrix,
    /// `d2 x r`.
    pub right: DenseMatrix,
    /// Seed actually used (differs from the requested one only after a redraw).
    pub seed: u64,
}

/// Draws `U`, `V` with i.i.d. `Uniform[-1, 1]` entries and returns
/// `M = U V^T` scaled so that `max |M_ij| = alpha`.
pub fn synthesize_target(cfg: &SynthesisConfig) -> Result<SyntheticTarget> {
    cfg.validate()?;
    let mut seed = cfg.seed;
    loop {
        let mut rng = substream(seed, Phase::Target, 0);
        let mut draw = |rows: usize| {
            let data = (0..rows * cfg.rank)
                .map(|_| 2.0 * unit_f64(&mut rng) - 1.0)
                .collect();
            DenseMatrix::from_vec_unchecked(rows, cfg.rank, data)
        };
        let u = draw(cfg.d1);
        let v = draw(cfg.d2);
        let product = u.mul_transpose(&v)?;
        let peak = product.infinity_norm();
        if peak == 0.0 {
            log::warn!("degenerate target draw for seed {seed}; redrawing");
            seed = seed.wrapping_add(1);
            continue;
        }
        let scale = cfg.alpha / peak;
        let matrix = product.scaled(scale);
        return Ok(SyntheticTarget {
            matrix,
            left: u.scaled(scale),
            right: v,
            seed,
        });
    }
}

/// Draws `Y_ij = +1` with probability `f(M_ij)`, independently per cell.
///
/// Cell `c` (row-major) consumes exactly the `c`-th 64-bit word of the
/// quantization stream.
pub fn quantize(m: &DenseMatrix, q: &Qpf, seed: u64) -> SignMatrix {
    let mut rng = substream(seed, Phase::Quantize, 0);
    let signs = m
        .as_slice()
        .iter()
        .map(|&x| {
            if unit_f64(&mut rng) < q.value(x) {
                Sign::Positive
            } else {
                Sign::Negative
            }
        })
        .collect();
    let (d1, d2) = m.shape();
    SignMatrix::new(d1, d2, signs).expect("shape comes from a valid matrix")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObservationModel {
    /// Each cell observed independently with probability `n pi_ij`.
    MultiBernoulli,
    /// `n` draws with replacement from `pi`.
    Multinomial,
    /// Exactly `n` distinct cells, sequential weighted draws without replacement.
    AllAtOnce,
}

/// How many cells to observe: a misobservation rate (uniform `pi` only) or
/// a sample count `n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObservationBudget {
    Rho(f64),
    Count(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationConfig {
    pub model: ObservationModel,
    pub budget: ObservationBudget,
    pub distribution: SamplingDistribution,
    pub seed: u64,
}

impl ObservationConfig {
    /// Uniform multi-Bernoulli sampling with misobservation rate `rho`.
    pub fn bernoulli(rho: f64, seed: u64) -> Self {
        Self {
            model: ObservationModel::MultiBernoulli,
            budget: ObservationBudget::Rho(rho),
            distribution: SamplingDistribution::Uniform,
            seed,
        }
    }
}

/// What the sampler actually did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplerTelemetry {
    /// Raw number of index draws (multinomial) or inclusions.
    pub draws: usize,
    /// Distinct cells in the resulting observation.
    pub distinct: usize,
}

/// Samples `Omega` and returns the observation matrix `A` restricted to it.
pub fn sample_observations(
    y: &SignMatrix,
    cfg: &ObservationConfig,
) -> Result<(TernaryObservation, SamplerTelemetry)> {
    let (d1, d2) = y.shape();
    let cells = d1 * d2;
    cfg.distribution.check_shape(d1, d2)?;
    let mut rng = substream(cfg.seed, Phase::Sample, 0);

    let n = match cfg.budget {
        ObservationBudget::Rho(rho) => {
            if !(0.0..1.0).contains(&rho) {
                return Err(Error::invalid("rho", format!("{rho} is outside [0, 1)")));
            }
            if !cfg.distribution.is_uniform() {
                return Err(Error::invalid(
                    "rho",
                    "a misobservation rate is only defined for uniform sampling",
                ));
            }
            (1.0 - rho) * cells as f64
        }
        ObservationBudget::Count(n) => n as f64,
    };

    let weight = |c: usize| cfg.distribution.weight(d1, d2, c / d2, c % d2);
    let mut chosen: Vec<usize>;
    let draws;
    match cfg.model {
        ObservationModel::MultiBernoulli => {
            let inclusion = |c: usize| match cfg.budget {
                ObservationBudget::Rho(rho) => 1.0 - rho,
                ObservationBudget::Count(_) => n * weight(c),
            };
            for c in 0..cells {
                let p = inclusion(c);
                if p > 1.0 + 1e-12 {
                    return Err(Error::InfeasibleInclusion {
                        row: c / d2,
                        col: c % d2,
                        probability: p,
                    });
                }
            }
            chosen = (0..cells)
                .filter(|&c| unit_f64(&mut rng) < inclusion(c))
                .collect();
            draws = chosen.len();
        }
        ObservationModel::Multinomial => {
            let n = n.round() as usize;
            let mut seen = vec![false; cells];
            chosen = Vec::new();
            let mut record = |c: usize, chosen: &mut Vec<usize>| {
                if !seen[c] {
                    seen[c] = true;
                    chosen.push(c);
                }
            };
            match &cfg.distribution {
                SamplingDistribution::Uniform => {
                    for _ in 0..n {
                        record(rng.random_range(0..cells), &mut chosen);
                    }
                }
                SamplingDistribution::Explicit(w) => {
                    let index = WeightedIndex::new(w.as_slice())
                        .map_err(|e| Error::invalid("pi", e.to_string()))?;
                    for _ in 0..n {
                        record(index.sample(&mut rng), &mut chosen);
                    }
                }
            }
            draws = n;
            chosen.sort_unstable();
        }
        ObservationModel::AllAtOnce => {
            let n = n.round() as usize;
            chosen = sample_without_replacement(cells, n, weight, &mut rng)?;
            draws = n;
            chosen.sort_unstable();
        }
    }

    let entries: Vec<_> = chosen
        .into_iter()
        .map(|c| (c / d2, c % d2, y.as_slice()[c]))
        .collect();
    let telemetry = SamplerTelemetry {
        draws,
        distinct: entries.len(),
    };
    Ok((
        TernaryObservation::from_entries_unchecked(d1, d2, entries),
        telemetry,
    ))
}

/// Efraimidis-Spirakis keys `ln(u) / w`: taking the `n` largest keys is
/// distributed exactly as `n` sequential weighted draws without replacement.
fn sample_without_replacement(
    cells: usize,
    n: usize,
    weight: impl Fn(usize) -> f64,
    rng: &mut impl RngCore,
) -> Result<Vec<usize>> {
    let mut keyed: Vec<(f64, usize)> = (0..cells)
        .filter_map(|c| {
            let u = unit_f64(rng);
            let w = weight(c);
            (w > 0.0).then(|| ((1.0 - u).ln() / w, c))
        })
        .collect();
    if n > keyed.len() {
        return Err(Error::SampleTooLarge {
            requested: n,
            available: keyed.len(),
        });
    }
    keyed.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(keyed.into_iter().take(n).map(|(_, c)| c).collect())
}

/// Drops every negative observation, reproducing the PU setting.
pub fn pu_censor(a: &TernaryObservation) -> TernaryObservation {
    let (d1, d2) = a.shape();
    let kept = a
        .entries()
        .iter()
        .copied()
        .filter(|e| e.2 == Sign::Positive)
        .collect();
    TernaryObservation::from_entries_unchecked(d1, d2, kept)
}

/// Writes `i,j,value` lines (0-based indices, values ±1) under a header.
pub fn write_observations(mut w: impl Write, a: &TernaryObservation) -> Result<()> {
    writeln!(w, "i,j,value")?;
    for &(i, j, s) in a.entries() {
        writeln!(w, "{i},{j},{}", s.as_i8())?;
    }
    Ok(())
}

//! Dense and sparse matrix containers plus the norms and error metrics used
//! throughout the crate.
//!
//! All reductions run sequentially in row-major order (row by row, left to
//! right), so every norm is a deterministic function of its input.

use crate::error::{Error, Result};

/// Row-major real matrix with an explicit `(d1, d2)` shape.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    d1: usize,
    d2: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    /// Builds a matrix from row-major entries. All entries must be finite.
    pub fn from_vec(d1: usize, d2: usize, data: Vec<f64>) -> Result<Self> {
        if d1 == 0 || d2 == 0 {
            return Err(Error::invalid("shape", format!("{d1}x{d2} has an empty side")));
        }
        if data.len() != d1 * d2 {
            return Err(Error::invalid(
                "entries",
                format!("expected {} entries for {d1}x{d2}, got {}", d1 * d2, data.len()),
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(
                "entries",
                format!("non-finite value at ({}, {})", pos / d2, pos % d2),
            ));
        }
        Ok(Self { d1, d2, data })
    }

    /// Builds a matrix from a slice of equally long rows.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let d1 = rows.len();
        let d2 = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != d2) {
            return Err(Error::invalid("rows", "rows have different lengths"));
        }
        Self::from_vec(d1, d2, rows.concat())
    }

    pub fn zeros(d1: usize, d2: usize) -> Self {
        assert!(d1 > 0 && d2 > 0, "matrix sides must be positive");
        Self {
            d1,
            d2,
            data: vec![0.0; d1 * d2],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn filled(d1: usize, d2: usize, value: f64) -> Self {
        let mut m = Self::zeros(d1, d2);
        m.data.fill(value);
        m
    }

    /// Builds a matrix cell by cell from `f(row, col)`.
    pub fn from_fn(d1: usize, d2: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(d1, d2);
        for i in 0..d1 {
            for j in 0..d2 {
                m.data[i * d2 + j] = f(i, j);
            }
        }
        m
    }

    pub(crate) fn from_vec_unchecked(d1: usize, d2: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), d1 * d2);
        Self { d1, d2, data }
    }

    pub fn rows(&self) -> usize {
        self.d1
    }

    pub fn cols(&self) -> usize {
        self.d2
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.d1, self.d2)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.d2 + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.d2 + j] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d2..(i + 1) * self.d2]
    }

    pub(crate) fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.d2..(i + 1) * self.d2]
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self::from_vec_unchecked(self.d1, self.d2, self.data.iter().map(|v| v * c).collect())
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Self::from_vec_unchecked(self.d1, self.d2, data))
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.d2, self.d1, |i, j| self.get(j, i))
    }

    /// Returns `self * other^T`, i.e. the `(d1 x n)` matrix of row dot products.
    ///
    /// Both operands must have the same number of columns.
    pub fn mul_transpose(&self, other: &Self) -> Result<Self> {
        if self.d2 != other.d2 {
            return Err(Error::ShapeMismatch {
                expected: (other.d1, self.d2),
                actual: other.shape(),
            });
        }
        let mut out = vec![0.0; self.d1 * other.d1];
        for i in 0..self.d1 {
            let a = self.row(i);
            let dst = &mut out[i * other.d1..(i + 1) * other.d1];
            for (j, slot) in dst.iter_mut().enumerate() {
                *slot = dot(a, other.row(j));
            }
        }
        Ok(Self::from_vec_unchecked(self.d1, other.d1, out))
    }

    pub fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.shape(),
                actual: other.shape(),
            });
        }
        Ok(())
    }

    pub fn frobenius_norm(&self) -> f64 {
        frobenius_norm(self)
    }

    pub fn infinity_norm(&self) -> f64 {
        infinity_norm(self)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A binary sign in `{-1, +1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sign {
    Negative,
    Positive,
}

impl Sign {
    pub fn as_i8(self) -> i8 {
        match self {
            Sign::Negative => -1,
            Sign::Positive => 1,
        }
    }

    pub fn from_i8(v: i8) -> Option<Self> {
        match v {
            -1 => Some(Sign::Negative),
            1 => Some(Sign::Positive),
            _ => None,
        }
    }

    pub fn flip(self) -> Self {
        match self {
            Sign::Negative => Sign::Positive,
            Sign::Positive => Sign::Negative,
        }
    }
}

/// A cell of the observation matrix: `-1`, `0` (unobserved) or `+1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Negative,
    Unobserved,
    Positive,
}

impl Label {
    pub fn as_i8(self) -> i8 {
        match self {
            Label::Negative => -1,
            Label::Unobserved => 0,
            Label::Positive => 1,
        }
    }

    pub fn flip(self) -> Self {
        match self {
            Label::Negative => Label::Positive,
            Label::Unobserved => Label::Unobserved,
            Label::Positive => Label::Negative,
        }
    }
}

impl From<Sign> for Label {
    fn from(s: Sign) -> Self {
        match s {
            Sign::Negative => Label::Negative,
            Sign::Positive => Label::Positive,
        }
    }
}

/// A fully observed `{-1, +1}` matrix (the quantization matrix `Y`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignMatrix {
    d1: usize,
    d2: usize,
    signs: Vec<Sign>,
}

impl SignMatrix {
    pub fn new(d1: usize, d2: usize, signs: Vec<Sign>) -> Result<Self> {
        if d1 == 0 || d2 == 0 || signs.len() != d1 * d2 {
            return Err(Error::invalid(
                "signs",
                format!("{} signs do not fill a {d1}x{d2} matrix", signs.len()),
            ));
        }
        Ok(Self { d1, d2, signs })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.d1, self.d2)
    }

    pub fn get(&self, i: usize, j: usize) -> Sign {
        self.signs[i * self.d2 + j]
    }

    pub fn as_slice(&self) -> &[Sign] {
        &self.signs
    }

    /// Every cell observed.
    pub fn to_observation(&self) -> TernaryObservation {
        let entries = self
            .signs
            .iter()
            .enumerate()
            .map(|(c, &s)| (c / self.d2, c % self.d2, s))
            .collect();
        TernaryObservation {
            d1: self.d1,
            d2: self.d2,
            entries,
        }
    }
}

/// Sparse record of the observed index set and its `{-1, +1}` values.
///
/// Unobserved cells are implicit zeros. Each cell appears at most once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TernaryObservation {
    d1: usize,
    d2: usize,
    entries: Vec<(usize, usize, Sign)>,
}

impl TernaryObservation {
    pub fn new(d1: usize, d2: usize, entries: Vec<(usize, usize, Sign)>) -> Result<Self> {
        if d1 == 0 || d2 == 0 {
            return Err(Error::invalid("shape", format!("{d1}x{d2} has an empty side")));
        }
        let mut seen = vec![false; d1 * d2];
        for &(row, col, _) in &entries {
            if row >= d1 || col >= d2 {
                return Err(Error::IndexOutOfRange { row, col, d1, d2 });
            }
            let cell = row * d2 + col;
            if seen[cell] {
                return Err(Error::DuplicateObservation { row, col });
            }
            seen[cell] = true;
        }
        Ok(Self { d1, d2, entries })
    }

    pub fn empty(d1: usize, d2: usize) -> Result<Self> {
        Self::new(d1, d2, Vec::new())
    }

    pub(crate) fn from_entries_unchecked(
        d1: usize,
        d2: usize,
        entries: Vec<(usize, usize, Sign)>,
    ) -> Self {
        Self { d1, d2, entries }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.d1, self.d2)
    }

    pub fn entries(&self) -> &[(usize, usize, Sign)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count(&self, sign: Sign) -> usize {
        self.entries.iter().filter(|e| e.2 == sign).count()
    }

    /// Dense row-major view of the observation matrix `A`.
    pub fn labels(&self) -> Vec<Label> {
        let mut out = vec![Label::Unobserved; self.d1 * self.d2];
        for &(i, j, s) in &self.entries {
            out[i * self.d2 + j] = s.into();
        }
        out
    }

    /// Plug-in misobservation rate `1 - |Omega| / (d1 d2)`.
    pub fn plugin_rho(&self) -> f64 {
        1.0 - self.entries.len() as f64 / (self.d1 * self.d2) as f64
    }
}

/// The sampling distribution over matrix cells.
#[derive(Debug, Clone, PartialEq)]
pub enum SamplingDistribution {
    Uniform,
    Explicit(DenseMatrix),
}

impl SamplingDistribution {
    /// Validates explicit weights: each in `[0, 1]`, total `1` within `1e-9`.
    pub fn explicit(weights: DenseMatrix) -> Result<Self> {
        if weights.as_slice().iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::invalid("pi", "weights must lie in [0, 1]"));
        }
        let total: f64 = weights.as_slice().iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("pi", format!("weights sum to {total}, not 1")));
        }
        Ok(SamplingDistribution::Explicit(weights))
    }

    /// Probability mass of cell `(i, j)` in a `d1 x d2` matrix.
    pub fn weight(&self, d1: usize, d2: usize, i: usize, j: usize) -> f64 {
        match self {
            SamplingDistribution::Uniform => 1.0 / (d1 * d2) as f64,
            SamplingDistribution::Explicit(w) => w.get(i, j),
        }
    }

    pub fn is_uniform(&self) -> bool {
        matches!(self, SamplingDistribution::Uniform)
    }

    pub(crate) fn check_shape(&self, d1: usize, d2: usize) -> Result<()> {
        match self {
            SamplingDistribution::Explicit(w) if w.shape() != (d1, d2) => {
                Err(Error::ShapeMismatch {
                    expected: (d1, d2),
                    actual: w.shape(),
                })
            }
            _ => Ok(()),
        }
    }
}

pub fn frobenius_norm(m: &DenseMatrix) -> f64 {
    m.data.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Entry-wise `max |m_ij|`.
pub fn infinity_norm(m: &DenseMatrix) -> f64 {
    m.data.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// `sqrt(sum pi_ij m_ij^2)`.
pub fn weighted_frobenius_norm(m: &DenseMatrix, pi: &SamplingDistribution) -> Result<f64> {
    let (d1, d2) = m.shape();
    pi.check_shape(d1, d2)?;
    let total = match pi {
        SamplingDistribution::Uniform => {
            m.data.iter().map(|v| v * v).sum::<f64>() / (d1 * d2) as f64
        }
        SamplingDistribution::Explicit(w) => {
            m.data.iter().zip(&w.data).map(|(v, p)| p * v * v).sum::<f64>()
        }
    };
    Ok(total.sqrt())
}

/// `||estimate - target||_F / ||target||_F`.
pub fn relative_frobenius_error(estimate: &DenseMatrix, target: &DenseMatrix) -> Result<f64> {
    target.check_same_shape(estimate)?;
    let denom = frobenius_norm(target);
    if denom == 0.0 {
        return Err(Error::ZeroNormTarget);
    }
    let num = estimate
        .data
        .iter()
        .zip(&target.data)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(num / denom)
}

/// Largest row l2 norm, `||m||_{2,inf}`.
pub fn row_two_infinity_norm(m: &DenseMatrix) -> f64 {
    (0..m.d1)
        .map(|i| dot(m.row(i), m.row(i)))
        .fold(0.0_f64, f64::max)
        .sqrt()
}

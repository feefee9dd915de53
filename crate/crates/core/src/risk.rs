//! Entry losses and the PN / PU / NU / PUNU / PNU / TRI risks.
//!
//! Every risk kind is a point `(pn, pu, nu)` on the probability simplex. For
//! a fixed misobservation rate `rho` each observation label then maps to a
//! pair of coefficients `(c_pos, c_neg)`, and the loss of a cell is
//! `c_pos * l(x, +1) + c_neg * l(x, -1)` with `l` the negative
//! log-likelihood. Terms whose coefficient is zero are never evaluated.
//!
//! Risks are sums over cells, not averages. Totals are accumulated row by
//! row in row-major order and the row sums are added in row order.
//! Corrected losses can be negative and are not clipped.

use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, Label, Sign, TernaryObservation};
use crate::qpf::Qpf;

/// Mixture weights of the PN, PU and NU risks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskWeights {
    pub pn: f64,
    pub pu: f64,
    pub nu: f64,
}

impl RiskWeights {
    pub const PN: RiskWeights = RiskWeights { pn: 1.0, pu: 0.0, nu: 0.0 };
    pub const PU: RiskWeights = RiskWeights { pn: 0.0, pu: 1.0, nu: 0.0 };
    pub const NU: RiskWeights = RiskWeights { pn: 0.0, pu: 0.0, nu: 1.0 };

    pub fn new(pn: f64, pu: f64, nu: f64) -> Result<Self> {
        let w = RiskWeights { pn, pu, nu };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for v in [self.pn, self.pu, self.nu] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid("weights", format!("{v} is outside [0, 1]")));
            }
        }
        let sum = self.pn + self.pu + self.nu;
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("weights", format!("weights sum to {sum}, not 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EntryLossKind {
    Pn,
    Pu,
    Nu,
    /// `(1 - gamma) PU + gamma NU`, `gamma` in `[0, 1]`.
    Punu { gamma: f64 },
    /// `eta >= 0`: `(1 - eta) PN + eta PU`; `eta < 0`: `(1 + eta) PN - eta NU`.
    Pnu { eta: f64 },
    Tri(RiskWeights),
}

impl EntryLossKind {
    /// The simplex point this kind corresponds to.
    pub fn weights(&self) -> Result<RiskWeights> {
        match *self {
            EntryLossKind::Pn => Ok(RiskWeights::PN),
            EntryLossKind::Pu => Ok(RiskWeights::PU),
            EntryLossKind::Nu => Ok(RiskWeights::NU),
            EntryLossKind::Punu { gamma } => {
                if !(0.0..=1.0).contains(&gamma) {
                    return Err(Error::invalid("gamma", format!("{gamma} is outside [0, 1]")));
                }
                Ok(RiskWeights { pn: 0.0, pu: 1.0 - gamma, nu: gamma })
            }
            EntryLossKind::Pnu { eta } => {
                if !(-1.0..=1.0).contains(&eta) {
                    return Err(Error::invalid("eta", format!("{eta} is outside [-1, 1]")));
                }
                if eta >= 0.0 {
                    Ok(RiskWeights { pn: 1.0 - eta, pu: eta, nu: 0.0 })
                } else {
                    Ok(RiskWeights { pn: 1.0 + eta, pu: 0.0, nu: -eta })
                }
            }
            EntryLossKind::Tri(w) => {
                w.validate()?;
                Ok(w)
            }
        }
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::invalid("rho", format!("{rho} is outside [0, 1)")));
    }
    Ok(())
}

/// Negative log-likelihood of observing `a` at value `x`.
pub fn nll_entry_loss(q: &Qpf, x: f64, a: Sign) -> f64 {
    match a {
        Sign::Positive => -q.log_value(x),
        Sign::Negative => -q.log_complement(x),
    }
}

/// `d/dx` of [`nll_entry_loss`]: `-f'/f` for `+1`, `f'/(1 - f)` for `-1`.
pub fn nll_entry_slope(q: &Qpf, x: f64, a: Sign) -> f64 {
    match a {
        Sign::Positive => -q.log_value_slope(x),
        Sign::Negative => q.log_value_slope(-x),
    }
}

/// Unbiased PU loss; observed negatives are treated as unobserved.
pub fn pu_entry_loss(q: &Qpf, rho: f64, x: f64, a: Label) -> f64 {
    let lp = nll_entry_loss(q, x, Sign::Positive);
    let ln = nll_entry_loss(q, x, Sign::Negative);
    match a {
        Label::Positive => (lp - rho * ln) / (1.0 - rho),
        Label::Unobserved | Label::Negative => ln,
    }
}

/// Unbiased NU loss; observed positives are treated as unobserved.
pub fn nu_entry_loss(q: &Qpf, rho: f64, x: f64, a: Label) -> f64 {
    let lp = nll_entry_loss(q, x, Sign::Positive);
    let ln = nll_entry_loss(q, x, Sign::Negative);
    match a {
        Label::Negative => (ln - rho * lp) / (1.0 - rho),
        Label::Unobserved | Label::Positive => lp,
    }
}

/// `(1 - gamma) * PU + gamma * NU`, evaluated through its expanded
/// three-case coefficients.
pub fn punu_entry_loss(q: &Qpf, rho: f64, gamma: f64, x: f64, a: Label) -> f64 {
    let lp = nll_entry_loss(q, x, Sign::Positive);
    let ln = nll_entry_loss(q, x, Sign::Negative);
    let odds = rho / (1.0 - rho);
    match a {
        Label::Positive => (1.0 - gamma * rho) / (1.0 - rho) * lp - (1.0 - gamma) * odds * ln,
        Label::Unobserved => gamma * lp + (1.0 - gamma) * ln,
        Label::Negative => -gamma * odds * lp + (1.0 - (1.0 - gamma) * rho) / (1.0 - rho) * ln,
    }
}

/// Coefficients `(c_pos, c_neg)` for each observation label.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Coefficients {
    positive: (f64, f64),
    unobserved: (f64, f64),
    negative: (f64, f64),
}

impl Coefficients {
    fn new(w: RiskWeights, rho: f64) -> Self {
        let inv = 1.0 / (1.0 - rho);
        let odds = rho * inv;
        Coefficients {
            positive: (w.pn + w.pu * inv + w.nu, -(w.pu * odds)),
            unobserved: (w.nu, w.pu),
            negative: (-(w.nu * odds), w.pn + w.pu + w.nu * inv),
        }
    }

    #[inline]
    fn of(&self, a: Label) -> (f64, f64) {
        match a {
            Label::Positive => self.positive,
            Label::Unobserved => self.unobserved,
            Label::Negative => self.negative,
        }
    }
}

/// A risk of a fixed kind, QPF and misobservation rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Risk {
    qpf: Qpf,
    rho: f64,
    weights: RiskWeights,
    coefficients: Coefficients,
}

impl Risk {
    pub fn new(kind: EntryLossKind, qpf: Qpf, rho: f64) -> Result<Self> {
        qpf.validate()?;
        check_rho(rho)?;
        let weights = kind.weights()?;
        Ok(Risk {
            qpf,
            rho,
            weights,
            coefficients: Coefficients::new(weights, rho),
        })
    }

    pub fn weights(&self) -> RiskWeights {
        self.weights
    }

    pub fn qpf(&self) -> &Qpf {
        &self.qpf
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Loss contributed by one cell.
    #[inline]
    pub fn entry_loss(&self, x: f64, a: Label) -> f64 {
        let (cp, cn) = self.coefficients.of(a);
        let mut loss = 0.0;
        if cp != 0.0 {
            loss += cp * nll_entry_loss(&self.qpf, x, Sign::Positive);
        }
        if cn != 0.0 {
            loss += cn * nll_entry_loss(&self.qpf, x, Sign::Negative);
        }
        loss
    }

    /// `d/dx` of [`Risk::entry_loss`].
    #[inline]
    pub fn entry_slope(&self, x: f64, a: Label) -> f64 {
        let (cp, cn) = self.coefficients.of(a);
        let mut slope = 0.0;
        if cp != 0.0 {
            slope += cp * nll_entry_slope(&self.qpf, x, Sign::Positive);
        }
        if cn != 0.0 {
            slope += cn * nll_entry_slope(&self.qpf, x, Sign::Negative);
        }
        slope
    }

    fn check(x: &DenseMatrix, labels: &[Label]) {
        assert_eq!(x.as_slice().len(), labels.len(), "labels must cover every cell");
    }

    /// Total risk of `x` against dense row-major labels.
    pub fn total(&self, x: &DenseMatrix, labels: &[Label]) -> f64 {
        Self::check(x, labels);
        let d2 = x.cols();
        (0..x.rows())
            .map(|i| {
                let cells = i * d2..(i + 1) * d2;
                x.row(i)
                    .iter()
                    .zip(&labels[cells])
                    .map(|(&v, &a)| self.entry_loss(v, a))
                    .sum::<f64>()
            })
            .fold(0.0, |acc, row| acc + row)
    }

    /// Total risk, writing the entry-wise gradient into `grad`.
    pub fn total_and_gradient(&self, x: &DenseMatrix, labels: &[Label], grad: &mut [f64]) -> f64 {
        Self::check(x, labels);
        assert_eq!(grad.len(), labels.len());
        let d2 = x.cols();
        let mut total = 0.0;
        for i in 0..x.rows() {
            let cells = i * d2..(i + 1) * d2;
            let mut row_sum = 0.0;
            for ((&v, &a), g) in x.row(i).iter().zip(&labels[cells.clone()]).zip(&mut grad[cells]) {
                row_sum += self.entry_loss(v, a);
                *g = self.entry_slope(v, a);
            }
            total += row_sum;
        }
        total
    }
}

fn labels_for(x: &DenseMatrix, a: &TernaryObservation) -> Result<Vec<Label>> {
    if x.shape() != a.shape() {
        return Err(Error::ShapeMismatch {
            expected: x.shape(),
            actual: a.shape(),
        });
    }
    Ok(a.labels())
}

/// Total risk of estimate `x` under observation `a`.
pub fn risk_total(
    kind: EntryLossKind,
    q: &Qpf,
    rho: f64,
    x: &DenseMatrix,
    a: &TernaryObservation,
) -> Result<f64> {
    let risk = Risk::new(kind, *q, rho)?;
    let labels = labels_for(x, a)?;
    Ok(risk.total(x, &labels))
}

/// Entry-wise gradient of [`risk_total`] with respect to `x`.
pub fn risk_gradient(
    kind: EntryLossKind,
    q: &Qpf,
    rho: f64,
    x: &DenseMatrix,
    a: &TernaryObservation,
) -> Result<DenseMatrix> {
    let risk = Risk::new(kind, *q, rho)?;
    let labels = labels_for(x, a)?;
    let mut grad = vec![0.0; labels.len()];
    risk.total_and_gradient(x, &labels, &mut grad);
    Ok(DenseMatrix::from_vec_unchecked(x.rows(), x.cols(), grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    const LABELS: [Label; 3] = [Label::Negative, Label::Unobserved, Label::Positive];

    fn probit() -> Qpf {
        Qpf::probit(0.5).unwrap()
    }

    #[test]
    fn nll_examples() {
        let q = Qpf::Logistic;
        assert!((nll_entry_loss(&q, 0.0, Sign::Positive) - LN_2).abs() < 1e-15);
        assert!((nll_entry_loss(&q, 0.0, Sign::Negative) - LN_2).abs() < 1e-15);
        assert!((nll_entry_loss(&q, 2.0, Sign::Positive) - 0.126_928_011_042_972_5).abs() < 1e-15);
    }

    #[test]
    fn pu_examples() {
        let q = Qpf::Logistic;
        for &x in &[-1.3, 0.0, 0.7] {
            assert_eq!(
                pu_entry_loss(&q, 0.0, x, Label::Positive),
                nll_entry_loss(&q, x, Sign::Positive)
            );
            assert_eq!(
                pu_entry_loss(&q, 0.4, x, Label::Negative),
                pu_entry_loss(&q, 0.4, x, Label::Unobserved)
            );
        }
        assert!((pu_entry_loss(&q, 0.5, 0.0, Label::Positive) - LN_2).abs() < 1e-15);
    }

    #[test]
    fn nu_examples() {
        let q = Qpf::Logistic;
        for &x in &[-2.0, -0.1, 0.0, 1.5] {
            for a in LABELS {
                let lhs = nu_entry_loss(&q, 0.3, x, a);
                let rhs = pu_entry_loss(&q, 0.3, -x, a.flip());
                assert!((lhs - rhs).abs() < 1e-14);
            }
            assert_eq!(
                nu_entry_loss(&q, 0.0, x, Label::Negative),
                nll_entry_loss(&q, x, Sign::Negative)
            );
        }
        // (ln(1+e) - 0.85 ln(1+e^-1)) / 0.15, evaluated at 30 digits
        let v = nu_entry_loss(&q, 0.85, 1.0, Label::Negative);
        assert!((v - 6.979_928_354_184_889_5).abs() < 1e-12);
    }

    #[test]
    fn punu_endpoints_and_middle_case() {
        let q = probit();
        for &x in &[-0.8, 0.2, 1.1] {
            for a in LABELS {
                let p0 = punu_entry_loss(&q, 0.6, 0.0, x, a);
                let p1 = punu_entry_loss(&q, 0.6, 1.0, x, a);
                assert!((p0 - pu_entry_loss(&q, 0.6, x, a)).abs() < 1e-12);
                assert!((p1 - nu_entry_loss(&q, 0.6, x, a)).abs() < 1e-12);
            }
            let g = 0.3;
            let mid = punu_entry_loss(&q, 0.6, g, x, Label::Unobserved);
            let expected = g * nll_entry_loss(&q, x, Sign::Positive)
                + (1.0 - g) * nll_entry_loss(&q, x, Sign::Negative);
            assert!((mid - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn coefficient_route_matches_entry_losses() {
        let q = Qpf::scaled_logistic(3.0).unwrap();
        let rho = 0.7;
        for &x in &[-1.0, 0.25, 0.9] {
            for a in LABELS {
                let pu = Risk::new(EntryLossKind::Pu, q, rho).unwrap();
                let nu = Risk::new(EntryLossKind::Nu, q, rho).unwrap();
                assert!((pu.entry_loss(x, a) - pu_entry_loss(&q, rho, x, a)).abs() < 1e-12);
                assert!((nu.entry_loss(x, a) - nu_entry_loss(&q, rho, x, a)).abs() < 1e-12);
                let punu = Risk::new(EntryLossKind::Punu { gamma: 0.35 }, q, rho).unwrap();
                let direct = punu_entry_loss(&q, rho, 0.35, x, a);
                assert!((punu.entry_loss(x, a) - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pnu_maps_onto_simplex() {
        assert_eq!(EntryLossKind::Pnu { eta: 0.0 }.weights().unwrap(), RiskWeights::PN);
        assert_eq!(EntryLossKind::Pnu { eta: 1.0 }.weights().unwrap(), RiskWeights::PU);
        assert_eq!(EntryLossKind::Pnu { eta: -1.0 }.weights().unwrap(), RiskWeights::NU);
        assert_eq!(
            EntryLossKind::Pnu { eta: -0.25 }.weights().unwrap(),
            RiskWeights { pn: 0.75, pu: 0.0, nu: 0.25 }
        );
        assert!(EntryLossKind::Pnu { eta: 1.5 }.weights().is_err());
        assert!(EntryLossKind::Punu { gamma: -0.1 }.weights().is_err());
        assert!(RiskWeights::new(0.5, 0.5, 0.1).is_err());
    }

    #[test]
    fn pn_gradient_vanishes_on_unobserved_cells() {
        let q = Qpf::Logistic;
        let x = DenseMatrix::from_fn(3, 4, |i, j| 0.3 * i as f64 - 0.2 * j as f64);
        let a = TernaryObservation::new(3, 4, vec![(0, 1, Sign::Positive), (2, 3, Sign::Negative)])
            .unwrap();
        let g = risk_gradient(EntryLossKind::Pn, &q, 0.5, &x, &a).unwrap();
        for i in 0..3 {
            for j in 0..4 {
                if (i, j) != (0, 1) && (i, j) != (2, 3) {
                    assert_eq!(g.get(i, j), 0.0);
                }
            }
        }
        // logistic: d/dx -ln f(x) = f(x) - 1
        let x01 = x.get(0, 1);
        assert!((g.get(0, 1) - (q.value(x01) - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn fully_observed_pu_equals_pn() {
        let q = probit();
        let x = DenseMatrix::from_fn(4, 5, |i, j| ((i * 5 + j) as f64 * 0.37).sin());
        let entries = (0..20)
            .map(|c| (c / 5, c % 5, if c % 3 == 0 { Sign::Negative } else { Sign::Positive }))
            .collect();
        let a = TernaryObservation::new(4, 5, entries).unwrap();
        let pn = risk_total(EntryLossKind::Pn, &q, 0.0, &x, &a).unwrap();
        let pu = risk_total(EntryLossKind::Pu, &q, 0.0, &x, &a).unwrap();
        let nu = risk_total(EntryLossKind::Nu, &q, 0.0, &x, &a).unwrap();
        assert!((pu - pn).abs() < 1e-12 * pn.abs());
        assert!((nu - pn).abs() < 1e-12 * pn.abs());
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let x = DenseMatrix::zeros(2, 2);
        let a = TernaryObservation::empty(2, 3).unwrap();
        assert!(matches!(
            risk_total(EntryLossKind::Pn, &Qpf::Logistic, 0.1, &x, &a),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(risk_gradient(EntryLossKind::Pu, &Qpf::Logistic, 0.1, &x, &a).is_err());
    }

    #[test]
    fn rejects_rho_one() {
        assert!(Risk::new(EntryLossKind::Pu, Qpf::Logistic, 1.0).is_err());
    }
}

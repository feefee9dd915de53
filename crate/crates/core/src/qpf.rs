//! Quantization probability functions (QPFs).
//!
//! A QPF `f` gives `P(Y_ij = +1) = f(M_ij)`. Every kind here is the CDF of a
//! symmetric noise distribution, so `1 - f(x) = f(-x)` and all complement
//! quantities are evaluated through the negated argument.
//!
//! Log-probabilities never go through `ln(f)` of a rounded probability:
//! logistic kinds use a softplus formulation, and the probit kind evaluates
//! `ln Phi` from `erfc` down to `t = -30` and from an asymptotic tail series
//! below that. `erfc` is the FreeBSD msun port from `libm`, accurate to about
//! one ulp, well inside `1e-12` absolute for `Phi`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const PROBIT_TAIL_CUTOFF: f64 = -30.0;
/// Largest double below one.
const ONE_MINUS_ULP: f64 = 1.0 - f64::EPSILON / 2.0;

const GRID_POINTS: usize = 2001;
const GOLDEN_ITERS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Qpf {
    /// `Phi(x / sigma)`: Gaussian noise with standard deviation `sigma`.
    Probit { sigma: f64 },
    /// `1 / (1 + exp(-x))`.
    Logistic,
    /// `1 / (1 + exp(-slope * x))`.
    ScaledLogistic { slope: f64 },
}

impl Qpf {
    pub fn probit(sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::invalid("sigma", format!("{sigma} is not positive")));
        }
        Ok(Qpf::Probit { sigma })
    }

    pub fn scaled_logistic(slope: f64) -> Result<Self> {
        if !(slope.is_finite() && slope > 0.0) {
            return Err(Error::invalid("slope", format!("{slope} is not positive")));
        }
        Ok(Qpf::ScaledLogistic { slope })
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Qpf::Probit { sigma } => Qpf::probit(sigma).map(|_| ()),
            Qpf::ScaledLogistic { slope } => Qpf::scaled_logistic(slope).map(|_| ()),
            Qpf::Logistic => Ok(()),
        }
    }

    fn logistic_slope(&self) -> Option<f64> {
        match *self {
            Qpf::Logistic => Some(1.0),
            Qpf::ScaledLogistic { slope } => Some(slope),
            Qpf::Probit { .. } => None,
        }
    }

    /// `f(x)`, kept inside `[f64::MIN_POSITIVE, 1 - 2^-53]`.
    pub fn value(&self, x: f64) -> f64 {
        let p = match *self {
            Qpf::Probit { sigma } => normal_cdf(x / sigma),
            _ => sigmoid(self.logistic_slope().unwrap() * x),
        };
        p.clamp(f64::MIN_POSITIVE, ONE_MINUS_ULP)
    }

    /// `f'(x)`.
    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            Qpf::Probit { sigma } => normal_pdf(x / sigma) / sigma,
            _ => {
                let s = self.logistic_slope().unwrap();
                s * (self.value(x) * self.value(-x))
            }
        }
    }

    /// `ln f(x)`.
    pub fn log_value(&self, x: f64) -> f64 {
        match *self {
            Qpf::Probit { sigma } => log_normal_cdf(x / sigma),
            _ => -softplus(-self.logistic_slope().unwrap() * x),
        }
    }

    /// `ln(1 - f(x))`.
    pub fn log_complement(&self, x: f64) -> f64 {
        self.log_value(-x)
    }

    /// `d/dx ln f(x) = f'(x) / f(x)`.
    pub fn log_value_slope(&self, x: f64) -> f64 {
        match *self {
            Qpf::Probit { sigma } => mills_ratio(x / sigma) / sigma,
            _ => {
                let s = self.logistic_slope().unwrap();
                s * sigmoid(-s * x)
            }
        }
    }

    /// `sup_{|x| <= alpha} |f'(x)| / (f(x)(1 - f(x)))`.
    pub fn l_alpha(&self, alpha: f64) -> Result<f64> {
        sup_on_interval(alpha, |x| {
            self.derivative(x).abs() / (self.value(x) * self.value(-x))
        })
    }

    /// `sup_{|x| <= alpha} f(x)(1 - f(x)) / f'(x)^2`.
    pub fn beta_alpha(&self, alpha: f64) -> Result<f64> {
        sup_on_interval(alpha, |x| {
            let d = self.derivative(x);
            self.value(x) * self.value(-x) / (d * d)
        })
    }

    /// `sup_{|x| <= alpha} ln(1 / (f(x)(1 - f(x))))`.
    pub fn u_alpha(&self, alpha: f64) -> Result<f64> {
        sup_on_interval(alpha, |x| -(self.log_value(x) + self.log_value(-x)))
    }
}

impl fmt::Display for Qpf {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Qpf::Probit { sigma } => write!(f, "probit:{sigma}"),
            Qpf::Logistic => write!(f, "logistic"),
            Qpf::ScaledLogistic { slope } => write!(f, "logistic:{slope}"),
        }
    }
}

/// Parses `probit:SIGMA`, `logistic` or `logistic:S`.
impl FromStr for Qpf {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, param) = match s.split_once(':') {
            Some((n, p)) => (n.trim(), Some(p.trim())),
            None => (s.trim(), None),
        };
        let number = |p: &str| {
            p.parse::<f64>()
                .map_err(|_| Error::invalid("qpf", format!("`{p}` is not a number")))
        };
        match (name, param) {
            ("probit", Some(p)) => Qpf::probit(number(p)?),
            ("probit", None) => Err(Error::invalid("qpf", "probit requires an explicit sigma")),
            ("logistic", None) => Ok(Qpf::Logistic),
            ("logistic", Some(p)) => Qpf::scaled_logistic(number(p)?),
            _ => Err(Error::invalid("qpf", format!("unknown QPF `{s}`"))),
        }
    }
}

/// Dense grid on `[-alpha, alpha]` followed by golden-section refinement
/// around the grid argmax.
fn sup_on_interval(alpha: f64, g: impl Fn(f64) -> f64) -> Result<f64> {
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::invalid("alpha", format!("{alpha} is not a nonnegative number")));
    }
    if alpha == 0.0 {
        return Ok(g(0.0));
    }
    let step = 2.0 * alpha / (GRID_POINTS - 1) as f64;
    let point = |i: usize| {
        if i == GRID_POINTS - 1 {
            alpha
        } else {
            -alpha + step * i as f64
        }
    };
    let (mut best_i, mut best) = (0, f64::NEG_INFINITY);
    for i in 0..GRID_POINTS {
        let v = g(point(i));
        if v > best {
            best = v;
            best_i = i;
        }
    }

    let mut lo = point(best_i.saturating_sub(1));
    let mut hi = point((best_i + 1).min(GRID_POINTS - 1));
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - ratio * (hi - lo);
    let mut b = lo + ratio * (hi - lo);
    let (mut ga, mut gb) = (g(a), g(b));
    for _ in 0..GOLDEN_ITERS {
        if ga > gb {
            hi = b;
            b = a;
            gb = ga;
            a = hi - ratio * (hi - lo);
            ga = g(a);
        } else {
            lo = a;
            a = b;
            ga = gb;
            b = lo + ratio * (hi - lo);
            gb = g(b);
        }
    }
    Ok(best.max(ga).max(gb))
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^t)`.
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn normal_pdf(t: f64) -> f64 {
    (-0.5 * t * t - LN_SQRT_2PI).exp()
}

fn normal_cdf(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 - 0.5 * libm::erfc(t * FRAC_1_SQRT_2)
    } else {
        0.5 * libm::erfc(-t * FRAC_1_SQRT_2)
    }
}

/// `ln Phi(t)`.
fn log_normal_cdf(t: f64) -> f64 {
    if t >= 0.0 {
        (-0.5 * libm::erfc(t * FRAC_1_SQRT_2)).ln_1p()
    } else if t >= PROBIT_TAIL_CUTOFF {
        (0.5 * libm::erfc(-t * FRAC_1_SQRT_2)).ln()
    } else {
        // Phi(t) = phi(t) / |t| * (1 - 1/t^2 + 3/t^4 - 15/t^6 + ...)
        -0.5 * t * t - LN_SQRT_2PI - (-t).ln() + tail_series(t).ln()
    }
}

fn tail_series(t: f64) -> f64 {
    let inv = 1.0 / (t * t);
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..=8 {
        term *= -((2 * k - 1) as f64) * inv;
        sum += term;
    }
    sum
}

/// `phi(t) / Phi(t)`.
fn mills_ratio(t: f64) -> f64 {
    if t >= PROBIT_TAIL_CUTOFF {
        (-0.5 * t * t - LN_SQRT_2PI - log_normal_cdf(t)).exp()
    } else {
        -t / tail_series(t)
    }
}

/// Closed-form constants used as cross-checks.
pub mod closed_form {
    use super::PI;

    /// Logistic `beta_alpha = (1 + e^alpha)^2 / e^alpha`.
    pub fn logistic_beta(alpha: f64) -> f64 {
        let e = alpha.exp();
        (1.0 + e) * (1.0 + e) / e
    }

    /// Upper bound on probit `L_alpha`: `4/sigma (alpha/sigma + 1)`.
    pub fn probit_l_bound(alpha: f64, sigma: f64) -> f64 {
        4.0 / sigma * (alpha / sigma + 1.0)
    }

    /// Upper bound on probit `beta_alpha`: `pi sigma^2 exp(alpha^2 / 2 sigma^2)`.
    pub fn probit_beta_bound(alpha: f64, sigma: f64) -> f64 {
        PI * sigma * sigma * (alpha * alpha / (2.0 * sigma * sigma)).exp()
    }

    /// Upper bound on probit `U_alpha`: `(alpha/sigma + 1)^2`.
    pub fn probit_u_bound(alpha: f64, sigma: f64) -> f64 {
        (alpha / sigma + 1.0).powi(2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    fn kinds() -> Vec<Qpf> {
        vec![
            Qpf::Logistic,
            Qpf::scaled_logistic(7.0).unwrap(),
            Qpf::probit(1.0).unwrap(),
            Qpf::probit(0.1).unwrap(),
        ]
    }

    #[test]
    fn value_examples() {
        assert_eq!(Qpf::Logistic.value(0.0), 0.5);
        assert_eq!(Qpf::probit(1.0).unwrap().value(0.0), 0.5);
        // oracle: 1/(1+exp(-1.4)) evaluated in extended precision
        let v = Qpf::scaled_logistic(7.0).unwrap().value(0.2);
        assert!((v - 0.802_183_888_558_581_7).abs() < 1e-15);
    }

    #[test]
    fn derivative_examples() {
        assert_eq!(Qpf::Logistic.derivative(0.0), 0.25);
        let d = Qpf::probit(1.0).unwrap().derivative(0.0);
        assert!((d - 0.398_942_280_401_432_7).abs() < 1e-15);
    }

    #[test]
    fn derivative_matches_central_difference() {
        let h = 1e-5;
        for q in kinds() {
            for i in 0..=40 {
                let x = -2.0 + 0.1 * i as f64;
                // difference on the lower branch, where values are not near 1
                let y = -x.abs();
                let fd = (q.value(y + h) - q.value(y - h)) / (2.0 * h);
                let d = q.derivative(x);
                if d > 1e-8 {
                    assert!(rel(fd, d) < 1e-6, "{q} at {x}: {fd} vs {d}");
                }
            }
        }
    }

    #[test]
    fn log_value_agrees_with_value_in_bulk() {
        for q in kinds() {
            for i in 0..=20 {
                let x = -1.0 + 0.1 * i as f64;
                let direct = if x <= 0.0 { q.value(x).ln() } else { (-q.value(-x)).ln_1p() };
                assert!(rel(q.log_value(x), direct) < 1e-12, "{q} at {x}");
            }
        }
    }

    #[test]
    fn logs_stay_finite_in_far_tails() {
        for q in kinds() {
            for &x in &[-700.0, -50.0, 50.0, 700.0] {
                assert!(q.log_value(x).is_finite(), "{q} {x}");
                assert!(q.log_value_slope(x).is_finite(), "{q} {x}");
            }
        }
        // asymptotics: ln Phi(t) ~ -t^2/2 - ln(-t) - ln sqrt(2 pi)
        let q = Qpf::probit(1.0).unwrap();
        let t = -100.0_f64;
        let approx = -0.5 * t * t - (-t).ln() - LN_SQRT_2PI;
        assert!((q.log_value(t) - approx).abs() < 1e-3);
        // the tail branch joins the erfc branch continuously
        let a = log_normal_cdf(PROBIT_TAIL_CUTOFF + 1e-9);
        let b = log_normal_cdf(PROBIT_TAIL_CUTOFF - 1e-9);
        assert!((a - b).abs() < 1e-6);
        assert!(rel(mills_ratio(-30.0 + 1e-9), mills_ratio(-30.0 - 1e-9)) < 1e-8);
    }

    #[test]
    fn log_slope_matches_finite_difference_of_log() {
        let h = 1e-6;
        for q in kinds() {
            for i in 0..=10 {
                let x = -1.0 + 0.2 * i as f64;
                let fd = (q.log_value(x + h) - q.log_value(x - h)) / (2.0 * h);
                assert!(rel(fd, q.log_value_slope(x)) < 1e-6, "{q} {x}");
            }
        }
    }

    #[test]
    fn logistic_constants_closed_form() {
        for &alpha in &[0.1, 0.5, 1.0, 2.0, 3.0] {
            assert_eq!(Qpf::Logistic.l_alpha(alpha).unwrap(), 1.0);
            let b = Qpf::Logistic.beta_alpha(alpha).unwrap();
            assert!(rel(b, closed_form::logistic_beta(alpha)) < 1e-9);
        }
        assert!((Qpf::Logistic.beta_alpha(1.0).unwrap() - 5.086_161_269_630_487).abs() < 1e-9);
        assert_eq!(Qpf::Logistic.beta_alpha(0.0).unwrap(), 4.0);
    }

    #[test]
    fn scaled_logistic_l_alpha_equals_slope() {
        let l = Qpf::scaled_logistic(7.0).unwrap().l_alpha(1.0).unwrap();
        assert!(rel(l, 7.0) < 1e-12);
    }

    #[test]
    fn u_alpha_examples() {
        assert!((Qpf::Logistic.u_alpha(0.0).unwrap() - 4f64.ln()).abs() < 1e-15);
        let u = Qpf::Logistic.u_alpha(1.0).unwrap();
        assert!((u - 1.626_523_375_036_445_7).abs() < 1e-12);
        let u = Qpf::probit(1.0).unwrap().u_alpha(1.0).unwrap();
        assert!(u <= 4.0);
    }

    #[test]
    fn probit_constants_respect_bounds() {
        let q = Qpf::probit(1.0).unwrap();
        assert!(q.l_alpha(1.0).unwrap() <= 8.0);
        assert!(q.beta_alpha(1.0).unwrap() <= PI * 0.5f64.exp());
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(Qpf::probit(0.0).is_err());
        assert!(Qpf::scaled_logistic(-1.0).is_err());
        assert!(Qpf::Logistic.l_alpha(-1.0).is_err());
    }

    #[test]
    fn parses_cli_syntax() {
        assert_eq!("logistic".parse::<Qpf>().unwrap(), Qpf::Logistic);
        assert_eq!(
            "logistic:7".parse::<Qpf>().unwrap(),
            Qpf::ScaledLogistic { slope: 7.0 }
        );
        assert_eq!("probit:0.1".parse::<Qpf>().unwrap(), Qpf::Probit { sigma: 0.1 });
        assert!("probit".parse::<Qpf>().is_err());
        assert!("cauchy".parse::<Qpf>().is_err());
        assert!("probit:-2".parse::<Qpf>().is_err());
        for q in kinds() {
            assert_eq!(q.to_string().parse::<Qpf>().unwrap(), q);
        }
    }
}

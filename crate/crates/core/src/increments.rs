//! Laws of the step/perturbation pair `(xi, eta)`.
//!
//! Both coordinates are drawn from a closed catalog of one-dimensional
//! families ([`MarginalSpec`]). Every family has an exact quantile function,
//! exact tail, closed-form moments and a closed-form expected shortfall
//! `E[(x - X)^+]`, which is what the horizon certificate and the centering
//! integral are built on.

use alloc::format;
use alloc::string::String;

use crate::error::{ModelError, QuadratureError};
use crate::rng::UniformSource;
use crate::special::{self, normal_cdf, normal_pdf, normal_quantile, normal_sf};

const QUAD_TOL: f64 = 1e-10;

/// One-dimensional law from the supported catalog.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)
)]
pub enum MarginalSpec {
    Constant { value: f64 },
    Exponential { rate: f64 },
    Gaussian { mean: f64, sd: f64 },
    /// `P{X > x} = (scale / (x - shift))^alpha` for `x >= shift + scale`.
    ShiftedPareto { alpha: f64, scale: f64, shift: f64 },
    /// `v1` with probability `p1`, otherwise `v2`.
    TwoPoint { v1: f64, p1: f64, v2: f64 },
    Uniform { lo: f64, hi: f64 },
}

/// A moment that may be infinite.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum Moment {
    Finite(f64),
    Infinite,
}

impl Moment {
    pub fn finite(self) -> Option<f64> {
        match self {
            Moment::Finite(v) => Some(v),
            Moment::Infinite => None,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Moment::Finite(_))
    }
}

fn invalid(family: &'static str, reason: &str) -> ModelError {
    ModelError::InvalidParameter { family, reason: String::from(reason) }
}

impl MarginalSpec {
    pub fn family_name(&self) -> &'static str {
        match self {
            MarginalSpec::Constant { .. } => "constant",
            MarginalSpec::Exponential { .. } => "exponential",
            MarginalSpec::Gaussian { .. } => "gaussian",
            MarginalSpec::ShiftedPareto { .. } => "shifted_pareto",
            MarginalSpec::TwoPoint { .. } => "two_point",
            MarginalSpec::Uniform { .. } => "uniform",
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let name = self.family_name();
        let all_finite = |xs: &[f64]| xs.iter().all(|x| x.is_finite());
        match *self {
            MarginalSpec::Constant { value } => {
                if !value.is_finite() {
                    return Err(invalid(name, "value must be finite"));
                }
            }
            MarginalSpec::Exponential { rate } => {
                if !(rate.is_finite() && rate > 0.0) {
                    return Err(invalid(name, "rate must be positive"));
                }
            }
            MarginalSpec::Gaussian { mean, sd } => {
                if !all_finite(&[mean, sd]) || sd <= 0.0 {
                    return Err(invalid(name, "mean must be finite and sd positive"));
                }
            }
            MarginalSpec::ShiftedPareto { alpha, scale, shift } => {
                if !all_finite(&[alpha, scale, shift]) || alpha <= 0.0 || scale <= 0.0 {
                    return Err(invalid(name, "alpha and scale must be positive, shift finite"));
                }
            }
            MarginalSpec::TwoPoint { v1, p1, v2 } => {
                if !all_finite(&[v1, v2]) || !(0.0..=1.0).contains(&p1) {
                    return Err(invalid(name, "values must be finite and p1 in [0, 1]"));
                }
            }
            MarginalSpec::Uniform { lo, hi } => {
                if !all_finite(&[lo, hi]) || lo >= hi {
                    return Err(invalid(name, "need finite lo < hi"));
                }
            }
        }
        Ok(())
    }

    /// `(low value, its probability, high value)` for the two-point family.
    fn two_point_sorted(v1: f64, p1: f64, v2: f64) -> (f64, f64, f64) {
        if v1 <= v2 {
            (v1, p1, v2)
        } else {
            (v2, 1.0 - p1, v1)
        }
    }

    /// Generalized inverse CDF `inf{x : F(x) >= p}` for `p` in (0, 1).
    #[inline]
    pub fn quantile(&self, p: f64) -> f64 {
        match *self {
            MarginalSpec::Constant { value } => value,
            MarginalSpec::Exponential { rate } => -libm::log1p(-p) / rate,
            MarginalSpec::Gaussian { mean, sd } => mean + sd * normal_quantile(p),
            MarginalSpec::ShiftedPareto { alpha, scale, shift } => {
                let q = 1.0 - p;
                let v = if alpha == 1.0 {
                    1.0 / q
                } else if alpha == 0.5 {
                    1.0 / (q * q)
                } else {
                    libm::pow(q, -1.0 / alpha)
                };
                shift + scale * v
            }
            MarginalSpec::TwoPoint { v1, p1, v2 } => {
                let (lo, plo, hi) = Self::two_point_sorted(v1, p1, v2);
                if p <= plo {
                    lo
                } else {
                    hi
                }
            }
            MarginalSpec::Uniform { lo, hi } => lo + p * (hi - lo),
        }
    }

    /// One uniform in, one variate out.
    #[inline]
    pub fn sample<R: UniformSource + ?Sized>(&self, src: &mut R) -> f64 {
        self.quantile(src.uniform())
    }

    /// `P{X > x}`, computed directly rather than as `1 - cdf`.
    pub fn tail(&self, x: f64) -> f64 {
        match *self {
            MarginalSpec::Constant { value } => {
                if value > x {
                    1.0
                } else {
                    0.0
                }
            }
            MarginalSpec::Exponential { rate } => {
                if x <= 0.0 {
                    1.0
                } else {
                    libm::exp(-rate * x)
                }
            }
            MarginalSpec::Gaussian { mean, sd } => normal_sf((x - mean) / sd),
            MarginalSpec::ShiftedPareto { alpha, scale, shift } => {
                if x <= shift + scale {
                    1.0
                } else {
                    libm::pow(scale / (x - shift), alpha)
                }
            }
            MarginalSpec::TwoPoint { v1, p1, v2 } => {
                let (lo, plo, hi) = Self::two_point_sorted(v1, p1, v2);
                if x < lo {
                    1.0
                } else if x < hi {
                    1.0 - plo
                } else {
                    0.0
                }
            }
            MarginalSpec::Uniform { lo, hi } => {
                if x <= lo {
                    1.0
                } else if x >= hi {
                    0.0
                } else {
                    (hi - x) / (hi - lo)
                }
            }
        }
    }

    /// `P{X <= x}`.
    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            MarginalSpec::Exponential { rate } => {
                if x <= 0.0 {
                    0.0
                } else {
                    -libm::expm1(-rate * x)
                }
            }
            MarginalSpec::Gaussian { mean, sd } => normal_cdf((x - mean) / sd),
            MarginalSpec::ShiftedPareto { alpha, scale, shift } => {
                if x <= shift + scale {
                    0.0
                } else {
                    -libm::expm1(alpha * libm::log(scale / (x - shift)))
                }
            }
            MarginalSpec::TwoPoint { v1, p1, v2 } => {
                let (lo, plo, hi) = Self::two_point_sorted(v1, p1, v2);
                if x < lo {
                    0.0
                } else if x < hi {
                    plo
                } else {
                    1.0
                }
            }
            _ => 1.0 - self.tail(x),
        }
    }

    /// `E[X]`, or `None` when it is infinite.
    pub fn mean(&self) -> Option<f64> {
        Some(match *self {
            MarginalSpec::Constant { value } => value,
            MarginalSpec::Exponential { rate } => 1.0 / rate,
            MarginalSpec::Gaussian { mean, .. } => mean,
            MarginalSpec::ShiftedPareto { alpha, scale, shift } => {
                if alpha <= 1.0 {
                    return None;
                }
                shift + scale * alpha / (alpha - 1.0)
            }
            MarginalSpec::TwoPoint { v1, p1, v2 } => p1 * v1 + (1.0 - p1) * v2,
            MarginalSpec::Uniform { lo, hi } => 0.5 * (lo + hi),
        })
    }

    pub fn variance(&self) -> Moment {
        Moment::Finite(match *self {
            MarginalSpec::Constant { .. } => 0.0,
            MarginalSpec::Exponential { rate } => 1.0 / (rate * rate),
            MarginalSpec::Gaussian { sd, .. } => sd * sd,
            MarginalSpec::ShiftedPareto { alpha, scale, .. } => {
                if alpha <= 2.0 {
                    return Moment::Infinite;
                }
                scale * scale * alpha / ((alpha - 1.0) * (alpha - 1.0) * (alpha - 2.0))
            }
            MarginalSpec::TwoPoint { v1, p1, v2 } => p1 * (1.0 - p1) * (v1 - v2) * (v1 - v2),
            MarginalSpec::Uniform { lo, hi } => (hi - lo) * (hi - lo) / 12.0,
        })
    }

    /// Essential infimum, if finite.
    pub fn lower_bound(&self) -> Option<f64> {
        match *self {
            MarginalSpec::Constant { value } => Some(value),
            MarginalSpec::Exponential { .. } => Some(0.0),
            MarginalSpec::Gaussian { .. } => None,
            MarginalSpec::ShiftedPareto { scale, shift, .. } => Some(shift + scale),
            MarginalSpec::TwoPoint { v1, p1, v2 } => Some(if p1 == 0.0 {
                v2
            } else if p1 == 1.0 {
                v1
            } else {
                v1.min(v2)
            }),
            MarginalSpec::Uniform { lo, .. } => Some(lo),
        }
    }

    /// Essential supremum, if finite.
    pub fn upper_bound(&self) -> Option<f64> {
        match *self {
            MarginalSpec::Constant { value } => Some(value),
            MarginalSpec::Exponential { .. } | MarginalSpec::Gaussian { .. } => None,
            MarginalSpec::ShiftedPareto { .. } => None,
            MarginalSpec::TwoPoint { v1, p1, v2 } => Some(if p1 == 0.0 {
                v2
            } else if p1 == 1.0 {
                v1
            } else {
                v1.max(v2)
            }),
            MarginalSpec::Uniform { hi, .. } => Some(hi),
        }
    }

    pub fn is_degenerate(&self) -> bool {
        matches!((self.lower_bound(), self.upper_bound()), (Some(a), Some(b)) if a == b)
    }

    /// Expected shortfall `E[(x - X)^+] = integral of the CDF over (-inf, x]`.
    pub fn shortfall(&self, x: f64) -> f64 {
        match *self {
            MarginalSpec::Constant { value } => (x - value).max(0.0),
            MarginalSpec::Exponential { rate } => {
                if x <= 0.0 {
                    0.0
                } else {
                    x + libm::expm1(-rate * x) / rate
                }
            }
            MarginalSpec::Gaussian { mean, sd } => {
                let z = (x - mean) / sd;
                sd * (z * normal_cdf(z) + normal_pdf(z))
            }
            MarginalSpec::ShiftedPareto { alpha, scale, shift } => {
                let w = (x - shift) / scale;
                if w <= 1.0 {
                    return 0.0;
                }
                let lw = libm::log(w);
                let head = if alpha == 1.0 {
                    lw
                } else {
                    libm::expm1((1.0 - alpha) * lw) / (1.0 - alpha)
                };
                scale * ((w - 1.0) - head)
            }
            MarginalSpec::TwoPoint { v1, p1, v2 } => {
                p1 * (x - v1).max(0.0) + (1.0 - p1) * (x - v2).max(0.0)
            }
            MarginalSpec::Uniform { lo, hi } => {
                if x <= lo {
                    0.0
                } else if x < hi {
                    (x - lo) * (x - lo) / (2.0 * (hi - lo))
                } else {
                    x - 0.5 * (lo + hi)
                }
            }
        }
    }

    /// `E[exp(-gamma X)]` for `gamma >= 0`; may be `+inf`.
    pub fn neg_mgf(&self, gamma: f64) -> Result<f64, QuadratureError> {
        if gamma == 0.0 {
            return Ok(1.0);
        }
        Ok(match *self {
            MarginalSpec::Constant { value } => libm::exp(-gamma * value),
            MarginalSpec::Exponential { rate } => rate / (rate + gamma),
            MarginalSpec::Gaussian { mean, sd } => libm::exp(-gamma * mean + 0.5 * gamma * gamma * sd * sd),
            MarginalSpec::TwoPoint { v1, p1, v2 } => {
                p1 * libm::exp(-gamma * v1) + (1.0 - p1) * libm::exp(-gamma * v2)
            }
            MarginalSpec::Uniform { lo, hi } => {
                (libm::exp(-gamma * lo) - libm::exp(-gamma * hi)) / (gamma * (hi - lo))
            }
            MarginalSpec::ShiftedPareto { scale, shift, .. } => {
                // factor out the lower bound so the integrand stays in [0, 1]
                let base = libm::exp(-gamma * (shift + scale));
                let rest = special::integrate(
                    |u| libm::exp(-gamma * (self.quantile(u) - shift - scale)),
                    0.0,
                    1.0,
                    1e-12,
                )?;
                base * rest
            }
        })
    }

    /// Points where the CDF has a kink or a jump.
    pub fn breakpoints(&self) -> ([f64; 2], usize) {
        match *self {
            MarginalSpec::Constant { value } => ([value, 0.0], 1),
            MarginalSpec::Exponential { .. } => ([0.0, 0.0], 1),
            MarginalSpec::Gaussian { .. } => ([0.0, 0.0], 0),
            MarginalSpec::ShiftedPareto { scale, shift, .. } => ([shift + scale, 0.0], 1),
            MarginalSpec::TwoPoint { v1, v2, .. } => ([v1, v2], 2),
            MarginalSpec::Uniform { lo, hi } => ([lo, hi], 2),
        }
    }

    /// Tail class of the given side (`Plus`: `X^+`, `Minus`: `X^-`).
    pub fn tail_class(&self, side: TailSide) -> TailClass {
        match (*self, side) {
            (MarginalSpec::ShiftedPareto { alpha, scale, .. }, TailSide::Plus) => {
                if alpha > 1.0 {
                    TailClass::Integrable
                } else if alpha == 1.0 {
                    TailClass::Boundary { c: scale }
                } else {
                    TailClass::RegVar { alpha, scale }
                }
            }
            _ => TailClass::Integrable,
        }
    }
}

/// Which positive part a [`TailDescriptor`] summarizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum TailSide {
    Plus,
    Minus,
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(tag = "class", rename_all = "snake_case", deny_unknown_fields)
)]
pub enum TailClass {
    /// The positive part has a finite mean.
    Integrable,
    /// `t * P{tail > t} -> c`.
    Boundary { c: f64 },
    /// `P{tail > t} ~ (t / scale)^(-alpha)` with `alpha` in (0, 1).
    RegVar { alpha: f64, scale: f64 },
}

impl TailClass {
    fn scaled(self, k: f64) -> TailClass {
        match self {
            TailClass::Integrable => TailClass::Integrable,
            TailClass::Boundary { c } => TailClass::Boundary { c: c * k },
            TailClass::RegVar { alpha, scale } => TailClass::RegVar { alpha, scale: scale * k },
        }
    }

    /// Tail class of the sum of two independent variables: the heavier tail
    /// wins, equal indices add their constants.
    fn combine(self, other: TailClass) -> TailClass {
        use TailClass::*;
        match (self, other) {
            (Integrable, x) | (x, Integrable) => x,
            (Boundary { c: a }, Boundary { c: b }) => Boundary { c: a + b },
            (Boundary { .. }, r @ RegVar { .. }) | (r @ RegVar { .. }, Boundary { .. }) => r,
            (RegVar { alpha: a1, scale: s1 }, RegVar { alpha: a2, scale: s2 }) => {
                if a1 < a2 {
                    RegVar { alpha: a1, scale: s1 }
                } else if a2 < a1 {
                    RegVar { alpha: a2, scale: s2 }
                } else {
                    let sum = libm::pow(s1, a1) + libm::pow(s2, a1);
                    RegVar { alpha: a1, scale: libm::pow(sum, 1.0 / a1) }
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TailDescriptor {
    pub class: TailClass,
    pub side: TailSide,
}

/// Probe levels for the descriptor consistency check.
pub const TAIL_PROBES: [f64; 3] = [1e3, 1e4, 1e5];

impl TailDescriptor {
    /// Compares the asymptotic form of the class against an exact tail
    /// function at [`TAIL_PROBES`], within 10% relative error. Integrable
    /// classes are checked against `derived` (the analytic class).
    pub fn consistent_with<F: Fn(f64) -> f64>(&self, tail: F, derived: TailClass) -> bool {
        let close = |exact: f64, approx: f64| approx > 0.0 && ((exact - approx) / approx).abs() <= 0.1;
        match self.class {
            TailClass::Integrable => derived == TailClass::Integrable,
            TailClass::Boundary { c } => {
                c > 0.0 && TAIL_PROBES.iter().all(|&t| close(t * tail(t), c))
            }
            TailClass::RegVar { alpha, scale } => {
                alpha > 0.0
                    && alpha < 1.0
                    && scale > 0.0
                    && TAIL_PROBES.iter().all(|&t| close(tail(t), libm::pow(t / scale, -alpha)))
            }
        }
    }
}

/// How `eta` is produced from `xi`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)
)]
pub enum DependenceSpec {
    /// Two independent uniforms drive the two quantile functions.
    #[default]
    Independent,
    /// One uniform drives both quantile functions.
    Comonotone,
    /// `eta = slope * xi + intercept + noise`, noise independent of `xi`.
    Functional { slope: f64, intercept: f64, noise: MarginalSpec },
}

/// The law of `eta`, normalized for evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
enum EtaLaw {
    /// `offset + base`; covers plain marginals and affine maps of a
    /// constant step.
    Shifted { offset: f64, base: MarginalSpec },
    /// `slope * xi + intercept + noise` with non-degenerate `xi`.
    Affine { slope: f64, intercept: f64, noise: MarginalSpec },
}

/// Full law of `(xi, eta)` with derived moments and tail descriptors.
#[derive(Clone, Debug, PartialEq)]
pub struct JointIncrementModel {
    xi: MarginalSpec,
    dependence: DependenceSpec,
    eta_marginal: Option<MarginalSpec>,
    /// The `eta` marginal, or the noise law in functional mode.
    eta_base: MarginalSpec,
    eta: EtaLaw,
    mu: f64,
    sigma2: Moment,
    eta_plus_tail: TailDescriptor,
    eta_minus_tail: TailDescriptor,
    eta_lower_bound: Option<f64>,
}

/// Which theorem hypotheses a model satisfies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HypothesisFlags {
    pub eta_plus_integrable: bool,
    pub eta_minus_integrable: bool,
    /// `t * P{eta > t} -> 0`.
    pub weak_lln_tail: bool,
    pub sigma2_finite: bool,
    /// `E[(eta^+)^(1/2)] < infinity`.
    pub root_moment_plus: bool,
}

impl JointIncrementModel {
    pub fn independent(xi: MarginalSpec, eta: MarginalSpec) -> Result<Self, ModelError> {
        Self::from_parts(xi, Some(eta), DependenceSpec::Independent)
    }

    pub fn comonotone(xi: MarginalSpec, eta: MarginalSpec) -> Result<Self, ModelError> {
        Self::from_parts(xi, Some(eta), DependenceSpec::Comonotone)
    }

    pub fn functional(xi: MarginalSpec, slope: f64, intercept: f64, noise: MarginalSpec) -> Result<Self, ModelError> {
        Self::from_parts(xi, None, DependenceSpec::Functional { slope, intercept, noise })
    }

    /// General constructor. `eta` is required for the independent and
    /// comonotone modes and must be absent for the functional mode.
    pub fn from_parts(
        xi: MarginalSpec,
        eta: Option<MarginalSpec>,
        dependence: DependenceSpec,
    ) -> Result<Self, ModelError> {
        xi.validate()?;
        let mu = xi.mean().ok_or(ModelError::UndefinedMean)?;
        let law = match (dependence, eta) {
            (DependenceSpec::Independent | DependenceSpec::Comonotone, Some(m)) => {
                m.validate()?;
                EtaLaw::Shifted { offset: 0.0, base: m }
            }
            (DependenceSpec::Independent | DependenceSpec::Comonotone, None) => {
                return Err(invalid("eta", "a marginal law for eta is required"));
            }
            (DependenceSpec::Functional { .. }, Some(_)) => {
                return Err(invalid("eta", "functional dependence takes its noise law from the dependence block"));
            }
            (DependenceSpec::Functional { slope, intercept, noise }, None) => {
                noise.validate()?;
                if !(slope.is_finite() && intercept.is_finite()) {
                    return Err(invalid("functional", "slope and intercept must be finite"));
                }
                if slope == 0.0 || xi.is_degenerate() {
                    let xv = if slope == 0.0 { 0.0 } else { xi.quantile(0.5) };
                    EtaLaw::Shifted { offset: slope * xv + intercept, base: noise }
                } else {
                    EtaLaw::Affine { slope, intercept, noise }
                }
            }
        };
        let (plus, minus) = law.tail_classes(&xi);
        Ok(JointIncrementModel {
            xi,
            dependence,
            eta_marginal: eta,
            eta_base: match (dependence, eta) {
                (DependenceSpec::Functional { noise, .. }, _) => noise,
                (_, Some(m)) => m,
                _ => unreachable!("validated above"),
            },
            eta: law,
            mu,
            sigma2: xi.variance(),
            eta_plus_tail: TailDescriptor { class: plus, side: TailSide::Plus },
            eta_minus_tail: TailDescriptor { class: minus, side: TailSide::Minus },
            eta_lower_bound: law.lower_bound(&xi),
        })
    }

    /// Checks user-declared tail descriptors against the analytic ones.
    pub fn check_declared_tail(&self, declared: &TailDescriptor) -> Result<(), ModelError> {
        let (derived, ok) = match declared.side {
            TailSide::Plus => {
                let d = self.eta_plus_tail.class;
                (d, declared.consistent_with(|t| self.tail_eta(t), d))
            }
            TailSide::Minus => {
                let d = self.eta_minus_tail.class;
                (d, declared.consistent_with(|t| self.cdf_eta(-t), d))
            }
        };
        let same_kind = core::mem::discriminant(&derived) == core::mem::discriminant(&declared.class);
        if ok && same_kind {
            Ok(())
        } else {
            Err(ModelError::InconsistentTail {
                side: match declared.side {
                    TailSide::Plus => "plus",
                    TailSide::Minus => "minus",
                },
                declared: format!("{:?}", declared.class),
            })
        }
    }

    pub fn xi(&self) -> &MarginalSpec {
        &self.xi
    }

    /// The `eta` marginal as given (absent in functional mode).
    pub fn eta_marginal(&self) -> Option<&MarginalSpec> {
        self.eta_marginal.as_ref()
    }

    pub fn dependence(&self) -> &DependenceSpec {
        &self.dependence
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma2(&self) -> Moment {
        self.sigma2
    }

    pub fn eta_plus_tail(&self) -> TailDescriptor {
        self.eta_plus_tail
    }

    pub fn eta_minus_tail(&self) -> TailDescriptor {
        self.eta_minus_tail
    }

    pub fn eta_lower_bound(&self) -> Option<f64> {
        self.eta_lower_bound
    }

    /// `E[eta]` when finite.
    pub fn eta_mean(&self) -> Option<f64> {
        match self.eta {
            EtaLaw::Shifted { offset, base } => base.mean().map(|m| m + offset),
            EtaLaw::Affine { slope, intercept, noise } => noise.mean().map(|m| slope * self.mu + intercept + m),
        }
    }

    /// Both coordinates are deterministic.
    pub fn is_degenerate(&self) -> bool {
        self.xi.is_degenerate()
            && match self.eta {
                EtaLaw::Shifted { base, .. } => base.is_degenerate(),
                EtaLaw::Affine { noise, .. } => noise.is_degenerate(),
            }
    }

    /// Draws one `(xi, eta)` pair. Always consumes exactly two uniforms:
    /// the first drives `xi`; the second drives `eta` (independent mode) or
    /// the noise (functional mode) and is discarded in comonotone mode.
    #[inline]
    pub fn sample_pair<R: UniformSource + ?Sized>(&self, src: &mut R) -> (f64, f64) {
        let u1 = src.uniform();
        let u2 = src.uniform();
        let xi = self.xi.quantile(u1);
        let eta = match self.dependence {
            DependenceSpec::Independent => self.eta_base.quantile(u2),
            DependenceSpec::Comonotone => self.eta_base.quantile(u1),
            DependenceSpec::Functional { slope, intercept, .. } => slope * xi + intercept + self.eta_base.quantile(u2),
        };
        (xi, eta)
    }

    /// Exact `P{eta > y}`. In functional mode with a random step this is a
    /// one-dimensional integral over the step quantile, evaluated to 1e-10.
    pub fn tail_eta(&self, y: f64) -> f64 {
        match self.eta {
            EtaLaw::Shifted { offset, base } => base.tail(y - offset),
            EtaLaw::Affine { slope, intercept, noise } => {
                let v = self
                    .integrate_over_xi(|xv| noise.tail(y - intercept - slope * xv))
                    .unwrap_or_else(|e| match e {
                        QuadratureError::NoConvergence { estimate } => estimate,
                        _ => f64::NAN,
                    });
                v.clamp(0.0, 1.0)
            }
        }
    }

    /// `P{eta <= y}`.
    pub fn cdf_eta(&self, y: f64) -> f64 {
        match self.eta {
            EtaLaw::Shifted { offset, base } => base.cdf(y - offset),
            EtaLaw::Affine { .. } => 1.0 - self.tail_eta(y),
        }
    }

    /// Closed-form `E[(x - eta)^+]`, when the law of `eta` admits one.
    pub fn eta_shortfall(&self, x: f64) -> Option<f64> {
        match self.eta {
            EtaLaw::Shifted { offset, base } => Some(base.shortfall(x - offset)),
            EtaLaw::Affine { .. } => None,
        }
    }

    fn integrate_over_xi<F: Fn(f64) -> f64>(&self, f: F) -> Result<f64, QuadratureError> {
        let brk = match self.xi {
            MarginalSpec::TwoPoint { v1, p1, v2 } => Some(MarginalSpec::two_point_sorted(v1, p1, v2).1),
            _ => None,
        };
        let breaks = brk.as_slice();
        special::integrate_with_breaks(|u| f(self.xi.quantile(u)), 0.0, 1.0, breaks, QUAD_TOL)
    }

    pub fn hypothesis_flags(&self) -> HypothesisFlags {
        let plus = self.eta_plus_tail.class;
        HypothesisFlags {
            eta_plus_integrable: plus == TailClass::Integrable,
            eta_minus_integrable: self.eta_minus_tail.class == TailClass::Integrable,
            weak_lln_tail: plus == TailClass::Integrable,
            sigma2_finite: self.sigma2.is_finite(),
            root_moment_plus: match plus {
                TailClass::Integrable | TailClass::Boundary { .. } => true,
                TailClass::RegVar { alpha, .. } => alpha > 0.5,
            },
        }
    }

    /// `mu^-1 * integral_0^t P{eta > y} dy`, the second centering term for
    /// the number of visits. Closed form whenever the law of `eta` is a
    /// shifted catalog family, adaptive quadrature otherwise.
    pub fn centering_integral(&self, t: f64) -> Result<f64, ModelError> {
        self.check_centering_args(t)?;
        match self.eta {
            EtaLaw::Shifted { offset, base } => {
                // integral_a^b P{X > z} dz = (b - a) - (E(b - X)^+ - E(a - X)^+)
                let a = -offset;
                let b = t - offset;
                let integral = (b - a) - (base.shortfall(b) - base.shortfall(a));
                Ok(integral.max(0.0) / self.mu)
            }
            EtaLaw::Affine { .. } => self.centering_integral_quadrature(t),
        }
    }

    /// Same quantity as [`centering_integral`](Self::centering_integral) by
    /// direct quadrature of the tail.
    pub fn centering_integral_quadrature(&self, t: f64) -> Result<f64, ModelError> {
        self.check_centering_args(t)?;
        let (bp, n) = match self.eta {
            EtaLaw::Shifted { offset, base } => {
                let (mut bp, n) = base.breakpoints();
                for b in bp.iter_mut() {
                    *b += offset;
                }
                (bp, n)
            }
            EtaLaw::Affine { .. } => ([0.0; 2], 0),
        };
        let tol = 1e-8 * (1.0 + t).min(1.0);
        let v = special::integrate_with_breaks(|y| self.tail_eta(y), 0.0, t, &bp[..n], tol.max(1e-12))?;
        Ok(v / self.mu)
    }

    fn check_centering_args(&self, t: f64) -> Result<(), ModelError> {
        if !(t.is_finite() && t >= 0.0) {
            return Err(ModelError::InvalidLevel(t));
        }
        if self.mu <= 0.0 {
            return Err(ModelError::NonPositiveDrift { mu: self.mu });
        }
        Ok(())
    }
}

impl EtaLaw {
    fn tail_classes(&self, xi: &MarginalSpec) -> (TailClass, TailClass) {
        match *self {
            EtaLaw::Shifted { base, .. } => (base.tail_class(TailSide::Plus), base.tail_class(TailSide::Minus)),
            EtaLaw::Affine { slope, noise, .. } => {
                let k = slope.abs();
                let (from_plus, from_minus) = if slope > 0.0 {
                    (xi.tail_class(TailSide::Plus), xi.tail_class(TailSide::Minus))
                } else {
                    (xi.tail_class(TailSide::Minus), xi.tail_class(TailSide::Plus))
                };
                (
                    from_plus.scaled(k).combine(noise.tail_class(TailSide::Plus)),
                    from_minus.scaled(k).combine(noise.tail_class(TailSide::Minus)),
                )
            }
        }
    }

    fn lower_bound(&self, xi: &MarginalSpec) -> Option<f64> {
        match *self {
            EtaLaw::Shifted { offset, base } => base.lower_bound().map(|b| b + offset),
            EtaLaw::Affine { slope, intercept, noise } => {
                let xb = if slope > 0.0 { xi.lower_bound()? } else { xi.upper_bound()? };
                Some(slope * xb + intercept + noise.lower_bound()?)
            }
        }
    }
}

/// Free-function form of [`JointIncrementModel::sample_pair`].
pub fn sample_pair<R: UniformSource + ?Sized>(model: &JointIncrementModel, src: &mut R) -> (f64, f64) {
    model.sample_pair(src)
}

/// Free-function form of [`JointIncrementModel::tail_eta`].
pub fn tail_eta(model: &JointIncrementModel, y: f64) -> f64 {
    model.tail_eta(y)
}

/// Free-function form of [`JointIncrementModel::centering_integral`].
pub fn centering_integral(model: &JointIncrementModel, t: f64) -> Result<f64, ModelError> {
    model.centering_integral(t)
}

/// Free-function form of [`JointIncrementModel::hypothesis_flags`].
pub fn hypothesis_flags(model: &JointIncrementModel) -> HypothesisFlags {
    model.hypothesis_flags()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::FixedUniforms;
    use MarginalSpec::*;

    fn pareto(alpha: f64) -> MarginalSpec {
        ShiftedPareto { alpha, scale: 1.0, shift: 0.0 }
    }

    #[test]
    fn degenerate_pair() {
        let m = JointIncrementModel::independent(Constant { value: 1.0 }, Constant { value: 0.0 }).unwrap();
        let mut src = FixedUniforms::new(&[0.3, 0.9]);
        assert_eq!(m.sample_pair(&mut src), (1.0, 0.0));
        assert_eq!(src.consumed(), 2);
    }

    #[test]
    fn pareto_quantile_inversion() {
        let m = JointIncrementModel::independent(Constant { value: 1.0 }, pareto(1.0)).unwrap();
        let mut src = FixedUniforms::new(&[0.1, 0.75]);
        let (_, eta) = m.sample_pair(&mut src);
        assert!((eta - 4.0).abs() < 1e-12);
        assert!((pareto(1.3).quantile(0.75) - libm::pow(0.25, -1.0 / 1.3)).abs() < 1e-12);
    }

    #[test]
    fn comonotone_shares_the_uniform() {
        let e = Exponential { rate: 1.0 };
        let m = JointIncrementModel::comonotone(e, e).unwrap();
        let mut src = FixedUniforms::new(&[0.5, 0.123]);
        let (x, y) = m.sample_pair(&mut src);
        assert!((x - core::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(x, y);
        assert_eq!(src.consumed(), 2);
    }

    #[test]
    fn functional_mode_is_affine_in_xi() {
        let m = JointIncrementModel::functional(Exponential { rate: 1.0 }, 2.0, -1.0, Constant { value: 0.5 }).unwrap();
        let mut src = FixedUniforms::new(&[0.5, 0.9]);
        let (x, y) = m.sample_pair(&mut src);
        assert!((y - (2.0 * x - 0.5)).abs() < 1e-15);
        assert_eq!(m.eta_lower_bound(), Some(-0.5));
        // P{2 xi - 0.5 > y} = exp(-(y + 0.5) / 2)
        assert!((m.tail_eta(1.5) - libm::exp(-1.0)).abs() < 1e-9);
        assert!(m.eta_shortfall(0.0).is_none());
    }

    #[test]
    fn tail_examples() {
        let zero = JointIncrementModel::independent(Constant { value: 1.0 }, Constant { value: 0.0 }).unwrap();
        assert_eq!(zero.tail_eta(1.0), 0.0);
        let p = JointIncrementModel::independent(Constant { value: 1.0 }, pareto(1.0)).unwrap();
        assert!((p.tail_eta(10.0) - 0.1).abs() < 1e-15);
        let tp = JointIncrementModel::independent(Constant { value: 1.0 }, TwoPoint { v1: 0.0, p1: 0.5, v2: 2.0 }).unwrap();
        assert_eq!(tp.tail_eta(1.0), 0.5);
    }

    #[test]
    fn centering_examples() {
        let zero = JointIncrementModel::independent(Constant { value: 1.0 }, Constant { value: 0.0 }).unwrap();
        assert_eq!(zero.centering_integral(7.0).unwrap(), 0.0);
        let m1 = JointIncrementModel::independent(Constant { value: 1.0 }, pareto(0.5)).unwrap();
        assert!((m1.centering_integral(4.0).unwrap() - 3.0).abs() < 1e-12);
        let m2 = JointIncrementModel::independent(Constant { value: 2.0 }, pareto(0.5)).unwrap();
        assert!((m2.centering_integral(4.0).unwrap() - 1.5).abs() < 1e-12);
        assert!(m2.centering_integral(-1.0).is_err());
        let neg = JointIncrementModel::independent(Constant { value: -1.0 }, pareto(0.5)).unwrap();
        assert!(matches!(neg.centering_integral(1.0), Err(ModelError::NonPositiveDrift { .. })));
    }

    #[test]
    fn flag_examples() {
        let one = Constant { value: 1.0 };
        let f = JointIncrementModel::independent(Exponential { rate: 1.0 }, Exponential { rate: 1.0 })
            .unwrap()
            .hypothesis_flags();
        assert!(f.eta_plus_integrable && f.eta_minus_integrable && f.weak_lln_tail && f.sigma2_finite && f.root_moment_plus);
        let f = JointIncrementModel::independent(one, pareto(1.0)).unwrap().hypothesis_flags();
        assert!(!f.eta_plus_integrable && !f.weak_lln_tail && f.root_moment_plus);
        let f = JointIncrementModel::independent(one, pareto(0.4)).unwrap().hypothesis_flags();
        assert!(!f.root_moment_plus);
        let f = JointIncrementModel::independent(one, pareto(0.5)).unwrap().hypothesis_flags();
        assert!(!f.root_moment_plus, "alpha = 1/2 is the divergent edge");
        let f = JointIncrementModel::independent(pareto(1.5), one).unwrap().hypothesis_flags();
        assert!(!f.sigma2_finite);
    }

    #[test]
    fn validation_rejects_bad_parameters() {
        assert!(JointIncrementModel::independent(pareto(1.0), Constant { value: 0.0 }).is_err());
        assert!(JointIncrementModel::independent(Gaussian { mean: 0.0, sd: 0.0 }, Constant { value: 0.0 }).is_err());
        assert!(TwoPoint { v1: 0.0, p1: 1.5, v2: 1.0 }.validate().is_err());
        assert!(Uniform { lo: 1.0, hi: 1.0 }.validate().is_err());
        assert!(Exponential { rate: -1.0 }.validate().is_err());
        assert!(JointIncrementModel::from_parts(Constant { value: 1.0 }, None, DependenceSpec::Independent).is_err());
    }

    #[test]
    fn tail_descriptors_and_consistency() {
        let m = JointIncrementModel::independent(Constant { value: 1.0 }, ShiftedPareto { alpha: 1.0, scale: 2.0, shift: -3.0 }).unwrap();
        assert_eq!(m.eta_plus_tail().class, TailClass::Boundary { c: 2.0 });
        m.check_declared_tail(&TailDescriptor { class: TailClass::Boundary { c: 2.0 }, side: TailSide::Plus }).unwrap();
        assert!(m
            .check_declared_tail(&TailDescriptor { class: TailClass::Boundary { c: 3.0 }, side: TailSide::Plus })
            .is_err());
        assert!(m
            .check_declared_tail(&TailDescriptor { class: TailClass::Integrable, side: TailSide::Plus })
            .is_err());
        m.check_declared_tail(&TailDescriptor { class: TailClass::Integrable, side: TailSide::Minus }).unwrap();

        let r = JointIncrementModel::independent(Constant { value: 1.0 }, pareto(0.5)).unwrap();
        assert_eq!(r.eta_plus_tail().class, TailClass::RegVar { alpha: 0.5, scale: 1.0 });
        r.check_declared_tail(&r.eta_plus_tail()).unwrap();
    }

    #[test]
    fn functional_tail_classes_combine() {
        // eta = -xi + pareto(1): xi's right tail lands on eta's left tail
        let m = JointIncrementModel::functional(pareto(0.7), -1.0, 0.0, pareto(1.0));
        assert!(m.is_err(), "xi with infinite mean is rejected");
        let xi = ShiftedPareto { alpha: 1.5, scale: 1.0, shift: 0.0 };
        let m = JointIncrementModel::functional(xi, -2.0, 0.0, ShiftedPareto { alpha: 0.8, scale: 1.0, shift: 0.0 }).unwrap();
        assert_eq!(m.eta_plus_tail().class, TailClass::RegVar { alpha: 0.8, scale: 1.0 });
        assert_eq!(m.eta_minus_tail().class, TailClass::Integrable);
        assert_eq!(m.eta_lower_bound(), None);
        let both = TailClass::Boundary { c: 1.0 }.combine(TailClass::Boundary { c: 2.5 });
        assert_eq!(both, TailClass::Boundary { c: 3.5 });
        let rv = TailClass::RegVar { alpha: 0.5, scale: 1.0 }.combine(TailClass::RegVar { alpha: 0.5, scale: 4.0 });
        assert_eq!(rv, TailClass::RegVar { alpha: 0.5, scale: 9.0 });
    }

    #[test]
    fn shortfall_matches_quadrature_of_cdf() {
        let fams = [
            Exponential { rate: 2.0 },
            Gaussian { mean: 1.0, sd: 2.0 },
            ShiftedPareto { alpha: 0.4, scale: 1.5, shift: -1.0 },
            ShiftedPareto { alpha: 1.0, scale: 1.0, shift: 0.0 },
            TwoPoint { v1: 3.0, p1: 0.3, v2: -1.0 },
            Uniform { lo: -1.0, hi: 2.0 },
        ];
        for f in fams {
            for &x in &[-2.0, 0.5, 1.7, 6.0] {
                let (bp, n) = f.breakpoints();
                let num = special::integrate_with_breaks(|y| f.cdf(y), -60.0, x, &bp[..n], 1e-11).unwrap();
                assert!((num - f.shortfall(x)).abs() < 1e-8, "{f:?} x={x}: {num} vs {}", f.shortfall(x));
            }
        }
    }

    #[test]
    fn neg_mgf_matches_quadrature() {
        let f = ShiftedPareto { alpha: 2.5, scale: 1.0, shift: -0.5 };
        let g = 0.7;
        let direct = special::integrate(|u| libm::exp(-g * f.quantile(u)), 0.0, 1.0, 1e-12).unwrap();
        assert!((f.neg_mgf(g).unwrap() - direct).abs() < 1e-10);
        let e = Exponential { rate: 2.0 };
        let direct = special::integrate(|u| libm::exp(-g * e.quantile(u)), 0.0, 1.0, 1e-12).unwrap();
        assert!((e.neg_mgf(g).unwrap() - direct).abs() < 1e-9);
    }
}

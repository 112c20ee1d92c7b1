//! Limit objects: Poisson random measures with mean measure
//! `LEB x mu_{a,b}` (`mu_{a,b}((x, inf]) = a x^-b`), the record process
//! `R(z) = sup_{t_k <= z} (mu t_k + j_k)`, its first-crossing inverse and the
//! closed-form marginal laws.
//!
//! Atoms with mark at most `eps` are dropped. For `mu > 0` they pile up on
//! the line `mu z`, which [`record_value`] adds back explicitly; for
//! `mu <= 0` they move the record by at most `eps`.

use alloc::vec::Vec;

use crate::error::LimitError;
use crate::rng::UniformSource;
use crate::special::normal_cdf;

/// Refusal threshold for the expected number of atoms in a window.
pub const MAX_EXPECTED_ATOMS: f64 = 1e8;
/// Default truncation relative to the queried level.
pub const DEFAULT_EPS_FRACTION: f64 = 1e-4;
/// Tail probability targeted by the initial window for `mu <= 0`.
const WINDOW_MISS: f64 = 1e-6;
const MAX_WINDOW_DOUBLINGS: u32 = 20;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Atom {
    pub t: f64,
    pub mark: f64,
}

/// Atoms of one truncated PRM realisation on `[0, window] x (eps, inf)`,
/// sorted by time.
#[derive(Clone, Debug, PartialEq)]
pub struct AtomSet {
    a: f64,
    b: f64,
    window: f64,
    eps: f64,
    atoms: Vec<Atom>,
}

fn check_params(a: f64, b: f64, window: f64, eps: f64) -> Result<(), LimitError> {
    let ok = |x: f64| x.is_finite() && x > 0.0;
    if !ok(a) {
        return Err(LimitError::InvalidParameter("a must be finite and positive"));
    }
    if !ok(b) {
        return Err(LimitError::InvalidParameter("b must be finite and positive"));
    }
    if !(window > 0.0) || window.is_nan() {
        return Err(LimitError::InvalidParameter("window must be positive"));
    }
    if !ok(eps) {
        return Err(LimitError::InvalidParameter("eps must be finite and positive"));
    }
    Ok(())
}

impl AtomSet {
    /// Builds an atom set from explicit atoms, checking the invariants.
    pub fn new(a: f64, b: f64, window: f64, eps: f64, atoms: Vec<Atom>) -> Result<Self, LimitError> {
        check_params(a, b, window, eps)?;
        if atoms.iter().any(|x| !(x.t >= 0.0 && x.t <= window)) {
            return Err(LimitError::InvalidParameter("atom time outside [0, window]"));
        }
        if atoms.iter().any(|x| !(x.mark > eps)) {
            return Err(LimitError::InvalidParameter("atom mark must exceed eps"));
        }
        if atoms.windows(2).any(|w| w[0].t > w[1].t) {
            return Err(LimitError::InvalidParameter("atoms must be sorted by time"));
        }
        Ok(AtomSet { a, b, window, eps, atoms })
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn window(&self) -> f64 {
        self.window
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn params(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    pub fn expected_count(&self) -> f64 {
        expected_atoms(self.a, self.b, self.window, self.eps)
    }
}

pub fn expected_atoms(a: f64, b: f64, window: f64, eps: f64) -> f64 {
    window * a * libm::pow(eps, -b)
}

/// Mark with `P{j > x} = (eps / x)^b`, `x >= eps`.
#[inline]
fn mark_from_uniform(u: f64, eps: f64, b: f64) -> f64 {
    let scale = if b == 1.0 {
        1.0 / u
    } else if b == 0.5 {
        1.0 / (u * u)
    } else {
        libm::pow(u, -1.0 / b)
    };
    eps * scale
}

/// Atoms of the truncated PRM in increasing time order, without a window.
/// Each atom costs two uniforms: the exponential gap, then the mark.
pub struct PrmStream<'r, R: ?Sized> {
    rate: f64,
    b: f64,
    eps: f64,
    t: f64,
    src: &'r mut R,
}

impl<'r, R: UniformSource + ?Sized> PrmStream<'r, R> {
    pub fn new(a: f64, b: f64, eps: f64, src: &'r mut R) -> Result<Self, LimitError> {
        check_params(a, b, 1.0, eps)?;
        Ok(PrmStream { rate: a * libm::pow(eps, -b), b, eps, t: 0.0, src })
    }

    /// Atom rate per unit time, `a eps^-b`.
    pub fn rate(&self) -> f64 {
        self.rate
    }
}

impl<R: UniformSource + ?Sized> Iterator for PrmStream<'_, R> {
    type Item = Atom;

    fn next(&mut self) -> Option<Atom> {
        self.t -= libm::log(self.src.uniform()) / self.rate;
        let mark = mark_from_uniform(self.src.uniform(), self.eps, self.b);
        Some(Atom { t: self.t, mark })
    }
}

/// Truncated PRM on `[0, window]`. The count is Poisson with mean
/// `window a eps^-b` since the times come from a homogeneous Poisson stream.
pub fn sample_prm<R: UniformSource + ?Sized>(
    a: f64,
    b: f64,
    window: f64,
    eps: f64,
    src: &mut R,
) -> Result<AtomSet, LimitError> {
    check_params(a, b, window, eps)?;
    if !window.is_finite() {
        return Err(LimitError::InvalidParameter("window must be finite"));
    }
    let expected = expected_atoms(a, b, window, eps);
    if !(expected <= MAX_EXPECTED_ATOMS) {
        return Err(LimitError::TooManyAtoms { expected });
    }
    let atoms: Vec<Atom> = PrmStream::new(a, b, eps, src)?.take_while(|x| x.t <= window).collect();
    Ok(AtomSet { a, b, window, eps, atoms })
}

/// `max(mu^+ z, max_{t_k <= z} (mu t_k + j_k))`.
pub fn record_value(atoms: &AtomSet, mu: f64, z: f64) -> f64 {
    let closure = mu.max(0.0) * z;
    atoms
        .atoms
        .iter()
        .take_while(|x| x.t <= z)
        .map(|x| mu * x.t + x.mark)
        .fold(closure, f64::max)
}

/// First `z` at which the record process exceeds `u`: the smaller of `u/mu`
/// (for `mu > 0`) and the earliest atom with `mu t_k + j_k > u`. Ties go to
/// the earliest qualifying time.
pub fn inverse_record(atoms: &AtomSet, mu: f64, u: f64) -> Result<f64, LimitError> {
    if !(u >= 0.0) || !u.is_finite() {
        return Err(LimitError::InvalidParameter("level must be finite and nonnegative"));
    }
    if !mu.is_finite() {
        return Err(LimitError::InvalidParameter("mu must be finite"));
    }
    let drift_crossing = if mu > 0.0 { u / mu } else { f64::INFINITY };
    let limit = drift_crossing.min(atoms.window);
    if let Some(x) = atoms.atoms.iter().take_while(|x| x.t < limit).find(|x| mu * x.t + x.mark > u) {
        return Ok(x.t);
    }
    if drift_crossing <= atoms.window {
        Ok(drift_crossing)
    } else {
        Err(LimitError::WindowTooShort { window: atoms.window, level: u })
    }
}

/// Starting window for [`sample_inverse_record`]: `u/mu` when `mu > 0`,
/// otherwise four times the window that would hold an atom with mark above
/// `u` with probability `1 - 1e-6` when `mu = 0`.
pub fn initial_window(a: f64, b: f64, mu: f64, u: f64) -> f64 {
    if mu > 0.0 {
        u / mu
    } else {
        4.0 * libm::pow(u, b) / a * -libm::log(WINDOW_MISS)
    }
}

/// Draws `X(u)` from a fresh PRM realisation, generating atoms in time
/// order and stopping at the first crossing. Equivalent to
/// `inverse_record(sample_prm(..))` with a window that starts at
/// [`initial_window`] and doubles up to 2^20 times.
pub fn sample_inverse_record<R: UniformSource + ?Sized>(
    a: f64,
    b: f64,
    mu: f64,
    u: f64,
    eps: f64,
    src: &mut R,
) -> Result<f64, LimitError> {
    if !(u > 0.0) || !u.is_finite() {
        return Err(LimitError::InvalidParameter("level must be finite and positive"));
    }
    if !mu.is_finite() {
        return Err(LimitError::InvalidParameter("mu must be finite"));
    }
    let drift_crossing = if mu > 0.0 { u / mu } else { f64::INFINITY };
    let window = if mu > 0.0 {
        drift_crossing
    } else {
        initial_window(a, b, mu, u) * libm::ldexp(1.0, MAX_WINDOW_DOUBLINGS as i32)
    };
    for x in PrmStream::new(a, b, eps, src)? {
        if x.t >= drift_crossing {
            return Ok(drift_crossing);
        }
        if x.t > window {
            break;
        }
        if mu * x.t + x.mark > u {
            return Ok(x.t);
        }
    }
    Err(LimitError::WindowTooShort { window, level: u })
}

/// `P{X(u) <= y}` for the boundary-tail limit with drift `mu` and tail
/// constant `c`.
pub fn cdf_x(mu: f64, c: f64, u: f64, y: f64) -> f64 {
    if y < 0.0 {
        return 0.0;
    }
    if mu > 0.0 {
        if y >= u / mu {
            1.0
        } else {
            -libm::expm1(c / mu * libm::log1p(-mu * y / u))
        }
    } else if mu < 0.0 {
        let m = -mu;
        -libm::expm1(-c / m * libm::log1p(m * y / u))
    } else {
        -libm::expm1(-c * y / u)
    }
}

/// `P{Y(u) <= y}`, exponential with rate `u^-alpha`.
pub fn cdf_y(alpha: f64, u: f64, y: f64) -> f64 {
    if y <= 0.0 {
        0.0
    } else {
        -libm::expm1(-libm::pow(u, -alpha) * y)
    }
}

/// Exponential draw with rate `u^-alpha` by inversion (one uniform).
pub fn sample_y_direct<R: UniformSource + ?Sized>(alpha: f64, u: f64, src: &mut R) -> f64 {
    -libm::log(src.uniform()) * libm::pow(u, alpha)
}

/// `(u/mu) theta` with `theta ~ Beta(1, c/mu)` by inversion (one uniform).
pub fn beta_cross_check<R: UniformSource + ?Sized>(mu: f64, c: f64, u: f64, src: &mut R) -> f64 {
    u / mu * beta1_quantile(c / mu, src.uniform())
}

/// Quantile of `Beta(1, beta)`: `1 - (1 - p)^(1/beta)`.
pub fn beta1_quantile(beta: f64, p: f64) -> f64 {
    -libm::expm1(libm::log1p(-p) / beta)
}

/// CDF of `Beta(1, beta)`.
pub fn beta1_cdf(beta: f64, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x >= 1.0 {
        1.0
    } else {
        -libm::expm1(beta * libm::log1p(-x))
    }
}

/// Brownian motion at the increasing nonnegative times `u_grid`, built from
/// independent Gaussian increments (one uniform per point).
pub fn gaussian_fdd_reference<R: UniformSource + ?Sized>(u_grid: &[f64], src: &mut R) -> Vec<f64> {
    let mut out = Vec::with_capacity(u_grid.len());
    let mut prev_u = 0.0;
    let mut b = 0.0;
    for &u in u_grid {
        assert!(u >= prev_u, "grid must be nonnegative and increasing");
        b += libm::sqrt(u - prev_u) * crate::special::normal_quantile(src.uniform());
        prev_u = u;
        out.push(b);
    }
    out
}

/// Limit laws with closed-form CDFs.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)
)]
pub enum LimitLaw {
    XMarginal { mu: f64, c: f64, u: f64 },
    YMarginal { alpha: f64, u: f64 },
    Gaussian { variance: f64 },
}

impl LimitLaw {
    pub fn validate(&self) -> Result<(), LimitError> {
        let pos = |x: f64| x.is_finite() && x > 0.0;
        match *self {
            LimitLaw::XMarginal { mu, c, u } => {
                if !mu.is_finite() || !pos(c) || !pos(u) {
                    return Err(LimitError::InvalidParameter("X marginal needs finite mu, c > 0, u > 0"));
                }
            }
            LimitLaw::YMarginal { alpha, u } => {
                if !(alpha > 0.0 && alpha < 1.0) || !pos(u) {
                    return Err(LimitError::InvalidParameter("Y marginal needs alpha in (0, 1), u > 0"));
                }
            }
            LimitLaw::Gaussian { variance } => {
                if !pos(variance) {
                    return Err(LimitError::InvalidParameter("gaussian variance must be positive"));
                }
            }
        }
        Ok(())
    }

    pub fn cdf(&self, y: f64) -> f64 {
        match *self {
            LimitLaw::XMarginal { mu, c, u } => cdf_x(mu, c, u, y),
            LimitLaw::YMarginal { alpha, u } => cdf_y(alpha, u, y),
            LimitLaw::Gaussian { variance } => normal_cdf(y / libm::sqrt(variance)),
        }
    }
}

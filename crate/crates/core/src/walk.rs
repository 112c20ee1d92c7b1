//! Path simulation of the perturbed walk `T_n = S_{n-1} + eta_n`.
//!
//! One pass over a trajectory yields, for every level `t` of a
//! [`LevelGrid`], the first passage time `tau(t) = inf{n : T_n > t}`, the
//! number of visits `N(t) = #{n : T_n <= t}` and the last exit time
//! `rho(t) = sup{n : T_n <= t}`.
//!
//! `N` and `rho` depend on the whole infinite future, so the engine only
//! stops once a [`Certifier`] says no later `T_k` can fall at or below the
//! top level:
//!
//! * exact: steps are nonnegative and `S_{n-1} + ess inf eta > t_max`;
//! * budgeted: an analytic union bound on a late visit is below `epsilon`;
//! * fixed: run a set number of steps and flag the result uncertified.
//!
//! The budgeted bound splits the gap `x = S_{n-1} - t_max` in half. The walk
//! may lose at most `x/2` against the line of slope `delta * mu` (Lundberg:
//! probability at most `exp(-gamma x/2)` where `E exp(-gamma (xi - delta mu)) = 1`),
//! and on that event a visit at step `n + j` needs
//! `eta <= -x/2 - j delta mu`, whose probabilities sum to at most
//! `F(-x/2) + E[(-x/2 - eta)^+] / (delta mu)`.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{EngineError, GridError, PolicyError, QuadratureError};
use crate::increments::{JointIncrementModel, MarginalSpec, TailClass};
use crate::rng::UniformSource;

/// Strictly increasing, finite, nonempty list of levels.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelGrid {
    levels: Vec<f64>,
}

impl LevelGrid {
    pub fn new(levels: Vec<f64>) -> Result<Self, GridError> {
        if levels.is_empty() {
            return Err(GridError::Empty);
        }
        if levels.iter().any(|x| !x.is_finite()) {
            return Err(GridError::NonFinite);
        }
        if let Some(i) = levels.windows(2).position(|w| w[0] >= w[1]) {
            return Err(GridError::NotIncreasing(i + 1));
        }
        Ok(LevelGrid { levels })
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.levels[self.levels.len() - 1]
    }
}

pub const DEFAULT_MISS_PROBABILITY: f64 = 1e-9;
pub const DEFAULT_DRIFT_FRACTION: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)
)]
pub enum HorizonPolicy {
    Exact,
    Budgeted { miss_probability: f64, drift_fraction: f64 },
    Fixed { n_max: u64 },
}

impl Default for HorizonPolicy {
    fn default() -> Self {
        HorizonPolicy::Budgeted {
            miss_probability: DEFAULT_MISS_PROBABILITY,
            drift_fraction: DEFAULT_DRIFT_FRACTION,
        }
    }
}

/// Per-replication record of the three functionals at every level.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PathFunctionals {
    pub tau: Vec<u64>,
    pub n_visits: Vec<u64>,
    pub rho: Vec<u64>,
    pub steps_used: u64,
    /// `n_visits` and `rho` are exact (exact policy) or exact outside an
    /// event of probability at most `miss_budget_spent` (budgeted policy).
    pub certified: bool,
    /// Union bound on the probability that a visit was missed; 0 for the
    /// exact policy, 1 when nothing is guaranteed.
    pub miss_budget_spent: f64,
}

impl PathFunctionals {
    /// `tau - 1 <= n_visits <= rho` at every level.
    pub fn sandwich_holds(&self) -> bool {
        self.tau
            .iter()
            .zip(&self.n_visits)
            .zip(&self.rho)
            .all(|((&t, &n), &r)| t.saturating_sub(1) <= n && n <= r)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunningMaxSample {
    pub n: u64,
    pub max_t: f64,
}

/// Supplies consecutive `(xi_n, eta_n)` pairs.
pub trait IncrementSource {
    fn next_pair(&mut self) -> (f64, f64);
}

impl<F: FnMut() -> (f64, f64)> IncrementSource for F {
    fn next_pair(&mut self) -> (f64, f64) {
        self()
    }
}

/// Draws pairs from a model.
pub struct ModelIncrements<'a, R: ?Sized> {
    model: &'a JointIncrementModel,
    src: &'a mut R,
}

impl<'a, R: UniformSource + ?Sized> ModelIncrements<'a, R> {
    pub fn new(model: &'a JointIncrementModel, src: &'a mut R) -> Self {
        ModelIncrements { model, src }
    }
}

impl<R: UniformSource + ?Sized> IncrementSource for ModelIncrements<'_, R> {
    #[inline]
    fn next_pair(&mut self) -> (f64, f64) {
        self.model.sample_pair(self.src)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StopDecision {
    Continue,
    Stop { miss_bound: f64 },
}

#[derive(Clone, Debug)]
enum Rule {
    Exact { eta_lower_bound: f64 },
    Budgeted {
        epsilon: f64,
        drift_step: f64,
        gamma: f64,
        model: JointIncrementModel,
    },
    Never,
}

/// Decides when a path may stop without missing a visit below the top level.
#[derive(Clone, Debug)]
pub struct Certifier {
    rule: Rule,
}

impl Certifier {
    /// Validates `policy` against `model`. Budgeted certificates precompute
    /// the Lundberg exponent of the step law.
    pub fn new(policy: HorizonPolicy, model: &JointIncrementModel) -> Result<Self, PolicyError> {
        let rule = match policy {
            HorizonPolicy::Fixed { n_max } => {
                if n_max == 0 {
                    return Err(PolicyError::EmptyHorizon);
                }
                Rule::Never
            }
            HorizonPolicy::Exact => {
                Self::check_certifiable(model)?;
                let lb = model.eta_lower_bound().ok_or(PolicyError::ExactNeedsLowerBound)?;
                if !model.xi().lower_bound().is_some_and(|b| b >= 0.0) {
                    return Err(PolicyError::ExactNeedsNonnegativeSteps);
                }
                Rule::Exact { eta_lower_bound: lb }
            }
            HorizonPolicy::Budgeted { miss_probability, drift_fraction } => {
                if !(miss_probability > 0.0 && miss_probability < 1.0) {
                    return Err(PolicyError::MissProbability(miss_probability));
                }
                if !(drift_fraction > 0.0 && drift_fraction < 1.0) {
                    return Err(PolicyError::DriftFraction(drift_fraction));
                }
                Self::check_certifiable(model)?;
                if model.eta_shortfall(0.0).is_none() {
                    return Err(PolicyError::NoAnalyticTailBound(
                        "functional dependence with a random step has no closed-form shortfall",
                    ));
                }
                let drift_step = drift_fraction * model.mu();
                Rule::Budgeted {
                    epsilon: miss_probability,
                    drift_step,
                    gamma: lundberg_exponent(model.xi(), drift_step)?,
                    model: model.clone(),
                }
            }
        };
        Ok(Certifier { rule })
    }

    /// Exact certificate for increment sources that are not backed by a
    /// model. The caller guarantees the steps are nonnegative and every
    /// perturbation is at least `eta_lower_bound`.
    pub fn exact(eta_lower_bound: f64) -> Self {
        Certifier { rule: Rule::Exact { eta_lower_bound } }
    }

    fn check_certifiable(model: &JointIncrementModel) -> Result<(), PolicyError> {
        if model.mu() <= 0.0 {
            return Err(PolicyError::NonPositiveDrift(model.mu()));
        }
        if model.eta_minus_tail().class != TailClass::Integrable {
            return Err(PolicyError::EtaMinusNotIntegrable);
        }
        Ok(())
    }

    pub fn certifies(&self) -> bool {
        !matches!(self.rule, Rule::Never)
    }

    /// Stop decision before drawing step `n`, given `S_{n-1}` and the top
    /// level. Deterministic in its inputs.
    pub fn decide(&self, current_s: f64, t_max: f64) -> StopDecision {
        match &self.rule {
            Rule::Never => StopDecision::Continue,
            Rule::Exact { eta_lower_bound } => {
                if current_s + eta_lower_bound > t_max {
                    StopDecision::Stop { miss_bound: 0.0 }
                } else {
                    StopDecision::Continue
                }
            }
            Rule::Budgeted { epsilon, drift_step, gamma, model } => {
                let gap = current_s - t_max;
                if gap <= 0.0 {
                    return StopDecision::Continue;
                }
                let bound = budget_bound(gap, *drift_step, *gamma, model);
                if bound <= *epsilon {
                    StopDecision::Stop { miss_bound: bound }
                } else {
                    StopDecision::Continue
                }
            }
        }
    }
}

fn budget_bound(gap: f64, drift_step: f64, gamma: f64, model: &JointIncrementModel) -> f64 {
    let (margin, drift_term) = if gamma.is_infinite() {
        (0.0, 0.0)
    } else {
        let h = 0.5 * gap;
        (h, libm::exp(-gamma * h))
    };
    let y = margin - gap;
    let shortfall = model.eta_shortfall(y).unwrap_or(f64::INFINITY);
    drift_term + model.cdf_eta(y) + shortfall / drift_step
}

/// Largest `gamma` (found by bisection, rounded down) with
/// `E exp(-gamma (xi - d)) <= 1`, or infinity when `xi >= d` almost surely.
pub fn lundberg_exponent(xi: &MarginalSpec, d: f64) -> Result<f64, QuadratureError> {
    if xi.lower_bound().is_some_and(|b| b >= d) {
        return Ok(f64::INFINITY);
    }
    let log_psi = |g: f64| -> Result<f64, QuadratureError> { Ok(g * d + libm::log(xi.neg_mgf(g)?)) };
    let mut lo = 0.0;
    let mut hi = 1.0;
    while log_psi(hi)? <= 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > 1e12 {
            return Ok(lo);
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if log_psi(mid)? <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Stand-alone form of [`Certifier::decide`] for step `n`.
pub fn certify_stop(
    policy: HorizonPolicy,
    model: &JointIncrementModel,
    current_index: u64,
    current_s: f64,
    t_max: f64,
) -> Result<StopDecision, PolicyError> {
    let _ = current_index;
    Ok(Certifier::new(policy, model)?.decide(current_s, t_max))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum StopRule {
    Certified,
    FirstPassage,
}

/// Single-pass scan of one trajectory. `n_max` caps the number of steps.
fn scan<I: IncrementSource + ?Sized>(
    incs: &mut I,
    grid: &LevelGrid,
    certifier: &Certifier,
    stop: StopRule,
    n_max: Option<u64>,
) -> Result<PathFunctionals, EngineError> {
    let levels = grid.levels();
    let m = levels.len();
    let t_max = grid.max();
    let mut tau = vec![0u64; m];
    let mut visits_at = vec![0u64; m];
    let mut last_at = vec![0u64; m];
    let mut passed = 0usize;
    let mut s = 0.0f64;
    let mut n = 0u64;
    let mut miss = 1.0;
    let mut certified = false;
    loop {
        if passed == m {
            match stop {
                StopRule::FirstPassage => break,
                StopRule::Certified => {
                    if let StopDecision::Stop { miss_bound } = certifier.decide(s, t_max) {
                        miss = miss_bound;
                        certified = true;
                        break;
                    }
                }
            }
        }
        if n_max.is_some_and(|cap| n >= cap) {
            if passed < m {
                let partial = finish(tau, visits_at, last_at, n, false, 1.0);
                return Err(EngineError::HorizonExhausted {
                    steps: n,
                    first_unpassed: passed,
                    partial: Box::new(partial),
                });
            }
            break;
        }
        n += 1;
        let (xi, eta) = incs.next_pair();
        let t_n = s + eta;
        while passed < m && t_n > levels[passed] {
            tau[passed] = n;
            passed += 1;
        }
        let j = levels.partition_point(|&l| l < t_n);
        if j < m {
            visits_at[j] += 1;
            last_at[j] = n;
        }
        s += xi;
    }
    Ok(finish(tau, visits_at, last_at, n, certified, miss))
}

fn finish(tau: Vec<u64>, mut visits: Vec<u64>, mut last: Vec<u64>, steps: u64, certified: bool, miss: f64) -> PathFunctionals {
    // a visit at level index j counts for every level at or above it
    for i in 1..visits.len() {
        visits[i] += visits[i - 1];
        last[i] = last[i].max(last[i - 1]);
    }
    PathFunctionals {
        tau,
        n_visits: visits,
        rho: last,
        steps_used: steps,
        certified,
        miss_budget_spent: miss,
    }
}

/// Computes all three functionals on a path drawn from `incs`.
pub fn walk_functionals<I: IncrementSource + ?Sized>(
    incs: &mut I,
    grid: &LevelGrid,
    certifier: &Certifier,
    n_max: Option<u64>,
) -> Result<PathFunctionals, EngineError> {
    scan(incs, grid, certifier, StopRule::Certified, n_max)
}

/// Model-backed simulator for one `(model, grid, policy)` triple.
#[derive(Clone, Debug)]
pub struct PathSimulator {
    model: JointIncrementModel,
    grid: LevelGrid,
    certifier: Certifier,
    n_max: Option<u64>,
}

impl PathSimulator {
    pub fn new(model: JointIncrementModel, grid: LevelGrid, policy: HorizonPolicy) -> Result<Self, PolicyError> {
        let certifier = Certifier::new(policy, &model)?;
        let n_max = match policy {
            HorizonPolicy::Fixed { n_max } => Some(n_max),
            _ => None,
        };
        Ok(PathSimulator { model, grid, certifier, n_max })
    }

    /// Simulator that only follows a path until it has passed every level,
    /// for regimes where `N` and `rho` cannot be certified. `n_max` caps the
    /// path length.
    pub fn first_passage_only(model: JointIncrementModel, grid: LevelGrid, n_max: u64) -> Result<Self, PolicyError> {
        if n_max == 0 {
            return Err(PolicyError::EmptyHorizon);
        }
        Ok(PathSimulator { model, grid, certifier: Certifier { rule: Rule::Never }, n_max: Some(n_max) })
    }

    pub fn model(&self) -> &JointIncrementModel {
        &self.model
    }

    pub fn grid(&self) -> &LevelGrid {
        &self.grid
    }

    pub fn certifies(&self) -> bool {
        self.certifier.certifies()
    }

    /// Full functionals. Under a fixed horizon the path runs exactly
    /// `n_max` steps (or errors if some level was never passed).
    pub fn simulate<R: UniformSource + ?Sized>(&self, src: &mut R) -> Result<PathFunctionals, EngineError> {
        let mut incs = ModelIncrements::new(&self.model, src);
        scan(&mut incs, &self.grid, &self.certifier, StopRule::Certified, self.n_max)
    }

    /// Stops as soon as every level has been passed; `n_visits` and `rho`
    /// then only cover the observed prefix and the record is uncertified.
    pub fn simulate_first_passage<R: UniformSource + ?Sized>(&self, src: &mut R) -> Result<PathFunctionals, EngineError> {
        let mut incs = ModelIncrements::new(&self.model, src);
        scan(&mut incs, &self.grid, &self.certifier, StopRule::FirstPassage, self.n_max)
    }
}

/// One-shot form: validates the policy and simulates a single path.
pub fn simulate_functionals<R: UniformSource + ?Sized>(
    model: &JointIncrementModel,
    grid: &LevelGrid,
    policy: HorizonPolicy,
    src: &mut R,
) -> Result<PathFunctionals, SimulateError> {
    let sim = PathSimulator::new(model.clone(), grid.clone(), policy)?;
    Ok(sim.simulate(src)?)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimulateError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// `max_{1<=k<=n} T_k` over the first `n` steps (`n >= 1`).
pub fn simulate_running_max<R: UniformSource + ?Sized>(model: &JointIncrementModel, n: u64, src: &mut R) -> RunningMaxSample {
    assert!(n >= 1, "running max needs at least one step");
    let trace = running_max_trace(model, &[n], src);
    RunningMaxSample { n, max_t: trace[0] }
}

/// Running maximum of `T_k` recorded at each of the increasing checkpoints.
pub fn running_max_trace<R: UniformSource + ?Sized>(model: &JointIncrementModel, checkpoints: &[u64], src: &mut R) -> Vec<f64> {
    let mut out = Vec::with_capacity(checkpoints.len());
    let mut s = 0.0;
    let mut best = f64::NEG_INFINITY;
    let mut n = 0u64;
    for &c in checkpoints {
        assert!(c >= n.max(1), "checkpoints must be increasing and positive");
        while n < c {
            let (xi, eta) = model.sample_pair(src);
            best = best.max(s + eta);
            s += xi;
            n += 1;
        }
        out.push(best);
    }
    out
}

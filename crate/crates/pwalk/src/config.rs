//! Experiment configuration: TOML parsing, validation and the hypothesis
//! gate that refuses experiments whose limit theorem does not apply.

use std::path::PathBuf;

use pwalk_core::increments::{DependenceSpec, JointIncrementModel, MarginalSpec, Moment, TailClass, TailDescriptor, TailSide};
use pwalk_core::walk::{Certifier, HorizonPolicy, LevelGrid};
use pwalk_core::{GridError, ModelError, PolicyError};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("invalid model: {0}")]
    Model(#[from] ModelError),
    #[error("invalid horizon policy: {0}")]
    Policy(#[from] PolicyError),
    #[error("invalid level grid: {0}")]
    Grid(#[from] GridError),
    #[error("experiment {experiment} refused: requires {condition} ({found})")]
    Refused {
        experiment: &'static str,
        condition: String,
        found: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub xi: MarginalSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<MarginalSpec>,
    #[serde(default)]
    pub dependence: DependenceSpec,
    /// Optional declared tail classes, checked against the marginal law.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_plus_tail: Option<TailClass>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_minus_tail: Option<TailClass>,
}

impl ModelConfig {
    pub fn build(&self) -> Result<JointIncrementModel, ModelError> {
        let model = JointIncrementModel::from_parts(self.xi, self.eta, self.dependence)?;
        if let Some(class) = self.eta_plus_tail {
            model.check_declared_tail(&TailDescriptor { class, side: TailSide::Plus })?;
        }
        if let Some(class) = self.eta_minus_tail {
            model.check_declared_tail(&TailDescriptor { class, side: TailSide::Minus })?;
        }
        Ok(model)
    }
}

/// Limit-object samplers for `limit_sample` runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LimitSampler {
    /// First crossing of level `u` by the record process of a PRM with
    /// mean measure `LEB x mu_{a,b}` and drift `mu`.
    InverseRecord {
        a: f64,
        b: f64,
        mu: f64,
        u: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        eps: Option<f64>,
    },
    /// Exponential draw with rate `u^-alpha`.
    YDirect { alpha: f64, u: f64 },
    /// `(u / mu) Beta(1, c / mu)`.
    Beta { mu: f64, c: f64, u: f64 },
    /// Brownian motion at `u_grid`.
    Brownian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Experiment {
    LlnWeak,
    LlnStrong,
    LlnVisits,
    FltBoundary { c: f64 },
    FltRegvar { alpha: f64 },
    CltTau,
    CltRho,
    CltJoint,
    CltVisitsCentered,
    LimitSample { sampler: LimitSampler },
}

impl Experiment {
    pub fn id(&self) -> &'static str {
        match self {
            Experiment::LlnWeak => "lln_weak",
            Experiment::LlnStrong => "lln_strong",
            Experiment::LlnVisits => "lln_visits",
            Experiment::FltBoundary { .. } => "flt_boundary",
            Experiment::FltRegvar { .. } => "flt_regvar",
            Experiment::CltTau => "clt_tau",
            Experiment::CltRho => "clt_rho",
            Experiment::CltJoint => "clt_joint",
            Experiment::CltVisitsCentered => "clt_visits_centered",
            Experiment::LimitSample { .. } => "limit_sample",
        }
    }

    fn is_lln(&self) -> bool {
        matches!(self, Experiment::LlnWeak | Experiment::LlnStrong | Experiment::LlnVisits)
    }

    /// Whether the run needs certified `N` and `rho`.
    pub fn needs_full_functionals(&self) -> bool {
        matches!(
            self,
            Experiment::LlnVisits | Experiment::CltRho | Experiment::CltJoint | Experiment::CltVisitsCentered
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    pub experiment: Experiment,
    /// Scale: levels are `u * t` for `u` in `u_grid`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub u_grid: Vec<f64>,
    pub replications: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub policy: HorizonPolicy,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Fields that determine the results; the hash input.
#[derive(Serialize)]
struct HashedFields<'a> {
    model: &'a Option<ModelConfig>,
    experiment: &'a Experiment,
    t: Option<f64>,
    u_grid: &'a [f64],
    replications: usize,
    master_seed: u64,
    policy: &'a HorizonPolicy,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// `u_grid` with the per-experiment default filled in.
    pub fn effective_u_grid(&self) -> Vec<f64> {
        if !self.u_grid.is_empty() {
            self.u_grid.clone()
        } else if self.experiment.is_lln() {
            vec![0.01, 0.1, 1.0]
        } else {
            vec![1.0]
        }
    }

    /// SHA-256 of the canonical JSON form of everything that affects the
    /// results (the output location is excluded).
    pub fn config_hash(&self) -> String {
        let u_grid = self.effective_u_grid();
        let fields = HashedFields {
            model: &self.model,
            experiment: &self.experiment,
            t: self.t,
            u_grid: &u_grid,
            replications: self.replications,
            master_seed: self.master_seed,
            policy: &self.policy,
        };
        let canonical = serde_json::to_vec(&fields).expect("config serializes");
        hex::encode(Sha256::digest(&canonical))
    }

    /// Validates the configuration and checks the hypotheses of the
    /// requested experiment. No simulation happens here.
    pub fn plan(&self) -> Result<Plan, ConfigError> {
        if self.replications == 0 {
            return Err(ConfigError::Invalid("replications must be at least 1".into()));
        }
        let u_grid = self.effective_u_grid();
        if u_grid.iter().any(|u| !(u.is_finite() && *u > 0.0)) || u_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ConfigError::Invalid("u_grid must be positive, finite and strictly increasing".into()));
        }
        if let Experiment::LimitSample { sampler } = self.experiment {
            check_sampler(&sampler)?;
            self.check_replications(None)?;
            return Ok(Plan { config: self.clone(), u_grid, model: None, grid: None });
        }
        let model = self
            .model
            .as_ref()
            .ok_or_else(|| ConfigError::Invalid(format!("experiment {} needs a [model] section", self.experiment.id())))?
            .build()?;
        let t = self
            .t
            .ok_or_else(|| ConfigError::Invalid(format!("experiment {} needs the scale t", self.experiment.id())))?;
        if !(t.is_finite() && t > 0.0) {
            return Err(ConfigError::Invalid("t must be finite and positive".into()));
        }
        check_hypotheses(&self.experiment, &model)?;
        self.check_replications(Some(&model))?;
        if self.experiment.is_lln() && u_grid[u_grid.len() - 1] < 100.0 * u_grid[0] * (1.0 - 1e-12) {
            return Err(ConfigError::Invalid("LLN diagnostics need a u_grid spanning at least two decades".into()));
        }
        let grid = LevelGrid::new(u_grid.iter().map(|u| u * t).collect())?;
        if self.experiment.needs_full_functionals() {
            Certifier::new(self.policy, &model)?;
        } else if let HorizonPolicy::Fixed { n_max: 0 } = self.policy {
            return Err(PolicyError::EmptyHorizon.into());
        }
        Ok(Plan { config: self.clone(), u_grid, model: Some(model), grid: Some(grid) })
    }
}

impl ExperimentConfig {
    fn check_replications(&self, model: Option<&JointIncrementModel>) -> Result<(), ConfigError> {
        let needed = crate::runner::min_replications(&self.experiment, model);
        if self.replications < needed {
            return Err(ConfigError::Invalid(format!(
                "experiment {} needs at least {needed} replications, got {}",
                self.experiment.id(),
                self.replications
            )));
        }
        Ok(())
    }
}

/// A validated configuration ready to run.
#[derive(Debug, Clone)]
pub struct Plan {
    pub config: ExperimentConfig,
    pub u_grid: Vec<f64>,
    pub model: Option<JointIncrementModel>,
    pub grid: Option<LevelGrid>,
}

fn check_sampler(s: &LimitSampler) -> Result<(), ConfigError> {
    let pos = |x: f64| x.is_finite() && x > 0.0;
    let ok = match *s {
        LimitSampler::InverseRecord { a, b, mu, u, eps } => {
            pos(a) && pos(b) && mu.is_finite() && pos(u) && eps.is_none_or(pos)
        }
        LimitSampler::YDirect { alpha, u } => alpha > 0.0 && alpha < 1.0 && pos(u),
        LimitSampler::Beta { mu, c, u } => pos(mu) && pos(c) && pos(u),
        LimitSampler::Brownian => true,
    };
    if ok {
        Ok(())
    } else {
        Err(ConfigError::Invalid(format!("invalid limit sampler parameters: {s:?}")))
    }
}

fn refuse(e: &Experiment, condition: &str, found: String) -> ConfigError {
    ConfigError::Refused { experiment: e.id(), condition: condition.to_string(), found }
}

fn check_hypotheses(e: &Experiment, model: &JointIncrementModel) -> Result<(), ConfigError> {
    let flags = model.hypothesis_flags();
    let mu = model.mu();
    let mu_positive = || {
        if mu > 0.0 {
            Ok(())
        } else {
            Err(refuse(e, "μ = E[ξ] ∈ (0,∞)", format!("model has μ = {mu}")))
        }
    };
    let variance = || match model.sigma2() {
        Moment::Finite(v) if v > 0.0 => Ok(()),
        Moment::Finite(v) => Err(refuse(e, "Var[ξ] ∈ (0,∞)", format!("model has Var[ξ] = {v}"))),
        Moment::Infinite => Err(refuse(e, "Var[ξ] ∈ (0,∞)", "model has Var[ξ] = ∞".into())),
    };
    let plus = || {
        if flags.eta_plus_integrable {
            Ok(())
        } else {
            Err(refuse(e, "E[η⁺] < ∞", format!("η⁺ tail is {:?}", model.eta_plus_tail().class)))
        }
    };
    let minus = || {
        if flags.eta_minus_integrable {
            Ok(())
        } else {
            Err(refuse(e, "E[η⁻] < ∞", format!("η⁻ tail is {:?}", model.eta_minus_tail().class)))
        }
    };
    match *e {
        Experiment::LlnWeak | Experiment::LlnStrong => mu_positive(),
        Experiment::LlnVisits => {
            mu_positive()?;
            minus()
        }
        Experiment::FltBoundary { c } => match model.eta_plus_tail().class {
            TailClass::Boundary { c: found } if (found - c).abs() <= 1e-9 * c.abs() => Ok(()),
            other => Err(refuse(e, &format!("P{{η>t}} ~ c/t with c = {c}"), format!("η⁺ tail is {other:?}"))),
        },
        Experiment::FltRegvar { alpha } => match model.eta_plus_tail().class {
            TailClass::RegVar { alpha: found, .. } if found == alpha && alpha > 0.0 && alpha < 1.0 => Ok(()),
            other => Err(refuse(
                e,
                &format!("P{{η>x}} ~ x^(-α)ℓ(x) with α = {alpha} ∈ (0,1)"),
                format!("η⁺ tail is {other:?}"),
            )),
        },
        Experiment::CltTau => {
            mu_positive()?;
            variance()?;
            plus()
        }
        Experiment::CltRho | Experiment::CltVisitsCentered => {
            mu_positive()?;
            variance()?;
            minus()
        }
        Experiment::CltJoint => {
            mu_positive()?;
            variance()?;
            if flags.eta_plus_integrable && flags.eta_minus_integrable {
                Ok(())
            } else {
                Err(refuse(e, "E[η] ∈ (−∞,∞)", "E[|η|] = ∞".into()))
            }
        }
        Experiment::LimitSample { .. } => Ok(()),
    }
}

//! Runs a validated [`Plan`]: seeded replications on a worker pool, then
//! the statistical checks.

use rayon::prelude::*;
use rayon::ThreadPool;

use pwalk_core::increments::JointIncrementModel;
use pwalk_core::limit::{self, LimitLaw, DEFAULT_EPS_FRACTION};
use pwalk_core::rng::{domain, Stream};
use pwalk_core::verify::{
    self, fdd_gaussian_check, ks_one_sample, lln_diagnostic, sandwich_audit, FddSettings, LlnMode, LlnSettings, SampleMatrix,
    DEFAULT_LEVEL,
};
use pwalk_core::walk::{running_max_trace, LevelGrid, PathFunctionals, PathSimulator};
use pwalk_core::{EngineError, HorizonPolicy, LimitError, ModelError, PolicyError, VerifyError};

use crate::config::{Experiment, LimitSampler, Plan};
use crate::report::{ecdf_artifact, Artifact, Check, Report, Rule, SCHEMA_VERSION};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("replication {replication}: {source}")]
    Engine { replication: usize, source: EngineError },
    #[error("replication {replication}: {source}")]
    Limit { replication: usize, source: LimitError },
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("cannot start worker pool: {0}")]
    Pool(String),
}

pub struct RunOutcome {
    pub report: Report,
    pub artifacts: Vec<Artifact>,
}

/// Cap on path length for first-passage runs when the policy does not set one.
pub fn default_step_cap(top_level: f64) -> u64 {
    (1000.0 * top_level.max(10.0)).ceil() as u64
}

/// Minimum replications for the diagnostics of an experiment.
pub fn min_replications(experiment: &Experiment, model: Option<&JointIncrementModel>) -> usize {
    match experiment {
        Experiment::LlnWeak | Experiment::LlnStrong | Experiment::LlnVisits => {
            if model.is_some_and(|m| m.is_degenerate()) {
                1
            } else {
                1000
            }
        }
        Experiment::CltTau | Experiment::CltRho | Experiment::CltJoint | Experiment::CltVisitsCentered => 1000,
        Experiment::LimitSample { sampler: LimitSampler::Brownian } => 1000,
        _ => verify::KS_MIN_SAMPLES,
    }
}

pub fn execute(plan: &Plan, workers: usize) -> Result<RunOutcome, RunError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| RunError::Pool(e.to_string()))?;
    let cfg = &plan.config;
    let mut out = Outputs::default();
    match (&plan.model, &plan.grid) {
        (Some(model), Some(grid)) => run_walk(plan, model, grid, &pool, &mut out)?,
        _ => {
            if let Experiment::LimitSample { sampler } = cfg.experiment {
                run_limit(plan, sampler, &pool, &mut out)?;
            }
        }
    }
    let pass = out.checks.iter().all(|c| c.pass);
    let report = Report {
        schema_version: SCHEMA_VERSION,
        experiment: cfg.experiment.id().to_string(),
        config_hash: cfg.config_hash(),
        master_seed: cfg.master_seed,
        replications: cfg.replications,
        hypothesis_flags: plan.model.as_ref().map(|m| m.hypothesis_flags()),
        checks: out.checks,
        pass,
    };
    Ok(RunOutcome { report, artifacts: out.artifacts })
}

#[derive(Default)]
struct Outputs {
    checks: Vec<Check>,
    artifacts: Vec<Artifact>,
}

impl Outputs {
    fn push(&mut self, check: Check, artifact: Artifact) {
        self.checks.push(check);
        self.artifacts.push(artifact);
    }
}

fn par_map<T: Send>(pool: &ThreadPool, n: usize, f: impl Fn(u64) -> T + Sync + Send) -> Vec<T> {
    pool.install(|| (0..n as u64).into_par_iter().map(f).collect())
}

struct Records {
    paths: Vec<PathFunctionals>,
    censored: usize,
}

/// First passage only, for every level. Paths that hit the step cap are
/// kept with `tau = cap + 1` at the levels they never passed.
fn first_passage_records(plan: &Plan, model: &JointIncrementModel, grid: &LevelGrid, pool: &ThreadPool) -> Result<Records, RunError> {
    let cap = match plan.config.policy {
        HorizonPolicy::Fixed { n_max } => n_max,
        _ => default_step_cap(grid.max()),
    };
    let sim = PathSimulator::first_passage_only(model.clone(), grid.clone(), cap)?;
    let seed = plan.config.master_seed;
    let results = par_map(pool, plan.config.replications, |i| match sim.simulate_first_passage(&mut Stream::new(seed, i)) {
        Ok(p) => (p, false),
        Err(EngineError::HorizonExhausted { partial, .. }) => {
            let mut p = *partial;
            for tau in p.tau.iter_mut().filter(|t| **t == 0) {
                *tau = cap + 1;
            }
            (p, true)
        }
    });
    let censored = results.iter().filter(|r| r.1).count();
    Ok(Records { paths: results.into_iter().map(|r| r.0).collect(), censored })
}

fn full_records(plan: &Plan, model: &JointIncrementModel, grid: &LevelGrid, pool: &ThreadPool) -> Result<Records, RunError> {
    let sim = PathSimulator::new(model.clone(), grid.clone(), plan.config.policy)?;
    let seed = plan.config.master_seed;
    let results = par_map(pool, plan.config.replications, |i| sim.simulate(&mut Stream::new(seed, i)));
    let mut paths = Vec::with_capacity(results.len());
    for (i, r) in results.into_iter().enumerate() {
        paths.push(r.map_err(|source| RunError::Engine { replication: i, source })?);
    }
    Ok(Records { paths, censored: 0 })
}

#[derive(Clone, Copy)]
enum Functional {
    Tau,
    Visits,
    LastExit,
}

impl Functional {
    fn name(self) -> &'static str {
        match self {
            Functional::Tau => "tau",
            Functional::Visits => "visits",
            Functional::LastExit => "last_exit",
        }
    }

    fn values(self, p: &PathFunctionals) -> &[u64] {
        match self {
            Functional::Tau => &p.tau,
            Functional::Visits => &p.n_visits,
            Functional::LastExit => &p.rho,
        }
    }
}

fn matrix(paths: &[PathFunctionals], f: Functional, map: impl Fn(usize, f64) -> f64) -> Result<SampleMatrix, VerifyError> {
    let cols = paths.first().map_or(0, |p| p.tau.len());
    let mut m = SampleMatrix::with_capacity(cols, paths.len());
    let mut row = vec![0.0; cols];
    for p in paths {
        for (j, v) in f.values(p).iter().enumerate() {
            row[j] = map(j, *v as f64);
        }
        m.push_row(&row)?;
    }
    Ok(m)
}

fn fmt_u(u: f64) -> String {
    format!("u{u}")
}

fn sandwich_check(records: &Records, out: &mut Outputs) {
    let audit = sandwich_audit(&records.paths);
    let rows = audit
        .violations
        .iter()
        .map(|v| vec![v.replication as f64, v.level_index as f64, v.tau as f64, v.n_visits as f64, v.rho as f64])
        .collect();
    let check = Check::new("sandwich", audit.violations.len() as f64, 0.0, Rule::AtMost, true)
        .detail("replications", audit.replications as f64)
        .detail("censored", records.censored as f64);
    let artifact = Artifact {
        check: "sandwich".into(),
        comments: vec![
            "check: sandwich, tau - 1 <= n_visits <= rho at every level".into(),
            "one row per violation (replication index, level index, values)".into(),
        ],
        columns: vec!["replication", "level_index", "tau", "n_visits", "rho"],
        rows,
    };
    out.push(check, artifact);
}

fn lln_check(
    name: &str,
    values: &SampleMatrix,
    t_grid: &[f64],
    target: f64,
    mode: LlnMode,
    settings: &LlnSettings,
    expected: bool,
    out: &mut Outputs,
) -> Result<(), RunError> {
    let r = lln_diagnostic(values, t_grid, target, mode, settings)?;
    let rule = match mode {
        LlnMode::Weak => Rule::Below,
        LlnMode::StrongProxy => Rule::AtMost,
    };
    let check = Check::new(name, r.fail_fraction, r.max_fail_fraction, rule, expected)
        .detail("target", target)
        .detail("delta", r.delta);
    let rows = (0..t_grid.len())
        .map(|j| vec![t_grid[j], r.ratio_mean[j], r.ratio_dev[j][0], r.ratio_dev[j][1], r.ratio_dev[j][2]])
        .collect();
    let artifact = Artifact {
        check: name.into(),
        comments: vec![
            format!("check: {name}, target ratio {target:.16e}"),
            "t: level (or step count for running maxima)".into(),
            "ratio_mean: mean of functional / t over replications".into(),
            "dev_q50, dev_q90, dev_q99: quantiles of |functional / t - target|".into(),
        ],
        columns: vec!["t", "ratio_mean", "dev_q50", "dev_q90", "dev_q99"],
        rows,
    };
    out.push(check, artifact);
    Ok(())
}

fn ks_check(
    name: &str,
    samples: &[f64],
    law: LimitLaw,
    reference: &str,
    extra: &[(&str, f64)],
    out: &mut Outputs,
) -> Result<(), RunError> {
    let r = ks_one_sample(samples, |x| law.cdf(x), DEFAULT_LEVEL)?;
    let mut check = Check::new(name, r.statistic, r.critical, Rule::Below, true)
        .detail("n", r.n as f64)
        .detail("sample_mean", verify::mean(samples))
        .detail("sample_sd", verify::sample_variance(samples).sqrt());
    for (k, v) in extra {
        check = check.detail(k, *v);
    }
    out.push(check, ecdf_artifact(name, samples, |x| law.cdf(x), reference));
    Ok(())
}

/// Per-column KS and covariance checks against Brownian motion.
fn fdd_checks(label: &str, values: &SampleMatrix, u_grid: &[f64], out: &mut Outputs) -> Result<(), RunError> {
    let r = fdd_gaussian_check(values, u_grid, &FddSettings::default())?;
    for (j, (ks, &u)) in r.marginal_ks.iter().zip(u_grid).enumerate() {
        let name = format!("ks_{label}_{}", fmt_u(u));
        let col = values.column(j);
        let check = Check::new(&name, ks.statistic, ks.critical, Rule::Below, true)
            .detail("u", u)
            .detail("n", ks.n as f64)
            .detail("sample_mean", verify::mean(&col))
            .detail("sample_sd", verify::sample_variance(&col).sqrt());
        let sd = u.sqrt();
        let law = LimitLaw::Gaussian { variance: u };
        let artifact = ecdf_artifact(&name, &col, |x| law.cdf(x), &format!("N(0, {u}), sd {sd}"));
        out.push(check, artifact);
    }
    let name = format!("cov_{label}");
    let settings = FddSettings::default();
    let check = Check::new(&name, r.cov_max_z, settings.cov_se_multiplier, Rule::AtMost, true);
    let k = u_grid.len();
    let mut rows = Vec::new();
    for a in 0..k {
        for b in a..k {
            rows.push(vec![a as f64, b as f64, u_grid[a], u_grid[b], r.cov_matrix[a][b], r.cov_target[a][b], r.cov_se[a][b]]);
        }
    }
    let artifact = Artifact {
        check: name.clone(),
        comments: vec![
            format!("check: {name}, max |cov - min(u_i, u_j)| / se"),
            "i, j: grid indices; u_i, u_j: grid values".into(),
            "cov: sample covariance; target: min(u_i, u_j); se: delta-method standard error".into(),
        ],
        columns: vec!["i", "j", "u_i", "u_j", "cov", "target", "se"],
        rows,
    };
    out.push(check, artifact);
    Ok(())
}

fn closest_to_one(u_grid: &[f64]) -> usize {
    (0..u_grid.len())
        .min_by(|&a, &b| (u_grid[a] - 1.0).abs().total_cmp(&(u_grid[b] - 1.0).abs()))
        .unwrap_or(0)
}

fn run_walk(plan: &Plan, model: &JointIncrementModel, grid: &LevelGrid, pool: &ThreadPool, out: &mut Outputs) -> Result<(), RunError> {
    let cfg = &plan.config;
    let t = cfg.t.expect("validated");
    let u_grid = &plan.u_grid;
    let levels = grid.levels();
    let mu = model.mu();
    let flags = model.hypothesis_flags();
    let experiment = cfg.experiment;
    let records = if experiment.needs_full_functionals() {
        full_records(plan, model, grid, pool)?
    } else {
        first_passage_records(plan, model, grid, pool)?
    };
    sandwich_check(&records, out);
    let paths = &records.paths;
    let lln_settings = LlnSettings { min_replications: min_replications(&experiment, Some(model)), ..LlnSettings::default() };
    let clt_scale = || -> f64 { (model.sigma2().finite().expect("validated") * t / (mu * mu * mu)).sqrt() };
    let centered = |f: Functional| {
        let scale = clt_scale();
        matrix(paths, f, |j, v| (v - levels[j] / mu) / scale)
    };

    match experiment {
        Experiment::LlnWeak | Experiment::LlnStrong => {
            let (mode, expected, tag) = match experiment {
                Experiment::LlnWeak => (LlnMode::Weak, flags.weak_lln_tail, "weak"),
                _ => (LlnMode::StrongProxy, flags.eta_plus_integrable, "strong"),
            };
            let tau = matrix(paths, Functional::Tau, |_, v| v)?;
            lln_check(&format!("lln_{tag}_tau"), &tau, levels, 1.0 / mu, mode, &lln_settings, expected, out)?;

            let steps: Vec<u64> = levels.iter().map(|l| l.ceil().max(1.0) as u64).collect();
            if steps.windows(2).all(|w| w[0] < w[1]) {
                let seed = cfg.master_seed;
                let traces = par_map(pool, cfg.replications, |i| {
                    running_max_trace(model, &steps, &mut Stream::with_domain(seed, domain::RUNNING_MAX, i))
                });
                let m = SampleMatrix::from_rows(steps.len(), &traces)?;
                let n_grid: Vec<f64> = steps.iter().map(|&n| n as f64).collect();
                lln_check(&format!("lln_{tag}_running_max"), &m, &n_grid, mu, mode, &lln_settings, expected, out)?;
            }
        }
        Experiment::LlnVisits => {
            for f in [Functional::Visits, Functional::LastExit] {
                let m = matrix(paths, f, |_, v| v)?;
                let name = format!("lln_strong_{}", f.name());
                lln_check(&name, &m, levels, 1.0 / mu, LlnMode::StrongProxy, &lln_settings, true, out)?;
            }
        }
        Experiment::FltBoundary { c } => {
            for (j, &u) in u_grid.iter().enumerate() {
                let samples: Vec<f64> = paths.iter().map(|p| p.tau[j] as f64 / t).collect();
                let law = LimitLaw::XMarginal { mu, c, u };
                let extra = [("u", u), ("censored", records.censored as f64)];
                ks_check(&format!("ks_tau_{}", fmt_u(u)), &samples, law, &format!("X(u), mu {mu}, c {c}"), &extra, out)?;
            }
        }
        Experiment::FltRegvar { alpha } => {
            let p = model.tail_eta(t);
            for (j, &u) in u_grid.iter().enumerate() {
                let samples: Vec<f64> = paths.iter().map(|r| p * r.tau[j] as f64).collect();
                let law = LimitLaw::YMarginal { alpha, u };
                let extra = [("u", u), ("tail_at_t", p), ("censored", records.censored as f64)];
                ks_check(&format!("ks_tau_{}", fmt_u(u)), &samples, law, &format!("Y(u), alpha {alpha}"), &extra, out)?;
            }
        }
        Experiment::CltTau => fdd_checks("tau", &centered(Functional::Tau)?, u_grid, out)?,
        Experiment::CltRho => fdd_checks("last_exit", &centered(Functional::LastExit)?, u_grid, out)?,
        Experiment::CltJoint => {
            let tau = centered(Functional::Tau)?;
            let visits = centered(Functional::Visits)?;
            let rho = centered(Functional::LastExit)?;
            fdd_checks("tau", &tau, u_grid, out)?;
            fdd_checks("visits", &visits, u_grid, out)?;
            fdd_checks("last_exit", &rho, u_grid, out)?;
            joint_spread_check(&tau, &visits, &rho, u_grid, out);
        }
        Experiment::CltVisitsCentered => {
            let scale = clt_scale();
            let second: Vec<f64> = levels.iter().map(|&l| model.centering_integral(l)).collect::<Result<_, _>>()?;
            let two_term = matrix(paths, Functional::Visits, |j, v| (v - levels[j] / mu + second[j]) / scale)?;
            fdd_checks("visits_centered", &two_term, u_grid, out)?;

            let j = closest_to_one(u_grid);
            let u = u_grid[j];
            let single: Vec<f64> = paths.iter().map(|p| (p.n_visits[j] as f64 - levels[j] / mu) / scale).collect();
            let r = ks_one_sample(&single, |x| LimitLaw::Gaussian { variance: u }.cdf(x), DEFAULT_LEVEL)?;
            let name = format!("ks_visits_single_term_{}", fmt_u(u));
            let check = Check::new(&name, r.statistic, 3.0 * r.critical, Rule::Above, !flags.root_moment_plus)
                .detail("u", u)
                .detail("sample_mean", verify::mean(&single))
                .detail("critical", r.critical)
                .detail("second_term", second[j] / scale);
            let law = LimitLaw::Gaussian { variance: u };
            out.push(check, ecdf_artifact(&name, &single, |x| law.cdf(x), &format!("N(0, {u})")));
        }
        Experiment::LimitSample { .. } => unreachable!("limit samplers need no walk"),
    }
    Ok(())
}

/// The three scaled functionals share one Brownian limit, so their
/// pairwise differences at `u` near 1 must be small.
fn joint_spread_check(tau: &SampleMatrix, visits: &SampleMatrix, rho: &SampleMatrix, u_grid: &[f64], out: &mut Outputs) {
    let j = closest_to_one(u_grid);
    let (a, b, c) = (tau.column(j), visits.column(j), rho.column(j));
    let diff = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p - q).collect() };
    let d = [diff(&a, &b), diff(&a, &c), diff(&b, &c)];
    let sds: Vec<f64> = d.iter().map(|v| verify::sample_variance(v).sqrt()).collect();
    let worst = sds.iter().copied().fold(0.0, f64::max);
    let name = "joint_pairwise_sd";
    let check = Check::new(name, worst, 0.05, Rule::Below, true)
        .detail("u", u_grid[j])
        .detail("sd_tau_visits", sds[0])
        .detail("sd_tau_last_exit", sds[1])
        .detail("sd_visits_last_exit", sds[2]);
    let rows = (0..a.len()).map(|i| vec![i as f64, d[0][i], d[1][i], d[2][i]]).collect();
    let artifact = Artifact {
        check: name.into(),
        comments: vec![
            format!("check: {name}, largest sample sd of pairwise differences at u = {}", u_grid[j]),
            "columns: replication index and differences of scaled functionals".into(),
        ],
        columns: vec!["replication", "tau_minus_visits", "tau_minus_last_exit", "visits_minus_last_exit"],
        rows,
    };
    out.push(check, artifact);
}

fn run_limit(plan: &Plan, sampler: LimitSampler, pool: &ThreadPool, out: &mut Outputs) -> Result<(), RunError> {
    let n = plan.config.replications;
    let seed = plan.config.master_seed;
    let stream = |i: u64| Stream::with_domain(seed, domain::LIMIT, i);
    match sampler {
        LimitSampler::InverseRecord { a, b, mu, u, eps } => {
            let eps = eps.unwrap_or(DEFAULT_EPS_FRACTION * u);
            let draws = par_map(pool, n, |i| limit::sample_inverse_record(a, b, mu, u, eps, &mut stream(i)));
            let mut samples = Vec::with_capacity(n);
            for (i, d) in draws.into_iter().enumerate() {
                samples.push(d.map_err(|source| RunError::Limit { replication: i, source })?);
            }
            let name = "ks_inverse_record";
            if b == 1.0 {
                let law = LimitLaw::XMarginal { mu, c: a, u };
                ks_check(name, &samples, law, &format!("X(u), mu {mu}, c {a}"), &[("u", u), ("eps", eps)], out)?;
            } else if mu == 0.0 {
                let rate = a * u.powf(-b);
                let cdf = move |y: f64| if y <= 0.0 { 0.0 } else { -(-rate * y).exp_m1() };
                let r = ks_one_sample(&samples, cdf, DEFAULT_LEVEL)?;
                let check = Check::new(name, r.statistic, r.critical, Rule::Below, true).detail("u", u).detail("eps", eps);
                out.push(check, ecdf_artifact(name, &samples, cdf, &format!("exponential, rate {rate}")));
            } else {
                // no closed form: samples only
                let artifact = ecdf_artifact(name, &samples, |_| f64::NAN, "none available");
                out.artifacts.push(artifact);
            }
        }
        LimitSampler::YDirect { alpha, u } => {
            let samples = par_map(pool, n, |i| limit::sample_y_direct(alpha, u, &mut stream(i)));
            let law = LimitLaw::YMarginal { alpha, u };
            ks_check("ks_y_direct", &samples, law, &format!("Y(u), alpha {alpha}"), &[("u", u)], out)?;
        }
        LimitSampler::Beta { mu, c, u } => {
            let samples = par_map(pool, n, |i| limit::beta_cross_check(mu, c, u, &mut stream(i)));
            let law = LimitLaw::XMarginal { mu, c, u };
            ks_check("ks_beta", &samples, law, &format!("(u/mu) Beta(1, c/mu), mu {mu}, c {c}"), &[("u", u)], out)?;
        }
        LimitSampler::Brownian => {
            let rows = par_map(pool, n, |i| {
                limit::gaussian_fdd_reference(&plan.u_grid, &mut Stream::with_domain(seed, domain::REFERENCE, i))
            });
            let m = SampleMatrix::from_rows(plan.u_grid.len(), &rows)?;
            fdd_checks("brownian", &m, &plan.u_grid, out)?;
        }
    }
    Ok(())
}

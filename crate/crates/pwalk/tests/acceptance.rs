//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.
//!
//! Every run uses the master seed below; it was fixed before any result
//! was seen and is never varied.

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use pwalk::config::ExperimentConfig;
use pwalk::report::{Check, Report};
use pwalk::runner;
use pwalk_core::increments::{JointIncrementModel, MarginalSpec};
use pwalk_core::limit::gaussian_fdd_reference;
use pwalk_core::rng::{domain, Stream};
use pwalk_core::verify::{fdd_gaussian_check, ks_one_sample, sandwich_audit, FddSettings, SampleMatrix, DEFAULT_LEVEL};
use pwalk_core::walk::{LevelGrid, PathSimulator};
use pwalk_core::HorizonPolicy;

const SEED: u64 = 20261016;

struct Outcome {
    id: u32,
    pass: bool,
    summary: String,
}

struct Suite {
    workers: usize,
    outcomes: Vec<Outcome>,
    /// `(run, sandwich check)` from every walk run.
    sandwiches: Vec<(String, bool)>,
}

impl Suite {
    fn run(&mut self, label: &str, toml: &str) -> Report {
        let start = Instant::now();
        let cfg = ExperimentConfig::from_toml(toml).unwrap_or_else(|e| panic!("{label}: {e}"));
        let plan = cfg.plan().unwrap_or_else(|e| panic!("{label}: {e}"));
        let outcome = runner::execute(&plan, self.workers).unwrap_or_else(|e| panic!("{label}: {e}"));
        let report = outcome.report;
        if let Some(s) = report.check("sandwich") {
            self.sandwiches.push((label.to_string(), s.pass));
        }
        eprintln!("  [{label}] {:.1}s", start.elapsed().as_secs_f64());
        for c in &report.checks {
            eprintln!("    {}", describe(c));
        }
        report
    }

    fn record(&mut self, id: u32, pass: bool, summary: String) {
        self.outcomes.push(Outcome { id, pass, summary });
    }
}

fn describe(c: &Check) -> String {
    let verdict = if c.pass { "ok " } else { "bad" };
    let rule = match c.rule {
        pwalk::report::Rule::Below => "<",
        pwalk::report::Rule::AtMost => "<=",
        pwalk::report::Rule::Above => ">",
    };
    let note = if c.expected { "" } else { " (expected not to hold)" };
    format!("{verdict} {} {:.5} {rule} {:.5}{note}", c.name, c.statistic, c.threshold)
}

fn check<'a>(r: &'a Report, name: &str) -> &'a Check {
    r.check(name).unwrap_or_else(|| panic!("{} has no check {name}", r.experiment))
}

fn walk_toml(kind: &str, extra: &str, xi: &str, eta: &str, t: f64, u_grid: &str, reps: usize) -> String {
    format!(
        "replications = {reps}\nmaster_seed = {SEED}\nt = {t:?}\nu_grid = {u_grid}\n\
         [model]\nxi = {xi}\neta = {eta}\n[experiment]\nkind = \"{kind}\"\n{extra}"
    )
}

fn limit_toml(sampler: &str, reps: usize) -> String {
    format!(
        "replications = {reps}\nmaster_seed = {SEED}\n[experiment]\nkind = \"limit_sample\"\n\
         [experiment.sampler]\n{sampler}"
    )
}

const EXP1: &str = "{ family = \"exponential\", rate = 1.0 }";

fn oracle(suite: &mut Suite) {
    let model =
        JointIncrementModel::independent(MarginalSpec::Constant { value: 1.0 }, MarginalSpec::Constant { value: 0.0 })
            .unwrap();
    let grid = LevelGrid::new(vec![0.0, 3.5, 10.2]).unwrap();
    let sim = PathSimulator::new(model, grid, HorizonPolicy::Exact).unwrap();
    let rec = sim.simulate(&mut Stream::new(SEED, 0)).unwrap();
    let got: Vec<(u64, u64, u64)> = (0..3).map(|i| (rec.tau[i], rec.n_visits[i], rec.rho[i])).collect();
    let want = vec![(2, 1, 1), (5, 4, 4), (12, 11, 11)];
    suite.sandwiches.push(("oracle".into(), sandwich_audit(std::slice::from_ref(&rec)).pass()));
    suite.record(2, got == want && rec.certified, format!("deterministic oracle (tau, N, rho) = {got:?}"));
}

fn enumeration(suite: &mut Suite) {
    let start = Instant::now();
    let model = JointIncrementModel::independent(
        MarginalSpec::Constant { value: 1.0 },
        MarginalSpec::TwoPoint { v1: 0.0, p1: 0.5, v2: 5.0 },
    )
    .unwrap();
    let sim = PathSimulator::new(model, LevelGrid::new(vec![2.0]).unwrap(), HorizonPolicy::Exact).unwrap();
    let n = 100_000;
    let mut counts = [0u64; 6];
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let rec = sim.simulate(&mut Stream::new(SEED, i as u64)).unwrap();
        counts[(rec.tau[0] as usize).min(5)] += 1;
        records.push(rec);
    }
    let exact = [0.0, 0.5, 0.25, 0.125, 0.125, 0.0];
    let tv = 0.5 * counts.iter().zip(exact).map(|(&c, p)| (c as f64 / n as f64 - p).abs()).sum::<f64>();
    let secs = start.elapsed().as_secs_f64();
    suite.sandwiches.push(("enumeration".into(), sandwich_audit(&records).pass()));
    suite.record(3, tv <= 0.01 && secs < 10.0, format!("law of tau(2): TV {tv:.5} <= 0.01 in {secs:.1}s"));
}

fn strong_lln(suite: &mut Suite) {
    let start = Instant::now();
    let grid = "[0.01, 0.1, 1.0]";
    let s = suite.run("lln_strong", &walk_toml("lln_strong", "", EXP1, EXP1, 1e4, grid, 2000));
    let v = suite.run("lln_visits", &walk_toml("lln_visits", "", EXP1, EXP1, 1e4, grid, 2000));
    let checks = [
        check(&s, "lln_strong_tau"),
        check(&v, "lln_strong_visits"),
        check(&v, "lln_strong_last_exit"),
    ];
    let secs = start.elapsed().as_secs_f64();
    let pass = checks.iter().all(|c| c.pass) && secs < 120.0;
    let fractions: Vec<String> = checks.iter().map(|c| format!("{} {:.4}", c.name, c.statistic)).collect();
    suite.record(4, pass, format!("strong LLN fail fractions {} (<= 0.02) in {secs:.0}s", fractions.join(", ")));
}

fn boundary_flt(suite: &mut Suite) -> bool {
    let start = Instant::now();
    let eta = "{ family = \"shifted_pareto\", alpha = 1.0, scale = 1.0, shift = 0.0 }";
    let xis = [
        ("mu=1", EXP1),
        ("mu=-1", "{ family = \"gaussian\", mean = -1.0, sd = 1.0 }"),
        ("mu=0", "{ family = \"gaussian\", mean = 0.0, sd = 1.0 }"),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (label, xi) in xis {
        let toml = format!(
            "policy = {{ mode = \"fixed\", n_max = 10000000 }}\n{}",
            walk_toml("flt_boundary", "c = 1.0", xi, eta, 1e4, "[1.0]", 20_000)
        );
        let r = suite.run(&format!("flt_boundary {label}"), &toml);
        let c = check(&r, "ks_tau_u1");
        pass &= c.pass;
        parts.push(format!("{label} KS {:.5}", c.statistic));
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 240.0;
    suite.record(6, pass, format!("boundary-tail marginal {} (< 0.01151) in {secs:.0}s", parts.join(", ")));
    pass
}

fn weak_lln_failure(suite: &mut Suite, c6: bool) {
    let start = Instant::now();
    let eta = "{ family = \"shifted_pareto\", alpha = 1.0, scale = 1.0, shift = 0.0 }";
    let r = suite.run("lln_weak", &walk_toml("lln_weak", "", EXP1, eta, 1e4, "[0.01, 0.1, 1.0]", 2000));
    let c = check(&r, "lln_weak_tau");
    let secs = start.elapsed().as_secs_f64();
    let detected = !c.holds && !c.expected;
    suite.record(
        5,
        detected && c6 && secs < 120.0,
        format!(
            "weak LLN diagnostic on tau fails as expected (fail fraction {:.4} > 0.02), boundary FLT {}",
            c.statistic,
            if c6 { "passes" } else { "does not pass" }
        ),
    );
}

fn regvar_flt(suite: &mut Suite) {
    let start = Instant::now();
    let eta = "{ family = \"shifted_pareto\", alpha = 0.5, scale = 1.0, shift = 0.0 }";
    let r = suite.run("flt_regvar", &walk_toml("flt_regvar", "alpha = 0.5", EXP1, eta, 1e6, "[1.0]", 20_000));
    let c = check(&r, "ks_tau_u1");
    let secs = start.elapsed().as_secs_f64();
    suite.record(7, c.pass && secs < 240.0, format!("regularly varying marginal KS {:.5} (< 0.01151) in {secs:.0}s", c.statistic));
}

fn limit_objects(suite: &mut Suite) {
    let start = Instant::now();
    let n = 100_000;
    let runs = [
        ("inverse_record (1, 0.5) mu=0", "type = \"inverse_record\"\na = 1.0\nb = 0.5\nmu = 0.0\nu = 1.0", "ks_inverse_record"),
        ("y_direct 0.5", "type = \"y_direct\"\nalpha = 0.5\nu = 1.0", "ks_y_direct"),
        ("inverse_record (2, 1) mu=1", "type = \"inverse_record\"\na = 2.0\nb = 1.0\nmu = 1.0\nu = 1.0", "ks_inverse_record"),
        ("beta mu=1 c=2", "type = \"beta\"\nmu = 1.0\nc = 2.0\nu = 1.0", "ks_beta"),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (label, sampler, name) in runs {
        let r = suite.run(label, &limit_toml(sampler, n));
        let c = check(&r, name);
        pass &= c.pass;
        parts.push(format!("{label} {:.5}", c.statistic));
    }
    let secs = start.elapsed().as_secs_f64();
    suite.record(8, pass && secs < 60.0, format!("limit objects KS {} (< 0.00515) in {secs:.0}s", parts.join(", ")));
}

fn brownian_fdd(suite: &mut Suite) {
    let start = Instant::now();
    let eta = "{ family = \"gaussian\", mean = 0.0, sd = 1.0 }";
    let r = suite.run("clt_joint", &walk_toml("clt_joint", "", EXP1, eta, 1e4, "[0.5, 1.0, 2.0]", 20_000));
    let secs = start.elapsed().as_secs_f64();
    let failed: Vec<String> = r.checks.iter().filter(|c| !c.pass).map(|c| format!("{} {:.5}", c.name, c.statistic)).collect();
    let sd = check(&r, "joint_pairwise_sd").statistic;
    let summary = if failed.is_empty() {
        format!("Brownian fdd of tau, N, rho and pairwise sd {sd:.4} < 0.05 in {secs:.0}s")
    } else {
        format!("Brownian fdd failing checks: {} (pairwise sd {sd:.4}) in {secs:.0}s", failed.join(", "))
    };
    suite.record(9, failed.is_empty() && secs < 300.0, summary);
}

fn two_term_centering(suite: &mut Suite) {
    let start = Instant::now();
    let eta = "{ family = \"shifted_pareto\", alpha = 0.4, scale = 1.0, shift = 0.0 }";
    let r = suite.run("clt_visits_centered", &walk_toml("clt_visits_centered", "", EXP1, eta, 1e4, "[1.0]", 20_000));
    let two = check(&r, "ks_visits_centered_u1");
    let one = check(&r, "ks_visits_single_term_u1");
    let secs = start.elapsed().as_secs_f64();
    let single_fails = one.statistic > 3.0 * two.threshold;
    suite.record(
        10,
        two.pass && single_fails && secs < 240.0,
        format!(
            "two-term KS {:.5} (< {:.5}), single-term KS {:.4} (> {:.5}) in {secs:.0}s",
            two.statistic,
            two.threshold,
            one.statistic,
            3.0 * two.threshold
        ),
    );
}

fn null_calibration(suite: &mut Suite) {
    let start = Instant::now();
    let law = MarginalSpec::Exponential { rate: 1.0 };
    let runs = 200;
    let mut rejected = 0;
    for i in 0..runs {
        let mut src = Stream::with_domain(SEED, domain::REFERENCE, i);
        let xs: Vec<f64> = (0..1000).map(|_| law.sample(&mut src)).collect();
        if !ks_one_sample(&xs, |x| law.cdf(x), DEFAULT_LEVEL).unwrap().pass {
            rejected += 1;
        }
    }
    let rate = rejected as f64 / runs as f64;

    let u_grid = [0.5, 1.0, 2.0];
    let fdd_runs = 100;
    let mut fdd_pass = 0;
    for r in 0..fdd_runs {
        let mut m = SampleMatrix::with_capacity(u_grid.len(), 1000);
        for i in 0..1000u64 {
            let mut src = Stream::with_domain(SEED, domain::REFERENCE, 1_000_000 + r * 1000 + i);
            m.push_row(&gaussian_fdd_reference(&u_grid, &mut src)).unwrap();
        }
        if fdd_gaussian_check(&m, &u_grid, &FddSettings::default()).unwrap().pass {
            fdd_pass += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    suite.record(
        11,
        rate <= 0.04 && fdd_pass >= 95 && secs < 60.0,
        format!("KS null rejection rate {rate:.3} (<= 0.04), fdd reference passed {fdd_pass}/100 (>= 95) in {secs:.0}s"),
    );
}

fn run_binary(config: &Path, out: &Path, workers: usize) {
    let status = Command::new(env!("CARGO_BIN_EXE_pwalk"))
        .arg("run")
        .arg(config)
        .arg("--out")
        .arg(out)
        .arg("--workers")
        .arg(workers.to_string())
        .output()
        .expect("pwalk binary runs");
    let code = status.status.code();
    assert!(matches!(code, Some(0) | Some(1)), "pwalk run exited with {code:?}: {}", String::from_utf8_lossy(&status.stderr));
}

/// Every output file except `timing.json`, sorted by name.
fn outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "timing.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn reproducibility(suite: &mut Suite) {
    let tmp = tempfile::tempdir().unwrap();
    let eta = "{ family = \"gaussian\", mean = 0.0, sd = 1.0 }";
    let configs = [
        ("clt_joint", walk_toml("clt_joint", "", EXP1, eta, 1e3, "[0.5, 1.0, 2.0]", 2000)),
        ("lln_visits", walk_toml("lln_visits", "", EXP1, EXP1, 1e3, "[0.01, 0.1, 1.0]", 1000)),
        ("limit_sample", limit_toml("type = \"inverse_record\"\na = 1.0\nb = 0.5\nmu = 0.0\nu = 1.0", 5000)),
    ];
    let mut identical = true;
    let mut files = 0;
    for (name, toml) in &configs {
        let cfg = tmp.path().join(format!("{name}.toml"));
        fs::write(&cfg, toml).unwrap();
        let one = tmp.path().join(format!("{name}-1"));
        let eight = tmp.path().join(format!("{name}-8"));
        run_binary(&cfg, &one, 1);
        run_binary(&cfg, &eight, 8);
        let (a, b) = (outputs(&one), outputs(&eight));
        files += a.len();
        identical &= a == b && a.iter().any(|(f, _)| f == "report.json");
    }
    suite.record(12, identical, format!("{files} output files byte-identical with 1 and 8 workers"));
}

fn main() -> ExitCode {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut suite = Suite { workers, outcomes: Vec::new(), sandwiches: Vec::new() };

    oracle(&mut suite);
    enumeration(&mut suite);
    strong_lln(&mut suite);
    let c6 = boundary_flt(&mut suite);
    weak_lln_failure(&mut suite, c6);
    regvar_flt(&mut suite);
    limit_objects(&mut suite);
    brownian_fdd(&mut suite);
    two_term_centering(&mut suite);
    null_calibration(&mut suite);
    reproducibility(&mut suite);

    let broken: Vec<&str> = suite.sandwiches.iter().filter(|(_, ok)| !ok).map(|(l, _)| l.as_str()).collect();
    let summary = if broken.is_empty() {
        format!("tau-1 <= N <= rho on every replication of {} runs", suite.sandwiches.len())
    } else {
        format!("violated in {}", broken.join(", "))
    };
    suite.record(1, broken.is_empty(), summary);

    suite.outcomes.sort_by_key(|o| o.id);
    let mut failures = 0;
    for o in &suite.outcomes {
        println!("{} criterion {:>2}: {}", if o.pass { "PASS" } else { "FAIL" }, o.id, o.summary);
        failures += usize::from(!o.pass);
    }
    println!("{} of {} criteria pass", suite.outcomes.len() - failures, suite.outcomes.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

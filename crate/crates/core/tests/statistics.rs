//! Large-sample checks of the samplers against their closed forms. Seeds
//! are fixed, so each test is deterministic.

use std::collections::HashMap;

use pwalk_core::increments::{JointIncrementModel, MarginalSpec};
use pwalk_core::limit::{cdf_x, gaussian_fdd_reference, sample_inverse_record, sample_prm};
use pwalk_core::rng::{domain, Stream};
use pwalk_core::verify::{fdd_gaussian_check, ks_one_sample, FddSettings, SampleMatrix, DEFAULT_LEVEL};
use pwalk_core::walk::{LevelGrid, PathSimulator};
use pwalk_core::HorizonPolicy;

const SEED: u64 = 7;

fn draws(law: &MarginalSpec, n: usize, stream: u64) -> Vec<f64> {
    let mut src = Stream::with_domain(SEED, domain::REFERENCE, stream);
    (0..n).map(|_| law.sample(&mut src)).collect()
}

#[test]
fn marginal_samplers_match_their_cdf() {
    let laws = [
        MarginalSpec::Exponential { rate: 2.0 },
        MarginalSpec::Gaussian { mean: -1.0, sd: 3.0 },
        MarginalSpec::ShiftedPareto { alpha: 2.5, scale: 1.0, shift: -1.0 },
        MarginalSpec::ShiftedPareto { alpha: 0.5, scale: 2.0, shift: 0.0 },
        MarginalSpec::Uniform { lo: -2.0, hi: 5.0 },
    ];
    for (i, law) in laws.iter().enumerate() {
        let xs = draws(law, 1_000_000, i as u64);
        let ks = ks_one_sample(&xs, |x| law.cdf(x), DEFAULT_LEVEL).unwrap();
        assert!(ks.pass, "{law:?}: {ks:?}");
        if let Some(v) = law.variance().finite() {
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let se = (v / xs.len() as f64).sqrt();
            assert!((mean - law.mean().unwrap()).abs() < 4.0 * se, "{law:?}: mean {mean}");
        }
    }
}

#[test]
fn two_point_frequencies() {
    let law = MarginalSpec::TwoPoint { v1: -1.0, p1: 0.3, v2: 4.0 };
    let xs = draws(&law, 200_000, 99);
    let low = xs.iter().filter(|&&x| x == -1.0).count() as f64 / xs.len() as f64;
    assert!(xs.iter().all(|&x| x == -1.0 || x == 4.0));
    assert!((low - 0.3).abs() < 4.0 * (0.3f64 * 0.7 / 200_000.0).sqrt());
}

/// `xi = 1`, `eta` in {0, 5}, level 3.5: only `n = 1..=4` can visit, and
/// they do exactly when `eta_n = 0`. All 16 patterns are equally likely.
fn enumerated_law() -> HashMap<(u64, u64, u64), f64> {
    let mut law = HashMap::new();
    for mask in 0u32..16 {
        let zero = |n: u64| mask & (1 << (n - 1)) != 0;
        let tau = (1..=4).find(|&n| !zero(n)).unwrap_or(5);
        let visits = (1..=4).filter(|&n| zero(n)).count() as u64;
        let rho = (1..=4).rev().find(|&n| zero(n)).unwrap_or(0);
        *law.entry((tau, visits, rho)).or_insert(0.0) += 1.0 / 16.0;
    }
    law
}

#[test]
fn joint_law_matches_enumeration() {
    let model = JointIncrementModel::independent(
        MarginalSpec::Constant { value: 1.0 },
        MarginalSpec::TwoPoint { v1: 0.0, p1: 0.5, v2: 5.0 },
    )
    .unwrap();
    let sim = PathSimulator::new(model, LevelGrid::new(vec![3.5]).unwrap(), HorizonPolicy::Exact).unwrap();
    let n = 100_000;
    let mut counts: HashMap<(u64, u64, u64), f64> = HashMap::new();
    for i in 0..n {
        let r = sim.simulate(&mut Stream::new(SEED, i)).unwrap();
        *counts.entry((r.tau[0], r.n_visits[0], r.rho[0])).or_insert(0.0) += 1.0 / n as f64;
    }
    let exact = enumerated_law();
    let mut keys: Vec<_> = exact.keys().chain(counts.keys()).copied().collect();
    keys.sort();
    keys.dedup();
    let tv = 0.5 * keys.iter().map(|k| (exact.get(k).unwrap_or(&0.0) - counts.get(k).unwrap_or(&0.0)).abs()).sum::<f64>();
    assert!(tv <= 0.01, "total variation {tv}");
}

#[test]
fn prm_count_and_median_mark() {
    let (a, b, window, eps) = (2.0, 0.5, 3.0, 0.01);
    let expected = a * window * f64::powf(eps, -b);
    let reps = 2000;
    let mut total = 0usize;
    let mut marks = Vec::new();
    for i in 0..reps {
        let atoms = sample_prm(a, b, window, eps, &mut Stream::with_domain(SEED, domain::LIMIT, i)).unwrap();
        assert!(atoms.atoms().iter().all(|x| x.t <= window && x.mark > eps));
        assert!(atoms.atoms().windows(2).all(|w| w[0].t <= w[1].t));
        total += atoms.len();
        marks.extend(atoms.atoms().iter().map(|x| x.mark));
    }
    let mean = total as f64 / reps as f64;
    assert!((mean - expected).abs() < 4.0 * (expected / reps as f64).sqrt(), "mean count {mean} vs {expected}");

    // P{mark > x} = (x / eps)^-b, so the median is eps 2^(1/b).
    let below = marks.iter().filter(|&&m| m <= eps * f64::powf(2.0, 1.0 / b)).count() as f64 / marks.len() as f64;
    assert!((below - 0.5).abs() < 4.0 * (0.25 / marks.len() as f64).sqrt(), "median fraction {below}");
}

#[test]
fn inverse_record_is_insensitive_to_truncation() {
    let (a, b, mu, u) = (1.0, 0.7, 0.5, 2.0);
    for eps in [1e-3 * u, 1e-5 * u] {
        let mut xs = Vec::new();
        for i in 0..20_000 {
            let mut src = Stream::with_domain(SEED, domain::LIMIT, i);
            xs.push(sample_inverse_record(a, b, mu, u, eps, &mut src).unwrap());
        }
        let ks = ks_one_sample(&xs, |y| inverse_record_cdf(a, b, mu, u, y), DEFAULT_LEVEL).unwrap();
        assert!(ks.pass, "eps {eps}: {ks:?}");
    }
}

/// `P{X(u) <= y}` for marks with tail `a x^-b` and drift `mu > 0`, `y < u/mu`:
/// one minus the probability that no atom before `y` crosses the moving
/// barrier, `exp(-int_0^y a (u - mu s)^-b ds)`.
fn inverse_record_cdf(a: f64, b: f64, mu: f64, u: f64, y: f64) -> f64 {
    if y <= 0.0 {
        return 0.0;
    }
    if y >= u / mu {
        return 1.0;
    }
    let integral = a / (mu * (1.0 - b)) * (u.powf(1.0 - b) - (u - mu * y).powf(1.0 - b));
    -f64::exp_m1(-integral)
}

#[test]
fn inverse_record_matches_boundary_law_for_unit_index() {
    // b = 1 is the boundary-tail case with c = a.
    let (c, mu, u) = (1.5, 1.0, 1.0);
    let xs: Vec<f64> = (0..20_000)
        .map(|i| sample_inverse_record(c, 1.0, mu, u, 1e-4 * u, &mut Stream::with_domain(SEED, domain::LIMIT, i)).unwrap())
        .collect();
    let ks = ks_one_sample(&xs, |y| cdf_x(mu, c, u, y), DEFAULT_LEVEL).unwrap();
    assert!(ks.pass, "{ks:?}");
}

#[test]
fn brownian_reference_has_min_covariance() {
    let u_grid = [0.25, 1.0, 3.0];
    let mut m = SampleMatrix::with_capacity(3, 100_000);
    for i in 0..100_000 {
        m.push_row(&gaussian_fdd_reference(&u_grid, &mut Stream::with_domain(SEED, domain::REFERENCE, i))).unwrap();
    }
    let (cov, se) = m.covariance_with_se();
    for i in 0..3 {
        for j in 0..3 {
            let target = u_grid[i].min(u_grid[j]);
            assert!((cov[i][j] - target).abs() < 5.0 * se[i][j], "cov[{i}][{j}] = {}", cov[i][j]);
        }
    }
    assert!(fdd_gaussian_check(&m, &u_grid, &FddSettings::default()).unwrap().pass);
}

#[test]
fn ks_rejects_at_close_to_nominal_rate() {
    let law = MarginalSpec::Gaussian { mean: 0.0, sd: 1.0 };
    let runs = 400;
    let rejected = (0..runs)
        .filter(|&i| !ks_one_sample(&draws(&law, 500, 10_000 + i), |x| law.cdf(x), 0.05).unwrap().pass)
        .count();
    let rate = rejected as f64 / runs as f64;
    assert!(rate <= 0.08, "rejection rate {rate}");
}

#[test]
fn ks_detects_a_shifted_law() {
    let law = MarginalSpec::Gaussian { mean: 0.0, sd: 1.0 };
    let shifted = MarginalSpec::Gaussian { mean: 0.1, sd: 1.0 };
    let ks = ks_one_sample(&draws(&shifted, 20_000, 5), |x| law.cdf(x), DEFAULT_LEVEL).unwrap();
    assert!(!ks.pass);
}

//! Cross-module invariants checked against independent oracles.

mod common;

use bdcp::analysis::{
    estimate_moments, ks_one_sample_critical, one_sample_ks, sample_intensity_ensemble, Algorithm,
};
use bdcp::laplace::{
    limiting_laplace, limiting_laplace_finite, solve_l, SolverConfig, TimeGrid,
};
use bdcp::model::{MarkDistribution, ModelParams};
use bdcp::simulate::{simulate_thinning, EventKind};
use bdcp::stationarity::{
    check_c2, excitation_matrix, moment_report, stationary_mean, stationary_second_moments,
    stationary_variance_correlation,
};
use common::{benchmark, random_params_with_radius, seeded, shot_noise};
use rand::Rng;

const MARK_CATALOGUE: [MarkDistribution; 4] = [
    MarkDistribution::Zero,
    MarkDistribution::PointMass { value: 0.8 },
    MarkDistribution::Exponential { rate: 1.3 },
    MarkDistribution::Gamma { shape: 2.0, scale: 0.4 },
];

#[test]
fn mark_laplace_is_monotone_decreasing() {
    let us: Vec<f64> = (0..200).map(|i| i as f64 * 0.05).collect();
    for dist in MARK_CATALOGUE {
        let values: Vec<f64> = us.iter().map(|&u| dist.laplace(u).unwrap()).collect();
        assert!(values.windows(2).all(|w| w[1] <= w[0]), "not decreasing: {dist:?}");
        assert!(values.iter().all(|&v| v > 0.0 && v <= 1.0));
    }
}

#[test]
fn laplace_derivative_at_zero_recovers_mean() {
    // second-order one-sided stencil over a total width of 1e-5
    let h = 5e-6;
    for dist in MARK_CATALOGUE {
        let mean = dist.mean();
        if mean == 0.0 {
            continue;
        }
        let f0 = dist.laplace(0.0).unwrap();
        let f1 = dist.laplace(h).unwrap();
        let f2 = dist.laplace(2.0 * h).unwrap();
        let derivative = (-3.0 * f0 + 4.0 * f1 - f2) / (2.0 * h);
        let relative = ((-derivative) - mean).abs() / mean;
        assert!(relative < 1e-6, "{dist:?}: relative error {relative}");
    }
}

#[test]
fn empirical_mark_laplace_matches_closed_form() {
    let mut rng = seeded(2024);
    let n = 1_000_000usize;
    for dist in MARK_CATALOGUE {
        let samples: Vec<f64> = (0..n).map(|_| dist.sample(&mut rng)).collect();
        for u in [0.5, 1.0, 2.0] {
            let transformed: Vec<f64> = samples.iter().map(|&x| (-u * x).exp()).collect();
            let mean = bdcp::analysis::pairwise_sum(&transformed) / n as f64;
            let dev: Vec<f64> = transformed.iter().map(|v| (v - mean) * (v - mean)).collect();
            let var = bdcp::analysis::pairwise_sum(&dev) / (n as f64 - 1.0);
            let se = (var / n as f64).sqrt();
            let want = dist.laplace(u).unwrap();
            // the 1e-12 floor covers pure rounding in the degenerate cases
            assert!(
                (mean - want).abs() <= 4.0 * se + 1e-12,
                "{dist:?} at u={u}: {mean} vs {want} (se {se})"
            );
        }
    }
}

#[test]
fn stationary_mean_and_variance_are_additive_in_the_external_rates() {
    let mut rng = seeded(5);
    for _ in 0..20 {
        let radius = rng.gen_range(0.1..0.9);
        let mut params = random_params_with_radius(&mut rng, radius);
        let (a1, a2) = (params.rho1, params.rho2);
        let (b1, b2) = (rng.gen_range(0.1..1.0), rng.gen_range(0.1..1.0));

        let eval = |p: &ModelParams| {
            let m = stationary_mean(p).unwrap();
            let (v1, v2, _) = stationary_variance_correlation(p).unwrap();
            [m.0, m.1, v1, v2]
        };
        params.rho1 = a1;
        params.rho2 = a2;
        let at_a = eval(&params);
        params.rho1 = b1;
        params.rho2 = b2;
        let at_b = eval(&params);
        params.rho1 = a1 + b1;
        params.rho2 = a2 + b2;
        let at_sum = eval(&params);
        for i in 0..4 {
            let want = at_a[i] + at_b[i];
            assert!(
                (at_sum[i] - want).abs() <= 1e-9 * want.abs().max(1.0),
                "component {i}: {} vs {want}",
                at_sum[i]
            );
        }
    }
}

#[test]
fn variance_routes_agree_on_random_stable_models() {
    // closed-form coefficient route vs the 3x3 linear system
    let mut rng = seeded(17);
    for _ in 0..100 {
        let radius = rng.gen_range(0.05..0.95);
        let params = random_params_with_radius(&mut rng, radius);
        let (m1, m2) = stationary_mean(&params).unwrap();
        let (m2_1, m2_2, _) = stationary_second_moments(&params).unwrap();
        let (v1, v2, _) = stationary_variance_correlation(&params).unwrap();
        let direct1 = m2_1 - m1 * m1;
        let direct2 = m2_2 - m2 * m2;
        assert!(
            (v1 - direct1).abs() <= 1e-9 * direct1.abs().max(1e-3),
            "v1 {v1} vs {direct1} (radius {radius})"
        );
        assert!(
            (v2 - direct2).abs() <= 1e-9 * direct2.abs().max(1e-3),
            "v2 {v2} vs {direct2} (radius {radius})"
        );
    }
}

#[test]
fn rate_scaling_leaves_the_excitation_matrix_invariant() {
    let mut rng = seeded(29);
    for _ in 0..20 {
        let radius = rng.gen_range(0.1..1.4);
        let params = random_params_with_radius(&mut rng, radius);
        let c = rng.gen_range(0.2..5.0);
        let mut scaled = params.clone();
        scaled.delta1 *= c;
        scaled.delta2 *= c;
        scaled.rho1 *= c;
        scaled.rho2 *= c;
        // mark means scale with delta to keep the ratios fixed
        let rescale = |d: &MarkDistribution| match *d {
            MarkDistribution::Zero => MarkDistribution::Zero,
            MarkDistribution::PointMass { value } => MarkDistribution::PointMass { value: value * c },
            MarkDistribution::Exponential { rate } => MarkDistribution::Exponential { rate: rate / c },
            MarkDistribution::Gamma { shape, scale } => MarkDistribution::Gamma { shape, scale: scale * c },
        };
        scaled.g11 = rescale(&params.g11);
        scaled.g12 = rescale(&params.g12);
        scaled.g21 = rescale(&params.g21);
        scaled.g22 = rescale(&params.g22);
        let a = excitation_matrix(&params).0;
        let b = excitation_matrix(&scaled).0;
        for i in 0..2 {
            for j in 0..2 {
                assert!((a[i][j] - b[i][j]).abs() < 1e-12);
            }
        }
        assert_eq!(check_c2(&params).0, check_c2(&scaled).0);
    }
}

#[test]
fn stability_gaps_are_positive_under_the_radius_condition() {
    let mut rng = seeded(31);
    for _ in 0..50 {
        let radius = rng.gen_range(0.05..0.98);
        let params = random_params_with_radius(&mut rng, radius);
        let report = moment_report(&params).unwrap();
        assert!(report.gap1 > 0.0 && report.gap2 > 0.0 && report.gap > 0.0);
    }
}

/// Fixed-step fourth-order Runge-Kutta for the full forward system,
/// independent of the production trapezoid recursion. The state is the
/// vector of all rungs; sources use the simultaneous-jump product of the two
/// mark transforms.
fn rk4_rungs(params: &ModelParams, v: &[f64], t_end: f64, steps: usize) -> Vec<f64> {
    let m = v.len();
    let mut y: Vec<f64> = (0..m).map(|i| v[m - 1 - i]).collect();
    let derivative = |y: &[f64]| -> Vec<f64> {
        (0..m)
            .map(|i| {
                let delta = if i % 2 == 0 { params.delta2 } else { params.delta1 };
                let mut dy = -delta * y[i];
                if i >= 2 {
                    if i % 2 == 0 {
                        dy += 1.0
                            - params.g12.laplace(y[i - 1]).unwrap()
                                * params.g22.laplace(y[i - 2]).unwrap();
                    } else {
                        dy += 1.0
                            - params.g11.laplace(y[i - 2]).unwrap()
                                * params.g21.laplace(y[i - 3]).unwrap();
                    }
                }
                dy
            })
            .collect()
    };
    let h = t_end / steps as f64;
    for _ in 0..steps {
        let k1 = derivative(&y);
        let y2: Vec<f64> = y.iter().zip(&k1).map(|(a, k)| a + 0.5 * h * k).collect();
        let k2 = derivative(&y2);
        let y3: Vec<f64> = y.iter().zip(&k2).map(|(a, k)| a + 0.5 * h * k).collect();
        let k3 = derivative(&y3);
        let y4: Vec<f64> = y.iter().zip(&k3).map(|(a, k)| a + h * k).collect();
        let k4 = derivative(&y4);
        for i in 0..m {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    y
}

/// Step-doubling wrapper: halve the step until the watched component moves
/// by less than `tol / 4`.
fn rk4_adaptive(params: &ModelParams, v: &[f64], t_end: f64, watch: usize, tol: f64) -> f64 {
    let mut steps = 64;
    let mut prev = rk4_rungs(params, v, t_end, steps)[watch];
    loop {
        steps *= 2;
        let next = rk4_rungs(params, v, t_end, steps)[watch];
        if (next - prev).abs() < tol / 4.0 || steps > 1 << 20 {
            return next;
        }
        prev = next;
    }
}

#[test]
fn trapezoid_solve_matches_rk4_oracle() {
    // unit point-mass marks everywhere, unit decay, all initial values 1
    let params = ModelParams {
        delta1: 1.0,
        delta2: 1.0,
        rho1: 1.0,
        rho2: 1.0,
        lambda0: [0.0, 0.0],
        h1: MarkDistribution::PointMass { value: 1.0 },
        h2: MarkDistribution::PointMass { value: 1.0 },
        g11: MarkDistribution::PointMass { value: 1.0 },
        g12: MarkDistribution::PointMass { value: 1.0 },
        g21: MarkDistribution::PointMass { value: 1.0 },
        g22: MarkDistribution::PointMass { value: 1.0 },
    };
    let v = [1.0, 1.0, 1.0, 1.0];
    let grid = TimeGrid::geometric(1.0, 1e-5, 1.002).unwrap();
    let solved = solve_l(&params, &v, &grid).unwrap();
    // l_3 at t = 1 (zero-based rung 2)
    let got = solved.l_at(2, 1.0).unwrap();
    let want = rk4_adaptive(&params, &v, 1.0, 2, 1e-9);
    assert!((got - want).abs() < 1e-6, "l_3(1): {got} vs {want}");

    // a second, asymmetric configuration with mixed marks on every rung
    let mut rng = seeded(47);
    let params = random_params_with_radius(&mut rng, 0.6);
    let v = [0.9, 0.3, 1.4, 0.7, 0.2, 1.1];
    let grid = TimeGrid::geometric(2.0, 1e-5, 1.002).unwrap();
    let solved = solve_l(&params, &v, &grid).unwrap();
    for watch in 2..6 {
        let got = solved.l_at(watch, 2.0).unwrap();
        let want = rk4_adaptive(&params, &v, 2.0, watch, 1e-9);
        assert!((got - want).abs() < 1e-6, "rung {watch}: {got} vs {want}");
    }
}

#[test]
fn halving_the_grid_stays_within_the_error_estimate() {
    let cfg = SolverConfig::default();
    let halved = SolverConfig {
        dt0_factor: cfg.dt0_factor / 2.0,
        grid_ratio: 1.0 + (cfg.grid_ratio - 1.0) / 2.0,
        ..cfg
    };
    let mut rng = seeded(53);
    for _ in 0..5 {
        let radius = rng.gen_range(0.2..0.7);
        let params = random_params_with_radius(&mut rng, radius);
        let (v1, v2) = (rng.gen_range(0.2..2.0), rng.gen_range(0.2..2.0));
        let coarse = limiting_laplace_finite(&params, v1, v2, 3, &cfg).unwrap();
        let fine = limiting_laplace_finite(&params, v1, v2, 3, &halved).unwrap();
        assert!(
            (fine.value - coarse.value).abs() < 4.0 * coarse.error_estimate.max(1e-15),
            "change {} vs estimate {}",
            (fine.value - coarse.value).abs(),
            coarse.error_estimate
        );
    }
}

#[test]
fn limiting_transform_decreases_in_each_argument() {
    let params = benchmark();
    let cfg = SolverConfig::default();
    let value = |v1: f64, v2: f64| limiting_laplace(&params, v1, v2, 1e-9, &cfg).unwrap().value;
    let base = value(0.8, 0.6);
    assert!(value(1.2, 0.6) < base);
    assert!(value(0.8, 1.0) < base);
    let finite = |v1: f64, v2: f64| limiting_laplace_finite(&params, v1, v2, 3, &cfg).unwrap().value;
    let base = finite(0.8, 0.6);
    assert!(finite(1.2, 0.6) < base);
    assert!(finite(0.8, 1.0) < base);
}

#[test]
fn external_interarrivals_pass_ks_against_the_exponential_law() {
    // pure Poisson sub-case: all marks zero, no initial intensity
    let rho = 2.0;
    let mut params = shot_noise(rho, 1.0, 1.0);
    params.h1 = MarkDistribution::Zero;
    let n = 10_000usize;
    let horizon = n as f64 / rho * 1.2;
    let history = simulate_thinning(&params, horizon, 71).unwrap();
    let times = history.times_of(EventKind::External1);
    assert!(times.len() >= n, "only {} arrivals", times.len());
    let gaps: Vec<f64> = std::iter::once(times[0])
        .chain(times.windows(2).map(|w| w[1] - w[0]))
        .take(n)
        .collect();
    let d = one_sample_ks(&gaps, |x| 1.0 - (-rho * x).exp());
    let crit = ks_one_sample_critical(0.01, n);
    assert!(d < crit, "KS statistic {d} vs critical {crit}");
}

#[test]
fn shot_noise_monte_carlo_matches_the_closed_forms() {
    // mean rho mu_h / delta and transform (1 + v/beta)^(-rho/delta)
    let params = shot_noise(1.0, 2.0, 1.0);
    let (n_paths, horizon, burn_in) = (40_000, 25.0, 20.0);
    let est = estimate_moments(&params, n_paths, horizon, burn_in, 19).unwrap();
    let want_mean = 1.0 * 0.5 / 1.0;
    let z = (est.mean[0].0 - want_mean) / est.mean[0].1;
    assert!(z.abs() <= 4.0, "mean z = {z}");

    let (emp, se) = bdcp::analysis::empirical_laplace(&params, 1.0, 0.0, n_paths, horizon, burn_in, 19).unwrap();
    let want = 1.5f64.powf(-1.0);
    let z = (emp - want) / se;
    assert!(z.abs() <= 4.0, "laplace z = {z}");
}

#[test]
fn quadrupling_paths_roughly_halves_the_stderr() {
    let params = benchmark();
    let small = estimate_moments(&params, 8_000, 12.0, 10.0, 61).unwrap();
    let large = estimate_moments(&params, 32_000, 12.0, 10.0, 61).unwrap();
    for (a, b) in [
        (small.mean[0], large.mean[0]),
        (small.mean[1], large.mean[1]),
        (small.variance[0], large.variance[0]),
    ] {
        let ratio = b.1 / a.1;
        assert!(
            (ratio - 0.5).abs() <= 0.1,
            "stderr ratio {ratio} not within 20% of 1/2"
        );
    }
}

#[test]
fn ensemble_is_order_independent_and_deterministic() {
    let params = benchmark();
    let a = sample_intensity_ensemble(&params, Algorithm::Thinning, 500, 6.0, 3).unwrap();
    let b = sample_intensity_ensemble(&params, Algorithm::Thinning, 500, 6.0, 3).unwrap();
    assert_eq!(a, b);
    let c =
        sample_intensity_ensemble(&params, Algorithm::Cluster { generations: 12 }, 500, 6.0, 3)
            .unwrap();
    assert_eq!(c.len(), 500);
}

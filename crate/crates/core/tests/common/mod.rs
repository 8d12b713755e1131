//! Shared fixtures for the integration suites.

use bdcp::model::{MarkDistribution, ModelParams};
use bdcp::stationarity;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Symmetric cross-exciting benchmark: decay 2, exponential marks with
/// internal mean 1/2 and external mean 1, unit external rates. Spectral
/// radius 0.5, stationary mean (1, 1), variance 19/16, cross moment 25/16,
/// correlation 9/19.
pub fn benchmark() -> ModelParams {
    ModelParams {
        delta1: 2.0,
        delta2: 2.0,
        rho1: 1.0,
        rho2: 1.0,
        lambda0: [1.0, 1.0],
        h1: MarkDistribution::Exponential { rate: 1.0 },
        h2: MarkDistribution::Exponential { rate: 1.0 },
        g11: MarkDistribution::Exponential { rate: 2.0 },
        g12: MarkDistribution::Exponential { rate: 2.0 },
        g21: MarkDistribution::Exponential { rate: 2.0 },
        g22: MarkDistribution::Exponential { rate: 2.0 },
    }
}

/// Pure shot-noise model with exponential external marks on component 1.
#[allow(dead_code)]
pub fn shot_noise(rho: f64, beta: f64, delta: f64) -> ModelParams {
    ModelParams {
        delta1: delta,
        delta2: delta,
        rho1: rho,
        rho2: 0.0,
        lambda0: [0.0, 0.0],
        h1: MarkDistribution::Exponential { rate: beta },
        h2: MarkDistribution::Zero,
        g11: MarkDistribution::Zero,
        g12: MarkDistribution::Zero,
        g21: MarkDistribution::Zero,
        g22: MarkDistribution::Zero,
    }
}

/// A mark law of the requested mean with a kind picked by the generator.
pub fn mark_with_mean(rng: &mut ChaCha12Rng, mean: f64) -> MarkDistribution {
    if mean <= 0.0 {
        return MarkDistribution::Zero;
    }
    match rng.gen_range(0..3) {
        0 => MarkDistribution::PointMass { value: mean },
        1 => MarkDistribution::Exponential { rate: 1.0 / mean },
        _ => {
            let shape = [1.5, 2.0, 3.0][rng.gen_range(0..3)];
            MarkDistribution::Gamma { shape, scale: mean / shape }
        }
    }
}

/// Random parameter set whose excitation matrix has the requested spectral
/// radius (scaled exactly), with mixed mark kinds.
pub fn random_params_with_radius(rng: &mut ChaCha12Rng, target_radius: f64) -> ModelParams {
    let delta1 = rng.gen_range(0.6..2.5);
    let delta2 = rng.gen_range(0.6..2.5);
    // entries of the excitation matrix before scaling
    let mut entries = [[0.0f64; 2]; 2];
    for row in &mut entries {
        for e in row.iter_mut() {
            *e = rng.gen_range(0.05..1.0);
        }
    }
    let tr = entries[0][0] + entries[1][1];
    let disc = (entries[0][0] - entries[1][1]).powi(2) + 4.0 * entries[0][1] * entries[1][0];
    let radius = 0.5 * (tr + disc.sqrt());
    let scale = target_radius / radius;
    // entries: [[g22/d2, g12/d2], [g21/d1, g11/d1]]
    let mu_g22 = entries[0][0] * scale * delta2;
    let mu_g12 = entries[0][1] * scale * delta2;
    let mu_g21 = entries[1][0] * scale * delta1;
    let mu_g11 = entries[1][1] * scale * delta1;
    let mu_h1 = rng.gen_range(0.3..1.5);
    let mu_h2 = rng.gen_range(0.3..1.5);
    let params = ModelParams {
        delta1,
        delta2,
        rho1: rng.gen_range(0.3..1.5),
        rho2: rng.gen_range(0.3..1.5),
        lambda0: [rng.gen_range(0.0..1.5), rng.gen_range(0.0..1.5)],
        h1: mark_with_mean(rng, mu_h1),
        h2: mark_with_mean(rng, mu_h2),
        g11: mark_with_mean(rng, mu_g11),
        g12: mark_with_mean(rng, mu_g12),
        g21: mark_with_mean(rng, mu_g21),
        g22: mark_with_mean(rng, mu_g22),
    };
    let (_, got) = stationarity::check_c2(&params);
    assert!((got - target_radius).abs() < 1e-9, "radius {got} != {target_radius}");
    params
}

pub fn seeded(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

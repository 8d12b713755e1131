//! Model parameters and mark distributions.
//!
//! A bivariate dynamic contagion process is a pair of counting processes
//! `(N^1, N^2)` whose intensities decay exponentially between jumps and jump
//! upward at two kinds of epochs: external arrivals (Poisson, rates `rho_k`,
//! marks `Y^k ~ h_k`) and the process's own events, where an event of
//! component `k'` simultaneously adds a mark `Z^{1,k'} ~ g_{1,k'}` to the
//! first intensity and `Z^{2,k'} ~ g_{2,k'}` to the second.

use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stationarity;

/// A nonnegative jump-size law with closed-form Laplace transform and first
/// two raw moments.
///
/// The catalogue is deliberately closed: every member has a finite second
/// moment, which the stationary variance formulas need. `Zero` is the unit
/// mass at the origin (transform identically 1); it is how a jump term is
/// switched off.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum MarkDistribution {
    Zero,
    PointMass { value: f64 },
    Exponential { rate: f64 },
    Gamma { shape: f64, scale: f64 },
}

impl MarkDistribution {
    /// Check the distribution's parameters.
    pub fn validate(&self) -> Result<()> {
        match *self {
            MarkDistribution::Zero => Ok(()),
            MarkDistribution::PointMass { value } => {
                if value.is_finite() && value >= 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidModel(format!(
                        "point mass value must be finite and >= 0, got {value}"
                    )))
                }
            }
            MarkDistribution::Exponential { rate } => {
                if rate.is_finite() && rate > 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidModel(format!(
                        "exponential rate must be finite and > 0, got {rate}"
                    )))
                }
            }
            MarkDistribution::Gamma { shape, scale } => {
                if shape.is_finite() && shape > 0.0 && scale.is_finite() && scale > 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidModel(format!(
                        "gamma shape and scale must be finite and > 0, got ({shape}, {scale})"
                    )))
                }
            }
        }
    }

    /// `E[exp(-u X)]` for `u >= 0`; always in `(0, 1]`.
    pub fn laplace(&self, u: f64) -> Result<f64> {
        if !u.is_finite() || u < 0.0 {
            return Err(Error::Domain(format!(
                "Laplace transform argument must be finite and >= 0, got {u}"
            )));
        }
        Ok(self.laplace_nn(u))
    }

    /// Laplace transform on the nonnegative half-line, no domain check.
    /// Hot path for the ODE recursion, where `u >= 0` holds by construction.
    #[inline]
    pub(crate) fn laplace_nn(&self, u: f64) -> f64 {
        debug_assert!(u >= 0.0);
        match *self {
            MarkDistribution::Zero => 1.0,
            MarkDistribution::PointMass { value } => (-value * u).exp(),
            MarkDistribution::Exponential { rate } => rate / (rate + u),
            MarkDistribution::Gamma { shape, scale } => (1.0 + scale * u).powf(-shape),
        }
    }

    /// First raw moment.
    pub fn mean(&self) -> f64 {
        match *self {
            MarkDistribution::Zero => 0.0,
            MarkDistribution::PointMass { value } => value,
            MarkDistribution::Exponential { rate } => 1.0 / rate,
            MarkDistribution::Gamma { shape, scale } => shape * scale,
        }
    }

    /// Second raw moment.
    pub fn second_moment(&self) -> f64 {
        match *self {
            MarkDistribution::Zero => 0.0,
            MarkDistribution::PointMass { value } => value * value,
            MarkDistribution::Exponential { rate } => 2.0 / (rate * rate),
            MarkDistribution::Gamma { shape, scale } => shape * (shape + 1.0) * scale * scale,
        }
    }

    /// `(mean, second raw moment)`.
    pub fn moments(&self) -> (f64, f64) {
        (self.mean(), self.second_moment())
    }

    /// Draw one mark.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            MarkDistribution::Zero => 0.0,
            MarkDistribution::PointMass { value } => value,
            MarkDistribution::Exponential { rate } => {
                rand_distr::Exp::new(rate).expect("validated rate").sample(rng)
            }
            MarkDistribution::Gamma { shape, scale } => {
                rand_distr::Gamma::new(shape, scale).expect("validated shape/scale").sample(rng)
            }
        }
    }
}

/// Full parameter set of the bivariate model.
///
/// Internal mark distributions are indexed `g<excited><trigger>`: an event of
/// component 2 adds a `g12` mark to intensity 1 and a `g22` mark to
/// intensity 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Exponential decay rate of intensity 1 (strictly positive).
    pub delta1: f64,
    /// Exponential decay rate of intensity 2 (strictly positive).
    pub delta2: f64,
    /// External Poisson arrival rate feeding intensity 1 (>= 0).
    pub rho1: f64,
    /// External Poisson arrival rate feeding intensity 2 (>= 0).
    pub rho2: f64,
    /// Initial intensities at time 0.
    pub lambda0: [f64; 2],
    /// External mark law for component 1.
    pub h1: MarkDistribution,
    /// External mark law for component 2.
    pub h2: MarkDistribution,
    pub g11: MarkDistribution,
    pub g12: MarkDistribution,
    pub g21: MarkDistribution,
    pub g22: MarkDistribution,
}

/// Outcome of validating a parameter set against the standing assumptions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    /// All six mark laws have finite first moments.
    pub c1_ok: bool,
    /// The excitation matrix has spectral radius strictly below 1.
    pub c2_ok: bool,
    /// Spectral radius of the excitation matrix.
    pub spectral_radius: f64,
    pub messages: Vec<String>,
}

impl ModelParams {
    /// Iterate over all six mark distributions.
    pub fn marks(&self) -> [&MarkDistribution; 6] {
        [&self.h1, &self.h2, &self.g11, &self.g12, &self.g21, &self.g22]
    }

    /// Structural validity: finite positive decay rates, nonnegative arrival
    /// rates and initial intensities, well-formed mark laws.
    pub fn check(&self) -> Result<()> {
        if !(self.delta1.is_finite() && self.delta1 > 0.0) {
            return Err(Error::InvalidModel(format!(
                "delta1 must be finite and > 0, got {}",
                self.delta1
            )));
        }
        if !(self.delta2.is_finite() && self.delta2 > 0.0) {
            return Err(Error::InvalidModel(format!(
                "delta2 must be finite and > 0, got {}",
                self.delta2
            )));
        }
        for (name, rho) in [("rho1", self.rho1), ("rho2", self.rho2)] {
            if !(rho.is_finite() && rho >= 0.0) {
                return Err(Error::InvalidModel(format!(
                    "{name} must be finite and >= 0, got {rho}"
                )));
            }
        }
        for (i, l0) in self.lambda0.iter().enumerate() {
            if !(l0.is_finite() && *l0 >= 0.0) {
                return Err(Error::InvalidModel(format!(
                    "lambda0[{i}] must be finite and >= 0, got {l0}"
                )));
            }
        }
        for mark in self.marks() {
            mark.validate()?;
        }
        Ok(())
    }

    /// Validate against the standing assumptions and report the stability
    /// diagnostics.
    ///
    /// Structural defects are hard errors. A valid parameter set always has
    /// `c1_ok` (the catalogue only contains laws with finite moments);
    /// `c2_ok` holds iff the excitation matrix spectral radius is strictly
    /// below 1. Both degenerate sub-classes are legal: all internal marks
    /// `Zero` (pure shot-noise Cox input) and `rho = 0` (pure mutual
    /// excitation).
    pub fn validate(&self) -> Result<ValidationReport> {
        self.check()?;
        let matrix = stationarity::excitation_matrix(self);
        let radius = matrix.spectral_radius();
        let upper = stationarity::spectral_radius_upper_bound(self);
        let c2_ok = radius < 1.0;
        let mut messages = vec![
            format!(
                "excitation matrix spectral radius {radius}: stability condition {}",
                if c2_ok { "holds" } else { "violated" }
            ),
            format!("trace-form spectral radius upper bound {upper}"),
        ];
        if c2_ok && 1.0 - radius < 1e-12 {
            messages.push(format!(
                "spectral radius {radius} is within 1e-12 of the stability boundary; \
                 stationary moments diverge there and are refused"
            ));
        }
        Ok(ValidationReport { c1_ok: true, c2_ok, spectral_radius: radius, messages })
    }

    pub fn delta_min(&self) -> f64 {
        self.delta1.min(self.delta2)
    }

    pub fn delta_max(&self) -> f64 {
        self.delta1.max(self.delta2)
    }

    /// Parse from TOML text. Round-trips with [`ModelParams::to_toml_string`].
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::InvalidModel(format!("TOML parse error: {e}")))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("serializable parameters")
    }

    /// Parse from JSON text. Round-trips with [`ModelParams::to_json_string`].
    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::InvalidModel(format!("JSON parse error: {e}")))
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable parameters")
    }

    /// Stable identifier of the parameter set (FNV-1a over the canonical JSON
    /// encoding), used to tag simulation outputs.
    pub fn hash_id(&self) -> String {
        let json = serde_json::to_string(self).expect("serializable parameters");
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for byte in json.as_bytes() {
            hash ^= u64::from(*byte);
            hash = hash.wrapping_mul(0x1000_0000_01b3);
        }
        format!("{hash:016x}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    fn zero_model() -> ModelParams {
        ModelParams {
            delta1: 1.0,
            delta2: 1.0,
            rho1: 0.0,
            rho2: 0.0,
            lambda0: [0.0, 0.0],
            h1: MarkDistribution::Zero,
            h2: MarkDistribution::Zero,
            g11: MarkDistribution::Zero,
            g12: MarkDistribution::Zero,
            g21: MarkDistribution::Zero,
            g22: MarkDistribution::Zero,
        }
    }

    #[test]
    fn laplace_closed_forms() {
        let exp = MarkDistribution::Exponential { rate: 1.0 };
        assert_relative_eq!(exp.laplace(1.0).unwrap(), 0.5);
        let gamma = MarkDistribution::Gamma { shape: 2.0, scale: 0.5 };
        assert_relative_eq!(gamma.laplace(3.0).unwrap(), 0.16, max_relative = 1e-12);
        let pm = MarkDistribution::PointMass { value: 2.0 };
        assert_relative_eq!(pm.laplace(0.5).unwrap(), (-1.0f64).exp());
        for dist in [exp, gamma, pm, MarkDistribution::Zero] {
            assert_eq!(dist.laplace(0.0).unwrap(), 1.0);
        }
    }

    #[test]
    fn laplace_rejects_negative_argument() {
        let exp = MarkDistribution::Exponential { rate: 1.0 };
        assert!(matches!(exp.laplace(-0.1), Err(Error::Domain(_))));
    }

    /// Quadrature oracle for the Gamma transform and moments: composite
    /// Simpson of x^{k-1} e^{-x/theta} / (Gamma(k) theta^k) against the
    /// weight, on shapes whose Gamma function value is known exactly.
    /// Substituting x = u^2 removes the kink of the density at the origin.
    fn gamma_quadrature(shape: f64, scale: f64, gamma_fn: f64, weight: impl Fn(f64) -> f64) -> f64 {
        let upper = (scale * (shape + 1.0) * 60.0).sqrt();
        let n = 400_000;
        let h = upper / n as f64;
        let integrand = |u: f64| {
            let x = u * u;
            let density = if x <= 0.0 {
                0.0
            } else {
                x.powf(shape - 1.0) * (-x / scale).exp() / (gamma_fn * scale.powf(shape))
            };
            2.0 * u * density * weight(x)
        };
        let mut sum = 0.0;
        for i in 0..n {
            let a = i as f64 * h;
            let m = a + 0.5 * h;
            let b = a + h;
            sum += h / 6.0 * (integrand(a) + 4.0 * integrand(m) + integrand(b));
        }
        sum
    }

    #[test]
    fn gamma_laplace_matches_quadrature_oracle() {
        // shape 2: Gamma(2) = 1
        let got = MarkDistribution::Gamma { shape: 2.0, scale: 0.5 }.laplace(3.0).unwrap();
        let oracle = gamma_quadrature(2.0, 0.5, 1.0, |x| (-3.0 * x).exp());
        assert_relative_eq!(got, oracle, max_relative = 1e-8);
        // shape 1.5: Gamma(1.5) = sqrt(pi)/2
        let got = MarkDistribution::Gamma { shape: 1.5, scale: 0.8 }.laplace(0.7).unwrap();
        let oracle =
            gamma_quadrature(1.5, 0.8, std::f64::consts::PI.sqrt() / 2.0, |x| (-0.7 * x).exp());
        assert_relative_eq!(got, oracle, max_relative = 1e-8);
    }

    #[test]
    fn moments_closed_forms() {
        assert_eq!(MarkDistribution::PointMass { value: 2.0 }.moments(), (2.0, 4.0));
        assert_eq!(MarkDistribution::Exponential { rate: 1.0 }.moments(), (1.0, 2.0));
        let (m1, m2) = MarkDistribution::Gamma { shape: 2.0, scale: 0.5 }.moments();
        assert_relative_eq!(m1, 1.0);
        assert_relative_eq!(m2, 1.5);
        // cross-check against the quadrature oracle
        let q1 = gamma_quadrature(2.0, 0.5, 1.0, |x| x);
        let q2 = gamma_quadrature(2.0, 0.5, 1.0, |x| x * x);
        assert_relative_eq!(m1, q1, max_relative = 1e-8);
        assert_relative_eq!(m2, q2, max_relative = 1e-8);
    }

    #[test]
    fn sampling_degenerate_laws() {
        let mut rng = crate::rng::stream_rng(1, 0);
        assert_eq!(MarkDistribution::PointMass { value: 3.0 }.sample(&mut rng), 3.0);
        assert_eq!(MarkDistribution::Zero.sample(&mut rng), 0.0);
    }

    #[test]
    fn sampling_matches_mean_within_three_stderr() {
        let dist = MarkDistribution::Exponential { rate: 2.0 };
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(11);
        let n = 1_000_000;
        let mut sum = 0.0;
        for _ in 0..n {
            sum += dist.sample(&mut rng);
        }
        let mean = sum / n as f64;
        // var = 1/rate^2 = 0.25, se = 0.5 / 1000
        assert!((mean - 0.5).abs() < 3.0 * 0.5 / 1000.0, "sample mean {mean}");
    }

    #[test]
    fn validate_examples() {
        let mut params = zero_model();
        let report = params.validate().unwrap();
        assert!(report.c1_ok && report.c2_ok);
        assert_eq!(report.spectral_radius, 0.0);

        params.g11 = MarkDistribution::PointMass { value: 2.0 };
        let report = params.validate().unwrap();
        assert!(!report.c2_ok);
        assert_relative_eq!(report.spectral_radius, 2.0);

        params.delta1 = 0.0;
        assert!(matches!(params.validate(), Err(Error::InvalidModel(_))));
    }

    #[test]
    fn validate_is_pure() {
        let mut params = zero_model();
        params.g11 = MarkDistribution::Exponential { rate: 2.0 };
        params.g12 = MarkDistribution::PointMass { value: 0.2 };
        params.rho1 = 0.3;
        let a = params.validate().unwrap();
        let b = params.validate().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn toml_json_round_trip_identity() {
        let mut params = zero_model();
        params.rho1 = 0.75;
        params.lambda0 = [0.5, 1.25];
        params.h1 = MarkDistribution::Exponential { rate: 1.5 };
        params.g12 = MarkDistribution::Gamma { shape: 2.0, scale: 0.25 };
        params.g21 = MarkDistribution::PointMass { value: 0.4 };

        let toml_text = params.to_toml_string();
        let back = ModelParams::from_toml_str(&toml_text).unwrap();
        assert_eq!(params, back);
        let toml_text2 = back.to_toml_string();
        assert_eq!(toml_text, toml_text2);

        let json_text = params.to_json_string();
        let back = ModelParams::from_json_str(&json_text).unwrap();
        assert_eq!(params, back);
    }

    #[test]
    fn hash_id_is_stable_and_discriminating() {
        let params = zero_model();
        let mut other = zero_model();
        other.rho1 = 0.1;
        assert_eq!(params.hash_id(), params.hash_id());
        assert_ne!(params.hash_id(), other.hash_id());
    }

    mod prop {
        use super::*;
        use proptest::prelude::*;

        fn arb_mark() -> impl Strategy<Value = MarkDistribution> {
            prop_oneof![
                Just(MarkDistribution::Zero),
                (0.0f64..5.0).prop_map(|value| MarkDistribution::PointMass { value }),
                (0.05f64..10.0).prop_map(|rate| MarkDistribution::Exponential { rate }),
                ((0.2f64..6.0), (0.05f64..3.0))
                    .prop_map(|(shape, scale)| MarkDistribution::Gamma { shape, scale }),
            ]
        }

        fn arb_params() -> impl Strategy<Value = ModelParams> {
            (
                (0.05f64..5.0, 0.05f64..5.0),
                (0.0f64..3.0, 0.0f64..3.0),
                (0.0f64..2.0, 0.0f64..2.0),
                [arb_mark(), arb_mark()],
                [arb_mark(), arb_mark(), arb_mark(), arb_mark()],
            )
                .prop_map(|((delta1, delta2), (rho1, rho2), (l1, l2), [h1, h2], [g11, g12, g21, g22])| {
                    ModelParams {
                        delta1,
                        delta2,
                        rho1,
                        rho2,
                        lambda0: [l1, l2],
                        h1,
                        h2,
                        g11,
                        g12,
                        g21,
                        g22,
                    }
                })
        }

        proptest! {
            #[test]
            fn laplace_is_bounded_and_decreasing(
                dist in arb_mark(),
                u1 in 0.0f64..20.0,
                u2 in 0.0f64..20.0,
            ) {
                let (lo, hi) = if u1 <= u2 { (u1, u2) } else { (u2, u1) };
                let a = dist.laplace(lo).unwrap();
                let b = dist.laplace(hi).unwrap();
                prop_assert!(a > 0.0 && a <= 1.0);
                prop_assert!(b <= a + 1e-15);
            }

            #[test]
            fn serialization_round_trips_exactly(params in arb_params()) {
                let toml_back = ModelParams::from_toml_str(&params.to_toml_string()).unwrap();
                prop_assert_eq!(&toml_back, &params);
                let json_back = ModelParams::from_json_str(&params.to_json_string()).unwrap();
                prop_assert_eq!(&json_back, &params);
            }
        }
    }
}

//! Stability condition and closed-form stationary moments.
//!
//! Stability is governed by the 2x2 excitation matrix of mean-mark-to-decay
//! ratios; its spectral radius must be strictly below 1 for a stationary
//! intensity distribution to exist. Under that condition the stationary mean,
//! second moments, variances and correlation of the intensity pair have
//! closed forms, which this module computes twice by independent algebraic
//! routes for auditability.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;

/// Moments may be computed only this far below the stability boundary;
/// closer than this the linear systems are numerically singular.
const BOUNDARY_MARGIN: f64 = 1e-12;

/// The 2x2 matrix of mean internal mark sizes divided by decay rates,
/// laid out as
/// `[[mu_g22/delta2, mu_g12/delta2], [mu_g21/delta1, mu_g11/delta1]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExcitationMatrix(pub [[f64; 2]; 2]);

impl ExcitationMatrix {
    /// Largest-magnitude eigenvalue. For entrywise-nonnegative matrices the
    /// discriminant `(a - d)^2 + 4bc` is nonnegative, so both eigenvalues are
    /// real and the radius is `(tr + sqrt(disc)) / 2`.
    pub fn spectral_radius(&self) -> f64 {
        let [[a, b], [c, d]] = self.0;
        let tr = a + d;
        let disc = (a - d) * (a - d) + 4.0 * b * c;
        0.5 * (tr + disc.max(0.0).sqrt())
    }
}

/// Build the excitation matrix of a parameter set.
pub fn excitation_matrix(params: &ModelParams) -> ExcitationMatrix {
    ExcitationMatrix([
        [params.g22.mean() / params.delta2, params.g12.mean() / params.delta2],
        [params.g21.mean() / params.delta1, params.g11.mean() / params.delta1],
    ])
}

/// `(tr + sqrt(tr^2 + 4 offdiag)) / 2` with the plus sign inside the root:
/// an upper bound on the spectral radius, coinciding with it whenever either
/// diagonal entry vanishes. Reported alongside the exact radius as a cheap
/// conservative diagnostic.
pub fn spectral_radius_upper_bound(params: &ModelParams) -> f64 {
    let x = params.g11.mean() / params.delta1;
    let y = params.g22.mean() / params.delta2;
    let u = params.g12.mean() / params.delta2;
    let v = params.g21.mean() / params.delta1;
    0.5 * (x + y + ((x + y) * (x + y) + 4.0 * u * v).sqrt())
}

/// Stability check: `(ok, spectral_radius)` with strict inequality.
pub fn check_c2(params: &ModelParams) -> (bool, f64) {
    let radius = excitation_matrix(params).spectral_radius();
    (radius < 1.0, radius)
}

/// Error unless the model admits stationary moments (radius strictly below 1
/// with a numerical margin). Returns the radius.
fn require_stationary(params: &ModelParams) -> Result<f64> {
    let (_, radius) = check_c2(params);
    if radius < 1.0 - BOUNDARY_MARGIN {
        Ok(radius)
    } else {
        Err(Error::NonStationary { radius })
    }
}

/// Coefficients of the stationary moment equations `E[A f] = 0` for
/// `f = lambda_1^2`, `lambda_2^2`, `lambda_1 lambda_2`, grouped by monomial.
/// Row X in `{a, b, c}` holds `(X_11, X_22, X_12, X_1, X_2, X_0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorCoeffs {
    pub a: [f64; 6],
    pub b: [f64; 6],
    pub c: [f64; 6],
}

/// All closed-form stationary quantities plus the intermediates needed to
/// audit them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    /// Stationary means `(E[lambda1], E[lambda2])`.
    pub mean: (f64, f64),
    /// Second moments `(E[lambda1^2], E[lambda2^2], E[lambda1 lambda2])`
    /// from the 3x3 linear system.
    pub second: (f64, f64, f64),
    /// Variances from the closed-form coefficient route.
    pub variance: (f64, f64),
    /// Stationary correlation; `None` when either variance vanishes.
    pub correlation: Option<f64>,
    pub spectral_radius: f64,
    /// `delta_i - mean(g_ii)`; strictly positive under the stability condition.
    pub gap1: f64,
    pub gap2: f64,
    /// `gap1 * gap2 - mean(g12) * mean(g21)`; strictly positive under stability.
    pub gap: f64,
    /// `mean_i = sum_j mean_coeffs[i][j] * rho_j`.
    pub mean_coeffs: [[f64; 2]; 2],
    /// `variance_i = sum_j var_coeffs[i][j] * rho_j`.
    pub var_coeffs: [[f64; 2]; 2],
    pub generator_coeffs: GeneratorCoeffs,
}

/// Scalar ingredients shared by every moment formula.
struct Ingredients {
    mu_h: [f64; 2],
    mu2_h: [f64; 2],
    /// mu_g[excited][trigger], zero-indexed
    mu_g: [[f64; 2]; 2],
    mu2_g: [[f64; 2]; 2],
    gap1: f64,
    gap2: f64,
    gap: f64,
}

impl Ingredients {
    fn new(params: &ModelParams) -> Self {
        let mu_g = [
            [params.g11.mean(), params.g12.mean()],
            [params.g21.mean(), params.g22.mean()],
        ];
        let mu2_g = [
            [params.g11.second_moment(), params.g12.second_moment()],
            [params.g21.second_moment(), params.g22.second_moment()],
        ];
        let gap1 = params.delta1 - mu_g[0][0];
        let gap2 = params.delta2 - mu_g[1][1];
        Ingredients {
            mu_h: [params.h1.mean(), params.h2.mean()],
            mu2_h: [params.h1.second_moment(), params.h2.second_moment()],
            mu_g,
            mu2_g,
            gap1,
            gap2,
            gap: gap1 * gap2 - mu_g[0][1] * mu_g[1][0],
        }
    }

    /// Mean coefficients: `mean_i = sum_j coeff[i][j] * rho_j`.
    fn mean_coeffs(&self) -> [[f64; 2]; 2] {
        [
            [self.gap2 * self.mu_h[0] / self.gap, self.mu_g[0][1] * self.mu_h[1] / self.gap],
            [self.mu_g[1][0] * self.mu_h[0] / self.gap, self.gap1 * self.mu_h[1] / self.gap],
        ]
    }

    fn means(&self, rho1: f64, rho2: f64) -> (f64, f64) {
        let c = self.mean_coeffs();
        (c[0][0] * rho1 + c[0][1] * rho2, c[1][0] * rho1 + c[1][1] * rho2)
    }

    fn generator_coeffs(&self, rho1: f64, rho2: f64) -> GeneratorCoeffs {
        let g = &self.mu_g;
        GeneratorCoeffs {
            a: [
                -2.0 * self.gap1,
                0.0,
                2.0 * g[0][1],
                2.0 * self.mu_h[0] * rho1 + self.mu2_g[0][0],
                self.mu2_g[0][1],
                self.mu2_h[0] * rho1,
            ],
            b: [
                0.0,
                -2.0 * self.gap2,
                2.0 * g[1][0],
                self.mu2_g[1][0],
                2.0 * self.mu_h[1] * rho2 + self.mu2_g[1][1],
                self.mu2_h[1] * rho2,
            ],
            c: [
                g[1][0],
                g[0][1],
                -(self.gap1 + self.gap2),
                self.mu_h[1] * rho2 + g[0][0] * g[1][0],
                self.mu_h[0] * rho1 + g[0][1] * g[1][1],
                0.0,
            ],
        }
    }

    /// Second moments `(m2_1, m2_2, m12)` by Cramer's rule on the 3x3 system.
    /// The system is fixed-size and diagonally dominated away from the
    /// stability boundary, so explicit determinants are adequate.
    fn second_moments_linear(&self, rho1: f64, rho2: f64) -> Result<(f64, f64, f64)> {
        let (m1, m2) = self.means(rho1, rho2);
        let k = self.generator_coeffs(rho1, rho2);
        let [a11, _, a12, a1, a2, a0] = k.a;
        let [_, b22, b12, b1, b2, b0] = k.b;
        let [c11, c22, c12, c1, c2, _] = k.c;
        let ta = a1 * m1 + a2 * m2 + a0;
        let tb = b2 * m2 + b1 * m1 + b0;
        let tc = c1 * m1 + c2 * m2;

        // rows: [a11, 0, a12 | -ta], [0, b22, b12 | -tb], [c11, c22, c12 | -tc]
        let det = a11 * (b22 * c12 - b12 * c22) + a12 * (-b22 * c11);
        let scale = a11.abs().max(b22.abs()).max(c12.abs());
        if det.abs() <= 1e-14 * scale * scale * scale {
            return Err(Error::Convergence(format!(
                "second-moment system is singular (determinant {det}); \
                 the model is at the stability boundary"
            )));
        }
        let det1 = -ta * (b22 * c12 - b12 * c22) + a12 * (-tb * c22 + b22 * tc);
        let det2 = a11 * (-tb * c12 + b12 * tc) - ta * b12 * c11 + a12 * tb * c11;
        let det3 = a11 * (-b22 * tc + tb * c22) + ta * b22 * c11;
        Ok((det1 / det, det2 / det, det3 / det))
    }

    /// Variance by the reduced closed-form route: eliminate the cross moment
    /// with the ratios `c11/c12`, `c22/c12`, solve the remaining 2x2 pair in
    /// closed form, and subtract the squared mean. Algebraically independent
    /// of Cramer's rule above; the two must agree to rounding.
    fn variances_closed_form(&self, rho1: f64, rho2: f64) -> (f64, f64) {
        let (m1, m2) = self.means(rho1, rho2);
        let k = self.generator_coeffs(rho1, rho2);
        let [a11, _, a12, a1, a2, a0] = k.a;
        let [_, b22, b12, b1, b2, b0] = k.b;
        let [c11, c22, c12, c1, c2, _] = k.c;
        let ta = a1 * m1 + a2 * m2 + a0;
        let tb = b2 * m2 + b1 * m1 + b0;
        let tc = c1 * m1 + c2 * m2;
        let r1 = c11 / c12;
        let r2 = c22 / c12;
        let denom = 4.0 * self.gap;
        let m2_1 = ((b12 * r2 - b22) * ta - a12 * r2 * tb + a12 / c12 * b22 * tc) / denom;
        let m2_2 = (-b12 * r1 * ta - (a11 - a12 * r1) * tb + b12 / c12 * a11 * tc) / denom;
        (m2_1 - m1 * m1, m2_2 - m2 * m2)
    }

    /// Variance coefficients: `var_i = sum_j gamma[i][j] * rho_j`. The
    /// variances are exactly linear in the external rates with no constant
    /// term, so the coefficients are the unit-rate evaluations.
    fn var_coeffs(&self) -> [[f64; 2]; 2] {
        let (g11, g21) = self.variances_closed_form(1.0, 0.0);
        let (g12, g22) = self.variances_closed_form(0.0, 1.0);
        [[g11, g12], [g21, g22]]
    }
}

/// Stationary mean intensities `(E[lambda1], E[lambda2])`.
pub fn stationary_mean(params: &ModelParams) -> Result<(f64, f64)> {
    params.check()?;
    require_stationary(params)?;
    Ok(Ingredients::new(params).means(params.rho1, params.rho2))
}

/// Stationary second moments `(E[lambda1^2], E[lambda2^2],
/// E[lambda1 lambda2])` from the generator's 3x3 linear system.
pub fn stationary_second_moments(params: &ModelParams) -> Result<(f64, f64, f64)> {
    params.check()?;
    require_stationary(params)?;
    Ingredients::new(params).second_moments_linear(params.rho1, params.rho2)
}

/// Stationary variances (closed-form coefficient route) and correlation.
/// Correlation is `None` for degenerate models whose variance vanishes.
pub fn stationary_variance_correlation(params: &ModelParams) -> Result<(f64, f64, Option<f64>)> {
    params.check()?;
    require_stationary(params)?;
    let ing = Ingredients::new(params);
    let coeffs = ing.var_coeffs();
    let v1 = coeffs[0][0] * params.rho1 + coeffs[0][1] * params.rho2;
    let v2 = coeffs[1][0] * params.rho1 + coeffs[1][1] * params.rho2;
    let (m1, m2) = ing.means(params.rho1, params.rho2);
    let (_, _, m12) = ing.second_moments_linear(params.rho1, params.rho2)?;
    let correlation =
        if v1 > 0.0 && v2 > 0.0 { Some((m12 - m1 * m2) / (v1 * v2).sqrt()) } else { None };
    Ok((v1, v2, correlation))
}

/// Compute every stationary quantity and the audit intermediates in one pass.
pub fn moment_report(params: &ModelParams) -> Result<MomentReport> {
    params.check()?;
    let radius = require_stationary(params)?;
    let ing = Ingredients::new(params);
    let mean = ing.means(params.rho1, params.rho2);
    let second = ing.second_moments_linear(params.rho1, params.rho2)?;
    let var_coeffs = ing.var_coeffs();
    let v1 = var_coeffs[0][0] * params.rho1 + var_coeffs[0][1] * params.rho2;
    let v2 = var_coeffs[1][0] * params.rho1 + var_coeffs[1][1] * params.rho2;
    let correlation = if v1 > 0.0 && v2 > 0.0 {
        Some((second.2 - mean.0 * mean.1) / (v1 * v2).sqrt())
    } else {
        None
    };
    Ok(MomentReport {
        mean,
        second,
        variance: (v1, v2),
        correlation,
        spectral_radius: radius,
        gap1: ing.gap1,
        gap2: ing.gap2,
        gap: ing.gap,
        mean_coeffs: ing.mean_coeffs(),
        var_coeffs,
        generator_coeffs: ing.generator_coeffs(params.rho1, params.rho2),
    })
}

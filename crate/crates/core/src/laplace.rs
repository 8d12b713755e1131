//! The forward ODE system for the generation-stacked intensity vector and the
//! Laplace transforms built from it.
//!
//! Truncating the branching construction at generation `n` and interleaving
//! the two components turns the intensity into an `m = 2n` dimensional Markov
//! vector `(L^(1), ..., L^(m))`, with odd slots holding component 1 and even
//! slots component 2. The exponential martingale ansatz reduces its
//! conditional Laplace transform at time `T` to a triangular system of `m`
//! scalar functions `l_1..l_m` plus one quadrature `c(T)`:
//!
//! ```text
//! l_1' + delta2 l_1 = 0                                        l_1(0) = v_m
//! l_2' + delta1 l_2 = 0                                        l_2(0) = v_{m-1}
//! l_{2k+1}' + delta2 l_{2k+1} = 1 - g12^(l_{2k}) g22^(l_{2k-1}),  l_{2k+1}(0) = v_{m-2k}
//! l_{2k+2}' + delta1 l_{2k+2} = 1 - g11^(l_{2k}) g21^(l_{2k-1}),  l_{2k+2}(0) = v_{m-2k-1}
//! c' = rho1 (1 - h1^(l_m)) + rho2 (1 - h2^(l_{m-1})),             c(0) = 0
//! ```
//!
//! where `g^`/`h^` are the mark Laplace transforms. The source terms are
//! products because one event adds marks to both components at the same
//! instant. The transform is then
//! `E[exp(-sum v_i L^(i)_T)] = exp(-l_m(T) lambda0_1 - l_{m-1}(T) lambda0_2 - c(T))`,
//! and letting `T -> inf` (all `l_i -> 0`) gives the limiting transform
//! `exp(-rho1 int (1 - h1^(l_m)) - rho2 int (1 - h2^(l_{m-1})))`.
//!
//! Each rung has the closed integral form
//! `l(t) = l(0) e^{-delta t} + int_0^t e^{-delta (t-s)} src(s) ds`, which is
//! evaluated by composite trapezoid with the exponential weight folded into
//! the panel, so no growing exponentials appear at large horizons.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::stationarity;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GridScheme {
    Uniform { dt: f64 },
    Geometric { dt0: f64, ratio: f64 },
}

/// Strictly increasing time grid from 0 to `t_max`.
///
/// The geometric scheme is dense near 0 where the rungs vary fastest and
/// keeps the total point count logarithmic in the horizon. A `t_max` of 0 is
/// allowed and yields the single point `{0}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    scheme: GridScheme,
    points: Vec<f64>,
}

impl TimeGrid {
    pub fn uniform(t_max: f64, dt: f64) -> Result<Self> {
        if !(t_max.is_finite() && t_max >= 0.0) {
            return Err(Error::Domain(format!("t_max must be finite and >= 0, got {t_max}")));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::Domain(format!("dt must be finite and > 0, got {dt}")));
        }
        if t_max == 0.0 {
            return Ok(TimeGrid { scheme: GridScheme::Uniform { dt }, points: vec![0.0] });
        }
        // snap dt so the panels divide the horizon exactly
        let n = (t_max / dt).ceil().max(1.0) as usize;
        let step = t_max / n as f64;
        let mut points: Vec<f64> = (0..n).map(|i| i as f64 * step).collect();
        points.push(t_max);
        Ok(TimeGrid { scheme: GridScheme::Uniform { dt: step }, points })
    }

    pub fn geometric(t_max: f64, dt0: f64, ratio: f64) -> Result<Self> {
        if !(t_max.is_finite() && t_max >= 0.0) {
            return Err(Error::Domain(format!("t_max must be finite and >= 0, got {t_max}")));
        }
        if !(dt0.is_finite() && dt0 > 0.0) {
            return Err(Error::Domain(format!("dt0 must be finite and > 0, got {dt0}")));
        }
        if !(ratio.is_finite() && ratio >= 1.0) {
            return Err(Error::Domain(format!("ratio must be >= 1, got {ratio}")));
        }
        let scheme = GridScheme::Geometric { dt0, ratio };
        if t_max == 0.0 {
            return Ok(TimeGrid { scheme, points: vec![0.0] });
        }
        let mut points = vec![0.0];
        let mut dt = dt0;
        loop {
            let next = points.last().unwrap() + dt;
            if next >= t_max {
                break;
            }
            points.push(next);
            dt *= ratio;
        }
        let last = *points.last().unwrap();
        if t_max - last < 1e-9 * dt0 && points.len() > 1 {
            *points.last_mut().unwrap() = t_max;
        } else {
            points.push(t_max);
        }
        Ok(TimeGrid { scheme, points })
    }

    /// Same horizon with every panel roughly halved; used for a-posteriori
    /// error estimates by Richardson differencing.
    pub fn refined(&self) -> Self {
        let t_max = self.t_max();
        match self.scheme {
            GridScheme::Uniform { dt } => Self::uniform(t_max, dt / 2.0).expect("valid refinement"),
            GridScheme::Geometric { dt0, ratio } => {
                Self::geometric(t_max, dt0 / 2.0, 1.0 + (ratio - 1.0) / 2.0)
                    .expect("valid refinement")
            }
        }
    }

    pub fn scheme(&self) -> GridScheme {
        self.scheme
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn t_max(&self) -> f64 {
        *self.points.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Tuning knobs for the adaptive transform computations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// `dt0 = dt0_factor / max(delta1, delta2)` for auto-built grids.
    pub dt0_factor: f64,
    /// Geometric grid growth per panel.
    pub grid_ratio: f64,
    /// Horizon is extended until the top rungs fall below this.
    pub tail_tol: f64,
    /// Hard cap on the horizon in units of `1 / min(delta1, delta2)`.
    pub max_horizon_units: f64,
    /// Generation cap for the limiting-transform iteration.
    pub n_cap: usize,
    /// Relative step for finite-difference transform gradients.
    pub fd_step: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            dt0_factor: 1e-4,
            grid_ratio: 1.002,
            tail_tol: 1e-8,
            max_horizon_units: 500.0,
            n_cap: 64,
            fd_step: 1e-5,
        }
    }
}

impl SolverConfig {
    /// Auto grid for a given model and horizon.
    pub fn grid(&self, params: &ModelParams, t_max: f64) -> Result<TimeGrid> {
        TimeGrid::geometric(t_max, self.dt0_factor / params.delta_max(), self.grid_ratio)
    }

    fn initial_horizon(&self, params: &ModelParams, v_max: f64) -> f64 {
        let span = (v_max.max(1.0) / self.tail_tol).ln() + 2.0;
        (span / params.delta_min()).max(4.0 / params.delta_min())
    }

    fn max_horizon(&self, params: &ModelParams) -> f64 {
        self.max_horizon_units / params.delta_min()
    }
}

/// The `l` functions of one parameter set evaluated on a grid, plus the
/// cumulative quadrature `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplaceGrid {
    /// Generation count; the system dimension is `m = 2n`.
    pub n: usize,
    /// Initial condition vector `v`, length `m`.
    pub init: Vec<f64>,
    pub grid: TimeGrid,
    /// `l[i]` is the `(i+1)`-th rung over the grid points.
    pub l: Vec<Vec<f64>>,
    /// Running value of `c` at each grid point (`c[0] = 0`).
    pub c: Vec<f64>,
}

impl LaplaceGrid {
    pub fn m(&self) -> usize {
        2 * self.n
    }

    /// Rung value at an arbitrary time by linear interpolation (consistent
    /// with the trapezoid order of the solve). `i` is zero-based.
    pub fn l_at(&self, i: usize, t: f64) -> Result<f64> {
        let pts = self.grid.points();
        if i >= self.l.len() {
            return Err(Error::Domain(format!("rung index {i} out of range")));
        }
        if !(0.0..=self.grid.t_max()).contains(&t) {
            return Err(Error::Domain(format!("time {t} outside the grid")));
        }
        let t = if t == 0.0 { 0.0 } else { t }; // normalize -0.0 for total_cmp
        let values = &self.l[i];
        match pts.binary_search_by(|p| p.total_cmp(&t)) {
            Ok(j) => Ok(values[j]),
            Err(j) => {
                let w = (t - pts[j - 1]) / (pts[j] - pts[j - 1]);
                Ok(values[j - 1] * (1.0 - w) + values[j] * w)
            }
        }
    }

    /// Dump as CSV with columns `t, l_1, ..., l_m, c`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "t")?;
        for i in 1..=self.m() {
            write!(w, ",l_{i}")?;
        }
        writeln!(w, ",c")?;
        for (j, t) in self.grid.points().iter().enumerate() {
            write!(w, "{t}")?;
            for rung in &self.l {
                write!(w, ",{}", rung[j])?;
            }
            writeln!(w, ",{}", self.c[j])?;
        }
        Ok(())
    }
}

/// Per-panel widths and decay factors for one decay rate on one grid.
struct PanelDecay {
    dts: Vec<f64>,
    decays: Vec<f64>,
}

impl PanelDecay {
    fn new(pts: &[f64], delta: f64) -> Self {
        let dts: Vec<f64> = pts.windows(2).map(|w| w[1] - w[0]).collect();
        let decays = dts.iter().map(|dt| (-delta * dt).exp()).collect();
        PanelDecay { dts, decays }
    }
}

/// Exact decay of the initial value: `init * exp(-delta t)` on the grid.
fn decayed_rung(init: f64, delta: f64, pts: &[f64]) -> Vec<f64> {
    pts.iter().map(|t| init * (-delta * t).exp()).collect()
}

/// One rung of the recursion:
/// `l(t) = init e^{-delta t} + int_0^t e^{-delta(t-s)} src(s) ds`
/// by trapezoid panels with the exponential weight applied exactly.
fn convolved_rung(init: f64, panels: &PanelDecay, src: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(src.len());
    out.push(init);
    for j in 0..src.len() - 1 {
        let dec = panels.decays[j];
        let dt = panels.dts[j];
        let next = dec * out[j] + 0.5 * dt * (dec * src[j] + src[j + 1]);
        out.push(next);
    }
    out
}

fn trapezoid(f: &[f64], pts: &[f64]) -> f64 {
    let mut acc = 0.0;
    for j in 0..f.len() - 1 {
        acc += 0.5 * (pts[j + 1] - pts[j]) * (f[j] + f[j + 1]);
    }
    acc
}

/// Source term feeding an odd-position rung (component-2 decay):
/// `1 - g12^(prev) g22^(prev2)` evaluated pointwise.
fn source_lo(params: &ModelParams, hi: &[f64], lo: &[f64]) -> Vec<f64> {
    hi.iter()
        .zip(lo)
        .map(|(&a, &b)| 1.0 - params.g12.laplace_nn(a) * params.g22.laplace_nn(b))
        .collect()
}

/// Source term feeding an even-position rung (component-1 decay):
/// `1 - g11^(prev) g21^(prev2)`.
fn source_hi(params: &ModelParams, hi: &[f64], lo: &[f64]) -> Vec<f64> {
    hi.iter()
        .zip(lo)
        .map(|(&a, &b)| 1.0 - params.g11.laplace_nn(a) * params.g21.laplace_nn(b))
        .collect()
}

/// All `m` rungs for a general initial vector `v` (rung `i` starts at
/// `v[m-1-i]`).
fn compute_rungs(params: &ModelParams, v: &[f64], pts: &[f64]) -> Vec<Vec<f64>> {
    let m = v.len();
    let panels1 = PanelDecay::new(pts, params.delta1);
    let panels2 = PanelDecay::new(pts, params.delta2);
    let mut rungs: Vec<Vec<f64>> = Vec::with_capacity(m);
    for i in 0..m {
        let init = v[m - 1 - i];
        let rung = if i == 0 {
            decayed_rung(init, params.delta2, pts)
        } else if i == 1 {
            decayed_rung(init, params.delta1, pts)
        } else if i % 2 == 0 {
            let src = source_lo(params, &rungs[i - 1], &rungs[i - 2]);
            convolved_rung(init, &panels2, &src)
        } else {
            let src = source_hi(params, &rungs[i - 2], &rungs[i - 3]);
            convolved_rung(init, &panels1, &src)
        };
        rungs.push(rung);
    }
    rungs
}

fn check_init_vector(v: &[f64]) -> Result<()> {
    if v.is_empty() || v.len() % 2 != 0 {
        return Err(Error::Domain(format!(
            "initial vector length must be even and positive, got {}",
            v.len()
        )));
    }
    for (i, value) in v.iter().enumerate() {
        if !(value.is_finite() && *value >= 0.0) {
            return Err(Error::Domain(format!(
                "initial vector entries must be finite and >= 0, got v[{i}] = {value}"
            )));
        }
    }
    Ok(())
}

/// Solve the forward system for a general initial vector on an explicit grid.
pub fn solve_l(params: &ModelParams, v: &[f64], grid: &TimeGrid) -> Result<LaplaceGrid> {
    params.check()?;
    check_init_vector(v)?;
    let pts = grid.points();
    let rungs = compute_rungs(params, v, pts);
    let m = v.len();
    let integrand: Vec<f64> = (0..pts.len())
        .map(|j| {
            params.rho1 * (1.0 - params.h1.laplace_nn(rungs[m - 1][j]))
                + params.rho2 * (1.0 - params.h2.laplace_nn(rungs[m - 2][j]))
        })
        .collect();
    let mut c = Vec::with_capacity(pts.len());
    c.push(0.0);
    for j in 0..pts.len() - 1 {
        let inc = 0.5 * (pts[j + 1] - pts[j]) * (integrand[j] + integrand[j + 1]);
        c.push(c[j] + inc);
    }
    Ok(LaplaceGrid { n: m / 2, init: v.to_vec(), grid: grid.clone(), l: rungs, c })
}

/// Conditional Laplace transform of the generation-stacked intensity vector
/// at `T = grid.t_max()`, started from `(lambda0_1, lambda0_2, 0, ..., 0)`:
/// `exp(-l_m(T) lambda0_1 - l_{m-1}(T) lambda0_2 - c(T))`.
pub fn finite_t_laplace(params: &ModelParams, v: &[f64], grid: &TimeGrid) -> Result<f64> {
    let solved = solve_l(params, v, grid)?;
    let m = solved.m();
    let last = grid.len() - 1;
    let exponent = solved.l[m - 1][last] * params.lambda0[0]
        + solved.l[m - 2][last] * params.lambda0[1]
        + solved.c[last];
    Ok((-exponent).exp())
}

/// A transform value with an a-posteriori error estimate (quadrature
/// Richardson difference plus the bounded tail remainder).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaplaceValue {
    pub value: f64,
    pub error_estimate: f64,
}

/// Result of iterating the truncation level until the transform converges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitingLaplace {
    pub value: f64,
    pub error_estimate: f64,
    /// Generations used when the stopping rule fired.
    pub n_used: usize,
    /// Last increment of the monotone sequence.
    pub gap: f64,
}

/// The repeated-initial-value ladder `v_{2i-1} = v1, v_{2i} = v2`. With this
/// pattern the rung pair of generation `k` does not depend on the truncation
/// level, so the whole family of truncated transforms comes from one sweep.
struct Ladder<'a> {
    params: &'a ModelParams,
    pts: &'a [f64],
    panels1: PanelDecay,
    panels2: PanelDecay,
    v1: f64,
    v2: f64,
    /// Odd-position rung of the current generation (component-2 decay).
    lo: Vec<f64>,
    /// Even-position rung of the current generation (component-1 decay).
    hi: Vec<f64>,
    /// `int 1 - h1^(hi)` and `int 1 - h2^(lo)` for the current generation.
    i1: f64,
    i2: f64,
}

impl<'a> Ladder<'a> {
    fn start(params: &'a ModelParams, v1: f64, v2: f64, pts: &'a [f64]) -> Self {
        let lo = decayed_rung(v2, params.delta2, pts);
        let hi = decayed_rung(v1, params.delta1, pts);
        let mut ladder = Ladder {
            params,
            pts,
            panels1: PanelDecay::new(pts, params.delta1),
            panels2: PanelDecay::new(pts, params.delta2),
            v1,
            v2,
            lo,
            hi,
            i1: 0.0,
            i2: 0.0,
        };
        ladder.update_integrals();
        ladder
    }

    fn update_integrals(&mut self) {
        let f1: Vec<f64> =
            self.hi.iter().map(|&x| 1.0 - self.params.h1.laplace_nn(x)).collect();
        let f2: Vec<f64> =
            self.lo.iter().map(|&x| 1.0 - self.params.h2.laplace_nn(x)).collect();
        self.i1 = trapezoid(&f1, self.pts);
        self.i2 = trapezoid(&f2, self.pts);
    }

    fn advance(&mut self) {
        let src_lo = source_lo(self.params, &self.hi, &self.lo);
        let src_hi = source_hi(self.params, &self.hi, &self.lo);
        self.lo = convolved_rung(self.v2, &self.panels2, &src_lo);
        self.hi = convolved_rung(self.v1, &self.panels1, &src_hi);
        self.update_integrals();
    }

    fn transform(&self) -> f64 {
        (-(self.params.rho1 * self.i1 + self.params.rho2 * self.i2)).exp()
    }

    fn tails_below(&self, tol: f64) -> bool {
        *self.lo.last().unwrap() < tol && *self.hi.last().unwrap() < tol
    }

    /// Bound on the neglected tail of the exponent: fit `log l` over the last
    /// decade of each top rung, integrate the fit to infinity, and apply the
    /// mark-mean bound `1 - h^(l) <= mean(h) l`.
    fn tail_exponent_bound(&self) -> f64 {
        let tail1 = tail_integral(&self.hi, self.pts, self.params.delta1);
        let tail2 = tail_integral(&self.lo, self.pts, self.params.delta2);
        self.params.rho1 * self.params.h1.mean() * tail1
            + self.params.rho2 * self.params.h2.mean() * tail2
    }
}

/// `int_T^inf l(t) dt` estimated as `l(T) / alpha` with `alpha` the fitted
/// exponential decay rate over the last decade of the grid values.
fn tail_integral(l: &[f64], pts: &[f64], fallback_rate: f64) -> f64 {
    let end = *l.last().unwrap();
    if end <= 0.0 {
        return 0.0;
    }
    // walk back while values stay within a factor of 10 of the endpoint
    let mut start = l.len() - 1;
    while start > 0 && l[start - 1] > 0.0 && l[start - 1] <= 10.0 * end {
        start -= 1;
    }
    let count = l.len() - start;
    let alpha = if count < 3 {
        fallback_rate
    } else {
        // least-squares slope of ln(l) against t
        let (mut st, mut sy, mut stt, mut sty) = (0.0, 0.0, 0.0, 0.0);
        for j in start..l.len() {
            let t = pts[j];
            let y = l[j].ln();
            st += t;
            sy += y;
            stt += t * t;
            sty += t * y;
        }
        let nf = count as f64;
        let denom = nf * stt - st * st;
        let slope = if denom > 0.0 { (nf * sty - st * sy) / denom } else { 0.0 };
        if slope < 0.0 {
            -slope
        } else {
            fallback_rate
        }
    };
    end / alpha
}

fn check_v_pair(v1: f64, v2: f64) -> Result<()> {
    for v in [v1, v2] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::Domain(format!(
                "transform arguments must be finite and >= 0, got {v}"
            )));
        }
    }
    Ok(())
}

/// Run the repeated ladder to generation `n` on a horizon long enough for the
/// top rungs to decay below `cfg.tail_tol`, extending adaptively. Returns the
/// grid actually used.
fn ladder_horizon(
    params: &ModelParams,
    v1: f64,
    v2: f64,
    n: usize,
    cfg: &SolverConfig,
) -> Result<TimeGrid> {
    let mut t_max = cfg.initial_horizon(params, v1.max(v2));
    let cap = cfg.max_horizon(params);
    loop {
        let grid = cfg.grid(params, t_max)?;
        let pts = grid.points();
        let mut ladder = Ladder::start(params, v1, v2, pts);
        for _ in 1..n {
            ladder.advance();
        }
        if ladder.tails_below(cfg.tail_tol) {
            return Ok(grid);
        }
        t_max *= 1.7;
        if t_max > cap {
            return Err(Error::Convergence(format!(
                "top rungs failed to decay below {} within the horizon cap {cap}",
                cfg.tail_tol
            )));
        }
    }
}

/// Laplace transform of the limiting (t -> inf) distribution of the
/// generation-`n` truncated intensity pair at `(v1, v2)`.
///
/// Finite truncations always admit a limiting distribution, so no stability
/// condition is required here.
pub fn limiting_laplace_finite(
    params: &ModelParams,
    v1: f64,
    v2: f64,
    n: usize,
    cfg: &SolverConfig,
) -> Result<LaplaceValue> {
    params.check()?;
    check_v_pair(v1, v2)?;
    if n == 0 {
        return Err(Error::Domain("generation count must be >= 1".into()));
    }
    if v1 == 0.0 && v2 == 0.0 {
        return Ok(LaplaceValue { value: 1.0, error_estimate: 0.0 });
    }
    let grid = ladder_horizon(params, v1, v2, n, cfg)?;
    let fine = grid.refined();

    let run = |g: &TimeGrid| {
        let pts = g.points();
        let mut ladder = Ladder::start(params, v1, v2, pts);
        for _ in 1..n {
            ladder.advance();
        }
        (ladder.transform(), ladder.tail_exponent_bound())
    };
    let (coarse_value, _) = run(&grid);
    let (value, tail_bound) = run(&fine);
    let quad = (value - coarse_value).abs() / 3.0;
    Ok(LaplaceValue { value, error_estimate: quad + value * tail_bound })
}

/// Laplace transform of the limiting distribution of the full intensity pair:
/// iterate the truncation level until consecutive values differ by less than
/// `tol`. The sequence is monotone nonincreasing; stability is required for
/// it to converge to a nondegenerate limit.
pub fn limiting_laplace(
    params: &ModelParams,
    v1: f64,
    v2: f64,
    tol: f64,
    cfg: &SolverConfig,
) -> Result<LimitingLaplace> {
    params.check()?;
    check_v_pair(v1, v2)?;
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::Domain(format!("tolerance must be > 0, got {tol}")));
    }
    let (ok, radius) = stationarity::check_c2(params);
    if !ok {
        return Err(Error::NonStationary { radius });
    }
    if v1 == 0.0 && v2 == 0.0 {
        return Ok(LimitingLaplace { value: 1.0, error_estimate: 0.0, n_used: 1, gap: 0.0 });
    }

    let mut t_max = cfg.initial_horizon(params, v1.max(v2));
    let cap = cfg.max_horizon(params);
    'horizon: loop {
        let grid = cfg.grid(params, t_max)?;
        let fine = grid.refined();
        let mut coarse_ladder = Ladder::start(params, v1, v2, grid.points());
        let mut fine_ladder = Ladder::start(params, v1, v2, fine.points());
        let mut prev = f64::INFINITY;
        let mut gap = f64::INFINITY;
        for k in 1..=cfg.n_cap {
            if k > 1 {
                coarse_ladder.advance();
                fine_ladder.advance();
            }
            if !coarse_ladder.tails_below(cfg.tail_tol) {
                t_max *= 1.7;
                if t_max > cap {
                    return Err(Error::Convergence(format!(
                        "top rungs failed to decay below {} within the horizon cap {cap}",
                        cfg.tail_tol
                    )));
                }
                continue 'horizon;
            }
            let value = fine_ladder.transform();
            // theory: the truncated transforms decrease with the depth
            debug_assert!(value <= prev * (1.0 + 1e-9) + 1e-12);
            gap = (prev - value).abs();
            if k > 1 && gap < tol {
                let quad = (value - coarse_ladder.transform()).abs() / 3.0;
                let tail = value * fine_ladder.tail_exponent_bound();
                return Ok(LimitingLaplace {
                    value,
                    error_estimate: quad + tail,
                    n_used: k,
                    gap,
                });
            }
            prev = value;
        }
        return Err(Error::Convergence(format!(
            "transform did not converge within {} generations; last gap {gap} (tol {tol})",
            cfg.n_cap
        )));
    }
}

/// Full-vector limiting transform `exp(-rho1 int (1-h1^(l_m)) - rho2 int (1-h2^(l_{m-1})))`
/// for a general initial vector, on an explicit grid.
fn pihat(params: &ModelParams, v: &[f64], pts: &[f64]) -> f64 {
    let rungs = compute_rungs(params, v, pts);
    let m = v.len();
    let f1: Vec<f64> = rungs[m - 1].iter().map(|&x| 1.0 - params.h1.laplace_nn(x)).collect();
    let f2: Vec<f64> = rungs[m - 2].iter().map(|&x| 1.0 - params.h2.laplace_nn(x)).collect();
    (-(params.rho1 * trapezoid(&f1, pts) + params.rho2 * trapezoid(&f2, pts))).exp()
}

/// Analytic initial slopes of the forward system, `l_i'(0)` for each rung.
fn initial_slopes(params: &ModelParams, v: &[f64]) -> Vec<f64> {
    let m = v.len();
    (0..m)
        .map(|i| {
            let delta = if i % 2 == 0 { params.delta2 } else { params.delta1 };
            let mut slope = -delta * v[m - 1 - i];
            if i >= 2 {
                if i % 2 == 0 {
                    slope += 1.0
                        - params.g12.laplace_nn(v[m - i]) * params.g22.laplace_nn(v[m - i + 1]);
                } else {
                    slope += 1.0
                        - params.g11.laplace_nn(v[m - i + 1]) * params.g21.laplace_nn(v[m - i + 2]);
                }
            }
            slope
        })
        .collect()
}

/// Residual of the stationarity equation for the truncated system at the
/// computed limiting transform: exact stationarity predicts 0, so the value
/// measures quadrature plus finite-difference error.
///
/// The equation pairs the analytic initial slopes of the rungs with the
/// partial derivatives of the limiting transform in the matching initial
/// values, minus the external-arrival terms:
///
/// ```text
/// sum_k [ l'_{2(n-k)+2}(0) d pi/d v_{2k-1} + l'_{2(n-k)+1}(0) d pi/d v_{2k} ]
///   - rho1 (1 - h1^(v_1)) pi - rho2 (1 - h2^(v_2)) pi
/// ```
///
/// Partials are central finite differences with relative step `fd_step`
/// (one-sided at the nonnegativity boundary). The grid must be long enough
/// for all rungs to have decayed at `t_max`.
pub fn stationarity_residual(
    params: &ModelParams,
    v: &[f64],
    grid: &TimeGrid,
    fd_step: f64,
) -> Result<f64> {
    params.check()?;
    check_init_vector(v)?;
    if !(fd_step.is_finite() && fd_step > 0.0) {
        return Err(Error::Domain(format!("fd_step must be > 0, got {fd_step}")));
    }
    let pts = grid.points();
    let m = v.len();
    let n = m / 2;
    let pi0 = pihat(params, v, pts);

    let mut partials = vec![0.0; m];
    let mut work = v.to_vec();
    for j in 0..m {
        let h = fd_step * v[j].max(1.0);
        if v[j] >= h {
            work[j] = v[j] + h;
            let up = pihat(params, &work, pts);
            work[j] = v[j] - h;
            let down = pihat(params, &work, pts);
            partials[j] = (up - down) / (2.0 * h);
        } else {
            // second-order one-sided difference at the boundary
            work[j] = v[j] + h;
            let p1 = pihat(params, &work, pts);
            work[j] = v[j] + 2.0 * h;
            let p2 = pihat(params, &work, pts);
            partials[j] = (-3.0 * pi0 + 4.0 * p1 - p2) / (2.0 * h);
        }
        work[j] = v[j];
    }

    let slopes = initial_slopes(params, v);
    let mut acc = 0.0;
    for k in 1..=n {
        acc += slopes[2 * (n - k) + 1] * partials[2 * k - 2];
        acc += slopes[2 * (n - k)] * partials[2 * k - 1];
    }
    acc -= params.rho1 * (1.0 - params.h1.laplace_nn(v[0])) * pi0;
    acc -= params.rho2 * (1.0 - params.h2.laplace_nn(v[1])) * pi0;
    Ok(acc)
}

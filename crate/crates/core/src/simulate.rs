//! Exact path generators for the bivariate process and exact intensity
//! evaluation over recorded histories.
//!
//! Two independent constructions produce the same law:
//! - thinning against a piecewise-constant dominating rate (the intensities
//!   only decay between events, so the post-jump total rate dominates until
//!   the next accepted event);
//! - the cluster expansion: external arrivals carry the shot-noise intensity
//!   that births generation-1 events, and every event of generation `g`
//!   births generation `g+1` events under its two decaying kernels.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::rng::{stream_rng, RandomStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    /// External arrival feeding component 1 (not counted by the process).
    External1,
    /// External arrival feeding component 2.
    External2,
    /// Event of component 1.
    Internal1,
    /// Event of component 2.
    Internal2,
}

impl EventKind {
    /// Deterministic tie order for simultaneous float timestamps.
    fn rank(self) -> u8 {
        match self {
            EventKind::External1 => 0,
            EventKind::External2 => 1,
            EventKind::Internal1 => 2,
            EventKind::Internal2 => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::External1 => "external1",
            EventKind::External2 => "external2",
            EventKind::Internal1 => "internal1",
            EventKind::Internal2 => "internal2",
        }
    }
}

/// One epoch of the history.
///
/// External arrivals carry the single mark `mark_y` added to their own
/// component. Internal events carry the pair `(mark_z1, mark_z2)` added to
/// components 1 and 2 at the same instant; both are sampled at the event and
/// stored so replays and intensity evaluation are exact.
///
/// `generation` is 0 for externals, the branching depth for events produced
/// by the cluster simulator, and -1 for events produced by thinning (which
/// does not track ancestry).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub time: f64,
    pub kind: EventKind,
    pub mark_y: f64,
    pub mark_z1: f64,
    pub mark_z2: f64,
    pub generation: i32,
}

/// Time-ordered event record of one path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventHistory {
    /// Identifier of the generating parameter set.
    pub params_hash: String,
    pub horizon: f64,
    pub seed: u64,
    pub stream: u64,
    pub events: Vec<EventRecord>,
}

impl EventHistory {
    /// Number of internal events of one component (1 or 2) up to and
    /// including `t`.
    pub fn count_at(&self, component: u8, t: f64) -> usize {
        let kind = if component == 1 { EventKind::Internal1 } else { EventKind::Internal2 };
        self.events.iter().filter(|e| e.kind == kind && e.time <= t).count()
    }

    /// Internal events of one component in the window `(t0, t1]`.
    pub fn count_in(&self, component: u8, t0: f64, t1: f64) -> usize {
        let kind = if component == 1 { EventKind::Internal1 } else { EventKind::Internal2 };
        self.events.iter().filter(|e| e.kind == kind && e.time > t0 && e.time <= t1).count()
    }

    /// Arrival times of a given kind.
    pub fn times_of(&self, kind: EventKind) -> Vec<f64> {
        self.events.iter().filter(|e| e.kind == kind).map(|e| e.time).collect()
    }

    /// CSV with columns `time,kind,mark_y,mark_z1,mark_z2,generation`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "time,kind,mark_y,mark_z1,mark_z2,generation")?;
        for e in &self.events {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                e.time,
                e.kind.as_str(),
                e.mark_y,
                e.mark_z1,
                e.mark_z2,
                e.generation
            )?;
        }
        Ok(())
    }
}

fn sort_events(events: &mut [EventRecord]) {
    events.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.kind.rank().cmp(&b.kind.rank())));
}

fn check_horizon(horizon: f64) -> Result<()> {
    if horizon.is_finite() && horizon >= 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("horizon must be finite and >= 0, got {horizon}")))
    }
}

/// Exponential waiting time with the given rate.
fn exp_wait<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    let u: f64 = rng.gen();
    -(1.0 - u).ln() / rate
}

/// Exact simulation by thinning on `[0, horizon]` (path 0 of the seed).
pub fn simulate_thinning(params: &ModelParams, horizon: f64, seed: u64) -> Result<EventHistory> {
    simulate_thinning_stream(params, horizon, seed, 0)
}

/// Thinning with an explicit stream index, for ensemble members.
pub fn simulate_thinning_stream(
    params: &ModelParams,
    horizon: f64,
    seed: u64,
    stream: u64,
) -> Result<EventHistory> {
    params.check()?;
    check_horizon(horizon)?;
    let mut rng = stream_rng(seed, stream);
    let events = thinning_events(params, horizon, &mut rng);
    Ok(EventHistory { params_hash: params.hash_id(), horizon, seed, stream, events })
}

fn thinning_events(params: &ModelParams, horizon: f64, rng: &mut RandomStream) -> Vec<EventRecord> {
    let mut events = Vec::new();
    let mut t = 0.0;
    let (mut l1, mut l2) = (params.lambda0[0], params.lambda0[1]);
    let external_rate = params.rho1 + params.rho2;
    loop {
        // valid dominating rate until the next accepted event: intensities
        // only decay in between
        let bar = l1 + l2 + external_rate;
        if bar <= 0.0 {
            break;
        }
        let next = t + exp_wait(rng, bar);
        if next > horizon {
            break;
        }
        l1 *= (-params.delta1 * (next - t)).exp();
        l2 *= (-params.delta2 * (next - t)).exp();
        t = next;
        let u = rng.gen::<f64>() * bar;
        if u < params.rho1 {
            let y = params.h1.sample(rng);
            events.push(EventRecord {
                time: t,
                kind: EventKind::External1,
                mark_y: y,
                mark_z1: 0.0,
                mark_z2: 0.0,
                generation: 0,
            });
            l1 += y;
        } else if u < external_rate {
            let y = params.h2.sample(rng);
            events.push(EventRecord {
                time: t,
                kind: EventKind::External2,
                mark_y: y,
                mark_z1: 0.0,
                mark_z2: 0.0,
                generation: 0,
            });
            l2 += y;
        } else if u < external_rate + l1 {
            let z1 = params.g11.sample(rng);
            let z2 = params.g21.sample(rng);
            events.push(EventRecord {
                time: t,
                kind: EventKind::Internal1,
                mark_y: 0.0,
                mark_z1: z1,
                mark_z2: z2,
                generation: -1,
            });
            l1 += z1;
            l2 += z2;
        } else if u < external_rate + l1 + l2 {
            let z1 = params.g12.sample(rng);
            let z2 = params.g22.sample(rng);
            events.push(EventRecord {
                time: t,
                kind: EventKind::Internal2,
                mark_y: 0.0,
                mark_z1: z1,
                mark_z2: z2,
                generation: -1,
            });
            l1 += z1;
            l2 += z2;
        }
        // else: rejected proposal; the loop re-tightens the bound at the
        // decayed intensity
    }
    events
}

/// Birth times on `(t0, horizon]` of an inhomogeneous Poisson process with
/// the decaying kernel `weight * exp(-delta (t - t0))`, by thinning against
/// the kernel's running maximum (its current value, since it decreases).
fn kernel_births<R: Rng + ?Sized>(
    rng: &mut R,
    t0: f64,
    weight: f64,
    delta: f64,
    horizon: f64,
    out: &mut Vec<f64>,
) {
    if weight <= 0.0 {
        return;
    }
    let mut t = t0;
    let mut bound = weight;
    loop {
        let next = t + exp_wait(rng, bound);
        if next > horizon {
            return;
        }
        let rate = weight * (-delta * (next - t0)).exp();
        if rng.gen::<f64>() * bound < rate {
            out.push(next);
        }
        t = next;
        bound = rate;
    }
}

/// Exact simulation through the branching construction, truncated at
/// `generations` offspring generations.
///
/// External arrivals (recorded with generation 0) are ordinary Poisson
/// streams; together with the decay of the initial intensities they drive
/// the generation-1 births of their own component. Every internal event of
/// generation `g < generations` births generation `g+1` events of component
/// 1 and 2 under its two kernels. Events of the final generation still carry
/// their marks, so intensity evaluation over the truncated history is exact.
pub fn simulate_cluster(
    params: &ModelParams,
    horizon: f64,
    generations: usize,
    seed: u64,
) -> Result<EventHistory> {
    simulate_cluster_stream(params, horizon, generations, seed, 0)
}

/// Cluster simulation with an explicit stream index, for ensemble members.
pub fn simulate_cluster_stream(
    params: &ModelParams,
    horizon: f64,
    generations: usize,
    seed: u64,
    stream: u64,
) -> Result<EventHistory> {
    params.check()?;
    check_horizon(horizon)?;
    if generations == 0 {
        return Err(Error::Domain("generation count must be >= 1".into()));
    }
    let mut rng = stream_rng(seed, stream);
    let mut events = Vec::new();

    // external arrivals, one homogeneous Poisson stream per component
    let mut externals: Vec<(f64, u8, f64)> = Vec::new();
    for (component, rho, kind, dist) in [
        (1u8, params.rho1, EventKind::External1, &params.h1),
        (2u8, params.rho2, EventKind::External2, &params.h2),
    ] {
        if rho <= 0.0 {
            continue;
        }
        let mut t = 0.0;
        loop {
            t += exp_wait(&mut rng, rho);
            if t > horizon {
                break;
            }
            let y = dist.sample(&mut rng);
            externals.push((t, component, y));
            events.push(EventRecord {
                time: t,
                kind,
                mark_y: y,
                mark_z1: 0.0,
                mark_z2: 0.0,
                generation: 0,
            });
        }
    }
    externals.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    // generation-1 births: initial-intensity decay plus one kernel per
    // external arrival, each feeding its own component
    let mut current: Vec<(f64, u8)> = Vec::new();
    let mut births = Vec::new();
    for (component, delta) in [(1u8, params.delta1), (2u8, params.delta2)] {
        births.clear();
        kernel_births(&mut rng, 0.0, params.lambda0[(component - 1) as usize], delta, horizon, &mut births);
        current.extend(births.iter().map(|&t| (t, component)));
    }
    for &(s, component, y) in &externals {
        let delta = if component == 1 { params.delta1 } else { params.delta2 };
        births.clear();
        kernel_births(&mut rng, s, y, delta, horizon, &mut births);
        current.extend(births.iter().map(|&t| (t, component)));
    }

    for generation in 1..=generations {
        current.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut next: Vec<(f64, u8)> = Vec::new();
        for &(t, component) in &current {
            let (kind, dist1, dist2) = if component == 1 {
                (EventKind::Internal1, &params.g11, &params.g21)
            } else {
                (EventKind::Internal2, &params.g12, &params.g22)
            };
            let z1 = dist1.sample(&mut rng);
            let z2 = dist2.sample(&mut rng);
            events.push(EventRecord {
                time: t,
                kind,
                mark_y: 0.0,
                mark_z1: z1,
                mark_z2: z2,
                generation: generation as i32,
            });
            if generation < generations {
                births.clear();
                kernel_births(&mut rng, t, z1, params.delta1, horizon, &mut births);
                next.extend(births.iter().map(|&b| (b, 1u8)));
                births.clear();
                kernel_births(&mut rng, t, z2, params.delta2, horizon, &mut births);
                next.extend(births.iter().map(|&b| (b, 2u8)));
            }
        }
        current = next;
        if current.is_empty() {
            break;
        }
    }

    sort_events(&mut events);
    Ok(EventHistory { params_hash: params.hash_id(), horizon, seed, stream, events })
}

/// Contribution of one recorded event to the two intensities.
fn event_jumps(e: &EventRecord) -> (f64, f64) {
    match e.kind {
        EventKind::External1 => (e.mark_y, 0.0),
        EventKind::External2 => (0.0, e.mark_y),
        EventKind::Internal1 | EventKind::Internal2 => (e.mark_z1, e.mark_z2),
    }
}

/// Exact intensity pair at time `t` by brute-force summation over all events
/// strictly before `t` (the pre-jump value at event times), plus the decayed
/// initial intensities. `O(events)` per call; use [`IntensityPath`] for
/// sweeps.
pub fn intensity_at(history: &EventHistory, params: &ModelParams, t: f64) -> Result<(f64, f64)> {
    if !(0.0..=history.horizon).contains(&t) {
        return Err(Error::Domain(format!(
            "time {t} outside the simulated horizon {}",
            history.horizon
        )));
    }
    let mut l1 = params.lambda0[0] * (-params.delta1 * t).exp();
    let mut l2 = params.lambda0[1] * (-params.delta2 * t).exp();
    for e in &history.events {
        if e.time >= t {
            break;
        }
        let (j1, j2) = event_jumps(e);
        l1 += j1 * (-params.delta1 * (t - e.time)).exp();
        l2 += j2 * (-params.delta2 * (t - e.time)).exp();
    }
    Ok((l1, l2))
}

/// Exact integrated intensities `(int_0^t lambda1, int_0^t lambda2)`: each
/// decayed kernel integrates in closed form.
pub fn integrated_intensity(history: &EventHistory, params: &ModelParams, t: f64) -> (f64, f64) {
    let mut a1 = params.lambda0[0] * (1.0 - (-params.delta1 * t).exp()) / params.delta1;
    let mut a2 = params.lambda0[1] * (1.0 - (-params.delta2 * t).exp()) / params.delta2;
    for e in &history.events {
        if e.time >= t {
            break;
        }
        let (j1, j2) = event_jumps(e);
        a1 += j1 * (1.0 - (-params.delta1 * (t - e.time)).exp()) / params.delta1;
        a2 += j2 * (1.0 - (-params.delta2 * (t - e.time)).exp()) / params.delta2;
    }
    (a1, a2)
}

/// Incremental cursor over a history for evaluating the intensity at a
/// nondecreasing sequence of times in `O(events + queries)` total.
pub struct IntensityPath<'a> {
    history: &'a EventHistory,
    params: &'a ModelParams,
    cursor: usize,
    t: f64,
    l1: f64,
    l2: f64,
}

impl<'a> IntensityPath<'a> {
    pub fn new(history: &'a EventHistory, params: &'a ModelParams) -> Self {
        IntensityPath {
            history,
            params,
            cursor: 0,
            t: 0.0,
            l1: params.lambda0[0],
            l2: params.lambda0[1],
        }
    }

    /// Intensity at `t`, which must not decrease between calls. Events at
    /// exactly `t` are not yet included (pre-jump value).
    pub fn advance_to(&mut self, t: f64) -> Result<(f64, f64)> {
        if t < self.t {
            return Err(Error::Domain(format!(
                "cursor may only move forward (at {}, asked {t})",
                self.t
            )));
        }
        if t > self.history.horizon {
            return Err(Error::Domain(format!(
                "time {t} outside the simulated horizon {}",
                self.history.horizon
            )));
        }
        while self.cursor < self.history.events.len() {
            let e = &self.history.events[self.cursor];
            if e.time >= t {
                break;
            }
            let dt = e.time - self.t;
            self.l1 *= (-self.params.delta1 * dt).exp();
            self.l2 *= (-self.params.delta2 * dt).exp();
            let (j1, j2) = event_jumps(e);
            self.l1 += j1;
            self.l2 += j2;
            self.t = e.time;
            self.cursor += 1;
        }
        let dt = t - self.t;
        self.l1 *= (-self.params.delta1 * dt).exp();
        self.l2 *= (-self.params.delta2 * dt).exp();
        self.t = t;
        Ok((self.l1, self.l2))
    }
}

/// Stream an intensity path sampled on a grid as CSV `t,lambda1,lambda2`.
pub fn write_intensity_csv<W: Write>(
    history: &EventHistory,
    params: &ModelParams,
    times: &[f64],
    mut w: W,
) -> Result<()> {
    let mut path = IntensityPath::new(history, params);
    writeln!(w, "t,lambda1,lambda2").map_err(|e| Error::Domain(e.to_string()))?;
    for &t in times {
        let (l1, l2) = path.advance_to(t)?;
        writeln!(w, "{t},{l1},{l2}").map_err(|e| Error::Domain(e.to_string()))?;
    }
    Ok(())
}

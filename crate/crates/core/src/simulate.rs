//! Fixed-step RK4 simulation of the closed platoon loop under disturbance
//! profiles, spacing-error extraction, and the empirical L2 amplification
//! measurement used to reproduce the paper-style experiments.
//!
//! Everything runs in leader-relative error coordinates. A maneuvering leader
//! enters the follower dynamics as an extra shared input -(a0 + tau * a0')
//! through the disturbance channel; a constant-speed leader contributes
//! nothing.

use crate::plant::ClosedLoopSystem;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimulateError {
    #[error("state became non-finite at step {step} (t = {t})")]
    NonFiniteState { step: usize, t: f64 },
    #[error("disturbance window invalid: start {0} must precede end {1}")]
    BadWindow(f64, f64),
    #[error("period {0} must be positive")]
    BadPeriod(f64),
    #[error("drag coefficient {0} must be nonnegative")]
    BadDrag(f64),
    #[error("leader trajectory covers [{have_lo}, {have_hi}] but simulation needs [0, {need}]")]
    CoverageGap { have_lo: f64, have_hi: f64, need: f64 },
    #[error("sample times must be strictly increasing (violation at index {0})")]
    NonMonotonicTime(usize),
    #[error("trajectory needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("disturbance is identically zero; the L2 ratio is undefined")]
    ZeroDisturbance,
    #[error("dt = {0} must be positive and no larger than the horizon {1}")]
    BadStep(f64, f64),
}

/// Disturbance applied to every follower's acceleration channel.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DisturbanceProfile {
    Zero,
    /// w(t) = amplitude * sin(2 pi / period * (t - start)) on [start, end).
    SinePulse {
        amplitude: f64,
        start: f64,
        end: f64,
        period: f64,
    },
    /// w_i(t) = -c2 * v_i^2 on [start, end) with v_i the follower's absolute
    /// velocity; opposes motion, so it is state-dependent.
    Drag { c2: f64, start: f64, end: f64 },
}

pub fn sine_pulse(
    amplitude: f64,
    start: f64,
    end: f64,
    period: f64,
) -> Result<DisturbanceProfile, SimulateError> {
    if !(start < end) {
        return Err(SimulateError::BadWindow(start, end));
    }
    if !(period > 0.0) {
        return Err(SimulateError::BadPeriod(period));
    }
    Ok(DisturbanceProfile::SinePulse {
        amplitude,
        start,
        end,
        period,
    })
}

pub fn drag(c2: f64, start: f64, end: f64) -> Result<DisturbanceProfile, SimulateError> {
    if !(start < end) {
        return Err(SimulateError::BadWindow(start, end));
    }
    if !(c2 >= 0.0) {
        return Err(SimulateError::BadDrag(c2));
    }
    Ok(DisturbanceProfile::Drag { c2, start, end })
}

impl DisturbanceProfile {
    /// Value of a state-independent profile at time t; None for Drag, whose
    /// value depends on the follower velocity.
    pub fn shared_value(&self, t: f64) -> Option<f64> {
        match *self {
            DisturbanceProfile::Zero => Some(0.0),
            DisturbanceProfile::SinePulse {
                amplitude,
                start,
                end,
                period,
            } => {
                if t >= start && t < end {
                    Some(amplitude * (2.0 * std::f64::consts::PI / period * (t - start)).sin())
                } else {
                    Some(0.0)
                }
            }
            DisturbanceProfile::Drag { .. } => None,
        }
    }

    pub fn is_state_dependent(&self) -> bool {
        matches!(self, DisturbanceProfile::Drag { .. })
    }
}

/// Sampled leader motion on a strictly increasing time grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampledTrajectory {
    pub t: Vec<f64>,
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub acceleration: Vec<f64>,
}

impl SampledTrajectory {
    pub fn new(
        t: Vec<f64>,
        position: Vec<f64>,
        velocity: Vec<f64>,
        acceleration: Vec<f64>,
    ) -> Result<Self, SimulateError> {
        if t.len() < 2 {
            return Err(SimulateError::TooFewSamples(t.len()));
        }
        assert!(
            position.len() == t.len() && velocity.len() == t.len() && acceleration.len() == t.len(),
            "channel lengths must match the time grid"
        );
        for i in 1..t.len() {
            if !(t[i] > t[i - 1]) {
                return Err(SimulateError::NonMonotonicTime(i));
            }
        }
        Ok(Self {
            t,
            position,
            velocity,
            acceleration,
        })
    }

    fn interp(&self, channel: &[f64], time: f64) -> f64 {
        let t = &self.t;
        if time <= t[0] {
            return channel[0];
        }
        if time >= t[t.len() - 1] {
            return channel[t.len() - 1];
        }
        let idx = match t.binary_search_by(|x| x.total_cmp(&time)) {
            Ok(i) => return channel[i],
            Err(i) => i,
        };
        let (t0, t1) = (t[idx - 1], t[idx]);
        let w = (time - t0) / (t1 - t0);
        channel[idx - 1] * (1.0 - w) + channel[idx] * w
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LeaderTrajectory {
    ConstantSpeed { v0: f64 },
    Sampled(SampledTrajectory),
}

/// Leader kinematics resampled for the integrator: velocity, acceleration and
/// jerk as functions of time, with jerk from central differences of the sampled
/// acceleration channel.
pub struct LeaderSignals {
    v: Box<dyn Fn(f64) -> f64>,
    a: Box<dyn Fn(f64) -> f64>,
    jerk: Box<dyn Fn(f64) -> f64>,
}

impl LeaderSignals {
    pub fn velocity(&self, t: f64) -> f64 {
        (self.v)(t)
    }
    pub fn acceleration(&self, t: f64) -> f64 {
        (self.a)(t)
    }
    pub fn jerk(&self, t: f64) -> f64 {
        (self.jerk)(t)
    }
}

impl LeaderTrajectory {
    pub fn signals(&self) -> LeaderSignals {
        match self {
            LeaderTrajectory::ConstantSpeed { v0 } => {
                let v0 = *v0;
                LeaderSignals {
                    v: Box::new(move |_| v0),
                    a: Box::new(|_| 0.0),
                    jerk: Box::new(|_| 0.0),
                }
            }
            LeaderTrajectory::Sampled(s) => {
                let s_v = s.clone();
                let s_a = s.clone();
                let jerk_tr = SampledTrajectory {
                    t: s.t.clone(),
                    position: s.position.clone(),
                    velocity: s.velocity.clone(),
                    acceleration: central_differences(&s.t, &s.acceleration),
                };
                LeaderSignals {
                    v: Box::new(move |t| s_v.interp(&s_v.velocity, t)),
                    a: Box::new(move |t| s_a.interp(&s_a.acceleration, t)),
                    jerk: Box::new(move |t| jerk_tr.interp(&jerk_tr.acceleration, t)),
                }
            }
        }
    }

    pub fn coverage(&self) -> Option<(f64, f64)> {
        match self {
            LeaderTrajectory::ConstantSpeed { .. } => None,
            LeaderTrajectory::Sampled(s) => Some((s.t[0], s.t[s.t.len() - 1])),
        }
    }
}

pub fn central_differences(t: &[f64], y: &[f64]) -> Vec<f64> {
    let n = t.len();
    let mut d = vec![0.0; n];
    if n < 2 {
        return d;
    }
    d[0] = (y[1] - y[0]) / (t[1] - t[0]);
    d[n - 1] = (y[n - 1] - y[n - 2]) / (t[n - 1] - t[n - 2]);
    for i in 1..n - 1 {
        d[i] = (y[i + 1] - y[i - 1]) / (t[i + 1] - t[i - 1]);
    }
    d
}

/// Dense record of one closed-loop run. `states` holds the stacked error state
/// per step; `w` the per-follower disturbance actually applied at sample times.
#[derive(Debug, Clone)]
pub struct SimulationTrace {
    pub dt: f64,
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub w: Vec<Vec<f64>>,
    pub n_followers: usize,
}

impl SimulationTrace {
    pub fn position_error(&self, step: usize, vehicle: usize) -> f64 {
        self.states[step][3 * (vehicle - 1)]
    }

    /// Spacing-error row at one step: vehicle 1 tracks the leader directly, so
    /// its entry is p_1; vehicle i >= 2 reports p_i - p_{i-1}.
    pub fn spacing_row(&self, step: usize) -> Vec<f64> {
        (1..=self.n_followers)
            .map(|i| {
                if i == 1 {
                    self.position_error(step, 1)
                } else {
                    self.position_error(step, i) - self.position_error(step, i - 1)
                }
            })
            .collect()
    }

    pub fn state_norm(&self, step: usize) -> f64 {
        self.states[step].norm()
    }
}

/// Per-vehicle spacing-error time series, one inner vector per vehicle.
pub fn spacing_errors(trace: &SimulationTrace) -> Vec<Vec<f64>> {
    let mut series = vec![Vec::with_capacity(trace.times.len()); trace.n_followers];
    for step in 0..trace.times.len() {
        for (i, v) in trace.spacing_row(step).into_iter().enumerate() {
            series[i].push(v);
        }
    }
    series
}

/// Classic RK4 on X' = A_c X + B w(t, X), with t = step * dt kept index-based
/// so window edges land exactly on grid points.
pub fn simulate(
    system: &ClosedLoopSystem,
    dist: &DisturbanceProfile,
    leader: &LeaderTrajectory,
    x0: &DVector<f64>,
    horizon: f64,
    dt: f64,
) -> Result<SimulationTrace, SimulateError> {
    if !(dt > 0.0) || horizon < dt {
        return Err(SimulateError::BadStep(dt, horizon));
    }
    if let Some((lo, hi)) = leader.coverage() {
        if lo > 0.0 || hi < horizon {
            return Err(SimulateError::CoverageGap {
                have_lo: lo,
                have_hi: hi,
                need: horizon,
            });
        }
    }
    let n = system.n_followers;
    let tau = system.model.tau;
    let signals = leader.signals();
    let steps = (horizon / dt).round() as usize;

    // w_total(t, X) per follower: profile value plus the leader-maneuver term
    let w_at = |t: f64, x: &DVector<f64>| -> Vec<f64> {
        let lead = -(signals.acceleration(t) + tau * signals.jerk(t));
        match *dist {
            DisturbanceProfile::Drag { c2, start, end } => {
                let v0 = signals.velocity(t);
                (0..n)
                    .map(|i| {
                        if t >= start && t < end {
                            let v_abs = x[3 * i + 1] + v0;
                            -c2 * v_abs * v_abs + lead
                        } else {
                            lead
                        }
                    })
                    .collect()
            }
            _ => {
                let w = dist.shared_value(t).unwrap_or(0.0) + lead;
                vec![w; n]
            }
        }
    };

    let deriv = |t: f64, x: &DVector<f64>| -> DVector<f64> {
        let w = DVector::from_vec(w_at(t, x));
        &system.a_c * x + &system.b * w
    };

    let mut x = x0.clone();
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut w_log = Vec::with_capacity(steps + 1);
    times.push(0.0);
    states.push(x.clone());
    w_log.push(w_at(0.0, &x));

    for step in 0..steps {
        let t = step as f64 * dt;
        let k1 = deriv(t, &x);
        let k2 = deriv(t + 0.5 * dt, &(&x + &k1 * (0.5 * dt)));
        let k3 = deriv(t + 0.5 * dt, &(&x + &k2 * (0.5 * dt)));
        let k4 = deriv(t + dt, &(&x + &k3 * dt));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        let t_next = (step + 1) as f64 * dt;
        if !x.iter().all(|v| v.is_finite()) {
            return Err(SimulateError::NonFiniteState {
                step: step + 1,
                t: t_next,
            });
        }
        times.push(t_next);
        w_log.push(w_at(t_next, &x));
        states.push(x.clone());
    }

    Ok(SimulationTrace {
        dt,
        times,
        states,
        w: w_log,
        n_followers: n,
    })
}

/// Replay against a recorded leader: validates grid coverage, then runs the
/// same integrator with the sampled leader's maneuver term active.
pub fn replay_leader(
    system: &ClosedLoopSystem,
    leader: &SampledTrajectory,
    dist: &DisturbanceProfile,
    x0: &DVector<f64>,
    horizon: f64,
    dt: f64,
) -> Result<SimulationTrace, SimulateError> {
    let wrapped = LeaderTrajectory::Sampled(leader.clone());
    simulate(system, dist, &wrapped, x0, horizon, dt)
}

/// Empirical amplification: stacked output energy over mean-per-vehicle
/// disturbance energy,
///   sqrt(int sum_i y_i^2 dt) / sqrt(int (1/N) sum_i w_i^2 dt),
/// trapezoidal rule on the trace grid. With identical disturbance channels the
/// denominator equals the L2 norm of the shared scalar signal.
pub fn l2_gain(trace: &SimulationTrace) -> Result<f64, SimulateError> {
    let n = trace.n_followers as f64;
    let y2: Vec<f64> = (0..trace.times.len())
        .map(|s| {
            (0..trace.n_followers)
                .map(|i| {
                    let p = trace.states[s][3 * i];
                    p * p
                })
                .sum()
        })
        .collect();
    let w2: Vec<f64> = trace
        .w
        .iter()
        .map(|row| row.iter().map(|v| v * v).sum::<f64>() / n)
        .collect();
    let num = trapezoid(&y2, trace.dt).sqrt();
    let den = trapezoid(&w2, trace.dt).sqrt();
    if den == 0.0 {
        return Err(SimulateError::ZeroDisturbance);
    }
    Ok(num / den)
}

pub fn trapezoid(samples: &[f64], dt: f64) -> f64 {
    if samples.len() < 2 {
        return 0.0;
    }
    let inner: f64 = samples[1..samples.len() - 1].iter().sum();
    dt * (0.5 * samples[0] + inner + 0.5 * samples[samples.len() - 1])
}

/// Least-squares slope of ln ||X(t)|| over [t_from, t_to]; the decay rate of a
/// disturbance-free tail should track the spectral abscissa.
pub fn decay_rate(trace: &SimulationTrace, t_from: f64, t_to: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = trace
        .times
        .iter()
        .zip(trace.states.iter())
        .filter(|(t, x)| **t >= t_from && **t <= t_to && x.norm() > 1e-280)
        .map(|(t, x)| (*t, x.norm().ln()))
        .collect();
    if pts.len() < 8 {
        return None;
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-12 {
        return None;
    }
    Some((n * sxy - sx * sy) / denom)
}

/// Writes the trace in the fixed CSV layout
/// `t,w_1..w_N,phat_1..phat_N,vhat_1..vhat_N,ahat_1..ahat_N,spacing_1..spacing_N`.
/// Values use shortest round-trip decimal formatting, so identical runs produce
/// byte-identical files.
pub fn write_trace_csv<W: std::io::Write>(
    trace: &SimulationTrace,
    out: &mut W,
) -> std::io::Result<()> {
    let n = trace.n_followers;
    let mut header = String::from("t");
    for prefix in ["w", "phat", "vhat", "ahat", "spacing"] {
        for i in 1..=n {
            header.push_str(&format!(",{prefix}_{i}"));
        }
    }
    writeln!(out, "{header}")?;
    for step in 0..trace.times.len() {
        let mut row = format!("{}", trace.times[step]);
        for i in 0..n {
            row.push_str(&format!(",{}", trace.w[step][i]));
        }
        for field in 0..3 {
            for i in 0..n {
                row.push_str(&format!(",{}", trace.states[step][3 * i + field]));
            }
        }
        for v in trace.spacing_row(step) {
            row.push_str(&format!(",{v}"));
        }
        writeln!(out, "{row}")?;
    }
    Ok(())
}

/// Summary statistics mirrored into the run's JSON output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceSummary {
    pub n_followers: usize,
    pub dt: f64,
    pub horizon: f64,
    pub peak_spacing_error: f64,
    pub peak_spacing_per_vehicle: Vec<f64>,
    pub final_state_norm: f64,
    pub final_spacing_errors: Vec<f64>,
    pub l2_gain: Option<f64>,
    pub decay_rate: Option<f64>,
}

pub fn summarize(trace: &SimulationTrace, decay_window: Option<(f64, f64)>) -> TraceSummary {
    let series = spacing_errors(trace);
    let peak_per: Vec<f64> = series
        .iter()
        .map(|s| s.iter().fold(0.0f64, |a, &b| a.max(b.abs())))
        .collect();
    let last = trace.times.len() - 1;
    TraceSummary {
        n_followers: trace.n_followers,
        dt: trace.dt,
        horizon: *trace.times.last().unwrap(),
        peak_spacing_error: peak_per.iter().fold(0.0f64, |a, &b| a.max(b)),
        peak_spacing_per_vehicle: peak_per,
        final_state_norm: trace.state_norm(last),
        final_spacing_errors: trace.spacing_row(last),
        l2_gain: l2_gain(trace).ok(),
        decay_rate: decay_window.and_then(|(a, b)| decay_rate(trace, a, b)),
    }
}

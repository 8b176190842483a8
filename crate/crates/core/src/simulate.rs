//! Fixed-step closed-loop simulation.
//!
//! The controller output and the disturbance force are sampled at the start
//! of each step and held over it (zero-order hold); the plant is advanced by
//! classical fourth-order Runge–Kutta. Every logged sample carries the audit
//! quantities used by [`crate::verify`].

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::control::{
    lyapunov_rate_expected, lyapunov_value, pd_wrench, proposed_wrench, saturate, tracking_errors,
    Gains, Setpoint,
};
use crate::dynamics::{
    forward_dynamics, forward_kinematics, gross_power, storage_energy, storage_energy_rate,
    ActuationWrench, GeneralizedState, PhysicalParams, Vec5,
};
use crate::error::{Error, Result};
use crate::scenario::{ControllerKind, DronePositions, ScenarioConfig};

/// Record flag bits.
pub mod flags {
    pub const SATURATED: u32 = 1;
    pub const DISTURBED: u32 = 2;
    pub const SETPOINT_SWITCH: u32 = 4;
    pub const FAULT: u32 = 8;
    /// The held wrench was computed at an earlier sample.
    pub const HELD: u32 = 16;
}

/// Resolves drone positions into a configuration with equal rope angles and
/// a level bar: `θ1 = θ2 = asin(((y2 − y1) − a) / (l1 + l2))`, `θ3 = 0`.
pub fn initial_state(positions: &DronePositions, p: &PhysicalParams) -> Result<GeneralizedState> {
    if positions.z1 != positions.z2 {
        return Err(Error::Configuration(format!(
            "drones must start level, got z1 = {} and z2 = {}",
            positions.z1, positions.z2
        )));
    }
    let stretch = (positions.y2 - positions.y1) - p.a;
    let reach = p.l1 + p.l2;
    if !(stretch.abs() < reach) {
        return Err(Error::Configuration(format!(
            "drone separation {} is not reachable with bar {} and ropes {} + {}",
            positions.y2 - positions.y1,
            p.a,
            p.l1,
            p.l2
        )));
    }
    let theta0 = (stretch / reach).asin();
    let q = Vec5::new(positions.y1, positions.z1, theta0, theta0, 0.0);
    let xi = forward_kinematics(&q, p);
    if (xi.drone2.y - positions.z2).abs() > 1e-9 {
        return Err(Error::Configuration(
            "unequal rope lengths cannot hold both drones level with a level bar".into(),
        ));
    }
    Ok(GeneralizedState::at_rest(q))
}

fn derivative(
    q: &Vec5,
    qdot: &Vec5,
    u: &ActuationWrench,
    disturbance: &Vec5,
    p: &PhysicalParams,
) -> Result<(Vec5, Vec5)> {
    Ok((*qdot, forward_dynamics(q, qdot, u, disturbance, p)?))
}

/// One classical RK4 step with `u` and `disturbance` held constant.
pub fn step(
    state: &GeneralizedState,
    u: &ActuationWrench,
    disturbance: &Vec5,
    p: &PhysicalParams,
    dt: f64,
) -> Result<GeneralizedState> {
    if !(dt > 0.0) {
        return Err(Error::Scenario(format!("dt must be positive, got {dt}")));
    }
    let (q, v) = (state.q, state.qdot);
    let (k1q, k1v) = derivative(&q, &v, u, disturbance, p)?;
    let (k2q, k2v) = derivative(
        &(q + k1q * (dt / 2.0)),
        &(v + k1v * (dt / 2.0)),
        u,
        disturbance,
        p,
    )?;
    let (k3q, k3v) = derivative(
        &(q + k2q * (dt / 2.0)),
        &(v + k2v * (dt / 2.0)),
        u,
        disturbance,
        p,
    )?;
    let (k4q, k4v) = derivative(&(q + k3q * dt), &(v + k3v * dt), u, disturbance, p)?;
    let next = GeneralizedState::new(
        q + (k1q + k2q * 2.0 + k3q * 2.0 + k4q) * (dt / 6.0),
        v + (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (dt / 6.0),
        state.t + dt,
    );
    next.check_domain()?;
    Ok(next)
}

/// Time derivative of `f` along the flow `(q̇, q̈)`, by central differences
/// with one Richardson extrapolation (error O(h⁴)).
pub fn flow_derivative(
    f: impl Fn(&GeneralizedState) -> f64,
    state: &GeneralizedState,
    qddot: &Vec5,
    h: f64,
) -> f64 {
    let shifted = |s: f64| {
        GeneralizedState::new(
            state.q + state.qdot * s,
            state.qdot + qddot * s,
            state.t + s,
        )
    };
    let central = |h: f64| (f(&shifted(h)) - f(&shifted(-h))) / (2.0 * h);
    (4.0 * central(0.5 * h) - central(h)) / 3.0
}

const FLOW_STEP: f64 = 1e-4;

/// Power (W) added to the residual normalization so that states resting at an
/// equilibrium to roundoff do not report noise as relative error.
pub const POWER_FLOOR: f64 = 1e-9;

fn relative(residual: f64, scale: f64) -> f64 {
    residual.abs() / (scale + POWER_FLOOR)
}

/// One logged sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub t: f64,
    pub q: [f64; 5],
    pub qdot: [f64; 5],
    /// Wrench applied from this sample until the next.
    pub u: [f64; 4],
    /// ξ1, ξ2, ξ3 as (y, z) pairs.
    pub xi: [f64; 6],
    /// Tracking errors (e_y1, e_z1, e_y2, e_z2) against the active setpoint.
    pub errors: [f64; 4],
    /// Rope angle target of the active segment.
    pub theta_target: f64,
    pub segment: usize,
    pub lyapunov: Option<f64>,
    pub storage: f64,
    /// Relative residual of the storage-energy rate identity.
    pub res_power: Option<f64>,
    /// Relative residual of the Lyapunov rate identity.
    pub res_lyapunov: Option<f64>,
    /// Barrier force term σρe_y/(ρ − e_y²)² (proposed controller only).
    pub barrier: Option<f64>,
    pub ey_sq: f64,
    pub flags: u32,
}

impl Record {
    pub fn has(&self, flag: u32) -> bool {
        self.flags & flag != 0
    }

    pub fn ey(&self) -> f64 {
        self.errors[0] - self.errors[2]
    }
}

/// A fault that halted a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimFault {
    pub t: f64,
    pub message: String,
    pub q: [f64; 5],
    pub qdot: [f64; 5],
    #[serde(skip)]
    pub error: Option<Error>,
}

impl std::fmt::Display for SimFault {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "fault at t = {:.4} s: {}", self.t, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub scenario: String,
    pub controller: ControllerKind,
    pub dt: f64,
    pub records: Vec<Record>,
    pub fault: Option<SimFault>,
    /// Windows in which a disturbance acts.
    pub disturbance_windows: Vec<(f64, f64)>,
}

pub const CSV_HEADER: [&str; 27] = [
    "t",
    "y",
    "z",
    "theta1",
    "theta2",
    "theta3",
    "ydot",
    "zdot",
    "theta1dot",
    "theta2dot",
    "theta3dot",
    "u1",
    "u2",
    "u3",
    "u4",
    "y1",
    "z1",
    "y2",
    "z2",
    "y3",
    "z3",
    "V",
    "E",
    "res_power",
    "res_lyapunov",
    "barrier",
    "fault",
];

impl TrajectoryLog {
    pub fn last(&self) -> &Record {
        self.records
            .last()
            .expect("logs always hold the initial record")
    }

    pub fn is_faulted(&self) -> bool {
        self.fault.is_some()
    }

    /// Trajectory as CSV: one row per sample. Optional audit columns are empty
    /// when not applicable; `fault` holds the flag bits.
    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(CSV_HEADER)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            let mut row: Vec<String> = Vec::with_capacity(CSV_HEADER.len());
            row.push(r.t.to_string());
            row.extend(r.q.iter().map(f64::to_string));
            row.extend(r.qdot.iter().map(f64::to_string));
            row.extend(r.u.iter().map(f64::to_string));
            row.extend(r.xi.iter().map(f64::to_string));
            row.push(opt(r.lyapunov));
            row.push(r.storage.to_string());
            row.push(opt(r.res_power));
            row.push(opt(r.res_lyapunov));
            row.push(opt(r.barrier));
            row.push(r.flags.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Options that trade audit detail for speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    /// Evaluate the rate-identity residuals at every sample.
    pub audits: bool,
    /// Keep every `stride`-th record (the first, last and faulted records are
    /// always kept).
    pub stride: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            audits: true,
            stride: 1,
        }
    }
}

struct Controller<'a> {
    config: &'a ScenarioConfig,
}

impl Controller<'_> {
    fn wrench(
        &self,
        state: &GeneralizedState,
        sp: &Setpoint,
        gains: &Gains,
    ) -> Result<ActuationWrench> {
        match self.config.controller {
            ControllerKind::Proposed => proposed_wrench(state, sp, gains, &self.config.params),
            ControllerKind::Pd => pd_wrench(state, sp, gains, &self.config.params),
        }
    }
}

/// Runs a scenario with full audits.
pub fn run(config: &ScenarioConfig) -> Result<TrajectoryLog> {
    run_with(config, RunOptions::default())
}

/// Runs a scenario. Configuration errors are returned as `Err`; faults during
/// the run halt it and are reported in [`TrajectoryLog::fault`] with the
/// partial log retained.
pub fn run_with(config: &ScenarioConfig, options: RunOptions) -> Result<TrajectoryLog> {
    config.validate()?;
    let p = &config.params;
    let controller = Controller { config };
    let stride = options.stride.max(1);
    let steps = config.steps();
    let mut log = TrajectoryLog {
        scenario: config.name.clone(),
        controller: config.controller,
        dt: config.dt,
        records: Vec::with_capacity(steps / stride + 2),
        fault: None,
        disturbance_windows: config.disturbance_windows(),
    };

    let mut state = config.initial_state()?;
    let mut held = ActuationWrench::zero();
    let mut segment = usize::MAX;

    for k in 0..=steps {
        let t = k as f64 * config.dt;
        state.t = t;
        let mut record_flags = 0;

        let seg = config.segment_at(t);
        if seg != segment {
            if segment != usize::MAX {
                record_flags |= flags::SETPOINT_SWITCH;
            }
            segment = seg;
        }
        let sp = config.setpoint_schedule[segment].setpoint();
        let gains = config.segment_gains(segment);

        let fresh =
            k % config.controller_decimation == 0 || record_flags & flags::SETPOINT_SWITCH != 0;
        if fresh {
            match controller.wrench(&state, &sp, &gains) {
                Ok(u) => held = u,
                Err(e) => {
                    log.records.push(fault_record(
                        config,
                        &state,
                        &sp,
                        &gains,
                        segment,
                        record_flags,
                    ));
                    log.fault = Some(fault(t, &state, e));
                    return Ok(log);
                }
            }
        } else {
            record_flags |= flags::HELD;
        }
        let mut applied = held;
        if let Some(limit) = config.thrust_limit {
            let (capped, hit) = saturate(&held, limit);
            applied = capped;
            if hit {
                record_flags |= flags::SATURATED;
            }
        }
        let disturbance = config.disturbance_force(&state, t);
        if disturbance.is_some() {
            record_flags |= flags::DISTURBED;
        }
        let disturbance = disturbance.unwrap_or_else(Vec5::zeros);

        let keep = k % stride == 0 || k == steps;
        if keep {
            match sample(
                config,
                &state,
                &applied,
                &disturbance,
                &sp,
                &gains,
                options.audits,
            ) {
                Ok(mut record) => {
                    record.segment = segment;
                    record.flags = record_flags;
                    log.records.push(record);
                }
                Err(e) => {
                    log.records.push(fault_record(
                        config,
                        &state,
                        &sp,
                        &gains,
                        segment,
                        record_flags,
                    ));
                    log.fault = Some(fault(t, &state, e));
                    return Ok(log);
                }
            }
        }
        if k == steps {
            break;
        }

        match step(&state, &applied, &disturbance, p, config.dt) {
            Ok(next) => state = next,
            Err(e) => {
                // Log the offending state when the step produced one.
                let bad = raw_step(&state, &applied, &disturbance, p, config.dt).unwrap_or(state);
                let t_bad = if bad == state { t } else { t + config.dt };
                let mut bad = bad;
                bad.t = t_bad;
                log.records.push(fault_record(
                    config,
                    &bad,
                    &sp,
                    &gains,
                    segment,
                    record_flags,
                ));
                log.fault = Some(fault(t_bad, &bad, e));
                return Ok(log);
            }
        }
    }
    Ok(log)
}

/// The RK4 update without the domain check, to expose an offending state.
fn raw_step(
    state: &GeneralizedState,
    u: &ActuationWrench,
    disturbance: &Vec5,
    p: &PhysicalParams,
    dt: f64,
) -> Option<GeneralizedState> {
    let (q, v) = (state.q, state.qdot);
    let (k1q, k1v) = derivative(&q, &v, u, disturbance, p).ok()?;
    let (k2q, k2v) = derivative(
        &(q + k1q * (dt / 2.0)),
        &(v + k1v * (dt / 2.0)),
        u,
        disturbance,
        p,
    )
    .ok()?;
    let (k3q, k3v) = derivative(
        &(q + k2q * (dt / 2.0)),
        &(v + k2v * (dt / 2.0)),
        u,
        disturbance,
        p,
    )
    .ok()?;
    let (k4q, k4v) = derivative(&(q + k3q * dt), &(v + k3v * dt), u, disturbance, p).ok()?;
    Some(GeneralizedState::new(
        q + (k1q + k2q * 2.0 + k3q * 2.0 + k4q) * (dt / 6.0),
        v + (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (dt / 6.0),
        state.t + dt,
    ))
}

fn fault(t: f64, state: &GeneralizedState, error: Error) -> SimFault {
    SimFault {
        t,
        message: error.to_string(),
        q: state.q.into(),
        qdot: state.qdot.into(),
        error: Some(error),
    }
}

fn fault_record(
    config: &ScenarioConfig,
    state: &GeneralizedState,
    sp: &Setpoint,
    gains: &Gains,
    segment: usize,
    record_flags: u32,
) -> Record {
    let p = &config.params;
    let e = tracking_errors(state, sp, p);
    Record {
        t: state.t,
        q: state.q.into(),
        qdot: state.qdot.into(),
        u: [f64::NAN; 4],
        xi: forward_kinematics(&state.q, p).to_array(),
        errors: e.positions(),
        theta_target: gains.theta2d,
        segment,
        lyapunov: None,
        storage: storage_energy(state, p),
        res_power: None,
        res_lyapunov: None,
        barrier: None,
        ey_sq: e.ey() * e.ey(),
        flags: record_flags | flags::FAULT,
    }
}

fn sample(
    config: &ScenarioConfig,
    state: &GeneralizedState,
    u: &ActuationWrench,
    disturbance: &Vec5,
    sp: &Setpoint,
    gains: &Gains,
    audits: bool,
) -> Result<Record> {
    let p = &config.params;
    let e = tracking_errors(state, sp, p);
    let proposed = config.controller == ControllerKind::Proposed;
    let lyapunov = if proposed {
        Some(lyapunov_value(state, sp, gains, p)?)
    } else {
        None
    };
    let barrier = if proposed && gains.sigma != 0.0 {
        Some(crate::control::barrier_force(e.ey(), gains)?)
    } else {
        None
    };

    let (mut res_power, mut res_lyapunov) = (None, None);
    if audits {
        let qddot = forward_dynamics(&state.q, &state.qdot, u, disturbance, p)?;
        let external = state.qdot.dot(disturbance);
        let scale = gross_power(state, u, disturbance, p);

        let e_rate = flow_derivative(|s| storage_energy(s, p), state, &qddot, FLOW_STEP);
        let expected = storage_energy_rate(state, u, p) + external;
        res_power = Some(relative(e_rate - expected, scale));

        // The rate identity holds when the applied wrench is the controller's
        // output at this very state.
        if proposed && !wrench_was_modified(config, u, state, sp, gains) {
            let v_rate = flow_derivative(
                |s| lyapunov_value(s, sp, gains, p).unwrap_or(f64::NAN),
                state,
                &qddot,
                FLOW_STEP,
            );
            let expected = lyapunov_rate_expected(state, gains, p) + external;
            res_lyapunov = Some(relative(v_rate - expected, scale));
        }
    }

    Ok(Record {
        t: state.t,
        q: state.q.into(),
        qdot: state.qdot.into(),
        u: u.to_array(),
        xi: forward_kinematics(&state.q, p).to_array(),
        errors: e.positions(),
        theta_target: gains.theta2d,
        segment: 0,
        lyapunov,
        storage: storage_energy(state, p),
        res_power,
        res_lyapunov,
        barrier,
        ey_sq: e.ey() * e.ey(),
        flags: 0,
    })
}

/// True when the applied wrench differs from a fresh controller evaluation.
fn wrench_was_modified(
    config: &ScenarioConfig,
    u: &ActuationWrench,
    state: &GeneralizedState,
    sp: &Setpoint,
    gains: &Gains,
) -> bool {
    match proposed_wrench(state, sp, gains, &config.params) {
        Ok(fresh) => fresh != *u,
        Err(_) => true,
    }
}

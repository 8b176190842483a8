//! Cooperative anti-swing controller, the PD baseline and the Lyapunov
//! instrumentation that certifies the closed loop.
//!
//! The controller outputs the four inertial thrust components directly. The
//! horizontal channels carry, besides PD terms, a swing-coupled damping term
//! `ka (θ̇1² + θ̇2² + θ̇3²) ẏ`, a bias holding a desired rope angle and a
//! barrier term `σ ρ e_y / (ρ − e_y²)²` on the difference of the two
//! horizontal errors. The vertical channels are PD plus gravity feed-forward.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::dynamics::{
    check_angle_domain, kinetic_energy, swing_potential, velocity_kinematics, ActuationWrench,
    GeneralizedState, PhysicalParams,
};
use crate::error::{Error, Result};

/// Tolerance on the formation relation between the two drone setpoints.
pub const SETPOINT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gains {
    pub kp1: f64,
    pub kp2: f64,
    pub kp3: f64,
    pub kp4: f64,
    pub kd1: f64,
    pub kd2: f64,
    pub kd3: f64,
    pub kd4: f64,
    pub ka1: f64,
    pub ka2: f64,
    pub sigma: f64,
    pub rho: f64,
    pub theta2d: f64,
}

impl Default for Gains {
    /// Gains used in the hardware experiments.
    fn default() -> Self {
        Self {
            kp1: 5.2,
            kp2: 5.2,
            kp3: 6.0,
            kp4: 6.0,
            kd1: 6.0,
            kd2: 6.0,
            kd3: 8.0,
            kd4: 8.0,
            ka1: 0.75,
            ka2: 0.75,
            sigma: 4.0,
            rho: 2.0,
            theta2d: 0.0,
        }
    }
}

impl Gains {
    /// Position/velocity gains and `ρ` must be strictly positive; `ka1`,
    /// `ka2` and `σ` may be zero, which switches the corresponding term off.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("kp1", self.kp1),
            ("kp2", self.kp2),
            ("kp3", self.kp3),
            ("kp4", self.kp4),
            ("kd1", self.kd1),
            ("kd2", self.kd2),
            ("kd3", self.kd3),
            ("kd4", self.kd4),
            ("rho", self.rho),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidParameter {
                    name,
                    value,
                    reason: "must be finite and strictly positive",
                });
            }
        }
        for (name, value) in [("ka1", self.ka1), ("ka2", self.ka2), ("sigma", self.sigma)] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::InvalidParameter {
                    name,
                    value,
                    reason: "must be finite and non-negative",
                });
            }
        }
        if !(self.theta2d.abs() < FRAC_PI_2) {
            return Err(Error::InvalidParameter {
                name: "theta2d",
                value: self.theta2d,
                reason: "must lie in (-pi/2, pi/2)",
            });
        }
        Ok(())
    }

    /// The same gains with the coupling damping, barrier and swing bias
    /// removed: the PD baseline.
    pub fn pd(&self) -> Self {
        Self {
            ka1: 0.0,
            ka2: 0.0,
            sigma: 0.0,
            theta2d: 0.0,
            ..*self
        }
    }

    pub fn with_theta2d(&self, theta2d: f64) -> Self {
        Self { theta2d, ..*self }
    }
}

/// Desired drone positions (m).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Setpoint {
    pub y1d: f64,
    pub z1d: f64,
    pub y2d: f64,
    pub z2d: f64,
}

impl Setpoint {
    pub fn new(y1d: f64, z1d: f64, y2d: f64, z2d: f64) -> Self {
        Self { y1d, z1d, y2d, z2d }
    }

    /// Level formation with the left drone at `(y1d, z)`, holding both ropes
    /// at `theta2d` and the bar horizontal.
    pub fn formation(y1d: f64, z: f64, theta2d: f64, p: &PhysicalParams) -> Self {
        Self::new(y1d, z, y1d + p.a + (p.l1 + p.l2) * theta2d.sin(), z)
    }

    /// Drone separation implied by a rope bias at rest: `a + 2 l sin θ2d`.
    /// With `θ2d = 0` this is the bar length.
    pub fn check(&self, p: &PhysicalParams, theta2d: f64) -> Result<()> {
        p.require_equal_ropes()?;
        if self.z1d != self.z2d {
            return Err(Error::Setpoint(format!(
                "z1d = {} and z2d = {} must be equal",
                self.z1d, self.z2d
            )));
        }
        let expected = p.a + (p.l1 + p.l2) * theta2d.sin();
        let separation = self.y2d - self.y1d;
        if !((separation - expected).abs() <= SETPOINT_TOLERANCE) {
            return Err(Error::Setpoint(format!(
                "y2d - y1d = {separation} but the formation requires {expected} \
                 (bar length {} with rope bias {theta2d} rad)",
                p.a
            )));
        }
        Ok(())
    }

    /// Rope bias implied by the setpoint separation.
    pub fn implied_theta2d(&self, p: &PhysicalParams) -> Result<f64> {
        let s = (self.y2d - self.y1d - p.a) / (p.l1 + p.l2);
        if s.abs() >= 1.0 {
            return Err(Error::Setpoint(format!(
                "separation {} cannot be reached with ropes of {} and {} m",
                self.y2d - self.y1d,
                p.l1,
                p.l2
            )));
        }
        Ok(s.asin())
    }
}

/// Thrust magnitude and pitch of one drone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DroneCommand {
    pub thrust: f64,
    pub pitch: f64,
}

impl DroneCommand {
    /// `(f sinφ, f cosφ)`.
    pub fn components(&self) -> (f64, f64) {
        let (s, c) = self.pitch.sin_cos();
        (self.thrust * s, self.thrust * c)
    }
}

/// Position errors of both drones and their velocities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingErrors {
    pub ey1: f64,
    pub ez1: f64,
    pub ey2: f64,
    pub ez2: f64,
    pub vy1: f64,
    pub vz1: f64,
    pub vy2: f64,
    pub vz2: f64,
}

impl TrackingErrors {
    /// Difference of the two horizontal errors, the barrier variable.
    pub fn ey(&self) -> f64 {
        self.ey1 - self.ey2
    }

    pub fn positions(&self) -> [f64; 4] {
        [self.ey1, self.ez1, self.ey2, self.ez2]
    }
}

pub fn tracking_errors(
    state: &GeneralizedState,
    setpoint: &Setpoint,
    p: &PhysicalParams,
) -> TrackingErrors {
    let xi = crate::dynamics::forward_kinematics(&state.q, p);
    let v = velocity_kinematics(&state.q, &state.qdot, p);
    TrackingErrors {
        ey1: xi.drone1.x - setpoint.y1d,
        ez1: xi.drone1.y - setpoint.z1d,
        ey2: xi.drone2.x - setpoint.y2d,
        ez2: xi.drone2.y - setpoint.z2d,
        vy1: v.drone1.x,
        vz1: v.drone1.y,
        vy2: v.drone2.x,
        vz2: v.drone2.y,
    }
}

/// `σ ρ e_y / (ρ − e_y²)²`, defined only inside `e_y² < ρ`.
pub fn barrier_force(ey: f64, gains: &Gains) -> Result<f64> {
    let gap = gains.rho - ey * ey;
    if !(gap > 0.0) {
        return Err(Error::BarrierDomain {
            ey_sq: ey * ey,
            rho: gains.rho,
        });
    }
    Ok(gains.sigma * gains.rho * ey / (gap * gap))
}

/// `σ e_y² / (2 (ρ − e_y²))`, the potential whose gradient is [`barrier_force`].
pub fn barrier_potential(ey: f64, gains: &Gains) -> Result<f64> {
    let gap = gains.rho - ey * ey;
    if !(gap > 0.0) {
        return Err(Error::BarrierDomain {
            ey_sq: ey * ey,
            rho: gains.rho,
        });
    }
    Ok(gains.sigma * ey * ey / (2.0 * gap))
}

/// Accepts `ρ` iff it strictly exceeds the squared initial barrier variable.
pub fn validate_rho(ey1_0: f64, ey2_0: f64, rho: f64) -> bool {
    let d = ey1_0 - ey2_0;
    rho > d * d
}

fn swing_activity(state: &GeneralizedState) -> f64 {
    let [r1, r2, r3] = state.angle_rates();
    r1 * r1 + r2 * r2 + r3 * r3
}

fn control_law(
    state: &GeneralizedState,
    setpoint: &Setpoint,
    gains: &Gains,
    p: &PhysicalParams,
) -> Result<ActuationWrench> {
    check_angle_domain(&state.q)?;
    let e = tracking_errors(state, setpoint, p);
    // With σ = 0 the term vanishes identically and imposes no domain.
    let barrier = if gains.sigma == 0.0 {
        0.0
    } else {
        barrier_force(e.ey(), gains)?
    };
    let activity = swing_activity(state);
    let bias = 0.5 * p.m3 * p.g * gains.theta2d.tan();

    let u1 = -gains.kp1 * e.ey1 - gains.kd1 * e.vy1 - gains.ka1 * activity * e.vy1 - bias - barrier;
    let u3 = -gains.kp2 * e.ey2 - gains.kd2 * e.vy2 - gains.ka2 * activity * e.vy2 + bias + barrier;
    let u2 = -gains.kp3 * e.ez1 - gains.kd3 * e.vz1 + 0.5 * (2.0 * p.m1 + p.m3) * p.g;
    let u4 = -gains.kp4 * e.ez2 - gains.kd4 * e.vz2 + 0.5 * (2.0 * p.m2 + p.m3) * p.g;

    if !(u2 > 0.0) {
        return Err(Error::Actuation {
            index: 2,
            value: u2,
        });
    }
    if !(u4 > 0.0) {
        return Err(Error::Actuation {
            index: 4,
            value: u4,
        });
    }
    Ok(ActuationWrench::new(u1, u2, u3, u4))
}

/// The cooperative anti-swing controller.
pub fn proposed_wrench(
    state: &GeneralizedState,
    setpoint: &Setpoint,
    gains: &Gains,
    p: &PhysicalParams,
) -> Result<ActuationWrench> {
    setpoint.check(p, gains.theta2d)?;
    control_law(state, setpoint, gains, p)
}

/// PD baseline with gravity feed-forward. Identical to [`proposed_wrench`]
/// with `ka1 = ka2 = σ = θ2d = 0`.
pub fn pd_wrench(
    state: &GeneralizedState,
    setpoint: &Setpoint,
    gains: &Gains,
    p: &PhysicalParams,
) -> Result<ActuationWrench> {
    control_law(state, setpoint, &gains.pd(), p)
}

/// Thrust magnitude and pitch for each drone.
pub fn decompose(u: &ActuationWrench) -> Result<(DroneCommand, DroneCommand)> {
    if !(u.u2 > 0.0) {
        return Err(Error::Actuation {
            index: 2,
            value: u.u2,
        });
    }
    if !(u.u4 > 0.0) {
        return Err(Error::Actuation {
            index: 4,
            value: u.u4,
        });
    }
    let command = |h: f64, v: f64| DroneCommand {
        thrust: h.hypot(v),
        pitch: h.atan2(v),
    };
    Ok((command(u.u1, u.u2), command(u.u3, u.u4)))
}

pub fn recompose(drone1: &DroneCommand, drone2: &DroneCommand) -> ActuationWrench {
    let (u1, u2) = drone1.components();
    let (u3, u4) = drone2.components();
    ActuationWrench::new(u1, u2, u3, u4)
}

/// Caps each drone's thrust magnitude at `limit`, keeping its pitch.
/// Returns the capped wrench and whether any cap was active.
pub fn saturate(u: &ActuationWrench, limit: f64) -> (ActuationWrench, bool) {
    let cap = |h: f64, v: f64| {
        let f = h.hypot(v);
        if f > limit {
            let s = limit / f;
            (h * s, v * s, true)
        } else {
            (h, v, false)
        }
    };
    let (u1, u2, hit1) = cap(u.u1, u.u2);
    let (u3, u4, hit2) = cap(u.u3, u.u4);
    (ActuationWrench::new(u1, u2, u3, u4), hit1 || hit2)
}

/// Lyapunov function of the closed loop: storage energy, position springs,
/// barrier potential and the rope-bias term.
pub fn lyapunov_value(
    state: &GeneralizedState,
    setpoint: &Setpoint,
    gains: &Gains,
    p: &PhysicalParams,
) -> Result<f64> {
    let e = tracking_errors(state, setpoint, p);
    let springs = 0.5
        * (gains.kp1 * e.ey1 * e.ey1
            + gains.kp2 * e.ey2 * e.ey2
            + gains.kp3 * e.ez1 * e.ez1
            + gains.kp4 * e.ez2 * e.ez2);
    let barrier = barrier_potential(e.ey(), gains)?;
    let bias = 0.5 * p.m3 * p.g * e.ey() * gains.theta2d.tan();
    Ok(kinetic_energy(&state.q, &state.qdot, p)
        + swing_potential(&state.q, p)
        + springs
        + barrier
        + bias)
}

/// Closed-loop rate of [`lyapunov_value`] predicted for the proposed
/// controller: a sum of non-positive dissipation terms.
pub fn lyapunov_rate_expected(state: &GeneralizedState, gains: &Gains, p: &PhysicalParams) -> f64 {
    let v = velocity_kinematics(&state.q, &state.qdot, p);
    let activity = swing_activity(state);
    let (vy1, vz1, vy2, vz2) = (v.drone1.x, v.drone1.y, v.drone2.x, v.drone2.y);
    -gains.ka1 * activity * vy1 * vy1
        - gains.ka2 * activity * vy2 * vy2
        - gains.kd1 * vy1 * vy1
        - gains.kd2 * vy2 * vy2
        - gains.kd3 * vz1 * vz1
        - gains.kd4 * vz2 * vz2
}

//! The shipped scenarios: the hardware experiments replayed in simulation,
//! plus a hover baseline.

use crate::control::{Gains, Setpoint};
use crate::dynamics::{BodyPoint, PhysicalParams};
use crate::scenario::{
    ControllerKind, DisturbanceEvent, DronePositions, ScenarioConfig, ScheduledSetpoint,
    WindSegment, DEFAULT_DT,
};

pub const NAMES: [&str; 6] = [
    "hover",
    "exp1_test1",
    "exp1_test2",
    "exp1_test3",
    "exp2_test1",
    "exp2_test2",
];

pub fn builtin(name: &str) -> Option<ScenarioConfig> {
    Some(match name {
        "hover" => hover(),
        "exp1_test1" => exp1_test1(),
        "exp1_test2" => exp1_test2(),
        "exp1_test3" => exp1_test3(),
        "exp2_test1" => exp2_test1(),
        "exp2_test2" => exp2_test2(),
        _ => return None,
    })
}

pub fn all() -> Vec<ScenarioConfig> {
    NAMES.iter().filter_map(|n| builtin(n)).collect()
}

fn hold(t: f64, y1d: f64, y2d: f64, z: f64, theta2d: Option<f64>) -> ScheduledSetpoint {
    ScheduledSetpoint {
        t,
        y1d,
        z1d: z,
        y2d,
        z2d: z,
        theta2d,
    }
}

fn config(
    name: &str,
    params: PhysicalParams,
    initial_positions: DronePositions,
    setpoint_schedule: Vec<ScheduledSetpoint>,
    disturbances: Vec<DisturbanceEvent>,
    duration: f64,
) -> ScenarioConfig {
    ScenarioConfig {
        name: name.to_string(),
        params,
        gains: Gains::default(),
        controller: ControllerKind::Proposed,
        initial_positions,
        initial_perturbation: None,
        setpoint_schedule,
        disturbances,
        duration,
        dt: DEFAULT_DT,
        thrust_limit: None,
        controller_decimation: 1,
    }
}

/// A gust from −y that rises to 3 m/s and dies out after 20 s.
fn gust() -> DisturbanceEvent {
    DisturbanceEvent::Wind {
        profile: vec![
            WindSegment {
                start: 0.0,
                end: 5.0,
                speed: 1.5,
            },
            WindSegment {
                start: 5.0,
                end: 15.0,
                speed: 3.0,
            },
            WindSegment {
                start: 15.0,
                end: 20.0,
                speed: 1.5,
            },
        ],
        drag_gain: 0.5,
        direction: -1.0,
    }
}

/// Level formation held at rest with vertical ropes.
pub fn hover() -> ScenarioConfig {
    config(
        "hover",
        PhysicalParams::default(),
        DronePositions {
            y1: 0.0,
            z1: 1.5,
            y2: 1.2,
            z2: 1.5,
        },
        vec![hold(0.0, 0.0, 1.2, 1.5, None)],
        Vec::new(),
        10.0,
    )
}

/// Point-to-point transport from a splayed start under a wind gust.
pub fn exp1_test1() -> ScenarioConfig {
    config(
        "exp1_test1",
        PhysicalParams::default(),
        DronePositions {
            y1: -0.1,
            z1: 1.3,
            y2: 1.5,
            z2: 1.3,
        },
        vec![hold(0.0, -1.3, -0.1, 1.8, None)],
        vec![gust()],
        60.0,
    )
}

/// Heavier bar, longer bar and ropes, same gains and gust.
pub fn exp1_test2() -> ScenarioConfig {
    config(
        "exp1_test2",
        PhysicalParams {
            m3: 0.5,
            a: 1.5,
            l1: 1.2,
            l2: 1.2,
            ..PhysicalParams::default()
        },
        DronePositions {
            y1: -1.3,
            z1: 1.5,
            y2: -0.2,
            z2: 1.5,
        },
        vec![hold(0.0, 0.0, 1.5, 1.9, None)],
        vec![gust()],
        60.0,
    )
}

/// Hover with 5 N, 0.2 s pushes on the bar every 20 s, alternating sides.
pub fn exp1_test3() -> ScenarioConfig {
    let pulses = (0..5)
        .map(|k| DisturbanceEvent::Impulse {
            point: BodyPoint::BarMid,
            force: [if k % 2 == 0 { 5.0 } else { -5.0 }, 0.0],
            start: 10.0 + 20.0 * k as f64,
            duration: 0.2,
        })
        .collect();
    config(
        "exp1_test3",
        PhysicalParams::default(),
        DronePositions {
            y1: -1.3,
            z1: 1.8,
            y2: -0.1,
            z2: 1.8,
        },
        vec![hold(0.0, -1.3, -0.1, 1.8, None)],
        pulses,
        100.0,
    )
}

/// Horizontal setpoints squeezed and stretched every 10 s. Separations other
/// than the bar length are held with a rope bias `θ2d`.
pub fn exp2_test1() -> ScenarioConfig {
    let p = PhysicalParams::default();
    let bias = |y1d: f64, y2d: f64| {
        Setpoint::new(y1d, 1.7, y2d, 1.7)
            .implied_theta2d(&p)
            .expect("schedule separations are reachable")
    };
    let schedule = [
        (0.0, -0.6, 0.6),
        (10.0, -0.4, 0.4),
        (20.0, -0.8, 0.8),
        (30.0, -0.6, 0.6),
    ]
    .into_iter()
    .map(|(t, y1d, y2d)| {
        let theta2d = bias(y1d, y2d);
        hold(t, y1d, y2d, 1.7, (theta2d != 0.0).then_some(theta2d))
    })
    .collect();
    config(
        "exp2_test1",
        p,
        DronePositions {
            y1: -0.6,
            z1: 1.7,
            y2: 0.6,
            z2: 1.7,
        },
        schedule,
        Vec::new(),
        40.0,
    )
}

/// Opposing pushes on the two drones: squeezed together at 5 s and pulled
/// apart at 20 s, 4 N each for 1 s.
pub fn exp2_test2() -> ScenarioConfig {
    exp2_pulses("exp2_test2", 4.0, 1.0)
}

/// Opposing pulse pair with the given per-drone force and width.
pub fn exp2_pulses(name: &str, force: f64, width: f64) -> ScenarioConfig {
    let pair = |start: f64, inward: f64| {
        [
            DisturbanceEvent::Impulse {
                point: BodyPoint::Drone1,
                force: [inward * force, 0.0],
                start,
                duration: width,
            },
            DisturbanceEvent::Impulse {
                point: BodyPoint::Drone2,
                force: [-inward * force, 0.0],
                start,
                duration: width,
            },
        ]
    };
    let mut disturbances = pair(5.0, 1.0).to_vec();
    disturbances.extend(pair(20.0, -1.0));
    config(
        name,
        PhysicalParams::default(),
        DronePositions {
            y1: -0.6,
            z1: 1.7,
            y2: 0.6,
            z2: 1.7,
        },
        vec![hold(0.0, -0.6, 0.6, 1.7, None)],
        disturbances,
        35.0,
    )
}

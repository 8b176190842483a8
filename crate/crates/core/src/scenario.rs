//! Scenario configuration: plant, controller, initial condition, setpoint
//! schedule and disturbances. Scenarios are stored as JSON.

use std::fmt;
use std::path::Path;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::control::{validate_rho, Gains, Setpoint};
use crate::dynamics::{
    external_force_to_generalized, forward_kinematics, velocity_kinematics, BodyPoint,
    GeneralizedState, PhysicalParams, Vec5,
};
use crate::error::{Error, Result};

pub const DEFAULT_DT: f64 = 1e-3;

/// Slack for comparing event times against the integration grid.
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    #[default]
    Proposed,
    Pd,
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Proposed => "proposed",
            Self::Pd => "pd",
        })
    }
}

impl std::str::FromStr for ControllerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "proposed" => Ok(Self::Proposed),
            "pd" => Ok(Self::Pd),
            other => Err(Error::Scenario(format!(
                "unknown controller `{other}` (expected proposed or pd)"
            ))),
        }
    }
}

/// Drone positions (m) used to resolve the initial configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DronePositions {
    pub y1: f64,
    pub z1: f64,
    pub y2: f64,
    pub z2: f64,
}

/// Offset added to the resolved initial state.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatePerturbation {
    #[serde(default)]
    pub q: [f64; 5],
    #[serde(default)]
    pub qdot: [f64; 5],
}

/// A setpoint that becomes active at time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduledSetpoint {
    pub t: f64,
    pub y1d: f64,
    pub z1d: f64,
    pub y2d: f64,
    pub z2d: f64,
    /// Rope bias for this segment; falls back to the configured gain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta2d: Option<f64>,
}

impl ScheduledSetpoint {
    pub fn setpoint(&self) -> Setpoint {
        Setpoint::new(self.y1d, self.z1d, self.y2d, self.z2d)
    }

    pub fn theta2d_or(&self, default: f64) -> f64 {
        self.theta2d.unwrap_or(default)
    }
}

/// Constant wind speed over `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindSegment {
    pub start: f64,
    pub end: f64,
    pub speed: f64,
}

fn default_drag_gain() -> f64 {
    0.5
}

fn default_direction() -> f64 {
    -1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DisturbanceEvent {
    /// Relative-velocity drag `c_w (v_wind − ẏ3)` on the bar midpoint along
    /// `direction` (±1 along y) while a profile segment is active.
    Wind {
        profile: Vec<WindSegment>,
        #[serde(default = "default_drag_gain")]
        drag_gain: f64,
        #[serde(default = "default_direction")]
        direction: f64,
    },
    /// Constant force `(Fy, Fz)` at `point` over `[start, start + duration)`.
    Impulse {
        point: BodyPoint,
        force: [f64; 2],
        start: f64,
        duration: f64,
    },
}

impl DisturbanceEvent {
    /// Time windows over which the event acts.
    pub fn windows(&self) -> Vec<(f64, f64)> {
        match self {
            Self::Wind { profile, .. } => profile
                .iter()
                .filter(|s| s.speed != 0.0)
                .map(|s| (s.start, s.end))
                .collect(),
            Self::Impulse {
                start, duration, ..
            } => vec![(*start, start + duration)],
        }
    }

    fn validate(&self, duration: f64) -> Result<()> {
        let within = |a: f64, b: f64| a >= 0.0 && b <= duration + TIME_EPS && a < b;
        match self {
            Self::Wind {
                profile,
                drag_gain,
                direction,
            } => {
                if !(*drag_gain >= 0.0 && drag_gain.is_finite()) {
                    return Err(Error::Scenario(format!(
                        "wind drag_gain must be non-negative, got {drag_gain}"
                    )));
                }
                if direction.abs() != 1.0 {
                    return Err(Error::Scenario(format!(
                        "wind direction must be +1 or -1, got {direction}"
                    )));
                }
                for s in profile {
                    if !within(s.start, s.end) || !s.speed.is_finite() {
                        return Err(Error::Scenario(format!(
                            "wind segment [{}, {}) must have positive length inside [0, {duration}]",
                            s.start, s.end
                        )));
                    }
                }
            }
            Self::Impulse {
                force,
                start,
                duration: width,
                ..
            } => {
                if !(*width > 0.0) {
                    return Err(Error::Scenario(format!(
                        "impulse duration must be positive, got {width}"
                    )));
                }
                if !within(*start, start + width) {
                    return Err(Error::Scenario(format!(
                        "impulse window [{start}, {}) lies outside [0, {duration}]",
                        start + width
                    )));
                }
                if force.iter().any(|f| !f.is_finite()) {
                    return Err(Error::Scenario("impulse force must be finite".into()));
                }
            }
        }
        Ok(())
    }

    fn clipped(&self, horizon: f64) -> Option<Self> {
        match self {
            Self::Wind {
                profile,
                drag_gain,
                direction,
            } => {
                let profile: Vec<WindSegment> = profile
                    .iter()
                    .filter(|s| s.start < horizon - TIME_EPS)
                    .map(|s| WindSegment {
                        end: s.end.min(horizon),
                        ..*s
                    })
                    .collect();
                (!profile.is_empty()).then_some(Self::Wind {
                    profile,
                    drag_gain: *drag_gain,
                    direction: *direction,
                })
            }
            Self::Impulse {
                point,
                force,
                start,
                duration,
            } => (*start < horizon - TIME_EPS).then(|| Self::Impulse {
                point: *point,
                force: *force,
                start: *start,
                duration: duration.min(horizon - start),
            }),
        }
    }

    /// Generalized force at time `t` and state `state`; `None` when inactive.
    pub fn generalized_force(
        &self,
        state: &GeneralizedState,
        t: f64,
        p: &PhysicalParams,
    ) -> Option<Vec5> {
        let active = |a: f64, b: f64| t >= a - TIME_EPS && t < b - TIME_EPS;
        match self {
            Self::Wind {
                profile,
                drag_gain,
                direction,
            } => {
                let segment = profile
                    .iter()
                    .find(|s| s.speed != 0.0 && active(s.start, s.end))?;
                let v_bar = velocity_kinematics(&state.q, &state.qdot, p).bar_mid.x;
                let force = drag_gain * (direction * segment.speed - v_bar);
                Some(external_force_to_generalized(
                    &state.q,
                    BodyPoint::BarMid,
                    Vector2::new(force, 0.0),
                    p,
                ))
            }
            Self::Impulse {
                point,
                force,
                start,
                duration,
            } => {
                if !active(*start, start + duration) {
                    return None;
                }
                Some(external_force_to_generalized(
                    &state.q,
                    *point,
                    Vector2::new(force[0], force[1]),
                    p,
                ))
            }
        }
    }
}

fn default_dt() -> f64 {
    DEFAULT_DT
}

fn default_decimation() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub params: PhysicalParams,
    #[serde(default)]
    pub gains: Gains,
    #[serde(default)]
    pub controller: ControllerKind,
    pub initial_positions: DronePositions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_perturbation: Option<StatePerturbation>,
    pub setpoint_schedule: Vec<ScheduledSetpoint>,
    #[serde(default)]
    pub disturbances: Vec<DisturbanceEvent>,
    pub duration: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Optional cap on each drone's thrust magnitude (N).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thrust_limit: Option<f64>,
    /// The controller is re-evaluated every this many integration steps.
    #[serde(default = "default_decimation")]
    pub controller_decimation: usize,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario configs always serialize")
    }

    /// Reads a JSON scenario; parse errors carry line, column and field.
    pub fn load(path: &Path) -> std::result::Result<Self, LoadError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LoadError::Io(path.display().to_string(), e))?;
        Self::from_json(&text).map_err(|e| LoadError::Parse(path.display().to_string(), e))
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    /// Index of the schedule entry active at `t`.
    pub fn segment_at(&self, t: f64) -> usize {
        self.setpoint_schedule
            .iter()
            .rposition(|s| s.t <= t + TIME_EPS)
            .unwrap_or(0)
    }

    pub fn segment_gains(&self, segment: usize) -> Gains {
        let entry = &self.setpoint_schedule[segment];
        self.gains
            .with_theta2d(entry.theta2d_or(self.gains.theta2d))
    }

    /// Resolved initial state including any perturbation.
    pub fn initial_state(&self) -> Result<GeneralizedState> {
        let mut state = crate::simulate::initial_state(&self.initial_positions, &self.params)?;
        if let Some(delta) = &self.initial_perturbation {
            state.q += Vec5::from(delta.q);
            state.qdot += Vec5::from(delta.qdot);
        }
        state.check_domain()?;
        Ok(state)
    }

    pub fn disturbance_windows(&self) -> Vec<(f64, f64)> {
        self.disturbances.iter().flat_map(|d| d.windows()).collect()
    }

    /// Sum of all disturbance generalized forces active at `t`.
    pub fn disturbance_force(&self, state: &GeneralizedState, t: f64) -> Option<Vec5> {
        self.disturbances
            .iter()
            .filter_map(|d| d.generalized_force(state, t, &self.params))
            .reduce(|a, b| a + b)
    }

    pub fn without_disturbances(&self) -> Self {
        Self {
            name: format!("{}_calm", self.name),
            disturbances: Vec::new(),
            ..self.clone()
        }
    }

    /// The same scenario cut to `duration`; disturbance windows are clipped to
    /// it and those starting at or after it are dropped.
    pub fn with_duration(&self, duration: f64) -> Self {
        let disturbances = self
            .disturbances
            .iter()
            .filter_map(|d| d.clipped(duration))
            .collect();
        Self {
            duration,
            disturbances,
            ..self.clone()
        }
    }

    pub fn with_controller(&self, controller: ControllerKind) -> Self {
        Self {
            controller,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.gains.validate()?;
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Scenario(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return Err(Error::Scenario(format!(
                "duration must be non-negative, got {}",
                self.duration
            )));
        }
        if self.controller_decimation == 0 {
            return Err(Error::Scenario(
                "controller_decimation must be at least 1".into(),
            ));
        }
        if let Some(limit) = self.thrust_limit {
            if !(limit > 0.0) {
                return Err(Error::Scenario(format!(
                    "thrust_limit must be positive, got {limit}"
                )));
            }
        }
        let first = self
            .setpoint_schedule
            .first()
            .ok_or_else(|| Error::Scenario("setpoint_schedule is empty".into()))?;
        if first.t.abs() > TIME_EPS {
            return Err(Error::Scenario(format!(
                "the first setpoint must start at t = 0, got {}",
                first.t
            )));
        }
        for pair in self.setpoint_schedule.windows(2) {
            if !(pair[1].t > pair[0].t) {
                return Err(Error::Scenario(
                    "setpoint times must be strictly increasing".into(),
                ));
            }
        }
        for (i, entry) in self.setpoint_schedule.iter().enumerate() {
            let theta2d = entry.theta2d_or(self.gains.theta2d);
            self.gains.with_theta2d(theta2d).validate()?;
            entry
                .setpoint()
                .check(&self.params, theta2d)
                .map_err(|e| Error::Scenario(format!("setpoint #{i} at t = {}: {e}", entry.t)))?;
        }
        for event in &self.disturbances {
            event.validate(self.duration)?;
        }

        let state = self.initial_state()?;
        if self.controller == ControllerKind::Proposed {
            let sp = first.setpoint();
            let xi = forward_kinematics(&state.q, &self.params);
            let (ey1, ey2) = (xi.drone1.x - sp.y1d, xi.drone2.x - sp.y2d);
            if !validate_rho(ey1, ey2, self.gains.rho) {
                return Err(Error::Scenario(format!(
                    "rho = {} must exceed the squared initial difference of the horizontal \
                     errors |e_y1(0) - e_y2(0)|^2 = {}",
                    self.gains.rho,
                    (ey1 - ey2).powi(2)
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("cannot read {0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("cannot parse {0}: {1}")]
    Parse(String, #[source] serde_json::Error),
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hover() -> ScenarioConfig {
        ScenarioConfig {
            name: "t".into(),
            params: PhysicalParams::default(),
            gains: Gains::default(),
            controller: ControllerKind::Proposed,
            initial_positions: DronePositions {
                y1: 0.0,
                z1: 1.5,
                y2: 1.2,
                z2: 1.5,
            },
            initial_perturbation: None,
            setpoint_schedule: vec![ScheduledSetpoint {
                t: 0.0,
                y1d: 0.0,
                z1d: 1.5,
                y2d: 1.2,
                z2d: 1.5,
                theta2d: None,
            }],
            disturbances: vec![],
            duration: 1.0,
            dt: 1e-3,
            thrust_limit: None,
            controller_decimation: 1,
        }
    }

    #[test]
    fn valid_hover_config() {
        hover().validate().unwrap();
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = hover();
        c.dt = 0.0;
        assert!(c.validate().is_err());

        let mut c = hover();
        c.setpoint_schedule[0].y2d = 1.0;
        assert!(matches!(c.validate(), Err(Error::Scenario(m)) if m.contains("setpoint #0")));

        let mut c = hover();
        c.gains.rho = 0.01;
        c.initial_positions.y1 = -0.3;
        c.initial_positions.y2 = 1.2;
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("rho"), "{err}");

        let mut c = hover();
        c.disturbances.push(DisturbanceEvent::Impulse {
            point: BodyPoint::BarMid,
            force: [5.0, 0.0],
            start: 0.9,
            duration: 0.2,
        });
        assert!(c.validate().is_err());

        let mut c = hover();
        c.disturbances.push(DisturbanceEvent::Impulse {
            point: BodyPoint::BarMid,
            force: [5.0, 0.0],
            start: 0.5,
            duration: 0.0,
        });
        assert!(c.validate().is_err());
    }

    #[test]
    fn pd_config_skips_rho_gate() {
        let mut c = hover();
        c.gains.rho = 0.01;
        c.initial_positions.y1 = -0.3;
        c.controller = ControllerKind::Pd;
        c.validate().unwrap();
    }

    #[test]
    fn parse_errors_name_the_field() {
        let mut json: serde_json::Value = serde_json::from_str(&hover().to_json()).unwrap();
        json["gains"]["kp9"] = serde_json::json!(1.0);
        let err = ScenarioConfig::from_json(&serde_json::to_string_pretty(&json).unwrap())
            .unwrap_err()
            .to_string();
        assert!(err.contains("kp9") && err.contains("line"), "{err}");
        let err = ScenarioConfig::from_json("{\"name\": \"x\",\n \"duration\": \"long\"}")
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn json_round_trip() {
        let c = hover();
        assert_eq!(ScenarioConfig::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn segment_lookup() {
        let mut c = hover();
        c.duration = 30.0;
        for t in [10.0, 20.0] {
            let mut entry = c.setpoint_schedule[0];
            entry.t = t;
            c.setpoint_schedule.push(entry);
        }
        assert_eq!(c.segment_at(0.0), 0);
        assert_eq!(c.segment_at(9.999), 0);
        assert_eq!(c.segment_at(10.0), 1);
        assert_eq!(c.segment_at(25.0), 2);
    }

    #[test]
    fn wind_drag_acts_on_bar_only_while_active() {
        let p = PhysicalParams::default();
        let wind = DisturbanceEvent::Wind {
            profile: vec![WindSegment {
                start: 1.0,
                end: 2.0,
                speed: 3.0,
            }],
            drag_gain: 0.5,
            direction: -1.0,
        };
        let s = GeneralizedState::at_rest(Vec5::new(0.0, 1.5, 0.0, 0.0, 0.0));
        assert!(wind.generalized_force(&s, 0.5, &p).is_none());
        assert!(wind.generalized_force(&s, 2.0, &p).is_none());
        let q = wind.generalized_force(&s, 1.5, &p).unwrap();
        let expected =
            external_force_to_generalized(&s.q, BodyPoint::BarMid, Vector2::new(-1.5, 0.0), &p);
        assert_eq!(q, expected);
    }
}

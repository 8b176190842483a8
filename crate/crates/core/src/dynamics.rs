//! Planar Lagrangian model of two drones carrying a bar on two cables.
//!
//! Generalized coordinates are `q = [y, z, θ1, θ2, θ3]`: the left drone's
//! position, the two rope angles from vertical and the bar angle from
//! horizontal. The right drone closes the kinematic chain. Drones and the bar
//! midpoint are point masses, so the inertia matrix is `Σ mᵢ Jᵢᵀ Jᵢ` and the
//! equations of motion read
//!
//! ```text
//! M(q) q̈ + C(q, q̇) q̇ + G(q) = Q(q, u) + Q_ext
//! ```
//!
//! with `C` built from Christoffel symbols of the analytic `∂M/∂q` and
//! `G = ∇U`, `U = g (m1 z1 + m2 z2 + m3 z3)`.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use nalgebra::{SMatrix, SVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec5 = SVector<f64, 5>;
pub type Mat5 = SMatrix<f64, 5, 5>;
/// Jacobian of a planar point position with respect to `q`.
pub type PointJacobian = SMatrix<f64, 2, 5>;

/// Masses (kg), lengths (m) and gravity (m/s²) of the drone-bar system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalParams {
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
    pub l1: f64,
    pub l2: f64,
    pub a: f64,
    pub g: f64,
}

impl Default for PhysicalParams {
    /// The experimental testbed.
    fn default() -> Self {
        Self {
            m1: 1.5,
            m2: 1.5,
            m3: 0.3,
            l1: 0.9,
            l2: 0.9,
            a: 1.2,
            g: 9.8,
        }
    }
}

impl PhysicalParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("m1", self.m1),
            ("m2", self.m2),
            ("m3", self.m3),
            ("l1", self.l1),
            ("l2", self.l2),
            ("a", self.a),
            ("g", self.g),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidParameter {
                    name,
                    value,
                    reason: "must be finite and strictly positive",
                });
            }
        }
        Ok(())
    }

    /// The controller and its setpoint relation assume equal rope lengths.
    pub fn require_equal_ropes(&self) -> Result<()> {
        if self.l1 != self.l2 {
            return Err(Error::InvalidParameter {
                name: "l2",
                value: self.l2,
                reason: "controller operations require l1 == l2",
            });
        }
        Ok(())
    }

    pub fn total_mass(&self) -> f64 {
        self.m1 + self.m2 + self.m3
    }
}

/// Configuration, rates and time of the system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneralizedState {
    pub q: Vec5,
    pub qdot: Vec5,
    pub t: f64,
}

impl GeneralizedState {
    pub fn new(q: Vec5, qdot: Vec5, t: f64) -> Self {
        Self { q, qdot, t }
    }

    pub fn at_rest(q: Vec5) -> Self {
        Self::new(q, Vec5::zeros(), 0.0)
    }

    pub fn y(&self) -> f64 {
        self.q[0]
    }

    pub fn z(&self) -> f64 {
        self.q[1]
    }

    pub fn angles(&self) -> [f64; 3] {
        [self.q[2], self.q[3], self.q[4]]
    }

    pub fn angle_rates(&self) -> [f64; 3] {
        [self.qdot[2], self.qdot[3], self.qdot[4]]
    }

    /// Rejects states with any angle outside (-π/2, π/2) or non-finite entries.
    pub fn check_domain(&self) -> Result<()> {
        check_angle_domain(&self.q)?;
        if self.qdot.iter().any(|v| !v.is_finite()) {
            return Err(Error::Configuration(
                "non-finite generalized velocity".into(),
            ));
        }
        Ok(())
    }
}

pub fn check_angle_domain(q: &Vec5) -> Result<()> {
    for index in 1..=3 {
        let value = q[index + 1];
        if !(value.is_finite() && value.abs() < FRAC_PI_2) {
            return Err(Error::OutsideDomain { index, value });
        }
    }
    if !(q[0].is_finite() && q[1].is_finite()) {
        return Err(Error::Configuration("non-finite drone position".into()));
    }
    Ok(())
}

/// Thrust of both drones split into inertial-frame components:
/// `u1 = f1 sinφ1`, `u2 = f1 cosφ1`, `u3 = f2 sinφ2`, `u4 = f2 cosφ2`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ActuationWrench {
    pub u1: f64,
    pub u2: f64,
    pub u3: f64,
    pub u4: f64,
}

impl ActuationWrench {
    pub fn new(u1: f64, u2: f64, u3: f64, u4: f64) -> Self {
        Self { u1, u2, u3, u4 }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    /// Feed-forward that holds the level, untilted formation still.
    pub fn hover(p: &PhysicalParams) -> Self {
        Self::new(
            0.0,
            (p.m1 + 0.5 * p.m3) * p.g,
            0.0,
            (p.m2 + 0.5 * p.m3) * p.g,
        )
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.u1, self.u2, self.u3, self.u4]
    }

    pub fn drone1_force(&self) -> Vector2<f64> {
        Vector2::new(self.u1, self.u2)
    }

    pub fn drone2_force(&self) -> Vector2<f64> {
        Vector2::new(self.u3, self.u4)
    }
}

/// Points of the system at which forces can be applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BodyPoint {
    Drone1,
    Drone2,
    BarMid,
}

impl FromStr for BodyPoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "drone1" => Ok(Self::Drone1),
            "drone2" => Ok(Self::Drone2),
            "bar_mid" => Ok(Self::BarMid),
            other => Err(Error::UnknownPoint(other.to_owned())),
        }
    }
}

impl fmt::Display for BodyPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Drone1 => "drone1",
            Self::Drone2 => "drone2",
            Self::BarMid => "bar_mid",
        })
    }
}

/// Positions (y, z) of the left drone, right drone and bar midpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanarPositions {
    pub drone1: Vector2<f64>,
    pub drone2: Vector2<f64>,
    pub bar_mid: Vector2<f64>,
}

impl PlanarPositions {
    pub fn to_array(&self) -> [f64; 6] {
        [
            self.drone1.x,
            self.drone1.y,
            self.drone2.x,
            self.drone2.y,
            self.bar_mid.x,
            self.bar_mid.y,
        ]
    }

    /// Residual of `ξ2 − ξ1` against the rope/bar chain evaluated at `q`.
    pub fn chain_residual(&self, q: &Vec5, p: &PhysicalParams) -> f64 {
        let k = Trig::of(q);
        let expected = Vector2::new(
            p.l1 * k.s1 + p.l2 * k.s2 + p.a * k.c3,
            -p.l1 * k.c1 + p.l2 * k.c2 + p.a * k.s3,
        );
        (self.drone2 - self.drone1 - expected).amax()
    }
}

/// Velocities (ẏ, ż) of the three points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointVelocities {
    pub drone1: Vector2<f64>,
    pub drone2: Vector2<f64>,
    pub bar_mid: Vector2<f64>,
}

/// Sines and cosines of the three angles, with the angle-sum shorthand
/// `C_{i±j} = cos(θi ± θj)`, `S_{i±j} = sin(θi ± θj)`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Trig {
    pub s1: f64,
    pub c1: f64,
    pub s2: f64,
    pub c2: f64,
    pub s3: f64,
    pub c3: f64,
}

impl Trig {
    pub fn of(q: &Vec5) -> Self {
        let (s1, c1) = q[2].sin_cos();
        let (s2, c2) = q[3].sin_cos();
        let (s3, c3) = q[4].sin_cos();
        Self {
            s1,
            c1,
            s2,
            c2,
            s3,
            c3,
        }
    }

    pub fn c1p2(&self) -> f64 {
        self.c1 * self.c2 - self.s1 * self.s2
    }

    pub fn s1p2(&self) -> f64 {
        self.s1 * self.c2 + self.c1 * self.s2
    }

    pub fn c2p3(&self) -> f64 {
        self.c2 * self.c3 - self.s2 * self.s3
    }

    pub fn s2p3(&self) -> f64 {
        self.s2 * self.c3 + self.c2 * self.s3
    }

    pub fn c1m3(&self) -> f64 {
        self.c1 * self.c3 + self.s1 * self.s3
    }

    pub fn s1m3(&self) -> f64 {
        self.s1 * self.c3 - self.c1 * self.s3
    }
}

/// `1 − cos θ` without cancellation for small angles.
pub(crate) fn versine(theta: f64) -> f64 {
    let h = (0.5 * theta).sin();
    2.0 * h * h
}

fn symmetric(entries: &[(usize, usize, f64)]) -> Mat5 {
    let mut m = Mat5::zeros();
    for &(i, j, v) in entries {
        m[(i, j)] = v;
        m[(j, i)] = v;
    }
    m
}

pub fn inertia_matrix(q: &Vec5, p: &PhysicalParams) -> Mat5 {
    let k = Trig::of(q);
    let m23 = p.m2 + p.m3;
    // m2·a + m3·a/2 appears wherever the bar angle couples to translation.
    let mb = p.m2 + 0.5 * p.m3;
    let mt = p.total_mass();
    symmetric(&[
        (0, 0, mt),
        (1, 1, mt),
        (0, 2, m23 * p.l1 * k.c1),
        (0, 3, p.m2 * p.l2 * k.c2),
        (0, 4, -mb * p.a * k.s3),
        (1, 2, m23 * p.l1 * k.s1),
        (1, 3, -p.m2 * p.l2 * k.s2),
        (1, 4, mb * p.a * k.c3),
        (2, 2, m23 * p.l1 * p.l1),
        (3, 3, p.m2 * p.l2 * p.l2),
        (4, 4, p.m2 * p.a * p.a + 0.25 * p.m3 * p.a * p.a),
        (2, 3, p.m2 * p.l1 * p.l2 * k.c1p2()),
        (3, 4, -p.m2 * p.l2 * p.a * k.s2p3()),
        (2, 4, mb * p.l1 * p.a * k.s1m3()),
    ])
}

/// Analytic `∂M/∂q_k` for k = 0..5. Only the angles appear in `M`, so the
/// first two are zero.
pub fn inertia_partials(q: &Vec5, p: &PhysicalParams) -> [Mat5; 5] {
    let k = Trig::of(q);
    let m23 = p.m2 + p.m3;
    let mb = p.m2 + 0.5 * p.m3;
    let d34 = -p.m2 * p.l1 * p.l2 * k.s1p2();
    let d45 = -p.m2 * p.l2 * p.a * k.c2p3();
    let d35 = mb * p.l1 * p.a * k.c1m3();
    [
        Mat5::zeros(),
        Mat5::zeros(),
        symmetric(&[
            (0, 2, -m23 * p.l1 * k.s1),
            (1, 2, m23 * p.l1 * k.c1),
            (2, 3, d34),
            (2, 4, d35),
        ]),
        symmetric(&[
            (0, 3, -p.m2 * p.l2 * k.s2),
            (1, 3, -p.m2 * p.l2 * k.c2),
            (2, 3, d34),
            (3, 4, d45),
        ]),
        symmetric(&[
            (0, 4, -mb * p.a * k.c3),
            (1, 4, -mb * p.a * k.s3),
            (3, 4, d45),
            (2, 4, -d35),
        ]),
    ]
}

/// Coriolis/centrifugal matrix from Christoffel symbols of the first kind,
/// `C_kj = Σ_i ½(∂_i M_kj + ∂_j M_ki − ∂_k M_ij) q̇_i`. With this choice
/// `Ṁ − 2C` is skew-symmetric.
pub fn coriolis_matrix(q: &Vec5, qdot: &Vec5, p: &PhysicalParams) -> Mat5 {
    let dm = inertia_partials(q, p);
    let mut c = Mat5::zeros();
    for k in 0..5 {
        for j in 0..5 {
            let mut acc = 0.0;
            for (i, dmi) in dm.iter().enumerate() {
                acc += (dmi[(k, j)] + dm[j][(k, i)] - dm[k][(i, j)]) * qdot[i];
            }
            c[(k, j)] = 0.5 * acc;
        }
    }
    c
}

/// `C(q, q̇) q̇ = Ṁ q̇ − ½ ∂/∂q (q̇ᵀ M q̇)`, evaluated without forming `C`.
pub fn coriolis_vector(q: &Vec5, qdot: &Vec5, p: &PhysicalParams) -> Vec5 {
    let dm = inertia_partials(q, p);
    let mut mdot = Mat5::zeros();
    for (dmi, &rate) in dm.iter().zip(qdot.iter()) {
        if rate != 0.0 {
            mdot += dmi * rate;
        }
    }
    let mut out = mdot * qdot;
    for (k, dmk) in dm.iter().enumerate().skip(2) {
        out[k] -= 0.5 * qdot.dot(&(dmk * qdot));
    }
    out
}

pub fn potential_energy(q: &Vec5, p: &PhysicalParams) -> f64 {
    let xi = forward_kinematics(q, p);
    p.g * (p.m1 * xi.drone1.y + p.m2 * xi.drone2.y + p.m3 * xi.bar_mid.y)
}

pub fn kinetic_energy(q: &Vec5, qdot: &Vec5, p: &PhysicalParams) -> f64 {
    0.5 * qdot.dot(&(inertia_matrix(q, p) * qdot))
}

/// Total mechanical energy `T + U`.
pub fn mechanical_energy(state: &GeneralizedState, p: &PhysicalParams) -> f64 {
    kinetic_energy(&state.q, &state.qdot, p) + potential_energy(&state.q, p)
}

/// `G = ∂U/∂q`.
pub fn gravity_vector(q: &Vec5, p: &PhysicalParams) -> Vec5 {
    let k = Trig::of(q);
    Vec5::new(
        0.0,
        p.g * p.total_mass(),
        p.g * (p.m2 + p.m3) * p.l1 * k.s1,
        -p.g * p.m2 * p.l2 * k.s2,
        p.g * (p.m2 + 0.5 * p.m3) * p.a * k.c3,
    )
}

/// Generalized forces of the two thrust vectors, in closed form.
pub fn generalized_forces(q: &Vec5, u: &ActuationWrench, p: &PhysicalParams) -> Vec5 {
    let k = Trig::of(q);
    Vec5::new(
        u.u1 + u.u3,
        u.u2 + u.u4,
        u.u3 * p.l1 * k.c1 + u.u4 * p.l1 * k.s1,
        u.u3 * p.l2 * k.c2 - u.u4 * p.l2 * k.s2,
        -u.u3 * p.a * k.s3 + u.u4 * p.a * k.c3,
    )
}

/// Analytic `∂ξ/∂q` of the named point.
pub fn point_jacobian(q: &Vec5, point: BodyPoint, p: &PhysicalParams) -> PointJacobian {
    let k = Trig::of(q);
    match point {
        BodyPoint::Drone1 => PointJacobian::new(
            1.0, 0.0, 0.0, 0.0, 0.0, //
            0.0, 1.0, 0.0, 0.0, 0.0,
        ),
        BodyPoint::Drone2 => PointJacobian::new(
            1.0,
            0.0,
            p.l1 * k.c1,
            p.l2 * k.c2,
            -p.a * k.s3,
            0.0,
            1.0,
            p.l1 * k.s1,
            -p.l2 * k.s2,
            p.a * k.c3,
        ),
        BodyPoint::BarMid => PointJacobian::new(
            1.0,
            0.0,
            p.l1 * k.c1,
            0.0,
            -0.5 * p.a * k.s3,
            0.0,
            1.0,
            p.l1 * k.s1,
            0.0,
            0.5 * p.a * k.c3,
        ),
    }
}

/// Generalized force `Jᵀ F` of a planar force `(Fy, Fz)` applied at `point`.
pub fn external_force_to_generalized(
    q: &Vec5,
    point: BodyPoint,
    force: Vector2<f64>,
    p: &PhysicalParams,
) -> Vec5 {
    point_jacobian(q, point, p).transpose() * force
}

/// Same as [`external_force_to_generalized`] with the point given by name.
pub fn external_force_by_name(
    q: &Vec5,
    point: &str,
    force: Vector2<f64>,
    p: &PhysicalParams,
) -> Result<Vec5> {
    Ok(external_force_to_generalized(q, point.parse()?, force, p))
}

pub fn forward_kinematics(q: &Vec5, p: &PhysicalParams) -> PlanarPositions {
    let k = Trig::of(q);
    let (y, z) = (q[0], q[1]);
    let rope_end = Vector2::new(y + p.l1 * k.s1, z - p.l1 * k.c1);
    PlanarPositions {
        drone1: Vector2::new(y, z),
        drone2: Vector2::new(
            y + p.l1 * k.s1 + p.l2 * k.s2 + p.a * k.c3,
            z - p.l1 * k.c1 + p.l2 * k.c2 + p.a * k.s3,
        ),
        bar_mid: rope_end + 0.5 * p.a * Vector2::new(k.c3, k.s3),
    }
}

pub fn velocity_kinematics(q: &Vec5, qdot: &Vec5, p: &PhysicalParams) -> PointVelocities {
    PointVelocities {
        drone1: Vector2::new(qdot[0], qdot[1]),
        drone2: point_jacobian(q, BodyPoint::Drone2, p) * qdot,
        bar_mid: point_jacobian(q, BodyPoint::BarMid, p) * qdot,
    }
}

/// Solves `M q̈ = Q(u) + Q_ext − C q̇ − G` by Cholesky factorization.
pub fn forward_dynamics(
    q: &Vec5,
    qdot: &Vec5,
    u: &ActuationWrench,
    disturbance: &Vec5,
    p: &PhysicalParams,
) -> Result<Vec5> {
    let m = inertia_matrix(q, p);
    let rhs = generalized_forces(q, u, p) + disturbance
        - coriolis_vector(q, qdot, p)
        - gravity_vector(q, p);
    let chol = m.cholesky().ok_or(Error::SingularInertia)?;
    let qddot = chol.solve(&rhs);
    let residual = (m * qddot - rhs).norm();
    if !(residual <= 1e-10 * rhs.norm()) {
        return Err(Error::IllConditioned { residual });
    }
    Ok(qddot)
}

/// Storage function: kinetic energy plus the swing potential of the bar,
/// `½ q̇ᵀMq̇ + m3 g [½ l1 (1 − C1) + ½ l2 (1 − C2)]`.
pub fn storage_energy(state: &GeneralizedState, p: &PhysicalParams) -> f64 {
    kinetic_energy(&state.q, &state.qdot, p) + swing_potential(&state.q, p)
}

pub(crate) fn swing_potential(q: &Vec5, p: &PhysicalParams) -> f64 {
    p.m3 * p.g * 0.5 * (p.l1 * versine(q[2]) + p.l2 * versine(q[3]))
}

/// Rate of the storage function predicted from thrust and drone velocities,
/// `ẏ1 u1 + ẏ2 u3 + ż1 [u2 − (m1 + m3/2) g] + ż2 [u4 − (m2 + m3/2) g]`.
pub fn storage_energy_rate(
    state: &GeneralizedState,
    u: &ActuationWrench,
    p: &PhysicalParams,
) -> f64 {
    let v = velocity_kinematics(&state.q, &state.qdot, p);
    v.drone1.x * u.u1
        + v.drone2.x * u.u3
        + v.drone1.y * (u.u2 - (p.m1 + 0.5 * p.m3) * p.g)
        + v.drone2.y * (u.u4 - (p.m2 + 0.5 * p.m3) * p.g)
}

/// Sum of the magnitudes of the power terms in [`storage_energy_rate`] plus
/// any external power; the scale against which rate identities are judged.
pub fn gross_power(
    state: &GeneralizedState,
    u: &ActuationWrench,
    disturbance: &Vec5,
    p: &PhysicalParams,
) -> f64 {
    let v = velocity_kinematics(&state.q, &state.qdot, p);
    (v.drone1.x * u.u1).abs()
        + (v.drone2.x * u.u3).abs()
        + v.drone1.y.abs() * (u.u2.abs() + (p.m1 + 0.5 * p.m3) * p.g)
        + v.drone2.y.abs() * (u.u4.abs() + (p.m2 + 0.5 * p.m3) * p.g)
        + state.qdot.dot(disturbance).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn level(y: f64, z: f64) -> Vec5 {
        Vec5::new(y, z, 0.0, 0.0, 0.0)
    }

    #[test]
    fn inertia_at_level_configuration() {
        let p = PhysicalParams::default();
        let m = inertia_matrix(&level(0.3, 1.0), &p);
        let expected = [
            ((0, 0), 3.3),
            ((1, 1), 3.3),
            ((0, 2), 1.62),
            ((0, 3), 1.35),
            ((1, 3), 0.0),
            ((0, 4), 0.0),
            ((1, 4), 1.98),
            ((2, 2), 1.458),
            ((3, 3), 1.215),
            ((2, 3), 1.215),
            ((4, 4), 2.268),
            ((2, 4), 0.0),
            ((3, 4), 0.0),
            ((0, 1), 0.0),
        ];
        for ((i, j), v) in expected {
            assert_abs_diff_eq!(m[(i, j)], v, epsilon = 1e-12);
            assert_eq!(m[(i, j)], m[(j, i)]);
        }
    }

    #[test]
    fn gravity_at_level_configuration() {
        let p = PhysicalParams::default();
        let g = gravity_vector(&level(0.0, 0.0), &p);
        let expected = Vec5::new(0.0, 32.34, 0.0, 0.0, 19.404);
        assert_abs_diff_eq!(g, expected, epsilon = 1e-12);
    }

    #[test]
    fn hover_wrench_balances_gravity() {
        let p = PhysicalParams::default();
        let q = level(0.0, 1.5);
        let u = ActuationWrench::new(0.0, 16.17, 0.0, 16.17);
        assert_abs_diff_eq!(
            generalized_forces(&q, &u, &p),
            Vec5::new(0.0, 32.34, 0.0, 0.0, 19.404),
            epsilon = 1e-12
        );
        let qdd = forward_dynamics(&q, &Vec5::zeros(), &u, &Vec5::zeros(), &p).unwrap();
        assert!(qdd.amax() < 1e-9, "{qdd}");
        assert_eq!(ActuationWrench::hover(&p).u2, (1.5 + 0.15) * 9.8);
    }

    #[test]
    fn zero_thrust_is_free_fall() {
        let p = PhysicalParams::default();
        let qdd = forward_dynamics(
            &level(0.0, 1.5),
            &Vec5::zeros(),
            &ActuationWrench::zero(),
            &Vec5::zeros(),
            &p,
        )
        .unwrap();
        assert_abs_diff_eq!(qdd[1], -9.8, epsilon = 1e-12);
        assert_abs_diff_eq!(qdd[0], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_wrench_gives_zero_generalized_force() {
        let p = PhysicalParams::default();
        let q = Vec5::new(0.1, 0.2, 0.3, -0.4, 0.5);
        assert_eq!(
            generalized_forces(&q, &ActuationWrench::zero(), &p),
            Vec5::zeros()
        );
    }

    #[test]
    fn forward_kinematics_level_formation() {
        let p = PhysicalParams::default();
        let xi = forward_kinematics(&level(0.0, 1.5), &p);
        assert_abs_diff_eq!(xi.drone1, Vector2::new(0.0, 1.5), epsilon = 1e-15);
        assert_abs_diff_eq!(xi.drone2, Vector2::new(1.2, 1.5), epsilon = 1e-15);
        assert_abs_diff_eq!(xi.bar_mid, Vector2::new(0.6, 0.6), epsilon = 1e-15);
    }

    #[test]
    fn equal_rope_angles_keep_drones_level() {
        let p = PhysicalParams::default();
        let xi = forward_kinematics(&Vec5::new(0.2, 1.0, 0.35, 0.35, 0.0), &p);
        assert_abs_diff_eq!(xi.drone1.y, xi.drone2.y, epsilon = 1e-15);
    }

    #[test]
    fn external_force_mapping() {
        let p = PhysicalParams::default();
        let q = level(0.0, 1.5);
        let f = Vector2::new(1.0, 0.0);
        assert_eq!(
            external_force_to_generalized(&q, BodyPoint::Drone1, f, &p),
            Vec5::new(1.0, 0.0, 0.0, 0.0, 0.0)
        );
        assert_abs_diff_eq!(
            external_force_to_generalized(&q, BodyPoint::BarMid, f, &p),
            Vec5::new(1.0, 0.0, 0.9, 0.0, 0.0),
            epsilon = 1e-15
        );
        assert_eq!(
            external_force_to_generalized(&q, BodyPoint::Drone2, Vector2::zeros(), &p),
            Vec5::zeros()
        );
        assert_eq!(
            external_force_by_name(&q, "tail", f, &p),
            Err(Error::UnknownPoint("tail".into()))
        );
        assert!(external_force_by_name(&q, "bar_mid", f, &p).is_ok());
    }

    #[test]
    fn velocity_of_rigid_translation() {
        let p = PhysicalParams::default();
        let v = velocity_kinematics(&level(0.0, 1.0), &Vec5::new(1.0, 0.0, 0.0, 0.0, 0.0), &p);
        assert_eq!(v.drone1, Vector2::new(1.0, 0.0));
        assert_abs_diff_eq!(v.drone2, Vector2::new(1.0, 0.0), epsilon = 1e-15);
        let still = velocity_kinematics(&Vec5::new(0.0, 0.0, 0.2, 0.1, -0.3), &Vec5::zeros(), &p);
        assert_eq!(still.drone2, Vector2::zeros());
    }

    #[test]
    fn storage_energy_values() {
        let p = PhysicalParams::default();
        let rest = GeneralizedState::at_rest(level(3.0, 2.0));
        assert_eq!(storage_energy(&rest, &p), 0.0);
        let third = std::f64::consts::FRAC_PI_3;
        let splayed = GeneralizedState::at_rest(Vec5::new(0.0, 1.0, third, third, 0.0));
        assert_abs_diff_eq!(storage_energy(&splayed, &p), 1.3230, epsilon = 1e-12);
    }

    #[test]
    fn coriolis_vanishes_at_rest() {
        let p = PhysicalParams::default();
        let q = Vec5::new(0.0, 0.0, 0.4, -0.2, 0.9);
        assert_eq!(
            coriolis_matrix(&q, &Vec5::zeros(), &p) * Vec5::zeros(),
            Vec5::zeros()
        );
        assert_eq!(coriolis_vector(&q, &Vec5::zeros(), &p), Vec5::zeros());
    }

    #[test]
    fn coriolis_matrix_and_vector_agree() {
        let p = PhysicalParams::default();
        let q = Vec5::new(0.0, 0.0, 0.4, -0.2, 0.9);
        let qd = Vec5::new(0.3, -1.1, 0.7, 2.0, -0.5);
        let a = coriolis_matrix(&q, &qd, &p) * qd;
        let b = coriolis_vector(&q, &qd, &p);
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn domain_checks() {
        let mut q = Vec5::new(0.0, 0.0, 0.1, 0.2, 0.3);
        assert!(check_angle_domain(&q).is_ok());
        q[3] = FRAC_PI_2;
        assert_eq!(
            check_angle_domain(&q),
            Err(Error::OutsideDomain {
                index: 2,
                value: FRAC_PI_2
            })
        );
    }

    #[test]
    fn params_validation() {
        assert!(PhysicalParams::default().validate().is_ok());
        let bad = PhysicalParams {
            m3: 0.0,
            ..Default::default()
        };
        assert!(matches!(
            bad.validate(),
            Err(Error::InvalidParameter { name: "m3", .. })
        ));
        let uneven = PhysicalParams {
            l2: 1.0,
            ..Default::default()
        };
        assert!(uneven.validate().is_ok());
        assert!(uneven.require_equal_ropes().is_err());
    }

    #[test]
    fn body_point_names_round_trip() {
        for point in [BodyPoint::Drone1, BodyPoint::Drone2, BodyPoint::BarMid] {
            assert_eq!(point.to_string().parse::<BodyPoint>().unwrap(), point);
        }
    }
}

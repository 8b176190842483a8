//! Numerical audits of the model, the controller and the stability argument.
//!
//! Every check produces an [`AuditReport`]: the worst value of its statistic
//! over all samples, the tolerance it was judged against and, on failure, the
//! offending sample.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::Matrix3;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::Gains;
use crate::dynamics::{
    coriolis_matrix, forward_kinematics, generalized_forces, gravity_vector, inertia_matrix,
    mechanical_energy, point_jacobian, potential_energy, velocity_kinematics, ActuationWrench,
    BodyPoint, GeneralizedState, Mat5, PhysicalParams, Vec5,
};
use crate::error::{Error, Result};
use crate::metrics::ANGLE_FLOOR;
use crate::scenario::{ControllerKind, ScenarioConfig, StatePerturbation};
use crate::simulate::{self, flags, run_with, RunOptions, TrajectoryLog};

/// The sample that produced the worst statistic of a failed check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Offending {
    pub label: String,
    pub values: Vec<f64>,
    pub statistic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub check: String,
    pub samples: usize,
    /// Worst value of the check statistic.
    pub max_residual: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub offending: Option<Offending>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<AuditReport>,
}

impl AuditReport {
    /// A report that passes iff every child passes.
    pub fn group(check: &str, children: Vec<AuditReport>) -> Self {
        let passed = children.iter().all(|c| c.passed);
        let offending = children
            .iter()
            .find(|c| !c.passed)
            .and_then(|c| c.offending.clone());
        Self {
            check: check.to_string(),
            samples: children.iter().map(|c| c.samples).sum(),
            max_residual: children
                .iter()
                .map(|c| c.max_residual)
                .fold(f64::NEG_INFINITY, f64::max),
            tolerance: f64::NAN,
            passed,
            offending,
            note: None,
            children,
        }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }

    /// Depth-first search for a check by name.
    pub fn find(&self, check: &str) -> Option<&AuditReport> {
        if self.check == check {
            return Some(self);
        }
        self.children.iter().find_map(|c| c.find(check))
    }

    /// One line per check, indented by depth.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        self.write_summary(0, &mut out);
        out
    }

    fn write_summary(&self, depth: usize, out: &mut String) {
        let status = if self.passed { "PASS" } else { "FAIL" };
        let tol = if self.tolerance.is_nan() {
            String::new()
        } else {
            format!(" (tolerance {:.1e})", self.tolerance)
        };
        out.push_str(&format!(
            "{}{status} {}: {} samples, worst {:.3e}{tol}\n",
            "  ".repeat(depth),
            self.check,
            self.samples,
            self.max_residual
        ));
        if let Some(note) = &self.note {
            out.push_str(&format!("{}  {note}\n", "  ".repeat(depth)));
        }
        if let Some(o) = &self.offending {
            if depth == 0 || self.children.is_empty() {
                out.push_str(&format!(
                    "{}  offending {}: {:?} -> {:.3e}\n",
                    "  ".repeat(depth),
                    o.label,
                    o.values,
                    o.statistic
                ));
            }
        }
        for c in &self.children {
            c.write_summary(depth + 1, out);
        }
    }
}

/// Accumulates a check statistic over samples.
struct Tally {
    check: &'static str,
    tolerance: f64,
    samples: usize,
    worst: f64,
    worst_sample: Option<Offending>,
    first_failure: Option<Offending>,
}

impl Tally {
    fn new(check: &'static str, tolerance: f64) -> Self {
        Self {
            check,
            tolerance,
            samples: 0,
            worst: f64::NEG_INFINITY,
            worst_sample: None,
            first_failure: None,
        }
    }

    /// Records one sample. A NaN statistic counts as a failure.
    fn observe(&mut self, statistic: f64, ok: bool, label: impl FnOnce() -> (String, Vec<f64>)) {
        self.samples += 1;
        let ok = ok && !statistic.is_nan();
        let worse = statistic > self.worst || statistic.is_nan();
        if worse || (!ok && self.first_failure.is_none()) {
            let (label, values) = label();
            let sample = Offending {
                label,
                values,
                statistic,
            };
            if !ok && self.first_failure.is_none() {
                self.first_failure = Some(sample.clone());
            }
            if worse {
                self.worst = statistic;
                self.worst_sample = Some(sample);
            }
        }
    }

    /// Statistic must not exceed the tolerance.
    fn bounded(&mut self, statistic: f64, label: impl FnOnce() -> (String, Vec<f64>)) {
        let ok = statistic <= self.tolerance;
        self.observe(statistic, ok, label);
    }

    fn report(self) -> AuditReport {
        let passed = self.first_failure.is_none();
        // On failure, name the worst failing sample if the worst is failing.
        let offending = if passed {
            None
        } else {
            let worst_fails = self
                .worst_sample
                .as_ref()
                .is_some_and(|s| !(s.statistic <= self.tolerance));
            if worst_fails {
                self.worst_sample
            } else {
                self.first_failure
            }
        };
        AuditReport {
            check: self.check.to_string(),
            samples: self.samples,
            max_residual: self.worst,
            tolerance: self.tolerance,
            passed,
            offending,
            note: None,
            children: Vec::new(),
        }
    }
}

fn state_label(q: &Vec5, qdot: &Vec5) -> (String, Vec<f64>) {
    (
        "q, qdot".to_string(),
        q.iter().chain(qdot.iter()).copied().collect(),
    )
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Largest sampled angle magnitude: the open domain `|θ| < π/2`, kept a hair
/// away from the boundary where the model degenerates.
const ANGLE_SAMPLE_LIMIT: f64 = 0.999 * FRAC_PI_2;

/// Random configuration and rates inside the admissible domain.
pub fn random_state(rng: &mut ChaCha8Rng) -> (Vec5, Vec5) {
    let q = Vec5::new(
        rng.random_range(-2.0..2.0),
        rng.random_range(-2.0..2.0),
        rng.random_range(-ANGLE_SAMPLE_LIMIT..ANGLE_SAMPLE_LIMIT),
        rng.random_range(-ANGLE_SAMPLE_LIMIT..ANGLE_SAMPLE_LIMIT),
        rng.random_range(-ANGLE_SAMPLE_LIMIT..ANGLE_SAMPLE_LIMIT),
    );
    let qdot = Vec5::from_fn(|_, _| rng.random_range(-3.0..3.0));
    (q, qdot)
}

fn random_wrench(rng: &mut ChaCha8Rng) -> ActuationWrench {
    ActuationWrench::new(
        rng.random_range(-20.0..20.0),
        rng.random_range(0.1..40.0),
        rng.random_range(-20.0..20.0),
        rng.random_range(0.1..40.0),
    )
}

// ---------------------------------------------------------------------------
// Dynamics model abstraction and cross-checks

/// The model terms audited by [`dynamics_cross_checks`]. The analytic model is
/// [`ExactModel`]; other implementations serve as negative controls.
pub trait Model: Sync {
    fn params(&self) -> &PhysicalParams;

    fn inertia(&self, q: &Vec5) -> Mat5 {
        inertia_matrix(q, self.params())
    }

    fn coriolis(&self, q: &Vec5, qdot: &Vec5) -> Mat5 {
        coriolis_matrix(q, qdot, self.params())
    }

    fn gravity(&self, q: &Vec5) -> Vec5 {
        gravity_vector(q, self.params())
    }

    fn potential(&self, q: &Vec5) -> f64 {
        potential_energy(q, self.params())
    }

    fn forces(&self, q: &Vec5, u: &ActuationWrench) -> Vec5 {
        generalized_forces(q, u, self.params())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactModel(pub PhysicalParams);

impl Model for ExactModel {
    fn params(&self) -> &PhysicalParams {
        &self.0
    }
}

/// Inertia matrix with one off-diagonal pair scaled; every other term is
/// exact, so the Coriolis and skew-symmetry checks must flag it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorruptedInertia {
    pub params: PhysicalParams,
    pub entry: (usize, usize),
    pub factor: f64,
}

impl CorruptedInertia {
    /// Scales the `(y, θ1)` coupling by 1.01.
    pub fn new(params: PhysicalParams) -> Self {
        Self {
            params,
            entry: (0, 2),
            factor: 1.01,
        }
    }
}

impl Model for CorruptedInertia {
    fn params(&self) -> &PhysicalParams {
        &self.params
    }

    fn inertia(&self, q: &Vec5) -> Mat5 {
        let mut m = inertia_matrix(q, &self.params);
        let (i, j) = self.entry;
        m[(i, j)] *= self.factor;
        if i != j {
            m[(j, i)] *= self.factor;
        }
        m
    }
}

const FD_STEP: f64 = 1e-5;
/// The potential is tens of joules, so a small step loses digits to roundoff.
const GRADIENT_STEP: f64 = 1e-3;

/// `∂M/∂q_k` by Richardson-extrapolated central differences.
fn inertia_partial_fd(model: &dyn Model, q: &Vec5, k: usize) -> Mat5 {
    let central = |h: f64| {
        let mut plus = *q;
        let mut minus = *q;
        plus[k] += h;
        minus[k] -= h;
        (model.inertia(&plus) - model.inertia(&minus)) / (2.0 * h)
    };
    (central(0.5 * FD_STEP) * 4.0 - central(FD_STEP)) / 3.0
}

/// Tolerances of the model cross-checks.
pub const SKEW_TOLERANCE: f64 = 1e-9;
pub const CORIOLIS_TOLERANCE: f64 = 1e-6;
pub const JACOBIAN_TOLERANCE: f64 = 1e-10;
pub const GRAVITY_TOLERANCE: f64 = 1e-8;
pub const VELOCITY_TOLERANCE: f64 = 1e-7;

/// Runs the model oracles on `samples` random states: inertia symmetry and
/// positive definiteness, skew-symmetry of `Ṁ − 2C`, Coriolis terms against
/// finite differences of `M`, generalized forces against the Jacobian
/// transpose, gravity against the gradient of the potential and point
/// velocities against finite differences of the positions.
pub fn dynamics_cross_checks(samples: usize, model: &dyn Model, seed: u64) -> AuditReport {
    let p = *model.params();
    let mut rng = rng(seed);
    let mut pd = Tally::new("inertia_positive_definite", 0.0);
    let mut skew = Tally::new("skew_symmetry", SKEW_TOLERANCE);
    let mut coriolis = Tally::new("coriolis_finite_difference", CORIOLIS_TOLERANCE);
    let mut jacobian = Tally::new("jacobian_transpose", JACOBIAN_TOLERANCE);
    let mut gravity = Tally::new("gravity_gradient", GRAVITY_TOLERANCE);
    let mut velocity = Tally::new("velocity_kinematics", VELOCITY_TOLERANCE);

    for _ in 0..samples {
        let (q, qdot) = random_state(&mut rng);
        let u = random_wrench(&mut rng);
        let label = || state_label(&q, &qdot);

        // Symmetry is exact; the statistic is the negated smallest eigenvalue.
        let m = model.inertia(&q);
        let symmetric = m == m.transpose();
        let lambda_min = m.symmetric_eigenvalues().min();
        pd.observe(-lambda_min, symmetric && lambda_min > 0.0, label);

        let partials: Vec<Mat5> = (0..5).map(|k| inertia_partial_fd(model, &q, k)).collect();
        let mdot = partials
            .iter()
            .zip(qdot.iter())
            .fold(Mat5::zeros(), |acc, (dm, &v)| acc + dm * v);
        let c = model.coriolis(&q, &qdot);
        let s = qdot.dot(&((mdot - c * 2.0) * qdot)).abs() / (1.0 + qdot.norm_squared());
        skew.bounded(s, label);

        let mut oracle = mdot * qdot;
        for (k, dm) in partials.iter().enumerate() {
            oracle[k] -= 0.5 * qdot.dot(&(dm * qdot));
        }
        let diff = (c * qdot - oracle).amax() / (1.0 + oracle.amax());
        coriolis.bounded(diff, label);

        let f1 = point_jacobian(&q, BodyPoint::Drone1, &p).transpose() * u.drone1_force();
        let f2 = point_jacobian(&q, BodyPoint::Drone2, &p).transpose() * u.drone2_force();
        jacobian.bounded((model.forces(&q, &u) - (f1 + f2)).amax(), label);

        let grad = Vec5::from_fn(|k, _| {
            let central = |h: f64| {
                let mut plus = q;
                let mut minus = q;
                plus[k] += h;
                minus[k] -= h;
                (model.potential(&plus) - model.potential(&minus)) / (2.0 * h)
            };
            (4.0 * central(0.5 * GRADIENT_STEP) - central(GRADIENT_STEP)) / 3.0
        });
        gravity.bounded((model.gravity(&q) - grad).amax(), label);

        let v = velocity_kinematics(&q, &qdot, &p);
        let central = |h: f64| {
            let plus = forward_kinematics(&(q + qdot * h), &p).to_array();
            let minus = forward_kinematics(&(q - qdot * h), &p).to_array();
            std::array::from_fn::<f64, 6, _>(|i| (plus[i] - minus[i]) / (2.0 * h))
        };
        let (c1, c2) = (central(FD_STEP), central(0.5 * FD_STEP));
        let fd: [f64; 6] = std::array::from_fn(|i| (4.0 * c2[i] - c1[i]) / 3.0);
        let analytic = [
            v.drone1.x,
            v.drone1.y,
            v.drone2.x,
            v.drone2.y,
            v.bar_mid.x,
            v.bar_mid.y,
        ];
        let err = fd
            .iter()
            .zip(analytic)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        velocity.bounded(err, label);
    }

    AuditReport::group(
        "dynamics_cross_checks",
        vec![
            pd.report(),
            skew.report(),
            coriolis.report(),
            jacobian.report(),
            gravity.report(),
            velocity.report(),
        ],
    )
}

// ---------------------------------------------------------------------------
// Rope-rate determinant

/// Coefficient matrix of the rope-rate equations at rest.
pub fn lemma1_matrix(angles: [f64; 3], p: &PhysicalParams) -> Matrix3<f64> {
    let [t1, t2, t3] = angles;
    let (s1, c1) = t1.sin_cos();
    let (s2, c2) = t2.sin_cos();
    let (s3, c3) = t3.sin_cos();
    Matrix3::new(
        (p.m2 + p.m3) * p.l1 * c1,
        p.m2 * p.l2 * c2,
        -(p.m2 + 0.5 * p.m3) * p.a * s3,
        p.l1 * c1,
        p.l2 * c2,
        -p.a * s3,
        p.l1 * s1,
        -p.l2 * s2,
        p.a * c3,
    )
}

/// `(m3/2) l1 l2 a (C1 C_{2+3} + C2 C_{1−3})`.
pub fn lemma1_determinant(angles: [f64; 3], p: &PhysicalParams) -> f64 {
    let [t1, t2, t3] = angles;
    0.5 * p.m3 * p.l1 * p.l2 * p.a * (t1.cos() * (t2 + t3).cos() + t2.cos() * (t1 - t3).cos())
}

/// Whether the angles lie in the region where the determinant is positive:
/// every angle in `(−π/2, π/2)`, the right rope not folded over the bar
/// (`|θ2 + θ3| < π/2`) and likewise on the left (`|θ1 − θ3| < π/2`).
pub fn lemma1_domain(angles: [f64; 3]) -> bool {
    let [t1, t2, t3] = angles;
    angles.iter().all(|t| t.abs() < FRAC_PI_2)
        && (t2 + t3).abs() < FRAC_PI_2
        && (t1 - t3).abs() < FRAC_PI_2
}

pub const LEMMA1_TOLERANCE: f64 = 1e-10;

/// Compares the dense determinant with the closed form, and checks its sign,
/// at `samples` random angle triples of [`lemma1_domain`].
pub fn lemma1_check(samples: usize, p: &PhysicalParams, seed: u64) -> AuditReport {
    let mut rng = rng(seed);
    let mut agree = Tally::new("lemma1_closed_form", LEMMA1_TOLERANCE);
    let mut positive = Tally::new("lemma1_positive", 0.0);
    let mut drawn = 0;
    while drawn < samples {
        let angles: [f64; 3] =
            std::array::from_fn(|_| rng.random_range(-ANGLE_SAMPLE_LIMIT..ANGLE_SAMPLE_LIMIT));
        if !lemma1_domain(angles) {
            continue;
        }
        drawn += 1;
        let numeric = lemma1_matrix(angles, p).lu().determinant();
        let closed = lemma1_determinant(angles, p);
        let label = || ("theta1, theta2, theta3".to_string(), angles.to_vec());
        agree.bounded((numeric - closed).abs(), label);
        positive.observe(-numeric, numeric > 0.0, label);
    }
    AuditReport::group("lemma1", vec![agree.report(), positive.report()])
}

// ---------------------------------------------------------------------------
// Uniqueness of the rest equilibrium

/// Residual of the rest equations for a given `e_z2`, minimized over the
/// lateral thrust `h = f2 sinφ2`.
///
/// For each `h` the three angle equations fix
/// `θ1 = atan(h / (c + s))`, `θ2 = atan(h / (c − s))`, `θ3 = atan(−s / h)` with
/// `c = m3 g / 2` and `s = kp4 e_z2`. What remains are the height relation
/// between the drones, `l (C2 − C1) + a S3 = (1 + kp4/kp3) e_z2`, and the
/// lateral balance `h = −kp2 e_y2 + bias + barrier(e_y)` with the horizontal
/// errors fixed by the geometry. The residual is the norm of those two
/// mismatches, scaled by `l` and `c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lemma2Point {
    pub ez2: f64,
    pub residual: f64,
    /// Minimizing lateral thrust and the angles it implies.
    pub h: f64,
    pub angles: [f64; 3],
}

fn solve_angle(num: f64, den: f64) -> f64 {
    if den != 0.0 {
        (num / den).atan()
    } else if num == 0.0 {
        0.0
    } else {
        num.signum() * FRAC_PI_2
    }
}

fn lemma2_mismatch(ez2: f64, psi: f64, p: &PhysicalParams, g: &Gains) -> (f64, f64, [f64; 3]) {
    let c = 0.5 * p.m3 * p.g;
    let s = g.kp4 * ez2;
    let h = c * psi.tan();
    let t1 = solve_angle(h, c + s);
    let t2 = solve_angle(h, c - s);
    let t3 = solve_angle(-s, h);
    let l = p.l1;
    let height = l * (t2.cos() - t1.cos()) + p.a * t3.sin() - ez2 * (1.0 + g.kp4 / g.kp3);
    let spread = l * (t1.sin() + t2.sin()) + p.a * t3.cos() - p.a - 2.0 * l * g.theta2d.sin();
    let ey2 = spread / (1.0 + g.kp2 / g.kp1);
    let ey1 = -(g.kp2 / g.kp1) * ey2;
    let ey = ey1 - ey2;
    let gap = g.rho - ey * ey;
    let residual = if gap <= 0.0 {
        f64::INFINITY
    } else {
        let barrier = g.sigma * g.rho * ey / (gap * gap);
        let bias = c * g.theta2d.tan();
        let lateral = h + g.kp2 * ey2 - bias - barrier;
        ((height / l).powi(2) + (lateral / c).powi(2)).sqrt()
    };
    (residual, h, [t1, t2, t3])
}

const PSI_GRID: usize = 2001;

/// Minimizes the mismatch over `ψ = atan(h / c) ∈ (−π/2, π/2)` on a grid
/// containing 0, refining the best few cells by golden-section search.
pub fn lemma2_residual(ez2: f64, p: &PhysicalParams, gains: &Gains) -> Lemma2Point {
    let psi_at = |k: usize| -FRAC_PI_2 + (k as f64 + 0.5) * PI / PSI_GRID as f64;
    let values: Vec<f64> = (0..PSI_GRID)
        .map(|k| lemma2_mismatch(ez2, psi_at(k), p, gains).0)
        .collect();
    let mut order: Vec<usize> = (0..PSI_GRID).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));

    let mut best = (values[order[0]], psi_at(order[0]));
    for &k in order.iter().take(4) {
        let lo = psi_at(k.saturating_sub(1));
        let hi = psi_at((k + 1).min(PSI_GRID - 1));
        let f = |psi: f64| lemma2_mismatch(ez2, psi, p, gains).0;
        let (psi, r) = golden_section(f, lo, hi, 80);
        if r < best.0 {
            best = (r, psi);
        }
    }
    let (residual, h, angles) = lemma2_mismatch(ez2, best.1, p, gains);
    Lemma2Point {
        ez2,
        residual,
        h,
        angles,
    }
}

fn golden_section(
    f: impl Fn(f64) -> f64,
    mut lo: f64,
    mut hi: f64,
    iterations: usize,
) -> (f64, f64) {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..iterations {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = f(x2);
        }
    }
    // The bracket ends are candidates too: the grid point itself may be best.
    [(x1, f1), (x2, f2), (lo, f(lo)), (hi, f(hi))]
        .into_iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap()
}

/// Residual below which a grid point counts as a solution.
pub const LEMMA2_ROOT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma2Scan {
    pub points: Vec<Lemma2Point>,
    /// Grid points that are local minima of the residual below
    /// [`LEMMA2_ROOT_TOLERANCE`].
    pub roots: Vec<f64>,
    pub step: f64,
    pub report: AuditReport,
}

/// Scans `e_z2` over `[lo, hi]` with `grid_n` points (a symmetric range with
/// an odd count contains 0 exactly) and reports the solutions found.
/// Passes iff the only solution lies within one grid step of 0.
pub fn lemma2_scan(
    p: &PhysicalParams,
    gains: &Gains,
    range: (f64, f64),
    grid_n: usize,
) -> Result<Lemma2Scan> {
    if grid_n < 100 {
        return Err(Error::InvalidParameter {
            name: "grid_n",
            value: grid_n as f64,
            reason: "the scan needs at least 100 grid points",
        });
    }
    p.require_equal_ropes()?;
    let (lo, hi) = range;
    let step = (hi - lo) / (grid_n - 1) as f64;
    let mid = 0.5 * (lo + hi);
    let half = (grid_n - 1) as f64 / 2.0;
    let points: Vec<Lemma2Point> = (0..grid_n)
        .into_par_iter()
        .map(|k| lemma2_residual(mid + (k as f64 - half) * step, p, gains))
        .collect();

    let r = |k: usize| points[k].residual;
    let roots: Vec<f64> = (0..grid_n)
        .filter(|&k| {
            r(k) < LEMMA2_ROOT_TOLERANCE
                && (k == 0 || r(k) <= r(k - 1))
                && (k + 1 == grid_n || r(k) <= r(k + 1))
        })
        .map(|k| points[k].ez2)
        .collect();

    let unique_at_zero = roots.len() == 1 && roots[0].abs() <= step;
    let away = points
        .iter()
        .filter(|pt| pt.ez2.abs() > step)
        .map(|pt| pt.residual)
        .fold(f64::INFINITY, f64::min);
    let at_zero = points
        .iter()
        .min_by(|a, b| a.ez2.abs().total_cmp(&b.ez2.abs()))
        .map_or(f64::NAN, |pt| pt.residual);

    let offending = (!unique_at_zero).then(|| Offending {
        label: "roots (e_z2)".into(),
        values: roots.clone(),
        statistic: roots.len() as f64,
    });
    let report = AuditReport {
        check: "lemma2".into(),
        samples: grid_n,
        max_residual: at_zero,
        tolerance: LEMMA2_ROOT_TOLERANCE,
        passed: unique_at_zero,
        offending,
        note: Some(format!(
            "{} root(s) at {:?}; smallest residual away from 0: {:.3e}",
            roots.len(),
            roots,
            away
        )),
        children: Vec::new(),
    };
    Ok(Lemma2Scan {
        points,
        roots,
        step,
        report,
    })
}

// ---------------------------------------------------------------------------
// Closed-loop audits

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditTolerances {
    /// Allowed per-step increase of V, relative to `1 + V`.
    pub monotone: f64,
    /// Relative residual of the Lyapunov rate identity.
    pub lyapunov: f64,
    /// Relative residual of the storage-energy rate identity.
    pub power: f64,
}

impl Default for AuditTolerances {
    fn default() -> Self {
        Self {
            monotone: 1e-8,
            lyapunov: 1e-6,
            power: 1e-6,
        }
    }
}

fn overlaps(windows: &[(f64, f64)], a: f64, b: f64) -> bool {
    windows.iter().any(|&(s, e)| s < b && e > a)
}

/// Audits a logged run: (a) V non-increasing, (b) Lyapunov rate identity,
/// (c) barrier invariance `e_y² < ρ`, (d) storage-energy rate identity.
/// (a)–(c) concern the proposed controller and are skipped for PD logs.
/// Steps touched by a disturbance, a setpoint switch, saturation or a held
/// wrench are exempt from (a); (b) is only logged where it applies.
pub fn closed_loop_audit(log: &TrajectoryLog, gains: &Gains, tol: &AuditTolerances) -> AuditReport {
    let mut children = Vec::new();
    let record_label = |r: &simulate::Record| {
        (
            format!("t = {}", r.t),
            r.q.iter()
                .chain(r.qdot.iter())
                .copied()
                .collect::<Vec<f64>>(),
        )
    };

    if log.controller == ControllerKind::Proposed {
        let mut monotone = Tally::new("lyapunov_nonincreasing", tol.monotone);
        let exempt = flags::SATURATED | flags::HELD | flags::FAULT;
        for pair in log.records.windows(2) {
            let (r0, r1) = (&pair[0], &pair[1]);
            let (Some(v0), Some(v1)) = (r0.lyapunov, r1.lyapunov) else {
                continue;
            };
            if r0.has(exempt)
                || r1.has(flags::SETPOINT_SWITCH)
                || r0.segment != r1.segment
                || overlaps(&log.disturbance_windows, r0.t, r1.t)
            {
                continue;
            }
            monotone.bounded((v1 - v0) / (1.0 + v0), || record_label(r1));
        }
        children.push(monotone.report());

        let mut rate = Tally::new("lyapunov_rate_identity", tol.lyapunov);
        for r in &log.records {
            if let Some(res) = r.res_lyapunov {
                rate.bounded(res, || record_label(r));
            }
        }
        children.push(rate.report());

        let mut barrier = Tally::new("barrier_invariance", gains.rho);
        for r in &log.records {
            barrier.observe(r.ey_sq, r.ey_sq < gains.rho, || record_label(r));
        }
        children.push(barrier.report());
    }

    let mut power = Tally::new("power_balance", tol.power);
    for r in &log.records {
        if let Some(res) = r.res_power {
            power.bounded(res, || record_label(r));
        }
    }
    children.push(power.report());

    let mut report = AuditReport::group(
        &format!("closed_loop[{}:{}]", log.scenario, log.controller),
        children,
    );
    if let Some(fault) = &log.fault {
        report.passed = false;
        report.note = Some(fault.to_string());
    }
    report
}

/// Runs every scenario with full audits and audits each log.
pub fn closed_loop_suite(
    scenarios: &[ScenarioConfig],
    tol: &AuditTolerances,
) -> Result<AuditReport> {
    let reports: Vec<Result<AuditReport>> = scenarios
        .par_iter()
        .map(|c| {
            let log = simulate::run(c)?;
            Ok(closed_loop_audit(&log, &c.gains, tol))
        })
        .collect();
    Ok(AuditReport::group(
        "closed_loop",
        reports.into_iter().collect::<Result<_>>()?,
    ))
}

// ---------------------------------------------------------------------------
// Integrator checks

/// Free flight (no thrust, no disturbance): the largest relative drift of
/// `T + U` from its initial value over `duration`. Without thrust nothing
/// restores the angles, so the start uses slow rope and bar rates.
pub fn free_flight_energy_drift(p: &PhysicalParams, duration: f64, dt: f64) -> Result<f64> {
    let mut s = GeneralizedState::new(
        Vec5::new(0.0, 1.5, 0.4, -0.3, 0.2),
        Vec5::new(0.3, 0.5, 0.04, -0.03, 0.02),
        0.0,
    );
    let e0 = mechanical_energy(&s, p);
    let mut drift: f64 = 0.0;
    for _ in 0..(duration / dt).round() as usize {
        s = simulate::step(&s, &ActuationWrench::zero(), &Vec5::zeros(), p, dt)?;
        drift = drift.max((mechanical_energy(&s, p) - e0).abs() / e0.abs());
    }
    Ok(drift)
}

pub const ENERGY_DRIFT_TOLERANCE: f64 = 1e-7;

pub fn energy_conservation_check(p: &PhysicalParams) -> Result<AuditReport> {
    let mut t = Tally::new("free_flight_energy", ENERGY_DRIFT_TOLERANCE);
    let drift = free_flight_energy_drift(p, 10.0, 1e-3)?;
    t.bounded(drift, || ("duration, dt".into(), vec![10.0, 1e-3]));
    Ok(t.report())
}

/// Global error at a fixed horizon of a swinging, constant-thrust trajectory
/// against a fine-step reference, for each `dt`.
pub fn integrator_errors(p: &PhysicalParams, steps: &[f64], horizon: f64) -> Result<Vec<f64>> {
    let start = GeneralizedState::new(
        Vec5::new(0.0, 1.5, 0.3, -0.2, 0.1),
        Vec5::new(0.2, -0.1, 0.5, -0.3, 0.2),
        0.0,
    );
    let u = ActuationWrench::hover(p);
    let integrate = |dt: f64| -> Result<GeneralizedState> {
        let mut s = start;
        for _ in 0..(horizon / dt).round() as usize {
            s = simulate::step(&s, &u, &Vec5::zeros(), p, dt)?;
        }
        Ok(s)
    };
    let finest = steps.iter().copied().fold(f64::INFINITY, f64::min);
    let reference = integrate(finest / 16.0)?;
    steps
        .iter()
        .map(|&dt| {
            let s = integrate(dt)?;
            Ok((s.q - reference.q)
                .amax()
                .max((s.qdot - reference.qdot).amax()))
        })
        .collect()
}

pub const ORDER_RATIO_MIN: f64 = 12.0;

/// Error reduction when halving `dt` (expected near 16 for fourth order).
pub fn integrator_order_check(p: &PhysicalParams) -> Result<AuditReport> {
    let steps = [0.04, 0.02, 0.01];
    let errors = integrator_errors(p, &steps, 2.0)?;
    let ratios: Vec<f64> = errors.windows(2).map(|w| w[0] / w[1]).collect();
    // The statistic is the shortfall below the expected reduction.
    let mut t = Tally::new("integrator_order", 0.0);
    for (i, r) in ratios.iter().enumerate() {
        t.observe(ORDER_RATIO_MIN - r, *r >= ORDER_RATIO_MIN, || {
            ("dt, error ratio".into(), vec![steps[i], *r])
        });
    }
    Ok(t.report()
        .with_note(format!("errors {:?}, ratios {:.2?}", errors, ratios)))
}

// ---------------------------------------------------------------------------
// Basin probe

/// Three-level (or more) factorial grid of initial offsets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationGrid {
    /// Offset of `y` and `z` (m).
    pub position: f64,
    /// Offset of each angle (rad).
    pub angle: f64,
    /// Levels per coordinate, symmetric about 0.
    pub levels: usize,
}

impl Default for PerturbationGrid {
    fn default() -> Self {
        Self {
            position: 0.5,
            angle: 15f64.to_radians(),
            levels: 3,
        }
    }
}

impl PerturbationGrid {
    pub fn perturbations(&self) -> Vec<StatePerturbation> {
        let levels = self.levels.max(1);
        let level = |i: usize| {
            if levels == 1 {
                0.0
            } else {
                -1.0 + 2.0 * i as f64 / (levels - 1) as f64
            }
        };
        let total = levels.pow(5);
        (0..total)
            .map(|mut n| {
                let mut q = [0.0; 5];
                for (k, slot) in q.iter_mut().enumerate() {
                    let scale = if k < 2 { self.position } else { self.angle };
                    *slot = scale * level(n % levels);
                    n /= levels;
                }
                StatePerturbation { q, qdot: [0.0; 5] }
            })
            .collect()
    }
}

/// Position (m) and angle (rad) thresholds of the equilibrium.
pub const CONVERGED_POSITION: f64 = 1e-3;
pub const CONVERGED_ANGLE: f64 = ANGLE_FLOOR;

/// Hover template at the first setpoint of `base`, run for `horizon` seconds
/// without disturbances.
pub fn basin_template(base: &ScenarioConfig, horizon: f64) -> ScenarioConfig {
    let sp = base.setpoint_schedule[0];
    let mut c = base.without_disturbances();
    c.name = format!("{}_basin", base.name);
    c.initial_positions = crate::scenario::DronePositions {
        y1: sp.y1d,
        z1: sp.z1d,
        y2: sp.y2d,
        z2: sp.z2d,
    };
    c.setpoint_schedule.truncate(1);
    c.duration = horizon;
    c.controller = ControllerKind::Proposed;
    c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasinOutcome {
    pub perturbation: StatePerturbation,
    pub converged: bool,
    /// Largest position error (m) and angle error (rad) at the end.
    pub final_position_error: f64,
    pub final_angle_error: f64,
    pub fault: Option<String>,
}

/// Runs one perturbed start. Starts outside the domain or violating the
/// barrier precondition are rejected before simulating.
pub fn probe_one(
    template: &ScenarioConfig,
    perturbation: StatePerturbation,
) -> Result<BasinOutcome> {
    let mut c = template.clone();
    c.initial_perturbation = Some(perturbation);
    c.validate()?;
    let log = run_with(
        &c,
        RunOptions {
            audits: false,
            stride: 1000,
        },
    )?;
    let last = log.last();
    let pos = last.errors.iter().map(|e| e.abs()).fold(0.0, f64::max);
    let ang = [
        last.q[2] - last.theta_target,
        last.q[3] - last.theta_target,
        last.q[4],
    ]
    .iter()
    .map(|e| e.abs())
    .fold(0.0, f64::max);
    Ok(BasinOutcome {
        perturbation,
        converged: log.fault.is_none() && pos < CONVERGED_POSITION && ang < CONVERGED_ANGLE,
        final_position_error: pos,
        final_angle_error: ang,
        fault: log.fault.map(|f| f.to_string()),
    })
}

/// Probes every grid perturbation. Perturbations rejected by the
/// preconditions are counted in the note and not simulated; the check passes
/// iff every admitted start converges.
pub fn equilibrium_basin_probe(template: &ScenarioConfig, grid: &PerturbationGrid) -> AuditReport {
    let outcomes: Vec<(StatePerturbation, Result<BasinOutcome>)> = grid
        .perturbations()
        .into_par_iter()
        .map(|d| (d, probe_one(template, d)))
        .collect();
    let mut t = Tally::new("basin_probe", CONVERGED_POSITION);
    let mut rejected = 0;
    let mut worst_angle: f64 = 0.0;
    for (d, outcome) in &outcomes {
        match outcome {
            Err(_) => rejected += 1,
            Ok(o) => {
                worst_angle = worst_angle.max(o.final_angle_error);
                let label = || ("perturbation q".to_string(), d.q.to_vec());
                t.observe(o.final_position_error, o.converged, label);
            }
        }
    }
    t.report().with_note(format!(
        "{} starts, {rejected} rejected by preconditions; worst final angle error {worst_angle:.3e} rad",
        outcomes.len()
    ))
}

// ---------------------------------------------------------------------------
// Suites

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    All,
    Lemma1,
    Lemma2,
    Dynamics,
    ClosedLoop,
    Basin,
}

impl std::str::FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "all" => Self::All,
            "lemma1" => Self::Lemma1,
            "lemma2" => Self::Lemma2,
            "dynamics" => Self::Dynamics,
            "closed_loop" => Self::ClosedLoop,
            "basin" => Self::Basin,
            other => {
                return Err(format!(
                    "unknown suite `{other}` (expected all, lemma1, lemma2, dynamics, closed_loop or basin)"
                ))
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteOptions {
    pub seed: u64,
    pub samples: usize,
    pub lemma2_grid: usize,
    pub basin: PerturbationGrid,
    pub basin_horizon: f64,
    /// Swap the inertia matrix for [`CorruptedInertia`] in the dynamics checks.
    pub corrupt_inertia: bool,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            samples: 10_000,
            lemma2_grid: 10_001,
            basin: PerturbationGrid::default(),
            basin_horizon: 120.0,
            corrupt_inertia: false,
        }
    }
}

/// Runs the named suite with the default parameters, gains and the shipped
/// scenarios; reports come back in a fixed order.
pub fn run_suite(suite: Suite, opts: &SuiteOptions) -> Result<Vec<AuditReport>> {
    let p = PhysicalParams::default();
    let gains = Gains::default();
    let wants = |s: Suite| suite == Suite::All || suite == s;
    let mut reports = Vec::new();
    if wants(Suite::Lemma1) {
        reports.push(lemma1_check(opts.samples, &p, opts.seed));
    }
    if wants(Suite::Lemma2) {
        reports.push(lemma2_scan(&p, &gains, (-0.3, 0.3), opts.lemma2_grid)?.report);
    }
    if wants(Suite::Dynamics) {
        let exact = ExactModel(p);
        let corrupted = CorruptedInertia::new(p);
        let model: &dyn Model = if opts.corrupt_inertia {
            &corrupted
        } else {
            &exact
        };
        reports.push(AuditReport::group(
            "dynamics",
            vec![
                dynamics_cross_checks(opts.samples, model, opts.seed),
                energy_conservation_check(&p)?,
                integrator_order_check(&p)?,
            ],
        ));
    }
    if wants(Suite::ClosedLoop) {
        let scenarios = crate::scenarios::all();
        let mut audited: Vec<ScenarioConfig> = scenarios.clone();
        audited.extend(
            scenarios
                .iter()
                .filter(|c| !c.disturbances.is_empty())
                .map(|c| c.without_disturbances()),
        );
        let baselines: Vec<ScenarioConfig> = scenarios
            .iter()
            .map(|c| c.with_controller(ControllerKind::Pd))
            .collect();
        audited.extend(baselines);
        reports.push(closed_loop_suite(&audited, &AuditTolerances::default())?);
    }
    if wants(Suite::Basin) {
        let template = basin_template(&crate::scenarios::exp1_test1(), opts.basin_horizon);
        reports.push(equilibrium_basin_probe(&template, &opts.basin));
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lemma1_level_determinant() {
        let p = PhysicalParams::default();
        let closed = lemma1_determinant([0.0; 3], &p);
        assert!((closed - 0.2916).abs() < 1e-12, "{closed}");
        assert!((lemma1_matrix([0.0; 3], &p).determinant() - 0.2916).abs() < 1e-12);
    }

    #[test]
    fn lemma1_sign_needs_the_folding_conditions() {
        // Inside the plain box but with the right rope folded over the bar.
        let p = PhysicalParams::default();
        let angles = [0.0, 80f64.to_radians(), 80f64.to_radians()];
        assert!(!lemma1_domain(angles));
        assert!(lemma1_determinant(angles, &p) < 0.0);
    }

    #[test]
    fn lemma1_equal_angles_reduce() {
        let p = PhysicalParams::default();
        for t in [-1.0, -0.3, 0.0, 0.4, 0.7] {
            let closed = lemma1_determinant([t; 3], &p);
            let c = f64::cos;
            let expected = 0.5 * p.m3 * p.l1 * p.l2 * p.a * (c(t) * c(2.0 * t) + c(t));
            assert!((closed - expected).abs() < 1e-15);
            assert!(closed > 0.0);
        }
    }

    #[test]
    fn lemma2_zero_is_a_root_with_level_bar() {
        let pt = lemma2_residual(0.0, &PhysicalParams::default(), &Gains::default());
        assert!(pt.residual < 1e-12, "{pt:?}");
        assert!((pt.angles[0] - pt.angles[1]).abs() < 1e-12);
        assert_eq!(pt.angles[2], 0.0);
    }

    #[test]
    fn lemma2_positive_residual_off_zero() {
        let (p, g) = (PhysicalParams::default(), Gains::default());
        for e in [0.1, -0.1, 0.01, -0.25, 0.3] {
            assert!(lemma2_residual(e, &p, &g).residual > 1e-4, "{e}");
        }
    }

    #[test]
    fn lemma2_zero_root_survives_rope_bias() {
        let g = Gains::default().with_theta2d(0.2);
        let pt = lemma2_residual(0.0, &PhysicalParams::default(), &g);
        assert!(pt.residual < 1e-10, "{pt:?}");
        assert!((pt.angles[0] - 0.2).abs() < 1e-6);
    }

    #[test]
    fn lemma2_rejects_coarse_grids() {
        let r = lemma2_scan(
            &PhysicalParams::default(),
            &Gains::default(),
            (-0.3, 0.3),
            99,
        );
        assert!(r.is_err());
    }

    #[test]
    fn small_dynamics_sample_passes() {
        let r = dynamics_cross_checks(200, &ExactModel(PhysicalParams::default()), 7);
        assert!(r.passed, "{}", r.summary());
        assert_eq!(r.children.len(), 6);
    }

    #[test]
    fn corrupted_inertia_is_caught() {
        let r = dynamics_cross_checks(50, &CorruptedInertia::new(PhysicalParams::default()), 7);
        assert!(!r.passed);
        assert!(r.offending.is_some());
        assert!(!r.find("coriolis_finite_difference").unwrap().passed);
    }

    #[test]
    fn grid_has_all_combinations() {
        let grid = PerturbationGrid::default();
        let all = grid.perturbations();
        assert_eq!(all.len(), 243);
        assert_eq!(all.iter().filter(|d| d.q == [0.0; 5]).count(), 1);
        assert!(all
            .iter()
            .all(|d| d.q[0].abs() <= 0.5 && d.q[4].abs() <= grid.angle));
    }

    #[test]
    fn probe_rejects_barrier_violation() {
        let mut template = basin_template(&crate::scenarios::hover(), 1.0);
        template.gains.rho = 0.01;
        let d = StatePerturbation {
            q: [0.3, 0.0, 0.0, 0.0, 0.0],
            qdot: [0.0; 5],
        };
        // Shifting the left drone alone leaves e_y = 0: admitted.
        assert!(probe_one(&template, d).is_ok());
        let splay = StatePerturbation {
            q: [0.0, 0.0, 0.2, 0.2, 0.0],
            qdot: [0.0; 5],
        };
        assert!(matches!(
            probe_one(&template, splay),
            Err(Error::Scenario(_))
        ));
    }

    #[test]
    fn summary_marks_failures() {
        let mut t = Tally::new("demo", 1.0);
        t.bounded(0.5, || ("a".into(), vec![]));
        t.bounded(2.0, || ("b".into(), vec![1.0]));
        let r = t.report();
        assert!(!r.passed);
        assert_eq!(r.offending.as_ref().unwrap().label, "b");
        assert!(r.summary().starts_with("FAIL demo"));
    }
}

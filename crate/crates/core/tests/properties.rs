use dronebar::control::{
    barrier_force, decompose, lyapunov_rate_expected, lyapunov_value, proposed_wrench, recompose,
    saturate,
};
use dronebar::dynamics::{
    forward_dynamics, forward_kinematics, inertia_matrix, storage_energy, storage_energy_rate,
};
use dronebar::simulate::flow_derivative;
use dronebar::{
    ActuationWrench, Gains, GeneralizedState, PhysicalParams, ScenarioConfig, Setpoint, Vec5,
};
use proptest::prelude::*;

const LIMIT: f64 = 1.5;

fn angle() -> impl Strategy<Value = f64> {
    -LIMIT..LIMIT
}

fn state() -> impl Strategy<Value = GeneralizedState> {
    (
        (-2.0..2.0f64, 0.5..3.0f64, angle(), angle(), angle()),
        prop::array::uniform5(-2.0..2.0f64),
    )
        .prop_map(|((y, z, t1, t2, t3), v)| {
            GeneralizedState::new(Vec5::new(y, z, t1, t2, t3), Vec5::from(v), 0.0)
        })
}

fn wrench() -> impl Strategy<Value = ActuationWrench> {
    (-20.0..20.0f64, 0.5..40.0f64, -20.0..20.0f64, 0.5..40.0f64)
        .prop_map(|(a, b, c, d)| ActuationWrench::new(a, b, c, d))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn inertia_is_symmetric_positive_definite(s in state()) {
        let m = inertia_matrix(&s.q, &PhysicalParams::default());
        prop_assert_eq!(m, m.transpose());
        prop_assert!(m.symmetric_eigenvalues().min() > 0.0);
    }

    #[test]
    fn kinematic_chain_closes(s in state()) {
        let p = PhysicalParams::default();
        prop_assert!(forward_kinematics(&s.q, &p).chain_residual(&s.q, &p) < 1e-12);
    }

    #[test]
    fn storage_rate_matches_thrust_power(s in state(), u in wrench()) {
        let p = PhysicalParams::default();
        let qddot = forward_dynamics(&s.q, &s.qdot, &u, &Vec5::zeros(), &p).unwrap();
        let fd = flow_derivative(|x| storage_energy(x, &p), &s, &qddot, 1e-4);
        let predicted = storage_energy_rate(&s, &u, &p);
        prop_assert!((fd - predicted).abs() <= 1e-6 * (1.0 + predicted.abs()), "{} vs {}", fd, predicted);
    }

    #[test]
    fn closed_loop_lyapunov_rate_is_dissipative(s in state(), y1d in -1.0..1.0f64, z in 1.0..2.0f64) {
        let p = PhysicalParams::default();
        let gains = Gains::default();
        let sp = Setpoint::formation(y1d, z, 0.0, &p);
        // Only states inside the barrier domain are meaningful.
        prop_assume!(lyapunov_value(&s, &sp, &gains, &p).is_ok());
        let Ok(u) = proposed_wrench(&s, &sp, &gains, &p) else {
            return Ok(());
        };
        let qddot = forward_dynamics(&s.q, &s.qdot, &u, &Vec5::zeros(), &p).unwrap();
        let fd = flow_derivative(|x| lyapunov_value(x, &sp, &gains, &p).unwrap_or(f64::NAN), &s, &qddot, 1e-5);
        prop_assume!(fd.is_finite());
        let expected = lyapunov_rate_expected(&s, &gains, &p);
        prop_assert!(expected <= 0.0);
        prop_assert!((fd - expected).abs() <= 1e-5 * (1.0 + expected.abs()), "{} vs {}", fd, expected);
    }

    #[test]
    fn barrier_is_odd_and_increasing(e in -1.4..1.4f64) {
        let g = Gains::default();
        let f = barrier_force(e, &g).unwrap();
        prop_assert_eq!(f, -barrier_force(-e, &g).unwrap());
        prop_assert!(barrier_force(e + 1e-3, &g).unwrap() > f);
    }

    #[test]
    fn decompose_recompose_round_trip(u in wrench()) {
        let (a, b) = decompose(&u).unwrap();
        let back = recompose(&a, &b).to_array();
        for (x, y) in back.iter().zip(u.to_array()) {
            prop_assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn saturation_preserves_direction(u in wrench(), limit in 1.0..60.0f64) {
        let (capped, clipped) = saturate(&u, limit);
        let c = capped.to_array();
        let o = u.to_array();
        for (h, v, oh, ov) in [(c[0], c[1], o[0], o[1]), (c[2], c[3], o[2], o[3])] {
            prop_assert!(h.hypot(v) <= limit * (1.0 + 1e-12));
            prop_assert!((h * ov - v * oh).abs() <= 1e-9 * (1.0 + oh.hypot(ov)).powi(2));
        }
        prop_assert_eq!(clipped, c != o);
    }
}

#[test]
fn scenario_json_round_trips() {
    for c in dronebar::scenarios::all() {
        let back = ScenarioConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
    }
}

#[test]
fn shipped_scenario_files_match_builtins() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    for name in dronebar::scenarios::NAMES {
        let file = ScenarioConfig::load(&dir.join(format!("{name}.json"))).unwrap();
        assert_eq!(file, dronebar::scenarios::builtin(name).unwrap(), "{name}");
    }
}

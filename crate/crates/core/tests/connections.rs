use lorenz_tz::connections::*;
use lorenz_tz::continuation::ContinuationSettings;
use lorenz_tz::local::dz_heteroclinic_prediction;
use lorenz_tz::model::{EquilibriumKind, ParamName, Params};

fn he(e1: f64, bracket: (f64, f64)) -> Connection {
    let p = Params::reference(e1, 0.5 * (bracket.0 + bracket.1));
    let pr = ConnectionProblem::he_off_axis(&p).unwrap();
    find_connection_checked(&p, &pr, ParamName::Eps3, bracket).unwrap()
}

#[test]
fn he_cycle_at_both_signs_of_eps1() {
    let c = he(0.2, (-0.01, 0.0));
    assert!((c.value + 0.0043175).abs() < 1e-4, "{}", c.value);
    assert!(c.offset_shift.unwrap() <= 1e-7);
    assert!(c.miss.value[0].abs() <= 1e-8);
    let c = he(-0.2, (0.0, 0.01));
    assert!((c.value - 0.0037414).abs() < 1e-4, "{}", c.value);
    assert!(c.offset_shift.unwrap() <= 1e-7);
}

#[test]
fn he_trajectory_leaves_e1_and_reaches_e2() {
    let c = he(0.2, (-0.01, 0.0));
    let eq = lorenz_tz::model::equilibria(&c.params);
    let first = c.trajectory.state(0);
    let last = c.trajectory.last_state();
    let e1 = eq.get(EquilibriumKind::E1).unwrap().state;
    let e2 = eq.get(EquilibriumKind::E2).unwrap().state;
    assert!((first - e1).norm() < 1e-5);
    assert!((last - e2).norm() < (last - e1).norm());
}

#[test]
fn he_agrees_with_dz_prediction_near_the_origin() {
    for (e1, bracket) in [(0.02, (-0.001, 0.0)), (-0.02, (0.0, 0.001))] {
        let c = he(e1, bracket);
        let pred = dz_heteroclinic_prediction(-1.0, -0.1, 0.01, c.value).unwrap();
        let ratio = pred.eps1 / e1;
        assert!((ratio - 1.0).abs() < 0.1, "ratio {ratio} at {e1}");
    }
}

#[test]
fn bracket_without_sign_change_is_reported() {
    let p = Params::reference(0.2, -0.001);
    let pr = ConnectionProblem::he_off_axis(&p).unwrap();
    let r = find_connection(&p, &pr, ParamName::Eps3, (-0.002, -0.001));
    assert!(matches!(r, Err(lorenz_tz::Error::NoBracket(_))), "{r:?}");
}

#[test]
fn principal_homoclinic_has_one_crossing() {
    let e1 = -0.7;
    let pr = ConnectionProblem::homoclinic(EquilibriumKind::E2);
    let lo = -0.01 * e1;
    let all = scan_connections(&Params::reference(e1, lo), &pr, ParamName::Eps3, (lo, 2.0 * lo), 64);
    assert!(all.len() >= 2);
    let c = principal_connection(&Params::reference(e1, lo), &pr, ParamName::Eps3, (lo, 2.0 * lo), 64).unwrap();
    assert_eq!(c.miss.crossings, (1, 0));
    assert!(all.iter().any(|o| o.miss.crossings.0 > 1));
}

#[test]
fn he_curve_meets_dhe1_on_the_discriminant() {
    let seed = [-0.2, 0.0037413711];
    let c = he(seed[0], (0.0, 0.01));
    let cp = ConnectionCurveProblem { base: c.params, problem: ConnectionProblem::he_off_axis(&c.params).unwrap(), free: [ParamName::Eps1, ParamName::Eps3], weights: [1.0, 100.0] };
    let s = ContinuationSettings { direction: -1.0, orient_index: 0, max_points: 40, h0: 0.005, h_max: 0.02, ..curve_settings() };
    let g = continue_connection(&cp, [seed[0], c.value], &s).unwrap();
    let m = g.markers_of(MarkerKind::DHe).next().expect("DHe marker");
    assert!((m.eps1 + 0.25).abs() < 1e-10, "{}", m.eps1);
    assert!((m.eps3 - 0.004611).abs() < 5e-4);
    let csv = g.to_csv();
    assert!(csv.lines().next().unwrap().starts_with("eps1,eps3,delta_e1,delta_e2,disc_e1,disc_e2,marker"));
    assert!(csv.contains("DHe"));
}

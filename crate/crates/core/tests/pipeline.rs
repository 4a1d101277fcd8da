//! End-to-end checks through the public API.

use dsm_core::discrepancy::build_profile;
use dsm_core::dsm::{run_dsm, ProblemData};
use dsm_core::operators::{decompose, read_matrix_text, write_matrix_text, DEFAULT_RANK_TOLERANCE};
use dsm_core::problems::{self, add_noise};
use dsm_core::{
    DenseOperator, DsmConfig, Error, Integrator, NoiseSpec, PowerSchedule, Stage, Vector,
};

fn solve(
    problem: &dsm_core::TestProblem,
    delta: f64,
    c: f64,
    cfg: &DsmConfig,
) -> dsm_core::Result<dsm_core::DsmResult> {
    let dec = decompose(&problem.operator, DEFAULT_RANK_TOLERANCE)?;
    let f_delta = add_noise(&problem.f_exact, Some(&dec), &NoiseSpec::new(delta, 17))?;
    let data = ProblemData {
        f_delta: &f_delta,
        y_reference: Some(&problem.y_reference),
    };
    run_dsm(&dec, &PowerSchedule::default(), data, delta, c, cfg)
}

#[test]
fn every_linear_family_runs_and_respects_the_envelope() {
    let families = [
        problems::identity_problem(5).unwrap(),
        problems::hilbert_problem(10).unwrap(),
        problems::gaussian_blur_problem(48, 0.05).unwrap(),
        problems::rank_deficient_problem(10, 4, 2).unwrap(),
    ];
    for problem in &families {
        for delta in [1e-1, 1e-3] {
            let delta = delta * problem.f_exact.norm();
            let res = solve(problem, delta, 1.0, &DsmConfig::default()).unwrap();
            let f_norm = problem.f_exact.norm() + delta;
            assert!(res.residual.is_finite());
            assert!(
                res.residual >= delta * (1.0 - 1e-6) && res.residual <= f_norm,
                "{}",
                problem.label
            );
            assert!(res.norm_ratio.unwrap() <= 1.0 + 1e-10, "{}", problem.label);
            assert!(res.stopping.t_delta > 0.0);
        }
    }
}

#[test]
fn integrators_agree_end_to_end() {
    let problem = problems::hilbert_problem(8).unwrap();
    let quad = solve(&problem, 1e-2, 1.0, &DsmConfig::default()).unwrap();
    let rk = solve(
        &problem,
        1e-2,
        1.0,
        &DsmConfig {
            integrator: Integrator::AdaptiveRungeKutta,
            ..DsmConfig::default()
        },
    )
    .unwrap();
    assert!((&quad.u_final - &rk.u_final).norm() <= 1e-6 * rk.u_final.norm());
    assert_eq!(quad.stopping, rk.stopping);
}

#[test]
fn projection_opt_in_admits_null_component_with_unit_c() {
    let problem = problems::rank_deficient_problem(12, 6, 4).unwrap();
    let dec = decompose(&problem.operator, DEFAULT_RANK_TOLERANCE).unwrap();
    let spec = NoiseSpec {
        delta: 1e-2,
        seed: 8,
        in_range_closure: false,
    };
    let f_delta = add_noise(&problem.f_exact, None, &spec).unwrap();
    let data = ProblemData {
        f_delta: &f_delta,
        y_reference: Some(&problem.y_reference),
    };
    let schedule = PowerSchedule::default();
    let err = run_dsm(&dec, &schedule, data, 1e-2, 1.0, &DsmConfig::default()).unwrap_err();
    assert_eq!(err.stage(), Some(Stage::Discrepancy));
    assert!(matches!(err.root(), Error::NullSpaceComponent { .. }));

    let cfg = DsmConfig {
        project_data: true,
        ..DsmConfig::default()
    };
    let res = run_dsm(&dec, &schedule, data, 1e-2, 1.0, &cfg).unwrap();
    let removed = res.projected_null_mass.unwrap();
    assert!(removed > 0.0 && removed < 1e-4);
}

#[test]
fn results_serialize_deterministically() {
    let problem = problems::gaussian_blur_problem(32, 0.05).unwrap();
    let cfg = DsmConfig {
        store_trajectory: true,
        trajectory_points: 16,
        ..DsmConfig::default()
    };
    let a = serde_json::to_string(&solve(&problem, 1e-2, 1.0, &cfg).unwrap()).unwrap();
    let b = serde_json::to_string(&solve(&problem, 1e-2, 1.0, &cfg).unwrap()).unwrap();
    assert_eq!(a, b);
    let value: serde_json::Value = serde_json::from_str(&a).unwrap();
    assert!(value["trajectory"]["times"].as_array().unwrap().len() <= 16);
    assert!(value.get("wall_time_ms").is_none());
}

#[test]
fn text_format_round_trip_preserves_the_profile() {
    let problem = problems::hilbert_problem(6).unwrap();
    let mut buf = Vec::new();
    write_matrix_text(problem.operator.matrix(), &mut buf).unwrap();
    let op = DenseOperator::new(read_matrix_text(buf.as_slice()).unwrap()).unwrap();
    assert_eq!(&op, &problem.operator);
    let f = Vector::from_element(6, 0.3);
    let p1 = build_profile(&decompose(&op, DEFAULT_RANK_TOLERANCE).unwrap(), &f).unwrap();
    let p2 = build_profile(
        &decompose(&problem.operator, DEFAULT_RANK_TOLERANCE).unwrap(),
        &f,
    )
    .unwrap();
    assert_eq!(p1, p2);
}

use cmt_core::gradcheck::{model_battery, op_battery, sum_of_squares_example, SUM_SQ_TOL};
use cmt_core::model::{CrossModalConfig, Mode};

#[test]
fn sum_of_squares_example_is_exact() {
    let err = sum_of_squares_example().unwrap();
    assert!(err <= SUM_SQ_TOL, "{err}");
}

#[test]
fn every_op_agrees_with_finite_differences() {
    for r in op_battery(100, 11).unwrap() {
        eprintln!(
            "{} max rel err {:.3e} (tol {:.0e}), {} noise-limited, {} violations, {:.2}s",
            r.name, r.max_rel_err, r.tolerance, r.noise_limited, r.violations, r.seconds
        );
        assert!(r.consistent(), "{r:?}");
    }
}

#[test]
fn full_model_agrees_with_finite_differences() {
    for mode in [Mode::CrossModal, Mode::EhrOnly, Mode::TextOnly] {
        let cfg = CrossModalConfig { mode, ..Default::default() };
        for r in model_battery(&cfg, 2, 10, 30, 5).unwrap() {
            eprintln!(
                "{mode} {} max rel err {:.3e}, {} of {} noise-limited, {} violations, {:.2}s",
                r.name, r.max_rel_err, r.noise_limited, r.coords, r.violations, r.seconds
            );
            assert!(r.consistent(), "{mode}: {r:?}");
        }
    }
}

#[test]
fn two_heads_two_layers_agree_with_finite_differences() {
    let cfg = CrossModalConfig { n_heads: 2, n_layers: 2, ..Default::default() };
    for r in model_battery(&cfg, 1, 4, 30, 9).unwrap() {
        assert!(r.consistent(), "{r:?}");
    }
}

use std::path::PathBuf;

use fodof::cli::parse_config;
use fodof::interval::{decompose, IntervalMatrix, UncertainFoltiSystem};
use fodof::linalg::{block_diag, from_rows, ComplexMatrix, Matrix};
use fodof::sdp::SolverConfig;
use fodof::stability::{closed_loop, lemma2_problem, lemma3_problem};
use fodof::synthesis::{
    assemble_for, recover_theorem1, recover_theorem2, synthesize, CertificateBlocks, CertifyConfig, Regime,
};

fn example(k: u8) -> UncertainFoltiSystem {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(format!("../../fixtures/example{k}.json"));
    parse_config(&p).and_then(|c| c.system()).unwrap()
}

fn quick() -> CertifyConfig {
    CertifyConfig { sample_count: 20, seed: 3 }
}

fn scaled(b: &CertificateBlocks, c: f64) -> CertificateBlocks {
    let herm = |p: &ComplexMatrix| ComplexMatrix { re: &p.re * c, im: &p.im * c };
    CertificateBlocks {
        p_s: herm(&b.p_s),
        p_c: herm(&b.p_c),
        t1: &b.t1 * c,
        t2: &b.t2 * c,
        t3: &b.t3 * c,
        t4: &b.t4 * c,
        eta: b.eta * c,
    }
}

#[test]
fn recovery_is_scale_invariant() {
    for (ex, n_c) in [(1u8, 1usize), (2, 2)] {
        let sys = example(ex);
        let (res, _) = synthesize(&sys, n_c, &SolverConfig::default(), &quick()).unwrap();
        for c in [0.01, 3.0, 250.0] {
            let b = scaled(&res.certificate, c);
            let k = match res.regime {
                Regime::Theorem1 => recover_theorem1(&b, &sys.c, sys.alpha).unwrap(),
                Regime::Theorem2 => recover_theorem2(&b, &sys.c).unwrap(),
            };
            for (x, y) in [
                (&k.a_c, &res.controller.a_c),
                (&k.b_c, &res.controller.b_c),
                (&k.c_c, &res.controller.c_c),
                (&k.d_c, &res.controller.d_c),
            ] {
                assert!((x - y).amax() <= 1e-8 * (1.0 + y.amax()), "ex{ex} scale {c}");
            }
        }
    }
}

#[test]
fn blocks_and_values_round_trip() {
    let sys = example(1);
    let sp = assemble_for(&sys, 2).unwrap();
    let values: Vec<f64> = (0..sp.problem.num_vars()).map(|i| (i as f64 * 0.37).sin()).collect();
    let b = sp.blocks(&values);
    assert_eq!(sp.values_from(&b), values);
}

/// Full-state output, so `C^+ C = I` and the change of variables is exact.
fn full_state(alpha: f64) -> UncertainFoltiSystem {
    let a = from_rows(&[vec![0.5, 1.0], vec![-1.0, 0.2]]).unwrap();
    let b = from_rows(&[vec![1.0, 0.0], vec![0.3, 1.0]]).unwrap();
    let widen = |m: &Matrix, r: f64| IntervalMatrix::new(m.add_scalar(-r), m.add_scalar(r)).unwrap();
    UncertainFoltiSystem::new(alpha, widen(&a, 0.1), widen(&b, 0.05), Matrix::identity(2, 2)).unwrap()
}

#[test]
fn certified_controller_passes_center_analysis_test() {
    for (alpha, n_c) in [(0.6, 0usize), (0.6, 2), (1.3, 0), (1.3, 1)] {
        let sys = full_state(alpha);
        let (res, rep) = synthesize(&sys, n_c, &SolverConfig::default(), &quick()).unwrap();
        assert!(rep.passed, "alpha {alpha} n_c={n_c}");
        assert!(res.round_trip.t2 <= 1e-8 && res.round_trip.t4 <= 1e-8, "{:?}", res.round_trip);
        let f = decompose(&sys);
        let acl = closed_loop(&f.a0, &f.b0, &sys.c, &res.controller).unwrap();
        let b = &res.certificate;
        let x = block_diag(&[&b.p_s.re, &b.p_c.re]);
        let y = block_diag(&[&b.p_s.im, &b.p_c.im]);
        let (problem, values) = if sys.alpha < 1.0 {
            let lp = lemma2_problem(&acl, sys.alpha).unwrap();
            let mut v = vec![0.0; lp.problem.num_vars()];
            lp.x_sym.assign(&x, &mut v);
            lp.y_skew.assign(&y, &mut v);
            (lp.problem, v)
        } else {
            let lp = lemma3_problem(&acl, sys.alpha).unwrap();
            let mut v = vec![0.0; lp.problem.num_vars()];
            lp.x.assign(&x, &mut v);
            (lp.problem, v)
        };
        for c in &problem.constraints {
            let v = problem.evaluate_constraint(c, &values).unwrap();
            assert!(v.margin > 0.0, "alpha {alpha} n_c={n_c} {}: {}", c.label, v.margin);
        }
    }
}

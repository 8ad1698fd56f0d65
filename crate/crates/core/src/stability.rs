//! Stability tests for a fixed fractional-order system `D^alpha x = A x`.
//!
//! The eigenvalue test checks that every eigenvalue lies strictly outside
//! the sector `|arg z| <= alpha pi / 2`. The LMI tests give the same answer
//! through a Lyapunov-type certificate: a Hermitian `X` for `0 < alpha < 1`
//! and a symmetric `X` for `1 <= alpha < 2`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{ensure_square, eig_general, ComplexMatrix, Matrix};
use crate::lmi::{AffineMatrix, LmiProblem, MatrixVar, Sense};
use crate::sdp::{solve_feasibility, SdpSolution, SdpStatus, SolverConfig};
use crate::synthesis::DynamicController;

/// Eigenvalues below this modulus have no usable argument and are counted
/// as unstable.
pub const ZERO_EIGENVALUE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SectorReport {
    pub alpha: f64,
    #[serde(with = "complex_list")]
    pub eigenvalues: Vec<Complex64>,
    /// `min |arg lambda| - alpha pi / 2`, radians.
    pub margin: f64,
    pub stable: bool,
}

/// `alpha` in `(0, 2)`, `(0, 1)` or `[1, 2)`.
pub(crate) fn check_alpha(alpha: f64, range: &'static str) -> Result<()> {
    let ok = match range {
        "(0, 1)" => alpha > 0.0 && alpha < 1.0,
        "[1, 2)" => (1.0..2.0).contains(&alpha),
        _ => alpha > 0.0 && alpha < 2.0,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::AlphaOutOfRange { alpha, range })
    }
}

pub fn sector_margin(a: &Matrix, alpha: f64) -> Result<SectorReport> {
    check_alpha(alpha, "(0, 2)")?;
    let eigenvalues = eig_general(a)?;
    let half = alpha * PI / 2.0;
    let margin = eigenvalues
        .iter()
        .map(|z| {
            let arg = if z.norm() < ZERO_EIGENVALUE_TOL { 0.0 } else { z.arg().abs() };
            arg - half
        })
        .fold(f64::INFINITY, f64::min);
    Ok(SectorReport {
        alpha,
        eigenvalues,
        margin,
        stable: margin > 0.0,
    })
}

/// Outcome of an LMI stability test. The certificate is `re + i im`; for
/// the symmetric test `im` is zero.
#[derive(Debug, Clone)]
pub struct LmiTestOutcome {
    pub feasible: bool,
    pub certificate: Option<ComplexMatrix>,
    pub solution: SdpSolution,
}

/// Variables and problem of the `0 < alpha < 1` test.
pub struct Lemma2Problem {
    pub problem: LmiProblem,
    pub x_sym: MatrixVar,
    pub y_skew: MatrixVar,
}

/// `Q = 2 cos(theta) X_sym - 2 sin(theta) Y_skew`, the real matrix
/// `r X + conj(r) conj(X)` for `r = e^{i theta}` and Hermitian
/// `X = X_sym + i Y_skew`.
pub(crate) fn hermitian_combination(x_sym: &MatrixVar, y_skew: &MatrixVar, theta: f64) -> AffineMatrix {
    &x_sym.expr().scale(2.0 * theta.cos()) - &y_skew.expr().scale(2.0 * theta.sin())
}

/// `[[X_sym, -Y_skew], [Y_skew, X_sym]]`
pub(crate) fn hermitian_embedding_expr(x_sym: &MatrixVar, y_skew: &MatrixVar) -> AffineMatrix {
    let x = x_sym.expr();
    let y = y_skew.expr();
    AffineMatrix::block(&[vec![x.clone(), -&y], vec![y, x]])
}

pub fn lemma2_problem(a: &Matrix, alpha: f64) -> Result<Lemma2Problem> {
    check_alpha(alpha, "(0, 1)")?;
    let n = ensure_square(a)?;
    let theta = (1.0 - alpha) * PI / 2.0;
    let mut problem = LmiProblem::new();
    let x_sym = problem.declare_symmetric("X_sym", n);
    let y_skew = problem.declare_skew("Y_skew", n);
    let q = hermitian_combination(&x_sym, &y_skew, theta);
    problem.add_constraint("A Q + Q^T A^T", &(a * &q).sym(), Sense::NegativeDefinite)?;
    problem.add_constraint(
        "X hermitian positive",
        &hermitian_embedding_expr(&x_sym, &y_skew),
        Sense::PositiveDefinite,
    )?;
    Ok(Lemma2Problem { problem, x_sym, y_skew })
}

/// Variables and problem of the `1 <= alpha < 2` test.
pub struct Lemma3Problem {
    pub problem: LmiProblem,
    pub x: MatrixVar,
}

/// `[[s (G + G^T), c (G - G^T)], [-c (G - G^T), s (G + G^T)]]`, the
/// symmetric part of `[[s, c], [-c, s]] (x) G`.
pub(crate) fn rotated_sym(g: &AffineMatrix, theta: f64) -> AffineMatrix {
    let (s, c) = theta.sin_cos();
    let plus = g.sym().scale(s);
    let minus = (g - &g.transpose()).scale(c);
    AffineMatrix::block(&[vec![plus.clone(), minus.clone()], vec![-&minus, plus]])
}

pub fn lemma3_problem(a: &Matrix, alpha: f64) -> Result<Lemma3Problem> {
    check_alpha(alpha, "[1, 2)")?;
    let n = ensure_square(a)?;
    let theta = PI - alpha * PI / 2.0;
    let mut problem = LmiProblem::new();
    let x = problem.declare_symmetric("X", n);
    let g = a * &x.expr();
    problem.add_constraint("rotated A X", &rotated_sym(&g, theta), Sense::NegativeDefinite)?;
    problem.add_constraint("X positive", &x.expr(), Sense::PositiveDefinite)?;
    Ok(Lemma3Problem { problem, x })
}

fn outcome(solution: SdpSolution, cert: impl FnOnce(&[f64]) -> ComplexMatrix) -> LmiTestOutcome {
    let feasible = solution.status == SdpStatus::Feasible;
    let certificate = feasible.then(|| cert(&solution.values));
    LmiTestOutcome {
        feasible,
        certificate,
        solution,
    }
}

pub fn lemma2_feasible(a: &Matrix, alpha: f64, cfg: &SolverConfig) -> Result<LmiTestOutcome> {
    let lp = lemma2_problem(a, alpha)?;
    let solution = solve_feasibility(&lp.problem, cfg)?;
    Ok(outcome(solution, |v| ComplexMatrix {
        re: lp.x_sym.value(v),
        im: lp.y_skew.value(v),
    }))
}

pub fn lemma3_feasible(a: &Matrix, alpha: f64, cfg: &SolverConfig) -> Result<LmiTestOutcome> {
    let lp = lemma3_problem(a, alpha)?;
    let solution = solve_feasibility(&lp.problem, cfg)?;
    Ok(outcome(solution, |v| ComplexMatrix::from_real(lp.x.value(v))))
}

/// Lemma-2 test below `alpha = 1`, Lemma-3 test from `alpha = 1` on.
pub fn lmi_stable(a: &Matrix, alpha: f64, cfg: &SolverConfig) -> Result<LmiTestOutcome> {
    if alpha < 1.0 {
        lemma2_feasible(a, alpha, cfg)
    } else {
        lemma3_feasible(a, alpha, cfg)
    }
}

/// Augmented matrix `[[A + B Dc C, B Cc], [Bc C, Ac]]` of the plant in
/// feedback with `k`.
pub fn closed_loop(a: &Matrix, b: &Matrix, c: &Matrix, k: &DynamicController) -> Result<Matrix> {
    let n = ensure_square(a)?;
    let nc = k.n_c;
    let (l, m) = (b.ncols(), c.nrows());
    let mismatch = |what: &str| Err(Error::ShapeMismatch(what.to_string()));
    if b.nrows() != n {
        return mismatch("B rows must equal the state dimension");
    }
    if c.ncols() != n {
        return mismatch("C columns must equal the state dimension");
    }
    if k.a_c.shape() != (nc, nc)
        || k.b_c.shape() != (nc, m)
        || k.c_c.shape() != (l, nc)
        || k.d_c.shape() != (l, m)
    {
        return mismatch("controller shapes do not match the plant");
    }
    let mut out = Matrix::zeros(n + nc, n + nc);
    out.view_mut((0, 0), (n, n)).copy_from(&(a + b * &k.d_c * c));
    out.view_mut((0, n), (n, nc)).copy_from(&(b * &k.c_c));
    out.view_mut((n, 0), (nc, n)).copy_from(&(&k.b_c * c));
    out.view_mut((n, n), (nc, nc)).copy_from(&k.a_c);
    Ok(out)
}

mod complex_list {
    use num_complex::Complex64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[Complex64], s: S) -> Result<S::Ok, S::Error> {
        let pairs: Vec<[f64; 2]> = v.iter().map(|z| [z.re, z.im]).collect();
        pairs.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Complex64>, D::Error> {
        let pairs = Vec::<[f64; 2]>::deserialize(d)?;
        Ok(pairs.into_iter().map(|[re, im]| Complex64::new(re, im)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{from_rows, hermitian_real_embedding, is_positive_definite};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m(rows: &[&[f64]]) -> Matrix {
        from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn cfg() -> SolverConfig {
        SolverConfig::default()
    }

    #[test]
    fn scalar_sector() {
        let r = sector_margin(&m(&[&[-1.0]]), 0.75).unwrap();
        assert!((r.margin - (PI - 0.375 * PI)).abs() < 1e-12);
        assert!(r.stable);
    }

    #[test]
    fn rotation_sector_depends_on_alpha() {
        let a = m(&[&[0.0, 1.0], &[-1.0, 0.0]]);
        let r = sector_margin(&a, 0.75).unwrap();
        assert!((r.margin - (PI / 2.0 - 0.375 * PI)).abs() < 1e-12);
        assert!(r.stable);
        assert!(!sector_margin(&a, 1.2).unwrap().stable);
    }

    #[test]
    fn zero_eigenvalue_is_unstable() {
        let r = sector_margin(&m(&[&[0.0, 0.0], &[0.0, -1.0]]), 0.5).unwrap();
        assert!(!r.stable);
        assert!((r.margin + 0.25 * PI).abs() < 1e-12);
    }

    #[test]
    fn sector_rejects_bad_input() {
        assert!(matches!(
            sector_margin(&Matrix::zeros(2, 3), 0.5),
            Err(Error::NonSquare { .. })
        ));
        assert!(matches!(
            sector_margin(&m(&[&[-1.0]]), 2.0),
            Err(Error::AlphaOutOfRange { .. })
        ));
    }

    #[test]
    fn lemma2_scalar_cases() {
        let ok = lemma2_feasible(&m(&[&[-1.0]]), 0.5, &cfg()).unwrap();
        assert!(ok.feasible);
        let x = ok.certificate.unwrap();
        assert!(x.re[(0, 0)] > 0.0);
        assert!(!lemma2_feasible(&m(&[&[1.0]]), 0.5, &cfg()).unwrap().feasible);
    }

    #[test]
    fn lemma2_unit_certificate_by_hand() {
        // X = 1 gives -4 cos(pi/4)
        let lp = lemma2_problem(&m(&[&[-1.0]]), 0.5).unwrap();
        let mut v = vec![0.0; lp.problem.num_vars()];
        lp.x_sym.assign(&m(&[&[1.0]]), &mut v);
        let val = lp.problem.evaluate_constraint(&lp.problem.constraints[0], &v).unwrap();
        assert!((val.matrix[(0, 0)] + 4.0 * (PI / 4.0).cos()).abs() < 1e-12);
    }

    #[test]
    fn hermitian_combination_matches_complex_arithmetic() {
        let theta = 0.3;
        let mut p = LmiProblem::new();
        let xs = p.declare_symmetric("xs", 3);
        let ys = p.declare_skew("ys", 3);
        let vals: Vec<f64> = (0..p.num_vars()).map(|k| (k as f64 * 0.7).sin()).collect();
        let q = hermitian_combination(&xs, &ys, theta).eval(&vals);
        let (x, y) = (xs.value(&vals), ys.value(&vals));
        let r = Complex64::from_polar(1.0, theta);
        for i in 0..3 {
            for j in 0..3 {
                let z = Complex64::new(x[(i, j)], y[(i, j)]);
                let expected = r * z + r.conj() * z.conj();
                assert!(expected.im.abs() < 1e-14);
                assert!((expected.re - q[(i, j)]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn lemma3_cases() {
        assert!(lemma3_feasible(&m(&[&[-1.0]]), 1.5, &cfg()).unwrap().feasible);
        let rot = m(&[&[0.0, 1.0], &[-1.0, 0.0]]);
        assert!(!lemma3_feasible(&rot, 1.2, &cfg()).unwrap().feasible);
        assert!(matches!(
            lemma3_feasible(&rot, 0.9, &cfg()),
            Err(Error::AlphaOutOfRange { .. })
        ));
        assert!(matches!(
            lemma2_feasible(&rot, 1.0, &cfg()),
            Err(Error::AlphaOutOfRange { .. })
        ));
    }

    #[test]
    fn alpha_one_routes_to_symmetric_test() {
        let out = lmi_stable(&m(&[&[-2.0, 1.0], &[0.0, -1.0]]), 1.0, &cfg()).unwrap();
        assert!(out.feasible);
        assert!(out.certificate.unwrap().im.amax() == 0.0);
    }

    #[test]
    fn certificates_satisfy_inequality_and_scale() {
        let a = m(&[&[-1.0, 2.0, 0.0], &[-2.0, -0.5, 1.0], &[0.0, 0.3, -0.8]]);
        let c = cfg();
        for &alpha in &[0.4, 0.8] {
            let lp = lemma2_problem(&a, alpha).unwrap();
            let sol = solve_feasibility(&lp.problem, &c).unwrap();
            assert_eq!(sol.status, SdpStatus::Feasible);
            let cert = ComplexMatrix {
                re: lp.x_sym.value(&sol.values),
                im: lp.y_skew.value(&sol.values),
            };
            assert!(is_positive_definite(&hermitian_real_embedding(&cert).unwrap(), 0.0).unwrap());
            for k in [0.1, 3.0, 1e3] {
                let scaled: Vec<f64> = sol.values.iter().map(|v| v * k).collect();
                assert!(lp.problem.min_margin(&scaled).unwrap() > 0.0);
            }
        }
        for &alpha in &[1.0, 1.1] {
            let lp = lemma3_problem(&a, alpha).unwrap();
            let sol = solve_feasibility(&lp.problem, &c).unwrap();
            assert_eq!(sol.status, SdpStatus::Feasible);
            assert!(lp.problem.min_margin(&sol.values).unwrap() >= c.eps_margin);
            for k in [0.1, 3.0, 1e3] {
                let scaled: Vec<f64> = sol.values.iter().map(|v| v * k).collect();
                assert!(lp.problem.min_margin(&scaled).unwrap() > 0.0);
            }
        }
    }

    #[test]
    fn closed_loop_static_and_block_layout() {
        let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = m(&[&[1.0], &[0.5]]);
        let c = m(&[&[1.0, -1.0]]);
        let zero = DynamicController::static_gain(Matrix::zeros(1, 1));
        assert_eq!(closed_loop(&a, &b, &c, &zero).unwrap(), a);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut rnd = |r: usize, c: usize| Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
        let k = DynamicController::new(rnd(2, 2), rnd(2, 1), rnd(1, 2), rnd(1, 1)).unwrap();
        let acl = closed_loop(&a, &b, &c, &k).unwrap();
        let top_left = &a + &b * &k.d_c * &c;
        let top_right = &b * &k.c_c;
        let bottom_left = &k.b_c * &c;
        for i in 0..4 {
            for j in 0..4 {
                let expected = match (i < 2, j < 2) {
                    (true, true) => top_left[(i, j)],
                    (true, false) => top_right[(i, j - 2)],
                    (false, true) => bottom_left[(i - 2, j)],
                    (false, false) => k.a_c[(i - 2, j - 2)],
                };
                assert_eq!(acl[(i, j)], expected);
            }
        }
        let bad = DynamicController::static_gain(Matrix::zeros(2, 1));
        assert!(matches!(closed_loop(&a, &b, &c, &bad), Err(Error::ShapeMismatch(_))));
    }
}

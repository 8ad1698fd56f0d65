//! Robust dynamic output feedback synthesis.
//!
//! The controller
//!
//! ```text
//! D^alpha x_c = A_c x_c + B_c y,   u = C_c x_c + D_c y
//! ```
//!
//! is found by solving an LMI in the certificate `P = diag(P_S, P_C)`, the
//! products `T_1 = A_c P_C`, `T_2 = B_c C P_S`, `T_3 = C_c P_C`,
//! `T_4 = D_c C P_S` and a scalar `eta` that absorbs the interval
//! uncertainty. For `0 < alpha < 1` the certificate is Hermitian and enters
//! through `Q = r P + conj(r P)`, `r = e^{i (1 - alpha) pi / 2}`; for
//! `1 <= alpha < 2` it is real symmetric and the LMI is rotated by
//! `theta = pi - alpha pi / 2`. The controller is read back with a
//! pseudo-inverse of `C` and then certified on the interval family.

use std::f64::consts::PI;

use log::{debug, info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval::{
    decompose, enumerate_vertices, realize, sample_uniform, UncertainFoltiSystem,
    UncertaintyFactors, UncertaintyRealization,
};
use crate::linalg::{checked_inverse, ensure_finite, from_rows, pinv, rows, to_rows, ComplexMatrix, Matrix};
use crate::lmi::{AffineMatrix, LmiProblem, MatrixVar, Sense};
use crate::sdp::{solve_feasibility, SdpSolution, SdpStatus, SolverConfig};
use crate::stability::{
    check_alpha, closed_loop, hermitian_combination, hermitian_embedding_expr, lmi_stable,
    rotated_sym, sector_margin,
};

/// Certificates with a larger condition number are rejected at recovery.
pub const MAX_CERTIFICATE_COND: f64 = 1e12;

/// Output feedback controller of order `n_c`; for `n_c = 0` only `d_c` acts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ControllerRepr", into = "ControllerRepr")]
pub struct DynamicController {
    pub n_c: usize,
    pub a_c: Matrix,
    pub b_c: Matrix,
    pub c_c: Matrix,
    pub d_c: Matrix,
}

#[derive(Serialize, Deserialize)]
struct ControllerRepr {
    n_c: usize,
    #[serde(default)]
    a_c: Vec<Vec<f64>>,
    #[serde(default)]
    b_c: Vec<Vec<f64>>,
    #[serde(default)]
    c_c: Vec<Vec<f64>>,
    d_c: Vec<Vec<f64>>,
}

impl TryFrom<ControllerRepr> for DynamicController {
    type Error = Error;

    fn try_from(r: ControllerRepr) -> Result<Self> {
        let d_c = from_rows(&r.d_c)?;
        let (l, m) = d_c.shape();
        let nc = r.n_c;
        // empty blocks carry no shape in nested-array form
        let read = |rows: &[Vec<f64>], shape: (usize, usize)| -> Result<Matrix> {
            if shape.0 * shape.1 == 0 {
                Ok(Matrix::zeros(shape.0, shape.1))
            } else {
                from_rows(rows)
            }
        };
        Self::new(
            read(&r.a_c, (nc, nc))?,
            read(&r.b_c, (nc, m))?,
            read(&r.c_c, (l, nc))?,
            d_c,
        )
    }
}

impl From<DynamicController> for ControllerRepr {
    fn from(k: DynamicController) -> Self {
        Self {
            n_c: k.n_c,
            a_c: to_rows(&k.a_c),
            b_c: to_rows(&k.b_c),
            c_c: to_rows(&k.c_c),
            d_c: to_rows(&k.d_c),
        }
    }
}

impl DynamicController {
    pub fn new(a_c: Matrix, b_c: Matrix, c_c: Matrix, d_c: Matrix) -> Result<Self> {
        let nc = a_c.nrows();
        let (l, m) = d_c.shape();
        if a_c.ncols() != nc || b_c.shape() != (nc, m) || c_c.shape() != (l, nc) {
            return Err(Error::ShapeMismatch(format!(
                "controller blocks A_c {:?}, B_c {:?}, C_c {:?}, D_c {:?}",
                a_c.shape(),
                b_c.shape(),
                c_c.shape(),
                d_c.shape()
            )));
        }
        for blk in [&a_c, &b_c, &c_c, &d_c] {
            ensure_finite(blk)?;
        }
        Ok(Self {
            n_c: nc,
            a_c,
            b_c,
            c_c,
            d_c,
        })
    }

    pub fn static_gain(d_c: Matrix) -> Self {
        let (l, m) = d_c.shape();
        Self {
            n_c: 0,
            a_c: Matrix::zeros(0, 0),
            b_c: Matrix::zeros(0, m),
            c_c: Matrix::zeros(l, 0),
            d_c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `0 < alpha < 1`, Hermitian certificate.
    Theorem1,
    /// `1 <= alpha < 2`, symmetric certificate.
    Theorem2,
}

impl Regime {
    pub fn for_alpha(alpha: f64) -> Self {
        if alpha < 1.0 {
            Regime::Theorem1
        } else {
            Regime::Theorem2
        }
    }

    pub fn theta(self, alpha: f64) -> f64 {
        match self {
            Regime::Theorem1 => (1.0 - alpha) * PI / 2.0,
            Regime::Theorem2 => PI - alpha * PI / 2.0,
        }
    }
}

/// Variable handles of a synthesis LMI. `y_s`/`y_c` (imaginary parts of
/// the Hermitian certificate) exist only for [`Regime::Theorem1`]; `eta`
/// only when the plant is uncertain.
#[derive(Debug, Clone)]
pub struct SynthesisVars {
    pub x_s: MatrixVar,
    pub y_s: Option<MatrixVar>,
    pub x_c: MatrixVar,
    pub y_c: Option<MatrixVar>,
    pub t1: MatrixVar,
    pub t2: MatrixVar,
    pub t3: MatrixVar,
    pub t4: MatrixVar,
    pub eta: Option<MatrixVar>,
}

#[derive(Debug, Clone)]
pub struct SynthesisProblem {
    pub problem: LmiProblem,
    pub regime: Regime,
    pub alpha: f64,
    pub n_c: usize,
    pub vars: SynthesisVars,
}

/// Solved decision variables, grouped as matrices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificateBlocks {
    pub p_s: ComplexMatrix,
    pub p_c: ComplexMatrix,
    #[serde(with = "rows")]
    pub t1: Matrix,
    #[serde(with = "rows")]
    pub t2: Matrix,
    #[serde(with = "rows")]
    pub t3: Matrix,
    #[serde(with = "rows")]
    pub t4: Matrix,
    /// Zero for a certain plant.
    pub eta: f64,
}

impl SynthesisProblem {
    pub fn blocks(&self, values: &[f64]) -> CertificateBlocks {
        let v = &self.vars;
        let herm = |x: &MatrixVar, y: &Option<MatrixVar>| ComplexMatrix {
            re: x.value(values),
            im: y
                .as_ref()
                .map_or_else(|| Matrix::zeros(x.rows, x.rows), |y| y.value(values)),
        };
        CertificateBlocks {
            p_s: herm(&v.x_s, &v.y_s),
            p_c: herm(&v.x_c, &v.y_c),
            t1: v.t1.value(values),
            t2: v.t2.value(values),
            t3: v.t3.value(values),
            t4: v.t4.value(values),
            eta: v.eta.as_ref().map_or(0.0, |e| values[e.offset]),
        }
    }

    pub fn recover(&self, values: &[f64], c: &Matrix) -> Result<DynamicController> {
        let blocks = self.blocks(values);
        match self.regime {
            Regime::Theorem1 => recover_theorem1(&blocks, c, self.alpha),
            Regime::Theorem2 => recover_theorem2(&blocks, c),
        }
    }

    /// Inverse of [`blocks`](Self::blocks): the variable vector holding
    /// `b`. Parts of `b` the problem has no variable for are dropped.
    pub fn values_from(&self, b: &CertificateBlocks) -> Vec<f64> {
        let v = &self.vars;
        let mut values = vec![0.0; self.problem.num_vars()];
        v.x_s.assign(&b.p_s.re, &mut values);
        v.x_c.assign(&b.p_c.re, &mut values);
        if let Some(y) = &v.y_s {
            y.assign(&b.p_s.im, &mut values);
        }
        if let Some(y) = &v.y_c {
            y.assign(&b.p_c.im, &mut values);
        }
        v.t1.assign(&b.t1, &mut values);
        v.t2.assign(&b.t2, &mut values);
        v.t3.assign(&b.t3, &mut values);
        v.t4.assign(&b.t4, &mut values);
        if let Some(e) = &v.eta {
            values[e.offset] = b.eta;
        }
        values
    }
}

fn check_output_matrix(f: &UncertaintyFactors, c: &Matrix) -> Result<()> {
    if c.ncols() != f.n() || c.nrows() == 0 {
        return Err(Error::ShapeMismatch(format!(
            "C is {}x{}, state dimension {}",
            c.nrows(),
            c.ncols(),
            f.n()
        )));
    }
    ensure_finite(c)
}

/// Columns of `[M_A, M_B]` and rows of `R_A`, `R_B` for coordinates with a
/// nonzero radius. The rest contribute nothing to either side of the
/// uncertainty bound.
struct ActiveFactors {
    m: Matrix,
    r_a: Matrix,
    r_b: Matrix,
}

fn active_factors(f: &UncertaintyFactors) -> ActiveFactors {
    let keep_a: Vec<usize> = (0..f.r_a.nrows()).filter(|&k| f.r_a.row(k).amax() > 0.0).collect();
    let keep_b: Vec<usize> = (0..f.r_b.nrows()).filter(|&k| f.r_b.row(k).amax() > 0.0).collect();
    let n = f.n();
    let mut m = Matrix::zeros(n, keep_a.len() + keep_b.len());
    for (j, &k) in keep_a.iter().enumerate() {
        m.set_column(j, &f.m_a.column(k));
    }
    for (j, &k) in keep_b.iter().enumerate() {
        m.set_column(keep_a.len() + j, &f.m_b.column(k));
    }
    ActiveFactors {
        m,
        r_a: f.r_a.select_rows(&keep_a),
        r_b: f.r_b.select_rows(&keep_b),
    }
}

/// `top` with zero rows appended to height `rows`.
fn pad_rows(top: &Matrix, rows: usize) -> Matrix {
    let mut out = Matrix::zeros(rows, top.ncols());
    out.view_mut((0, 0), top.shape()).copy_from(top);
    out
}

fn assemble(
    f: &UncertaintyFactors,
    c: &Matrix,
    alpha: f64,
    n_c: usize,
    regime: Regime,
    robust: bool,
) -> Result<SynthesisProblem> {
    check_output_matrix(f, c)?;
    let (n, l, m) = (f.n(), f.l(), c.nrows());
    let theta = regime.theta(alpha);
    let mut p = LmiProblem::new();
    let x_s = p.declare_symmetric("X_S", n);
    let x_c = p.declare_symmetric("X_C", n_c);
    let (y_s, y_c) = match regime {
        Regime::Theorem1 => (Some(p.declare_skew("Y_S", n)), Some(p.declare_skew("Y_C", n_c))),
        Regime::Theorem2 => (None, None),
    };
    let t1 = p.declare_full("T1", n_c, n_c);
    let t2 = p.declare_full("T2", n_c, n);
    let t3 = p.declare_full("T3", l, n_c);
    let t4 = p.declare_full("T4", l, n);
    let act = active_factors(f);
    let k = act.m.ncols();
    let eta = (robust && k > 0).then(|| p.declare_scalar("eta"));

    // Q_C enters only through T1 and T3
    let q_s = match regime {
        Regime::Theorem1 => hermitian_combination(&x_s, y_s.as_ref().unwrap(), theta),
        Regime::Theorem2 => x_s.expr(),
    };
    let (t1e, t2e, t3e, t4e) = (t1.expr(), t2.expr(), t3.expr(), t4.expr());
    // G = A_ocl Q with the controller products substituted
    let g11 = &(&f.a0 * &q_s) + &(&f.b0 * &t4e);
    let g12 = &f.b0 * &t3e;
    let big_n = n + n_c;
    let g = AffineMatrix::block(&[vec![g11, g12], vec![t2e, t1e]]);
    let r_t = AffineMatrix::block(&[
        vec![&act.r_a * &q_s, AffineMatrix::zeros(act.r_a.nrows(), n_c)],
        vec![&act.r_b * &t4e, &act.r_b * &t3e],
    ]);
    let m_t = pad_rows(&act.m, big_n);
    let (sigma, r_blk, m_blk) = match regime {
        Regime::Theorem1 => (g.sym(), r_t, m_t),
        Regime::Theorem2 => {
            // R = I_2 (x) R~, M = [[s M~, c M~], [-c M~, s M~]]
            let zero = AffineMatrix::zeros(k, big_n);
            let r = AffineMatrix::block(&[vec![r_t.clone(), zero.clone()], vec![zero, r_t]]);
            let (s, co) = theta.sin_cos();
            let mut m2 = Matrix::zeros(2 * big_n, 2 * k);
            m2.view_mut((0, 0), (big_n, k)).copy_from(&(&m_t * s));
            m2.view_mut((0, k), (big_n, k)).copy_from(&(&m_t * co));
            m2.view_mut((big_n, 0), (big_n, k)).copy_from(&(&m_t * -co));
            m2.view_mut((big_n, k), (big_n, k)).copy_from(&(&m_t * s));
            (rotated_sym(&g, theta), r, m2)
        }
    };

    match &eta {
        Some(eta) => {
            let e = eta.offset;
            let top = &sigma + &AffineMatrix::var_times(e, &m_blk * m_blk.transpose());
            let rk = r_blk.shape().0;
            let bottom = AffineMatrix::var_times(e, -Matrix::identity(rk, rk));
            let lmi = AffineMatrix::block(&[vec![top, r_blk.transpose()], vec![r_blk, bottom]]);
            p.add_constraint("robust synthesis", &lmi, Sense::NegativeDefinite)?;
        }
        None => p.add_constraint("nominal synthesis", &sigma, Sense::NegativeDefinite)?,
    }
    match regime {
        Regime::Theorem1 => {
            p.add_constraint(
                "P_S hermitian positive",
                &hermitian_embedding_expr(&x_s, y_s.as_ref().unwrap()),
                Sense::PositiveDefinite,
            )?;
            if n_c > 0 {
                p.add_constraint(
                    "P_C hermitian positive",
                    &hermitian_embedding_expr(&x_c, y_c.as_ref().unwrap()),
                    Sense::PositiveDefinite,
                )?;
            }
        }
        Regime::Theorem2 => {
            p.add_constraint("P_S positive", &x_s.expr(), Sense::PositiveDefinite)?;
            if n_c > 0 {
                p.add_constraint("P_C positive", &x_c.expr(), Sense::PositiveDefinite)?;
            }
        }
    }
    if let Some(eta) = &eta {
        p.add_constraint("eta positive", &eta.expr(), Sense::PositiveDefinite)?;
    }
    debug!(
        "assembled {:?} problem: n = {n}, n_c = {n_c}, l = {l}, m = {m}, {} vars, uncertain coords {k}",
        regime,
        p.num_vars()
    );
    Ok(SynthesisProblem {
        problem: p,
        regime,
        alpha,
        n_c,
        vars: SynthesisVars {
            x_s,
            y_s,
            x_c,
            y_c,
            t1,
            t2,
            t3,
            t4,
            eta,
        },
    })
}

/// Synthesis LMI for `0 < alpha < 1`. A certain plant yields the nominal
/// form `Sigma < 0` without `eta`.
pub fn assemble_theorem1(
    f: &UncertaintyFactors,
    c: &Matrix,
    alpha: f64,
    n_c: usize,
) -> Result<SynthesisProblem> {
    check_alpha(alpha, "(0, 1)")?;
    assemble(f, c, alpha, n_c, Regime::Theorem1, true)
}

/// Synthesis LMI for `1 <= alpha < 2`. A certain plant yields the nominal
/// form `Sigma < 0` without `eta`.
pub fn assemble_theorem2(
    f: &UncertaintyFactors,
    c: &Matrix,
    alpha: f64,
    n_c: usize,
) -> Result<SynthesisProblem> {
    check_alpha(alpha, "[1, 2)")?;
    assemble(f, c, alpha, n_c, Regime::Theorem2, true)
}

/// Nominal synthesis `Sigma < 0` on the midpoint plant, ignoring radii.
pub fn assemble_nominal(
    f: &UncertaintyFactors,
    c: &Matrix,
    alpha: f64,
    n_c: usize,
) -> Result<SynthesisProblem> {
    check_alpha(alpha, "(0, 2)")?;
    assemble(f, c, alpha, n_c, Regime::for_alpha(alpha), false)
}

fn recover_with(q_s: &Matrix, q_c: &Matrix, b: &CertificateBlocks, c: &Matrix) -> Result<DynamicController> {
    let n = q_s.nrows();
    if c.ncols() != n || b.t4.ncols() != n || b.t2.ncols() != n {
        return Err(Error::ShapeMismatch(format!(
            "C is {}x{}, certificate dimension {n}",
            c.nrows(),
            c.ncols()
        )));
    }
    let qs_inv = checked_inverse(q_s, MAX_CERTIFICATE_COND)?;
    let qc_inv = checked_inverse(q_c, MAX_CERTIFICATE_COND)?;
    let c_pinv = pinv(c);
    DynamicController::new(
        &b.t1 * &qc_inv,
        &b.t2 * &qs_inv * &c_pinv,
        &b.t3 * &qc_inv,
        &b.t4 * &qs_inv * &c_pinv,
    )
}

/// `2 Re(e^{i theta} P)` for Hermitian `P = re + i im`.
pub fn hermitian_image(p: &ComplexMatrix, theta: f64) -> Matrix {
    &p.re * (2.0 * theta.cos()) - &p.im * (2.0 * theta.sin())
}

/// `A_c = T1 Q_C^-1`, `B_c = T2 Q_S^-1 C^+`, `C_c = T3 Q_C^-1`,
/// `D_c = T4 Q_S^-1 C^+` with `Q = 2 Re(e^{i theta} P)`.
pub fn recover_theorem1(b: &CertificateBlocks, c: &Matrix, alpha: f64) -> Result<DynamicController> {
    check_alpha(alpha, "(0, 1)")?;
    let theta = Regime::Theorem1.theta(alpha);
    recover_with(&hermitian_image(&b.p_s, theta), &hermitian_image(&b.p_c, theta), b, c)
}

/// As [`recover_theorem1`] with the real symmetric `P` in place of `Q`.
pub fn recover_theorem2(b: &CertificateBlocks, c: &Matrix) -> Result<DynamicController> {
    recover_with(&b.p_s.re, &b.p_c.re, b, c)
}

/// Relative residuals of the change of variables after recovery,
/// `|T - T(controller)| / max(|T|, 1)` in Frobenius norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundTrip {
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
    pub t4: f64,
}

pub fn round_trip(
    regime: Regime,
    alpha: f64,
    b: &CertificateBlocks,
    k: &DynamicController,
    c: &Matrix,
) -> RoundTrip {
    let (q_s, q_c) = match regime {
        Regime::Theorem1 => {
            let theta = regime.theta(alpha);
            (hermitian_image(&b.p_s, theta), hermitian_image(&b.p_c, theta))
        }
        Regime::Theorem2 => (b.p_s.re.clone(), b.p_c.re.clone()),
    };
    let rel = |t: &Matrix, rebuilt: Matrix| (t - rebuilt).norm() / t.norm().max(1.0);
    RoundTrip {
        t1: rel(&b.t1, &k.a_c * &q_c),
        t2: rel(&b.t2, &k.b_c * c * &q_s),
        t3: rel(&b.t3, &k.c_c * &q_c),
        t4: rel(&b.t4, &k.d_c * c * &q_s),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CertifyConfig {
    pub sample_count: usize,
    pub seed: u64,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        Self {
            sample_count: 500,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificationReport {
    pub vertex_count: u64,
    pub sample_count: usize,
    /// Set when the vertex set was too large and only samples were checked.
    pub vertices_skipped: bool,
    pub min_sector_margin: f64,
    pub worst_realization: UncertaintyRealization,
    pub nominal_lmi_ok: bool,
    pub passed: bool,
}

/// Checks the closed loop on every vertex of the interval family plus
/// seeded uniform samples, and runs the LMI test on the midpoint closed
/// loop. Passing is evidence, not proof, of robust stability.
pub fn certify(
    sys: &UncertainFoltiSystem,
    k: &DynamicController,
    cfg: &CertifyConfig,
    solver: &SolverConfig,
) -> Result<CertificationReport> {
    let f = decompose(sys);
    let center = UncertaintyRealization::center(&f);
    let margin_of = |u: &UncertaintyRealization| -> Result<f64> {
        let (a, b) = realize(&f, u)?;
        let acl = closed_loop(&a, &b, &sys.c, k)?;
        Ok(sector_margin(&acl, sys.alpha)?.margin)
    };
    // shape errors surface here rather than inside the parallel loop
    margin_of(&center)?;

    let (vertices, vertices_skipped) = match enumerate_vertices(&f) {
        Ok(it) => (Some(it), false),
        Err(Error::TooManyVertices { count }) => {
            warn!("{count} uncertain coordinates; certifying on samples only");
            (None, true)
        }
        Err(e) => return Err(e),
    };
    let vertex_count = vertices.as_ref().map_or(0, |v| v.len_total());
    let samples = if cfg.sample_count > 0 {
        sample_uniform(&f, cfg.sample_count, cfg.seed)?
    } else {
        Vec::new()
    };
    let total = vertex_count + samples.len() as u64;
    let realization = |idx: u64| -> UncertaintyRealization {
        if idx < vertex_count {
            vertices.as_ref().unwrap().vertex(idx)
        } else {
            samples[(idx - vertex_count) as usize].clone()
        }
    };
    // ties broken by index so the worst case does not depend on scheduling
    let pick = |a: (f64, u64), b: (f64, u64)| match a.0.total_cmp(&b.0) {
        std::cmp::Ordering::Less => a,
        std::cmp::Ordering::Greater => b,
        std::cmp::Ordering::Equal => if a.1 <= b.1 { a } else { b },
    };
    let (min_margin, worst_idx) = (0..total)
        .into_par_iter()
        .map(|idx| margin_of(&realization(idx)).map(|m| (m, idx)))
        .try_reduce(|| (f64::INFINITY, u64::MAX), |a, b| Ok(pick(a, b)))?;
    let worst_realization = if worst_idx == u64::MAX {
        center.clone()
    } else {
        realization(worst_idx)
    };

    let (a0, b0) = realize(&f, &center)?;
    let acl0 = closed_loop(&a0, &b0, &sys.c, k)?;
    let nominal_lmi_ok = lmi_stable(&acl0, sys.alpha, solver)?.feasible;
    let passed = total > 0 && min_margin > 0.0 && nominal_lmi_ok;
    info!(
        "certify: {vertex_count} vertices, {} samples, min margin {min_margin:.6}, nominal LMI {nominal_lmi_ok}",
        samples.len()
    );
    Ok(CertificationReport {
        vertex_count,
        sample_count: samples.len(),
        vertices_skipped,
        min_sector_margin: min_margin,
        worst_realization,
        nominal_lmi_ok,
        passed,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthesisResult {
    pub regime: Regime,
    /// True when the plant had no uncertainty and `Sigma < 0` was solved.
    pub nominal_only: bool,
    pub controller: DynamicController,
    pub eta: f64,
    pub certificate: CertificateBlocks,
    pub solver_status: SdpStatus,
    pub iterations: usize,
    pub achieved_margin: f64,
    pub eps_margin: f64,
    pub retried: bool,
    pub round_trip: RoundTrip,
}

fn attempt(
    sp: &SynthesisProblem,
    sys: &UncertainFoltiSystem,
    solver: &SolverConfig,
    nominal_only: bool,
) -> Result<(SynthesisResult, SdpSolution)> {
    let sol = solve_feasibility(&sp.problem, solver)?;
    if sol.status != SdpStatus::Feasible {
        return Err(Error::Infeasible(sol.status));
    }
    let certificate = sp.blocks(&sol.values);
    let controller = sp.recover(&sol.values, &sys.c)?;
    let round_trip = round_trip(sp.regime, sp.alpha, &certificate, &controller, &sys.c);
    let result = SynthesisResult {
        regime: sp.regime,
        nominal_only,
        eta: certificate.eta,
        controller,
        certificate,
        solver_status: sol.status,
        iterations: sol.iterations,
        achieved_margin: sol.achieved_margin,
        eps_margin: solver.eps_margin,
        retried: false,
        round_trip,
    };
    Ok((result, sol))
}

/// The synthesis LMI [`synthesize`] solves for `sys`: nominal for a certain
/// plant, otherwise the robust form for the regime of `sys.alpha`.
pub fn assemble_for(sys: &UncertainFoltiSystem, n_c: usize) -> Result<SynthesisProblem> {
    let f = decompose(sys);
    if f.is_certain() {
        return assemble_nominal(&f, &sys.c, sys.alpha, n_c);
    }
    match Regime::for_alpha(sys.alpha) {
        Regime::Theorem1 => assemble_theorem1(&f, &sys.c, sys.alpha, n_c),
        Regime::Theorem2 => assemble_theorem2(&f, &sys.c, sys.alpha, n_c),
    }
}

/// Assembles, solves, recovers and certifies. A controller that fails
/// certification triggers one more solve with a tenfold strictness
/// margin; if that fails too the last result is returned with
/// `passed = false`.
pub fn synthesize(
    sys: &UncertainFoltiSystem,
    n_c: usize,
    solver: &SolverConfig,
    cert: &CertifyConfig,
) -> Result<(SynthesisResult, CertificationReport)> {
    let sp = assemble_for(sys, n_c)?;
    let nominal_only = sp.vars.eta.is_none();
    let (result, _) = attempt(&sp, sys, solver, nominal_only)?;
    let report = certify(sys, &result.controller, cert, solver)?;
    if report.passed {
        return Ok((result, report));
    }
    let retry_cfg = SolverConfig {
        eps_margin: solver.eps_margin * 10.0,
        ..*solver
    };
    warn!(
        "recovered controller failed certification (margin {:.6}); retrying with eps_margin {:e}",
        report.min_sector_margin, retry_cfg.eps_margin
    );
    match attempt(&sp, sys, &retry_cfg, nominal_only) {
        Ok((mut retry, _)) => {
            retry.retried = true;
            let retry_report = certify(sys, &retry.controller, cert, solver)?;
            Ok((retry, retry_report))
        }
        Err(e) => {
            warn!("retry failed: {e}");
            Ok((result, report))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interval::IntervalMatrix;

    fn m(rows: &[&[f64]]) -> Matrix {
        from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn certain(a: f64, b: f64, c: f64, alpha: f64) -> UncertainFoltiSystem {
        UncertainFoltiSystem::new(
            alpha,
            IntervalMatrix::point(m(&[&[a]])).unwrap(),
            IntervalMatrix::point(m(&[&[b]])).unwrap(),
            m(&[&[c]]),
        )
        .unwrap()
    }

    fn blocks(p_s: Matrix, p_c: Matrix, t: [Matrix; 4]) -> CertificateBlocks {
        let [t1, t2, t3, t4] = t;
        CertificateBlocks {
            p_s: ComplexMatrix::from_real(p_s),
            p_c: ComplexMatrix::from_real(p_c),
            t1,
            t2,
            t3,
            t4,
            eta: 1.0,
        }
    }

    #[test]
    fn theorem1_recovery_by_hand() {
        // theta = pi / 8 at alpha = 0.75, 2 cos(pi / 8) = 1.847759
        let i2 = Matrix::identity(2, 2);
        let b = blocks(
            m(&[&[1.0]]),
            i2.clone(),
            [&i2 * -3.6955, Matrix::zeros(2, 1), Matrix::zeros(1, 2), m(&[&[1.0]])],
        );
        let k = recover_theorem1(&b, &m(&[&[1.0]]), 0.75).unwrap();
        assert!((&k.a_c + &i2 * 2.0).amax() < 1e-4);
        assert_eq!(k.b_c, Matrix::zeros(2, 1));
    }

    #[test]
    fn theorem2_recovery_by_hand() {
        let b = blocks(
            Matrix::identity(3, 3),
            Matrix::identity(2, 2) * 2.0,
            [
                Matrix::identity(2, 2) * -0.2778,
                Matrix::zeros(2, 3),
                Matrix::zeros(1, 2),
                m(&[&[0.8, 0.0, 0.0]]),
            ],
        );
        let k = recover_theorem2(&b, &m(&[&[1.0, 0.0, -1.0]])).unwrap();
        assert!((k.a_c[(0, 0)] + 0.1389).abs() < 1e-12);
        assert!(k.a_c[(0, 1)].abs() < 1e-15);
        assert_eq!(k.c_c, Matrix::zeros(1, 2));
        assert!((k.d_c[(0, 0)] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn recovery_uses_pseudo_inverse_of_c() {
        let ps = m(&[&[2.0, 0.5, 0.0], &[0.5, 1.0, 0.0], &[0.0, 0.0, 3.0]]);
        let t4 = m(&[&[0.3, -1.0, 2.0]]);
        let b = blocks(ps.clone(), Matrix::zeros(0, 0), [
            Matrix::zeros(0, 0),
            Matrix::zeros(0, 3),
            Matrix::zeros(1, 0),
            t4.clone(),
        ]);
        let k = recover_theorem2(&b, &m(&[&[1.0, 0.0, 1.0]])).unwrap();
        let expected = &t4 * ps.try_inverse().unwrap() * m(&[&[0.5], &[0.0], &[0.5]]);
        assert!((k.d_c - expected).amax() < 1e-12);
    }

    #[test]
    fn singular_certificate_rejected() {
        let b = blocks(
            m(&[&[1.0, 0.0], &[0.0, 1e-14]]),
            Matrix::zeros(0, 0),
            [Matrix::zeros(0, 0), Matrix::zeros(0, 2), Matrix::zeros(1, 0), m(&[&[1.0, 1.0]])],
        );
        assert!(matches!(
            recover_theorem2(&b, &m(&[&[1.0, 1.0]])),
            Err(Error::SingularCertificate { .. })
        ));
    }

    #[test]
    fn controller_serde_keeps_empty_shapes() {
        let k = DynamicController::static_gain(m(&[&[-24.86]]));
        let s = serde_json::to_string(&k).unwrap();
        let back: DynamicController = serde_json::from_str(&s).unwrap();
        assert_eq!(back, k);
        let bad = r#"{"n_c": 1, "a_c": [[1.0]], "b_c": [[1.0, 2.0]], "c_c": [[1.0]], "d_c": [[0.0]]}"#;
        assert!(serde_json::from_str::<DynamicController>(bad).is_err());
    }

    #[test]
    fn certain_stable_scalar_theorem2() {
        let sys = certain(-1.0, 1.0, 1.0, 1.5);
        let (res, rep) = synthesize(&sys, 0, &SolverConfig::default(), &CertifyConfig::default()).unwrap();
        assert!(res.nominal_only);
        assert!(rep.passed);
        assert_eq!(rep.vertex_count, 1);
    }

    #[test]
    fn certain_unstable_scalar_matches_gain_sweep() {
        // a + d_c is stable iff a + d_c < 0 at any alpha; a static gain exists
        for alpha in [0.5, 0.9, 1.3] {
            let sys = certain(5.0, 1.0, 1.0, alpha);
            let (res, rep) =
                synthesize(&sys, 0, &SolverConfig::default(), &CertifyConfig::default()).unwrap();
            assert!(rep.passed, "alpha {alpha}");
            assert!(res.controller.d_c[(0, 0)] < -5.0);
            let sweep = (0..200).any(|i| {
                let d = -10.0 + 0.1 * i as f64;
                sector_margin(&m(&[&[5.0 + d]]), alpha).unwrap().stable
            });
            assert!(sweep);
        }
    }

    #[test]
    fn no_input_authority_is_infeasible() {
        let sys = UncertainFoltiSystem::new(
            0.8,
            IntervalMatrix::point(m(&[&[1.0, 0.0], &[0.0, -1.0]])).unwrap(),
            IntervalMatrix::point(Matrix::zeros(2, 1)).unwrap(),
            m(&[&[1.0, 0.0]]),
        )
        .unwrap();
        let err = synthesize(&sys, 1, &SolverConfig::default(), &CertifyConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)));
    }

    #[test]
    fn round_trip_and_homogeneity_on_uncertain_scalar() {
        let sys = UncertainFoltiSystem::new(
            0.6,
            IntervalMatrix::new(m(&[&[0.5]]), m(&[&[1.5]])).unwrap(),
            IntervalMatrix::new(m(&[&[0.8]]), m(&[&[1.2]])).unwrap(),
            m(&[&[1.0]]),
        )
        .unwrap();
        let f = decompose(&sys);
        for n_c in 0..3 {
            let sp = assemble_theorem1(&f, &sys.c, 0.6, n_c).unwrap();
            let sol = solve_feasibility(&sp.problem, &SolverConfig::default()).unwrap();
            assert_eq!(sol.status, SdpStatus::Feasible);
            let k = sp.recover(&sol.values, &sys.c).unwrap();
            let rt = round_trip(sp.regime, 0.6, &sp.blocks(&sol.values), &k, &sys.c);
            // C is square and invertible here, so every product round-trips
            for r in [rt.t1, rt.t2, rt.t3, rt.t4] {
                assert!(r < 1e-8, "{rt:?}");
            }
            let scaled: Vec<f64> = sol.values.iter().map(|v| v * 0.37).collect();
            let k2 = sp.recover(&scaled, &sys.c).unwrap();
            assert!((&k.d_c - &k2.d_c).amax() < 1e-9 * (1.0 + k.d_c.amax()));
            assert!((&k.a_c - &k2.a_c).amax() < 1e-9 * (1.0 + k.a_c.amax()));
        }
    }

    #[test]
    fn certify_zero_controller_fails_on_unstable_plant() {
        let sys = UncertainFoltiSystem::new(
            1.2,
            IntervalMatrix::new(m(&[&[0.1]]), m(&[&[0.3]])).unwrap(),
            IntervalMatrix::point(m(&[&[1.0]])).unwrap(),
            m(&[&[1.0]]),
        )
        .unwrap();
        let k = DynamicController::static_gain(m(&[&[0.0]]));
        let rep = certify(&sys, &k, &CertifyConfig::default(), &SolverConfig::default()).unwrap();
        assert!(!rep.passed);
        assert!(rep.min_sector_margin < 0.0);
        assert_eq!(rep.vertex_count, 2);
        assert_eq!(rep.worst_realization.f_a.len(), 1);
    }

    #[test]
    fn certify_is_deterministic() {
        let sys = UncertainFoltiSystem::new(
            0.7,
            IntervalMatrix::new(m(&[&[-1.0, 0.2], &[0.0, 0.5]]), m(&[&[-0.5, 0.4], &[0.3, 1.0]])).unwrap(),
            IntervalMatrix::new(m(&[&[0.0], &[0.9]]), m(&[&[0.0], &[1.1]])).unwrap(),
            m(&[&[0.0, 1.0]]),
        )
        .unwrap();
        let k = DynamicController::static_gain(m(&[&[-4.0]]));
        let cfg = CertifyConfig { sample_count: 50, seed: 9 };
        let a = certify(&sys, &k, &cfg, &SolverConfig::default()).unwrap();
        let b = certify(&sys, &k, &cfg, &SolverConfig::default()).unwrap();
        assert_eq!(a.min_sector_margin, b.min_sector_margin);
        assert_eq!(a.worst_realization, b.worst_realization);
        assert_eq!(a.vertex_count, 32);
    }
}

//! Strict-feasibility solver for [`LmiProblem`]s.
//!
//! The strict system `F_k(x) < 0` (or `> 0`) is decided through the
//! auxiliary program
//!
//! ```text
//! minimize t  s.t.  F_k(x) <= t I   (negative-definite constraints)
//!                  -F_k(x) <= t I   (positive-definite constraints)
//!                  |x_i| <= box_bound
//! ```
//!
//! which is always strictly feasible. It is written as a dual-form
//! semidefinite program `max b'y  s.t.  C - sum y_i A_i >= 0` with
//! `y = (x, t)`, `b = (0, .., 0, -1)`, and solved by an infeasible-start
//! primal-dual path-following method using the HKM search direction with a
//! Mehrotra predictor-corrector step. The box is carried as a diagonal
//! (linear-programming) block.
//!
//! The problem is strictly feasible iff the optimal `t` is negative; with
//! the strictness margin the solver reports `Feasible` only when the point it
//! returns has every constraint at least `eps_margin` away from the boundary,
//! re-checked with [`LmiProblem::evaluate_constraint`].

use log::{debug, trace};
use nalgebra::{Cholesky, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lmi::{LmiProblem, Sense};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Strict inequalities are decided as `<= -eps_margin I`.
    pub eps_margin: f64,
    /// Relative duality gap and residual tolerance.
    pub tol: f64,
    pub max_iter: usize,
    /// Carried for reproducibility records; the iteration itself is
    /// deterministic and draws no random numbers.
    pub seed: u64,
    /// `|x_i| <= box_bound` keeps homogeneous problems bounded.
    pub box_bound: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            eps_margin: 1e-6,
            tol: 1e-8,
            max_iter: 200,
            seed: 0,
            box_bound: 1e6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SdpStatus {
    Feasible,
    Infeasible,
    Indeterminate,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SdpSolution {
    pub status: SdpStatus,
    pub values: Vec<f64>,
    /// Smallest definiteness margin over all constraints at `values`.
    pub achieved_margin: f64,
    pub iterations: usize,
    /// Final primal objective, an upper bound on `-t*` once converged.
    pub primal_objective: f64,
    pub converged: bool,
}

/// One semidefinite block of the dual-form program: `C - sum y_i A_i`.
struct Block {
    c: Matrix,
    a: Vec<(usize, Matrix)>,
}

struct Workspace {
    blocks: Vec<Block>,
    /// Box rows: `1 - sign * x_var / box_bound >= 0`.
    lp: Vec<(usize, f64)>,
    lp_scale: f64,
    b: DVector<f64>,
    m: usize,
}

impl Workspace {
    fn build(p: &LmiProblem, cfg: &SolverConfig) -> Self {
        let nv = p.num_vars();
        let t_index = nv;
        let blocks = p
            .constraints
            .iter()
            .map(|c| {
                let d = c.dim();
                let sign = match c.sense {
                    Sense::NegativeDefinite => 1.0,
                    Sense::PositiveDefinite => -1.0,
                };
                let mut a: Vec<(usize, Matrix)> = c
                    .coeffs
                    .iter()
                    .map(|(var, m)| (*var, m * sign))
                    .collect();
                a.push((t_index, -Matrix::identity(d, d)));
                Block {
                    c: &c.constant * -sign,
                    a,
                }
            })
            .collect();
        let lp = (0..nv).flat_map(|i| [(i, 1.0), (i, -1.0)]).collect();
        let mut b = DVector::zeros(nv + 1);
        b[t_index] = -1.0;
        Self {
            blocks,
            lp,
            lp_scale: 1.0 / cfg.box_bound,
            b,
            m: nv + 1,
        }
    }

    fn dual_slack(&self, y: &DVector<f64>) -> (Vec<Matrix>, Vec<f64>) {
        let z = self
            .blocks
            .iter()
            .map(|blk| {
                let mut z = blk.c.clone();
                for (i, a) in &blk.a {
                    z -= a * y[*i];
                }
                z
            })
            .collect();
        let zl = self
            .lp
            .iter()
            .map(|(i, s)| 1.0 - s * self.lp_scale * y[*i])
            .collect();
        (z, zl)
    }

    /// `A^*(X)`: the vector of `<A_i, X>`.
    fn adjoint(&self, xs: &[Matrix], xl: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.m);
        for (blk, x) in self.blocks.iter().zip(xs) {
            for (i, a) in &blk.a {
                out[*i] += inner(a, x);
            }
        }
        for ((i, s), x) in self.lp.iter().zip(xl) {
            out[*i] += s * self.lp_scale * x;
        }
        out
    }

    fn apply(&self, dy: &DVector<f64>) -> (Vec<Matrix>, Vec<f64>) {
        let zs = self
            .blocks
            .iter()
            .map(|blk| {
                let d = blk.c.nrows();
                let mut z = Matrix::zeros(d, d);
                for (i, a) in &blk.a {
                    z += a * dy[*i];
                }
                z
            })
            .collect();
        let zl = self
            .lp
            .iter()
            .map(|(i, s)| s * self.lp_scale * dy[*i])
            .collect();
        (zs, zl)
    }
}

fn inner(a: &Matrix, b: &Matrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn sym(m: Matrix) -> Matrix {
    (&m + m.transpose()) * 0.5
}

/// Largest step `alpha` with `x + alpha dx` positive semidefinite.
fn max_step_sdp(x: &Matrix, dx: &Matrix) -> Option<f64> {
    let chol = Cholesky::new(x.clone())?;
    let l = chol.l();
    let linv = l.clone().try_inverse()?;
    let w = sym(&linv * dx * linv.transpose());
    let lmin = SymmetricEigen::new(w).eigenvalues.min();
    Some(if lmin >= 0.0 { f64::INFINITY } else { -1.0 / lmin })
}

fn max_step_lp(x: &[f64], dx: &[f64]) -> f64 {
    x.iter()
        .zip(dx)
        .filter(|(_, d)| **d < 0.0)
        .map(|(v, d)| -v / d)
        .fold(f64::INFINITY, f64::min)
}

struct Iterate {
    xs: Vec<Matrix>,
    xl: Vec<f64>,
    y: DVector<f64>,
    zs: Vec<Matrix>,
    zl: Vec<f64>,
}

struct Direction {
    dxs: Vec<Matrix>,
    dxl: Vec<f64>,
    dy: DVector<f64>,
    dzs: Vec<Matrix>,
    dzl: Vec<f64>,
}

/// Decides strict feasibility of `p`.
pub fn solve_feasibility(p: &LmiProblem, cfg: &SolverConfig) -> Result<SdpSolution> {
    if p.constraints.is_empty() {
        return Err(Error::IllFormedProblem("no constraints".into()));
    }
    if !(cfg.eps_margin >= 0.0 && cfg.tol > 0.0 && cfg.box_bound > 0.0) {
        return Err(Error::IllFormedProblem(format!("invalid solver config {cfg:?}")));
    }
    let nv = p.num_vars();
    let ws = Workspace::build(p, cfg);
    let n_total: usize = ws.blocks.iter().map(|b| b.c.nrows()).sum::<usize>() + ws.lp.len();

    let mut it = initial_point(&ws);
    let mut best_values = vec![0.0; nv];
    let mut best_margin = p.min_margin(&best_values)?;
    let mut converged = false;
    let mut pobj = f64::NAN;
    let mut iterations = 0;
    let b_norm = 1.0 + ws.b.norm();
    let c_norm = 1.0
        + ws
            .blocks
            .iter()
            .map(|b| b.c.norm())
            .fold(0.0, f64::max)
            .max(1.0);

    while iterations < cfg.max_iter {
        let (zc, zlc) = ws.dual_slack(&it.y);
        let rd: Vec<Matrix> = zc.iter().zip(&it.zs).map(|(c, z)| c - z).collect();
        let rdl: Vec<f64> = zlc.iter().zip(&it.zl).map(|(c, z)| c - z).collect();
        let rp = &ws.b - ws.adjoint(&it.xs, &it.xl);

        let gap: f64 = it.xs.iter().zip(&it.zs).map(|(x, z)| inner(x, z)).sum::<f64>()
            + it.xl.iter().zip(&it.zl).map(|(x, z)| x * z).sum::<f64>();
        let mu = gap / n_total as f64;
        pobj = ws.blocks.iter().zip(&it.xs).map(|(b, x)| inner(&b.c, x)).sum::<f64>()
            + it.xl.iter().sum::<f64>();
        let dobj = ws.b.dot(&it.y);
        let rel_gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
        let pinf = rp.norm() / b_norm;
        let dinf = rd
            .iter()
            .map(Matrix::norm)
            .chain(rdl.iter().map(|v| v.abs()))
            .fold(0.0, f64::max)
            / c_norm;

        let values: Vec<f64> = it.y.iter().take(nv).copied().collect();
        let margin = p.min_margin(&values)?;
        if margin > best_margin {
            best_margin = margin;
            best_values = values;
        }
        trace!(
            "iter {iterations}: pobj {pobj:.6e} dobj {dobj:.6e} gap {rel_gap:.2e} pinf {pinf:.2e} dinf {dinf:.2e} margin {margin:.3e}"
        );
        if rel_gap < cfg.tol && pinf < cfg.tol && dinf < cfg.tol {
            converged = true;
            break;
        }

        let Some(step) = newton_step(&ws, &it, &rd, &rdl, mu) else {
            debug!("search direction failed at iteration {iterations}");
            break;
        };
        let (ap, ad) = step_lengths(&it, &step, 0.95);
        let Some((ap, ad)) = ap.zip(ad) else {
            debug!("step length computation failed at iteration {iterations}");
            break;
        };
        for (x, dx) in it.xs.iter_mut().zip(&step.dxs) {
            *x += dx * ap;
        }
        for (x, dx) in it.xl.iter_mut().zip(&step.dxl) {
            *x += dx * ap;
        }
        it.y += &step.dy * ad;
        for (z, dz) in it.zs.iter_mut().zip(&step.dzs) {
            *z += dz * ad;
        }
        for (z, dz) in it.zl.iter_mut().zip(&step.dzl) {
            *z += dz * ad;
        }
        iterations += 1;
        if ap.max(ad) < 1e-12 {
            debug!("stalled at iteration {iterations}");
            break;
        }
    }

    // The accepted point is re-audited constraint by constraint.
    let audited = p.min_margin(&best_values)?;
    let status = if audited >= cfg.eps_margin {
        SdpStatus::Feasible
    } else if converged && pobj < cfg.eps_margin {
        SdpStatus::Infeasible
    } else {
        SdpStatus::Indeterminate
    };
    debug!(
        "solve_feasibility: {status:?} after {iterations} iterations, margin {audited:.3e}, pobj {pobj:.3e}"
    );
    Ok(SdpSolution {
        status,
        values: best_values,
        achieved_margin: audited,
        iterations,
        primal_objective: pobj,
        converged,
    })
}

fn initial_point(ws: &Workspace) -> Iterate {
    let xs = ws
        .blocks
        .iter()
        .map(|blk| {
            let d = blk.c.nrows();
            let a_max = blk.a.iter().map(|(_, a)| a.norm()).fold(0.0, f64::max);
            let xi = (d as f64).sqrt().max(1.0 + 1.0 / (1.0 + a_max)).max(1.0);
            Matrix::identity(d, d) * xi
        })
        .collect();
    let zs = ws
        .blocks
        .iter()
        .map(|blk| {
            let d = blk.c.nrows();
            let a_max = blk.a.iter().map(|(_, a)| a.norm()).fold(0.0, f64::max);
            let zeta = (d as f64).sqrt().max(blk.c.norm()).max(a_max).max(1.0);
            Matrix::identity(d, d) * zeta
        })
        .collect();
    Iterate {
        xs,
        xl: vec![1.0; ws.lp.len()],
        y: DVector::zeros(ws.m),
        zs,
        zl: vec![1.0; ws.lp.len()],
    }
}

fn schur_matrix(ws: &Workspace, it: &Iterate, zinv: &[Matrix]) -> Matrix {
    let mut m = Matrix::zeros(ws.m, ws.m);
    for ((blk, x), zi) in ws.blocks.iter().zip(&it.xs).zip(zinv) {
        for (j, aj) in &blk.a {
            let g = x * aj * zi;
            for (i, ai) in &blk.a {
                m[(*i, *j)] += inner(ai, &g);
            }
        }
    }
    for ((i, s), (x, z)) in ws.lp.iter().zip(it.xl.iter().zip(&it.zl)) {
        let a = s * ws.lp_scale;
        m[(*i, *i)] += a * a * x / z;
    }
    sym(m)
}

fn solve_schur(m: &Matrix, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = Cholesky::new(m.clone()) {
        return Some(ch.solve(rhs));
    }
    let diag_max = m.diagonal().amax().max(1e-300);
    let reg = m + Matrix::identity(m.nrows(), m.nrows()) * (1e-12 * diag_max);
    if let Some(ch) = Cholesky::new(reg) {
        return Some(ch.solve(rhs));
    }
    m.clone().lu().solve(rhs)
}

fn newton_step(ws: &Workspace, it: &Iterate, rd: &[Matrix], rdl: &[f64], mu: f64) -> Option<Direction> {
    let zinv: Vec<Matrix> = it
        .zs
        .iter()
        .map(|z| Cholesky::new(z.clone()).map(|c| c.inverse()))
        .collect::<Option<_>>()?;
    let m = schur_matrix(ws, it, &zinv);
    let n_total = (ws.blocks.iter().map(|b| b.c.nrows()).sum::<usize>() + ws.lp.len()) as f64;

    // Right-hand side pieces shared by predictor and corrector.
    let x_rd_zinv: Vec<Matrix> = it
        .xs
        .iter()
        .zip(rd)
        .zip(&zinv)
        .map(|((x, r), zi)| x * r * zi)
        .collect();
    let xl_rd_zinv: Vec<f64> = it
        .xl
        .iter()
        .zip(rdl)
        .zip(&it.zl)
        .map(|((x, r), z)| x * r / z)
        .collect();

    let direction = |sigma_mu: f64, corr: Option<(&[Matrix], &[f64])>| -> Option<Direction> {
        // rhs_i = b_i - sigma mu <A_i, Z^-1> + <A_i, X Rd Z^-1> + <A_i, corr Z^-1>
        let mut terms: Vec<Matrix> = x_rd_zinv
            .iter()
            .zip(&zinv)
            .map(|(xr, zi)| xr - zi * sigma_mu)
            .collect();
        let mut terms_l: Vec<f64> = xl_rd_zinv
            .iter()
            .zip(&it.zl)
            .map(|(xr, z)| xr - sigma_mu / z)
            .collect();
        if let Some((cs, cl)) = corr {
            for ((t, c), zi) in terms.iter_mut().zip(cs).zip(&zinv) {
                *t += c * zi;
            }
            for ((t, c), z) in terms_l.iter_mut().zip(cl).zip(&it.zl) {
                *t += c / z;
            }
        }
        let rhs = &ws.b + ws.adjoint(&terms, &terms_l);
        let dy = solve_schur(&m, &rhs)?;
        let (ady, adyl) = ws.apply(&dy);
        let dzs: Vec<Matrix> = rd.iter().zip(&ady).map(|(r, a)| r - a).collect();
        let dzl: Vec<f64> = rdl.iter().zip(&adyl).map(|(r, a)| r - a).collect();
        let dxs: Vec<Matrix> = it
            .xs
            .iter()
            .zip(&dzs)
            .zip(&zinv)
            .enumerate()
            .map(|(k, ((x, dz), zi))| {
                let mut dx = zi * sigma_mu - x - x * dz * zi;
                if let Some((cs, _)) = corr {
                    dx -= &cs[k] * zi;
                }
                sym(dx)
            })
            .collect();
        let dxl: Vec<f64> = it
            .xl
            .iter()
            .zip(&dzl)
            .zip(&it.zl)
            .enumerate()
            .map(|(k, ((x, dz), z))| {
                let mut dx = sigma_mu / z - x - x * dz / z;
                if let Some((_, cl)) = corr {
                    dx -= cl[k] / z;
                }
                dx
            })
            .collect();
        Some(Direction {
            dxs,
            dxl,
            dy,
            dzs,
            dzl,
        })
    };

    let pred = direction(0.0, None)?;
    let (ap, ad) = step_lengths(it, &pred, 1.0);
    let (ap, ad) = (ap?, ad?);
    let gap_aff: f64 = it
        .xs
        .iter()
        .zip(&pred.dxs)
        .zip(it.zs.iter().zip(&pred.dzs))
        .map(|((x, dx), (z, dz))| inner(&(x + dx * ap), &(z + dz * ad)))
        .sum::<f64>()
        + it
            .xl
            .iter()
            .zip(&pred.dxl)
            .zip(it.zl.iter().zip(&pred.dzl))
            .map(|((x, dx), (z, dz))| (x + ap * dx) * (z + ad * dz))
            .sum::<f64>();
    let mu_aff = (gap_aff / n_total).max(0.0);
    let sigma = if mu > 0.0 { (mu_aff / mu).powi(3).clamp(0.0, 1.0) } else { 0.0 };
    let corr: Vec<Matrix> = pred.dxs.iter().zip(&pred.dzs).map(|(dx, dz)| dx * dz).collect();
    let corr_l: Vec<f64> = pred.dxl.iter().zip(&pred.dzl).map(|(dx, dz)| dx * dz).collect();
    direction(sigma * mu, Some((&corr, &corr_l)))
}

fn step_lengths(it: &Iterate, d: &Direction, damping: f64) -> (Option<f64>, Option<f64>) {
    let mut ap = max_step_lp(&it.xl, &d.dxl);
    for (x, dx) in it.xs.iter().zip(&d.dxs) {
        match max_step_sdp(x, dx) {
            Some(s) => ap = ap.min(s),
            None => return (None, None),
        }
    }
    let mut ad = max_step_lp(&it.zl, &d.dzl);
    for (z, dz) in it.zs.iter().zip(&d.dzs) {
        match max_step_sdp(z, dz) {
            Some(s) => ad = ad.min(s),
            None => return (None, None),
        }
    }
    (Some((damping * ap).min(1.0)), Some((damping * ad).min(1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Matrix {
        Matrix::from_element(1, 1, v)
    }

    #[test]
    fn scalar_upper_bound_is_feasible() {
        let mut p = LmiProblem::new();
        let x = p.declare_scalar("x");
        p.add_constraint("x-1<0", &(&x.expr() + &scalar(-1.0)), Sense::NegativeDefinite)
            .unwrap();
        let sol = solve_feasibility(&p, &SolverConfig::default()).unwrap();
        assert_eq!(sol.status, SdpStatus::Feasible);
        assert!(sol.achieved_margin >= 1e-6);
        assert!(sol.values[0] < 1.0);
    }

    #[test]
    fn contradictory_scalars_are_infeasible() {
        let mut p = LmiProblem::new();
        let x = p.declare_scalar("x");
        p.add_constraint("-x<0", &(-&x.expr()), Sense::NegativeDefinite).unwrap();
        p.add_constraint("x<0", &x.expr(), Sense::NegativeDefinite).unwrap();
        let sol = solve_feasibility(&p, &SolverConfig::default()).unwrap();
        assert_eq!(sol.status, SdpStatus::Infeasible);
    }

    #[test]
    fn empty_problem_is_ill_formed() {
        let p = LmiProblem::new();
        assert!(matches!(
            solve_feasibility(&p, &SolverConfig::default()),
            Err(Error::IllFormedProblem(_))
        ));
    }

    #[test]
    fn two_by_two_lyapunov() {
        // A P + P A' < 0, P > 0 for a Hurwitz A.
        let a = Matrix::from_row_slice(2, 2, &[-1.0, 2.0, 0.0, -3.0]);
        let mut p = LmiProblem::new();
        let pv = p.declare_symmetric("P", 2);
        let e = pv.expr();
        p.add_constraint("lyap", &(&a * &e).sym(), Sense::NegativeDefinite).unwrap();
        p.add_constraint("P>0", &e, Sense::PositiveDefinite).unwrap();
        let sol = solve_feasibility(&p, &SolverConfig::default()).unwrap();
        assert_eq!(sol.status, SdpStatus::Feasible);
        for c in &p.constraints {
            assert!(p.evaluate_constraint(c, &sol.values).unwrap().margin >= 1e-6);
        }

        let unstable = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -3.0]);
        let mut q = LmiProblem::new();
        let pv = q.declare_symmetric("P", 2);
        let e = pv.expr();
        q.add_constraint("lyap", &(&unstable * &e).sym(), Sense::NegativeDefinite)
            .unwrap();
        q.add_constraint("P>0", &e, Sense::PositiveDefinite).unwrap();
        let sol = solve_feasibility(&q, &SolverConfig::default()).unwrap();
        assert_eq!(sol.status, SdpStatus::Infeasible);
    }

    #[test]
    fn deterministic() {
        let mut p = LmiProblem::new();
        let x = p.declare_symmetric("X", 2);
        let a = Matrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -1.0]);
        p.add_constraint("lyap", &(&a * &x.expr()).sym(), Sense::NegativeDefinite)
            .unwrap();
        p.add_constraint("X>0", &x.expr(), Sense::PositiveDefinite).unwrap();
        let cfg = SolverConfig::default();
        let s1 = solve_feasibility(&p, &cfg).unwrap();
        let s2 = solve_feasibility(&p, &cfg).unwrap();
        assert_eq!(s1.status, s2.status);
        assert_eq!(s1.values, s2.values);
    }
}

//! Modeling layer for strict linear matrix inequalities.
//!
//! Decision variables are scalars. Structured matrix variables (symmetric,
//! skew-symmetric, full, scalar) are declared on an [`LmiProblem`] and turned
//! into [`AffineMatrix`] expressions, which support the handful of
//! operations needed to assemble block LMIs: sums, products with constant
//! matrices, transposes and block concatenation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};
use crate::linalg::{asymmetry, sym_eig_range, sym_part, Matrix};

/// Affine matrix-valued function `constant + sum_i x_i * coeffs[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMatrix {
    rows: usize,
    cols: usize,
    constant: Matrix,
    coeffs: BTreeMap<usize, Matrix>,
}

impl AffineMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::constant(Matrix::zeros(rows, cols))
    }

    pub fn constant(m: Matrix) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            constant: m,
            coeffs: BTreeMap::new(),
        }
    }

    /// `x_var * m`
    pub fn var_times(var: usize, m: Matrix) -> Self {
        let mut out = Self::zeros(m.nrows(), m.ncols());
        out.add_term(var, m);
        out
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn constant_part(&self) -> &Matrix {
        &self.constant
    }

    pub fn coeffs(&self) -> &BTreeMap<usize, Matrix> {
        &self.coeffs
    }

    fn add_term(&mut self, var: usize, m: Matrix) {
        match self.coeffs.get_mut(&var) {
            Some(c) => *c += m,
            None => {
                self.coeffs.insert(var, m);
            }
        }
    }

    fn map(&self, f: impl Fn(&Matrix) -> Matrix) -> Self {
        let constant = f(&self.constant);
        Self {
            rows: constant.nrows(),
            cols: constant.ncols(),
            coeffs: self.coeffs.iter().map(|(k, m)| (*k, f(m))).collect(),
            constant,
        }
    }

    pub fn transpose(&self) -> Self {
        self.map(Matrix::transpose)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|m| m * s)
    }

    /// `k * self`
    pub fn left_mul(&self, k: &Matrix) -> Self {
        assert_eq!(k.ncols(), self.rows, "left_mul shape mismatch");
        self.map(|m| k * m)
    }

    /// `self * k`
    pub fn right_mul(&self, k: &Matrix) -> Self {
        assert_eq!(self.cols, k.nrows(), "right_mul shape mismatch");
        self.map(|m| m * k)
    }

    /// `self + self^T`
    pub fn sym(&self) -> Self {
        self + &self.transpose()
    }

    /// Block matrix from a grid of expressions. Every row of blocks must
    /// share a height and every column a width.
    pub fn block(grid: &[Vec<AffineMatrix>]) -> Self {
        let heights: Vec<usize> = grid.iter().map(|row| row[0].rows).collect();
        let widths: Vec<usize> = grid[0].iter().map(|b| b.cols).collect();
        let rows = heights.iter().sum();
        let cols = widths.iter().sum();
        let mut out = Self::zeros(rows, cols);
        let mut i0 = 0;
        for (bi, row) in grid.iter().enumerate() {
            assert_eq!(row.len(), widths.len(), "ragged block grid");
            let mut j0 = 0;
            for (bj, blk) in row.iter().enumerate() {
                assert_eq!(blk.shape(), (heights[bi], widths[bj]), "block ({bi}, {bj}) shape");
                out.constant
                    .view_mut((i0, j0), blk.shape())
                    .copy_from(&blk.constant);
                for (var, m) in &blk.coeffs {
                    let mut full = Matrix::zeros(rows, cols);
                    full.view_mut((i0, j0), blk.shape()).copy_from(m);
                    out.add_term(*var, full);
                }
                j0 += widths[bj];
            }
            i0 += heights[bi];
        }
        out
    }

    pub fn eval(&self, values: &[f64]) -> Matrix {
        let mut out = self.constant.clone();
        for (var, m) in &self.coeffs {
            out += m * values[*var];
        }
        out
    }
}

impl Add for &AffineMatrix {
    type Output = AffineMatrix;

    fn add(self, rhs: &AffineMatrix) -> AffineMatrix {
        assert_eq!(self.shape(), rhs.shape(), "affine add shape mismatch");
        let mut out = self.clone();
        out.constant += &rhs.constant;
        for (var, m) in &rhs.coeffs {
            out.add_term(*var, m.clone());
        }
        out
    }
}

impl Add<&Matrix> for &AffineMatrix {
    type Output = AffineMatrix;

    fn add(self, rhs: &Matrix) -> AffineMatrix {
        let mut out = self.clone();
        out.constant += rhs;
        out
    }
}

impl Sub for &AffineMatrix {
    type Output = AffineMatrix;

    fn sub(self, rhs: &AffineMatrix) -> AffineMatrix {
        self + &(-rhs)
    }
}

impl Neg for &AffineMatrix {
    type Output = AffineMatrix;

    fn neg(self) -> AffineMatrix {
        self.scale(-1.0)
    }
}

impl Mul<&AffineMatrix> for &Matrix {
    type Output = AffineMatrix;

    fn mul(self, rhs: &AffineMatrix) -> AffineMatrix {
        rhs.left_mul(self)
    }
}

impl Mul<&Matrix> for &AffineMatrix {
    type Output = AffineMatrix;

    fn mul(self, rhs: &Matrix) -> AffineMatrix {
        self.right_mul(rhs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Symmetric,
    Skew,
    Full,
}

/// Handle to a structured block of scalar decision variables.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixVar {
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
    pub count: usize,
    pub kind: VarKind,
}

impl MatrixVar {
    /// Entry `(i, j)` as a signed variable reference, or `None` for a
    /// structural zero.
    pub fn entry(&self, i: usize, j: usize) -> Option<(usize, f64)> {
        match self.kind {
            VarKind::Full => Some((self.offset + i * self.cols + j, 1.0)),
            VarKind::Symmetric => {
                let (a, b) = if i <= j { (i, j) } else { (j, i) };
                Some((self.offset + tri_index(self.rows, a, b, true), 1.0))
            }
            VarKind::Skew => {
                if i == j {
                    None
                } else if i < j {
                    Some((self.offset + tri_index(self.rows, i, j, false), 1.0))
                } else {
                    Some((self.offset + tri_index(self.rows, j, i, false), -1.0))
                }
            }
        }
    }

    pub fn expr(&self) -> AffineMatrix {
        let mut out = AffineMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                if let Some((var, sign)) = self.entry(i, j) {
                    let mut m = Matrix::zeros(self.rows, self.cols);
                    m[(i, j)] = sign;
                    out.add_term(var, m);
                }
            }
        }
        out
    }

    pub fn value(&self, values: &[f64]) -> Matrix {
        Matrix::from_fn(self.rows, self.cols, |i, j| {
            self.entry(i, j).map_or(0.0, |(var, sign)| sign * values[var])
        })
    }

    /// Writes `m` into the variable vector (symmetric and skew parts are
    /// read from the upper triangle).
    pub fn assign(&self, m: &Matrix, values: &mut [f64]) {
        for i in 0..self.rows {
            for j in 0..self.cols {
                if let Some((var, sign)) = self.entry(i, j) {
                    if self.kind == VarKind::Full || i <= j {
                        values[var] = sign * m[(i, j)];
                    }
                }
            }
        }
    }
}

/// Row-major position of `(i, j)`, `i <= j` (or `i < j` without the
/// diagonal), inside the packed upper triangle of a `d x d` matrix.
fn tri_index(d: usize, i: usize, j: usize, diagonal: bool) -> usize {
    if diagonal {
        i * d - i * i.saturating_sub(1) / 2 + (j - i)
    } else {
        i * d - i * (i + 1) / 2 + (j - i - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    NegativeDefinite,
    PositiveDefinite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffineMatrixConstraint {
    pub label: String,
    pub constant: Matrix,
    pub coeffs: BTreeMap<usize, Matrix>,
    pub sense: Sense,
}

impl AffineMatrixConstraint {
    pub fn dim(&self) -> usize {
        self.constant.nrows()
    }

    pub fn eval(&self, values: &[f64]) -> Matrix {
        let mut out = self.constant.clone();
        for (var, m) in &self.coeffs {
            out += m * values[*var];
        }
        out
    }
}

/// Result of substituting values into one constraint.
#[derive(Debug, Clone)]
pub struct ConstraintValue {
    pub matrix: Matrix,
    /// Largest eigenvalue for negative-definite constraints, smallest for
    /// positive-definite ones.
    pub extreme_eigenvalue: f64,
    /// Distance to the definiteness boundary; positive when satisfied.
    pub margin: f64,
}

#[derive(Debug, Clone, Default)]
pub struct LmiProblem {
    pub var_names: Vec<String>,
    pub constraints: Vec<AffineMatrixConstraint>,
}

impl LmiProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_vars(&self) -> usize {
        self.var_names.len()
    }

    fn declare(&mut self, name: &str, rows: usize, cols: usize, kind: VarKind) -> MatrixVar {
        let count = match kind {
            VarKind::Symmetric => rows * (rows + 1) / 2,
            VarKind::Skew => rows * rows.saturating_sub(1) / 2,
            VarKind::Full => rows * cols,
        };
        let offset = self.num_vars();
        let var = MatrixVar {
            rows,
            cols,
            offset,
            count,
            kind,
        };
        let mut names = vec![String::new(); count];
        for i in 0..rows {
            for j in 0..cols {
                if let Some((v, _)) = var.entry(i, j) {
                    if names[v - offset].is_empty() {
                        names[v - offset] = format!("{name}[{i},{j}]");
                    }
                }
            }
        }
        self.var_names.extend(names);
        var
    }

    pub fn declare_symmetric(&mut self, name: &str, dim: usize) -> MatrixVar {
        self.declare(name, dim, dim, VarKind::Symmetric)
    }

    pub fn declare_skew(&mut self, name: &str, dim: usize) -> MatrixVar {
        self.declare(name, dim, dim, VarKind::Skew)
    }

    pub fn declare_full(&mut self, name: &str, rows: usize, cols: usize) -> MatrixVar {
        self.declare(name, rows, cols, VarKind::Full)
    }

    pub fn declare_scalar(&mut self, name: &str) -> MatrixVar {
        let v = self.declare(name, 1, 1, VarKind::Full);
        self.var_names[v.offset] = name.to_string();
        v
    }

    /// Adds `expr < 0` or `expr > 0`. The expression must be square and
    /// symmetric in every coefficient; it is stored symmetrized.
    pub fn add_constraint(&mut self, label: &str, expr: &AffineMatrix, sense: Sense) -> Result<()> {
        let (r, c) = expr.shape();
        if r != c || r == 0 {
            return Err(Error::IllFormedProblem(format!(
                "constraint '{label}' is {r}x{c}"
            )));
        }
        let tol = |m: &Matrix| 1e-9 * (1.0 + m.amax());
        let check = |m: &Matrix| -> Result<Matrix> {
            if asymmetry(m) > tol(m) {
                return Err(Error::IllFormedProblem(format!(
                    "constraint '{label}' has a non-symmetric coefficient"
                )));
            }
            Ok(sym_part(m))
        };
        let constant = check(expr.constant_part())?;
        let mut coeffs = BTreeMap::new();
        for (var, m) in expr.coeffs() {
            if *var >= self.num_vars() {
                return Err(Error::IllFormedProblem(format!(
                    "constraint '{label}' references undeclared variable {var}"
                )));
            }
            if m.amax() > 0.0 {
                coeffs.insert(*var, check(m)?);
            }
        }
        self.constraints.push(AffineMatrixConstraint {
            label: label.to_string(),
            constant,
            coeffs,
            sense,
        });
        Ok(())
    }

    pub fn evaluate_constraint(
        &self,
        constraint: &AffineMatrixConstraint,
        values: &[f64],
    ) -> Result<ConstraintValue> {
        if values.len() != self.num_vars() {
            return Err(Error::LengthMismatch {
                expected: self.num_vars(),
                got: values.len(),
            });
        }
        let matrix = constraint.eval(values);
        let (lo, hi) = sym_eig_range(&matrix);
        let (extreme_eigenvalue, margin) = match constraint.sense {
            Sense::NegativeDefinite => (hi, -hi),
            Sense::PositiveDefinite => (lo, lo),
        };
        Ok(ConstraintValue {
            matrix,
            extreme_eigenvalue,
            margin,
        })
    }

    /// Smallest definiteness margin over all constraints.
    pub fn min_margin(&self, values: &[f64]) -> Result<f64> {
        let mut worst = f64::INFINITY;
        for c in &self.constraints {
            worst = worst.min(self.evaluate_constraint(c, values)?.margin);
        }
        Ok(worst)
    }

    /// Plain-text dump of the problem: a header line, one `var` line per
    /// decision variable, then per constraint a `constraint` line followed
    /// by upper-triangle coordinate triplets for the constant (`const`) and
    /// each coefficient (`coef <var>`).
    pub fn write_debug_dump(&self, mut w: impl Write) -> Result<()> {
        let mut s = String::new();
        let _ = writeln!(s, "lmi-problem v1");
        let _ = writeln!(s, "vars {}", self.num_vars());
        for (k, name) in self.var_names.iter().enumerate() {
            let _ = writeln!(s, "var {k} {name}");
        }
        let _ = writeln!(s, "constraints {}", self.constraints.len());
        for (k, c) in self.constraints.iter().enumerate() {
            let sense = match c.sense {
                Sense::NegativeDefinite => "NEGATIVE_DEFINITE",
                Sense::PositiveDefinite => "POSITIVE_DEFINITE",
            };
            let _ = writeln!(s, "constraint {k} {} {sense} {}", c.dim(), c.label);
            triplets(&mut s, "const", &c.constant);
            for (var, m) in &c.coeffs {
                triplets(&mut s, &format!("coef {var}"), m);
            }
        }
        let _ = writeln!(s, "end");
        w.write_all(s.as_bytes())?;
        Ok(())
    }
}

fn triplets(s: &mut String, tag: &str, m: &Matrix) {
    for i in 0..m.nrows() {
        for j in i..m.ncols() {
            let v = m[(i, j)];
            if v != 0.0 {
                let _ = writeln!(s, "{tag} {i} {j} {v:e}");
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_block_shares_off_diagonal() {
        let mut p = LmiProblem::new();
        let s = p.declare_symmetric("S", 2);
        assert_eq!(p.num_vars(), 3);
        assert_eq!(s.entry(0, 1), s.entry(1, 0));
        let e = s.expr();
        let m = e.eval(&[1.0, 2.0, 3.0]);
        assert_eq!(m, Matrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 3.0]));
    }

    #[test]
    fn symmetric_packing_is_a_bijection() {
        for d in 1..7 {
            let mut p = LmiProblem::new();
            let s = p.declare_symmetric("S", d);
            let mut seen = vec![false; s.count];
            for i in 0..d {
                for j in i..d {
                    let (v, _) = s.entry(i, j).unwrap();
                    assert!(!seen[v]);
                    seen[v] = true;
                }
            }
            assert!(seen.iter().all(|x| *x));
        }
    }

    #[test]
    fn skew_blocks() {
        let mut p = LmiProblem::new();
        let k = p.declare_skew("K", 2);
        assert_eq!(p.num_vars(), 1);
        assert_eq!(k.entry(0, 0), None);
        assert_eq!(k.value(&[4.0]), Matrix::from_row_slice(2, 2, &[0.0, 4.0, -4.0, 0.0]));
        let k1 = p.declare_skew("K1", 1);
        assert_eq!(k1.count, 0);
        assert_eq!(p.num_vars(), 1);
    }

    #[test]
    fn full_and_scalar_counts() {
        let mut p = LmiProblem::new();
        p.declare_full("T", 2, 3);
        p.declare_scalar("eta");
        assert_eq!(p.num_vars(), 7);
        assert_eq!(p.var_names[6], "eta");
    }

    #[test]
    fn assign_round_trips_value() {
        let mut p = LmiProblem::new();
        let s = p.declare_symmetric("S", 3);
        let k = p.declare_skew("K", 3);
        let mut vals = vec![0.0; p.num_vars()];
        let sm = Matrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 5.0, 3.0, 5.0, 6.0]);
        let km = Matrix::from_row_slice(3, 3, &[0.0, 1.0, 2.0, -1.0, 0.0, 3.0, -2.0, -3.0, 0.0]);
        s.assign(&sm, &mut vals);
        k.assign(&km, &mut vals);
        assert_eq!(s.value(&vals), sm);
        assert_eq!(k.value(&vals), km);
    }

    #[test]
    fn evaluate_constraint_basics() {
        let mut p = LmiProblem::new();
        let x = p.declare_scalar("x");
        let e = &x.expr() + &Matrix::from_element(1, 1, -1.0);
        p.add_constraint("x<1", &e, Sense::NegativeDefinite).unwrap();
        let c = &p.constraints[0];
        let v = p.evaluate_constraint(c, &[0.0]).unwrap();
        assert_eq!(v.matrix[(0, 0)], -1.0);
        assert_eq!(v.margin, 1.0);
        let v = p.evaluate_constraint(c, &[1.0]).unwrap();
        assert_eq!(v.extreme_eigenvalue, 0.0);
        assert!(matches!(
            p.evaluate_constraint(c, &[]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn diag_constraint_exact_arithmetic() {
        let mut p = LmiProblem::new();
        let x = p.declare_scalar("x");
        let d = Matrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 3.0]));
        let e = &(&d * &AffineMatrix::block(&[vec![x.expr(), AffineMatrix::zeros(1, 1)],
            vec![AffineMatrix::zeros(1, 1), x.expr()]])) + &Matrix::identity(2, 2);
        p.add_constraint("diag", &e, Sense::PositiveDefinite).unwrap();
        let v = p.evaluate_constraint(&p.constraints[0], &[1.0]).unwrap();
        assert_eq!(v.matrix, Matrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 4.0]));
        assert_eq!(v.extreme_eigenvalue, 3.0);
    }

    #[test]
    fn rejects_non_symmetric_and_non_square() {
        let mut p = LmiProblem::new();
        let t = p.declare_full("T", 2, 2);
        assert!(p.add_constraint("T", &t.expr(), Sense::NegativeDefinite).is_err());
        let r = p.declare_full("R", 1, 2);
        assert!(p.add_constraint("R", &r.expr(), Sense::NegativeDefinite).is_err());
        assert!(p.add_constraint("T+T'", &t.expr().sym(), Sense::NegativeDefinite).is_ok());
    }

    #[test]
    fn debug_dump_lists_everything() {
        let mut p = LmiProblem::new();
        let x = p.declare_scalar("x");
        p.add_constraint("c", &(&x.expr() + &Matrix::from_element(1, 1, -1.0)), Sense::NegativeDefinite)
            .unwrap();
        let mut buf = Vec::new();
        p.write_debug_dump(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("lmi-problem v1\nvars 1\nvar 0 x\n"));
        assert!(text.contains("constraint 0 1 NEGATIVE_DEFINITE c"));
        assert!(text.contains("const 0 0 -1e0"));
        assert!(text.contains("coef 0 0 0 1e0"));
        assert!(text.ends_with("end\n"));
    }
}

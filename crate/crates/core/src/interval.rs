//! Interval-uncertain plants and their norm-bounded factorization.
//!
//! An interval matrix `[lower, upper]` is rewritten as
//! `A0 + M_A F_A R_A` with `F_A` diagonal and `|F_A| <= 1`, which is the form
//! the synthesis inequalities consume.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{ensure_finite, Matrix};

/// Vertex enumeration refuses more than this many uncertain coordinates.
pub const MAX_VERTEX_COORDS: usize = 24;

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalMatrix {
    lower: Matrix,
    upper: Matrix,
}

impl IntervalMatrix {
    pub fn new(lower: Matrix, upper: Matrix) -> Result<Self> {
        if lower.shape() != upper.shape() {
            return Err(Error::ShapeMismatch(format!(
                "interval bounds {:?} vs {:?}",
                lower.shape(),
                upper.shape()
            )));
        }
        ensure_finite(&lower)?;
        ensure_finite(&upper)?;
        for j in 0..lower.ncols() {
            for i in 0..lower.nrows() {
                if lower[(i, j)] > upper[(i, j)] {
                    return Err(Error::BoundViolation {
                        row: i,
                        col: j,
                        lower: lower[(i, j)],
                        upper: upper[(i, j)],
                    });
                }
            }
        }
        Ok(Self { lower, upper })
    }

    /// Degenerate interval with zero width.
    pub fn point(m: Matrix) -> Result<Self> {
        Self::new(m.clone(), m)
    }

    pub fn lower(&self) -> &Matrix {
        &self.lower
    }

    pub fn upper(&self) -> &Matrix {
        &self.upper
    }

    pub fn shape(&self) -> (usize, usize) {
        self.lower.shape()
    }

    pub fn contains(&self, m: &Matrix, tol: f64) -> bool {
        m.shape() == self.shape()
            && m.iter()
                .zip(self.lower.iter().zip(self.upper.iter()))
                .all(|(v, (lo, hi))| *v >= lo - tol && *v <= hi + tol)
    }
}

/// `D^alpha x = A x + B u`, `y = C x` with `A`, `B` interval-valued.
#[derive(Debug, Clone)]
pub struct UncertainFoltiSystem {
    pub alpha: f64,
    pub a: IntervalMatrix,
    pub b: IntervalMatrix,
    pub c: Matrix,
}

impl UncertainFoltiSystem {
    pub fn new(alpha: f64, a: IntervalMatrix, b: IntervalMatrix, c: Matrix) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 2.0) {
            return Err(Error::AlphaOutOfRange {
                alpha,
                range: "(0, 2)",
            });
        }
        let (n, n2) = a.shape();
        if n == 0 || n != n2 {
            return Err(Error::ShapeMismatch(format!("A is {n}x{n2}")));
        }
        let (bn, l) = b.shape();
        if bn != n || l == 0 {
            return Err(Error::ShapeMismatch(format!("B is {bn}x{l}, n = {n}")));
        }
        if c.ncols() != n || c.nrows() == 0 {
            return Err(Error::ShapeMismatch(format!(
                "C is {}x{}, n = {n}",
                c.nrows(),
                c.ncols()
            )));
        }
        ensure_finite(&c)?;
        Ok(Self { alpha, a, b, c })
    }

    pub fn n(&self) -> usize {
        self.a.shape().0
    }

    pub fn l(&self) -> usize {
        self.b.shape().1
    }

    pub fn m(&self) -> usize {
        self.c.nrows()
    }
}

/// Midpoint/radius data plus the `M`, `R` factors of both interval matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyFactors {
    pub a0: Matrix,
    pub delta_a: Matrix,
    /// `n x n^2`
    pub m_a: Matrix,
    /// `n^2 x n`
    pub r_a: Matrix,
    pub b0: Matrix,
    pub delta_b: Matrix,
    /// `n x nl`
    pub m_b: Matrix,
    /// `nl x l`
    pub r_b: Matrix,
}

impl UncertaintyFactors {
    pub fn n(&self) -> usize {
        self.a0.nrows()
    }

    pub fn l(&self) -> usize {
        self.b0.ncols()
    }

    /// True when both radius matrices vanish.
    pub fn is_certain(&self) -> bool {
        self.delta_a.amax() == 0.0 && self.delta_b.amax() == 0.0
    }

    fn uncertain_count(&self) -> usize {
        self.delta_a.iter().chain(self.delta_b.iter()).filter(|&&v| v > 0.0).count()
    }
}

/// Diagonals of `F_A` (length `n^2`) and `F_B` (length `nl`), each entry in
/// `[-1, 1]`, indexed row-major by `(i, j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyRealization {
    pub f_a: Vec<f64>,
    pub f_b: Vec<f64>,
}

impl UncertaintyRealization {
    pub fn center(f: &UncertaintyFactors) -> Self {
        let n = f.n();
        Self {
            f_a: vec![0.0; n * n],
            f_b: vec![0.0; n * f.l()],
        }
    }
}

/// Factor each `k`-th pair `(i, j)` of `delta` as `sqrt(g) e_i` times
/// `sqrt(g) e_j^T`.
fn factor(delta: &Matrix) -> (Matrix, Matrix) {
    let (rows, cols) = delta.shape();
    let mut m = Matrix::zeros(rows, rows * cols);
    let mut r = Matrix::zeros(rows * cols, cols);
    for i in 0..rows {
        for j in 0..cols {
            let k = i * cols + j;
            let s = delta[(i, j)].sqrt();
            m[(i, k)] = s;
            r[(k, j)] = s;
        }
    }
    (m, r)
}

pub fn decompose(sys: &UncertainFoltiSystem) -> UncertaintyFactors {
    let half = |a: &Matrix, b: &Matrix| (a + b) * 0.5;
    let a0 = half(sys.a.lower(), sys.a.upper());
    let delta_a = (sys.a.upper() - sys.a.lower()) * 0.5;
    let b0 = half(sys.b.lower(), sys.b.upper());
    let delta_b = (sys.b.upper() - sys.b.lower()) * 0.5;
    let (m_a, r_a) = factor(&delta_a);
    let (m_b, r_b) = factor(&delta_b);
    UncertaintyFactors {
        a0,
        delta_a,
        m_a,
        r_a,
        b0,
        delta_b,
        m_b,
        r_b,
    }
}

fn check_unit_box(values: &[f64]) -> Result<()> {
    match values.iter().find(|v| !(v.abs() <= 1.0)) {
        Some(&value) => Err(Error::OutOfUnitBox { value }),
        None => Ok(()),
    }
}

fn scaled_product(m: &Matrix, diag: &[f64], r: &Matrix) -> Matrix {
    let mut scaled = r.clone();
    for (k, d) in diag.iter().enumerate() {
        scaled.row_mut(k).scale_mut(*d);
    }
    m * scaled
}

/// `(A0 + M_A F_A R_A, B0 + M_B F_B R_B)`.
pub fn realize(f: &UncertaintyFactors, u: &UncertaintyRealization) -> Result<(Matrix, Matrix)> {
    if u.f_a.len() != f.m_a.ncols() || u.f_b.len() != f.m_b.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "realization lengths ({}, {}) vs factor widths ({}, {})",
            u.f_a.len(),
            u.f_b.len(),
            f.m_a.ncols(),
            f.m_b.ncols()
        )));
    }
    check_unit_box(&u.f_a)?;
    check_unit_box(&u.f_b)?;
    let a = &f.a0 + scaled_product(&f.m_a, &u.f_a, &f.r_a);
    let b = &f.b0 + scaled_product(&f.m_b, &u.f_b, &f.r_b);
    Ok((a, b))
}

/// Lazily enumerates every sign pattern over the coordinates with strictly
/// positive radius. Zero-radius coordinates stay at 0.
#[derive(Debug, Clone)]
pub struct VertexIter {
    a_len: usize,
    b_len: usize,
    active: Vec<usize>,
    next: u64,
    total: u64,
}

impl VertexIter {
    pub fn len_total(&self) -> u64 {
        self.total
    }

    /// Vertex number `code`: bit `k` set puts the `k`-th uncertain
    /// coordinate at `+1`, clear at `-1`.
    pub fn vertex(&self, code: u64) -> UncertaintyRealization {
        let mut flat = vec![0.0; self.a_len + self.b_len];
        for (bit, &pos) in self.active.iter().enumerate() {
            flat[pos] = if code >> bit & 1 == 1 { 1.0 } else { -1.0 };
        }
        let f_b = flat.split_off(self.a_len);
        UncertaintyRealization { f_a: flat, f_b }
    }
}

impl Iterator for VertexIter {
    type Item = UncertaintyRealization;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.total {
            return None;
        }
        let code = self.next;
        self.next += 1;
        Some(self.vertex(code))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.total - self.next) as usize;
        (left, Some(left))
    }
}

impl ExactSizeIterator for VertexIter {}

pub fn enumerate_vertices(f: &UncertaintyFactors) -> Result<VertexIter> {
    let count = f.uncertain_count();
    if count > MAX_VERTEX_COORDS {
        return Err(Error::TooManyVertices { count });
    }
    let active = f
        .delta_a
        .transpose()
        .iter()
        .chain(f.delta_b.transpose().iter())
        .enumerate()
        .filter(|(_, v)| **v > 0.0)
        .map(|(k, _)| k)
        .collect();
    Ok(VertexIter {
        a_len: f.delta_a.len(),
        b_len: f.delta_b.len(),
        active,
        next: 0,
        total: 1u64 << count,
    })
}

/// `count` realizations with i.i.d. uniform entries on `[-1, 1]`.
pub fn sample_uniform(
    f: &UncertaintyFactors,
    count: usize,
    seed: u64,
) -> Result<Vec<UncertaintyRealization>> {
    if count == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (na, nb) = (f.m_a.ncols(), f.m_b.ncols());
    Ok((0..count)
        .map(|_| UncertaintyRealization {
            f_a: (0..na).map(|_| rng.random_range(-1.0..=1.0)).collect(),
            f_b: (0..nb).map(|_| rng.random_range(-1.0..=1.0)).collect(),
        })
        .collect())
}

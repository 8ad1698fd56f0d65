//! Time-domain simulation of `D^alpha x = A x` (Caputo, `0 < alpha < 2`)
//! by the Grünwald-Letnikov scheme, and the Mittag-Leffler function used
//! to check it.
//!
//! The scheme runs on `y = x - x0`, for which the Grünwald-Letnikov
//! derivative coincides with the Caputo derivative of `x` (taking
//! `x'(0) = 0` when `alpha > 1`):
//!
//! ```text
//! y_k = (I - h^alpha A)^-1 (h^alpha A x0 - sum_{j=1..k} w_j y_{k-j})
//! ```
//!
//! with the full memory of past states.

use std::f64::consts::PI;
use std::io::Write;

use log::debug;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{checked_inverse, eig_general, ensure_finite, ensure_square, Matrix};
use crate::stability::check_alpha;

/// Largest `|z|` accepted by [`mittag_leffler`].
pub const ML_MAX_ARG: f64 = 50.0;
/// `h^alpha * rho(A)` above this does not resolve the fastest mode.
pub const MAX_STEP_STIFFNESS: f64 = 10.0;
/// Full-memory cost grows quadratically; beyond this use a coarser step.
pub const MAX_STEPS: usize = 200_000;

const STEP_MAX_COND: f64 = 1e12;

/// Lanczos coefficients for `g = 7`, nine terms.
const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Gamma function, Lanczos approximation with reflection for `x < 1/2`.
pub fn gamma(x: f64) -> f64 {
    if x < 0.5 {
        // poles at non-positive integers come out as +-inf or nan
        return PI / ((PI * x).sin() * gamma(1.0 - x));
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    (2.0 * PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * acc
}

/// First `count` coefficients of `(1 - z)^alpha`.
pub fn gl_weights(alpha: f64, count: usize) -> Vec<f64> {
    let mut w = Vec::with_capacity(count);
    let mut prev = 1.0;
    for j in 0..count {
        if j > 0 {
            prev *= 1.0 - (alpha + 1.0) / j as f64;
        }
        w.push(prev);
    }
    w
}

/// `E_alpha(z) = sum_k z^k / Gamma(alpha k + 1)` for real `z`, `|z| <= 50`.
///
/// The power series is summed with Neumaier compensation. For negative
/// arguments where the series would cancel badly the value comes from the
/// Laplace-type integral representation instead.
pub fn mittag_leffler(alpha: f64, z: f64) -> Result<f64> {
    check_alpha(alpha, "(0, 2)")?;
    if !z.is_finite() || z.abs() > ML_MAX_ARG {
        return Err(Error::DomainTooLarge { z, max: ML_MAX_ARG });
    }
    if alpha == 1.0 {
        return Ok(z.exp());
    }
    // the largest series term is about exp(|z|^(1/alpha))
    let value = if z < 0.0 && (-z).powf(1.0 / alpha) > 12.0 {
        ml_negative_integral(alpha, -z)
    } else {
        ml_series(alpha, z)
    };
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::DomainTooLarge { z, max: ML_MAX_ARG })
    }
}

fn ml_series(alpha: f64, z: f64) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    let mut k = 0usize;
    loop {
        let g = gamma(alpha * k as f64 + 1.0);
        let term = if k == 0 { 1.0 } else { z.powi(k as i32) / g };
        let t = sum + term;
        if sum.abs() >= term.abs() {
            comp += (sum - t) + term;
        } else {
            comp += (term - t) + sum;
        }
        sum = t;
        k += 1;
        // terms keep growing while alpha k is below |z|^(1/alpha)
        let past_peak = alpha * k as f64 > z.abs().powf(1.0 / alpha) + 1.0;
        if (past_peak && term.abs() < 1e-16 * (sum + comp).abs()) || !g.is_finite() || k > 2000 {
            break;
        }
    }
    sum + comp
}

/// `E_alpha(-x)` with `t = x^(1/alpha)`:
///
/// ```text
/// E_alpha(-t^alpha) = int_0^inf e^{-r t} K(r) dr  (+ oscillating term, alpha > 1)
/// K(r) = sin(alpha pi) / pi * r^(alpha-1) / (r^(2 alpha) + 2 r^alpha cos(alpha pi) + 1)
/// ```
///
/// integrated in `v = ln r`.
fn ml_negative_integral(alpha: f64, x: f64) -> f64 {
    let t = x.powf(1.0 / alpha);
    let (s, c) = (alpha * PI).sin_cos();
    let f = |v: f64| {
        let ra = (alpha * v).exp();
        s / PI * ra * (-t * v.exp()).exp() / (ra * ra + 2.0 * ra * c + 1.0)
    };
    let lo = -40.0 / alpha;
    let hi = (750.0 / t).ln();
    // the kernel peaks near r^alpha = -cos(alpha pi), sharply when alpha ~ 1
    let peak = if c < 0.0 { (-c).ln() / alpha } else { 0.0 };
    let mut cuts = vec![lo];
    for p in [peak - 1.0, peak, peak + 1.0] {
        if p > lo && p < hi {
            cuts.push(p);
        }
    }
    cuts.push(hi);
    let mut total = 0.0;
    for w in cuts.windows(2) {
        total += quadrature::double_exponential::integrate(f, w[0], w[1], 1e-17).integral;
    }
    if alpha > 1.0 {
        let (sp, cp) = (PI / alpha).sin_cos();
        total += 2.0 / alpha * (t * cp).exp() * (t * sp).cos();
    }
    total
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub alpha: f64,
    pub step_h: f64,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn final_state(&self) -> &[f64] {
        self.states.last().map_or(&[], Vec::as_slice)
    }

    /// `|x(t_end)| / |x(0)|` in the Euclidean norm.
    pub fn decay_ratio(&self) -> f64 {
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        norm(self.final_state()) / norm(&self.states[0])
    }

    /// CSV with header `t,x1,...,xN`, 9 significant digits, LF endings.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        let n = self.states.first().map_or(0, Vec::len);
        let mut header = String::from("t");
        for i in 1..=n {
            header.push_str(&format!(",x{i}"));
        }
        writeln!(w, "{header}")?;
        for (t, x) in self.times.iter().zip(&self.states) {
            let mut line = fmt_sig(*t, 9);
            for v in x {
                line.push(',');
                line.push_str(&fmt_sig(*v, 9));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// `printf("%.*g")`-style formatting with `digits` significant digits.
pub fn fmt_sig(v: f64, digits: usize) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let sci = format!("{:.*e}", digits - 1, v);
    let (mant, exp) = sci.split_once('e').expect("scientific format has an exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -5 || exp >= digits as i32 {
        let mant = trim_zeros(mant);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mant}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{v:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Simulates `D^alpha x = a_cl x`, `x(0) = x0` on `[0, t_end]` with step `h`.
pub fn simulate(a_cl: &Matrix, alpha: f64, x0: &[f64], t_end: f64, h: f64) -> Result<Trajectory> {
    check_alpha(alpha, "(0, 2)")?;
    let n = ensure_square(a_cl)?;
    ensure_finite(a_cl)?;
    if x0.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: x0.len(),
        });
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(format!("step h = {h} must be positive")));
    }
    if !(t_end >= h && t_end.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "t_end = {t_end} must be at least one step h = {h}"
        )));
    }
    let steps = (t_end / h + 1e-9).floor() as usize;
    if steps > MAX_STEPS {
        return Err(Error::InvalidArgument(format!(
            "{steps} steps exceed the limit of {MAX_STEPS}"
        )));
    }
    let ha = h.powf(alpha);
    let rho = eig_general(a_cl)?.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if ha * rho > MAX_STEP_STIFFNESS {
        return Err(Error::StepTooLarge(format!(
            "h^alpha * spectral radius = {:.3} exceeds {MAX_STEP_STIFFNESS}",
            ha * rho
        )));
    }
    let step = Matrix::identity(n, n) - a_cl * ha;
    let step_inv = checked_inverse(&step, STEP_MAX_COND).map_err(|_| Error::SingularStep)?;

    let w = gl_weights(alpha, steps + 1);
    let x0v = DVector::from_column_slice(x0);
    let forcing = a_cl * &x0v * ha;
    let mut ys: Vec<DVector<f64>> = Vec::with_capacity(steps + 1);
    ys.push(DVector::zeros(n));
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    times.push(0.0);
    states.push(x0.to_vec());
    for k in 1..=steps {
        let mut rhs = forcing.clone();
        for j in 1..=k {
            rhs.axpy(-w[j], &ys[k - j], 1.0);
        }
        let y = &step_inv * rhs;
        let x = &y + &x0v;
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite);
        }
        times.push(k as f64 * h);
        states.push(x.as_slice().to_vec());
        ys.push(y);
    }
    debug!("simulated {steps} steps, h^alpha rho = {:.3}", ha * rho);
    Ok(Trajectory {
        alpha,
        step_h: h,
        times,
        states,
    })
}

//! Near-diagonal Pade approximants of truncated power series, and the real
//! denominator roots used as curve-singularity estimates.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// Default imaginary tolerance separating real denominator roots from
/// conjugate pairs perturbed by rounding.
pub const DEFAULT_TOL_IMAG: f64 = 1e-6;

/// Rational approximant u(alpha) / l(alpha) with l_0 = 1 and near-diagonal
/// degrees: N_n + N_d = N, N_n >= N_d, N_n - N_d <= 1.
#[derive(Debug, Clone)]
pub struct PadeApproximant {
    numerator: Vec<Complex64>,
    denominator: Vec<Complex64>,
}

impl PadeApproximant {
    /// Build directly from coefficient vectors; used by tests and the
    /// staircase fallback. `denominator[0]` must be 1.
    pub fn from_parts(numerator: Vec<Complex64>, denominator: Vec<Complex64>) -> Self {
        debug_assert!((denominator[0] - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        Self {
            numerator,
            denominator,
        }
    }

    pub fn numerator(&self) -> &[Complex64] {
        &self.numerator
    }

    pub fn denominator(&self) -> &[Complex64] {
        &self.denominator
    }

    /// (N_n, N_d) as constructed.
    pub fn degrees(&self) -> (usize, usize) {
        (self.numerator.len() - 1, self.denominator.len() - 1)
    }
}

/// Horner evaluation of a truncated power series at a real argument.
pub fn series_eval(c: &[Complex64], alpha: f64) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for &ci in c.iter().rev() {
        acc = acc * alpha + ci;
    }
    acc
}

/// Construct the near-diagonal Pade approximant matching `c[0..=N]`.
///
/// Degrees are N_n = ceil(N/2), N_d = floor(N/2). Rank-deficient but
/// consistent matching systems resolve to the minimum-norm denominator;
/// inconsistent systems report a degenerate table so the caller can retry
/// on a shortened series.
pub fn pade_from_series(c: &[Complex64]) -> Result<PadeApproximant> {
    let n = c.len().checked_sub(1).filter(|&n| n >= 1).ok_or_else(|| {
        Error::DegeneratePade("need at least two series coefficients".into())
    })?;
    let n_num = n.div_ceil(2);
    let n_den = n / 2;

    let mut denominator = vec![Complex64::new(0.0, 0.0); n_den + 1];
    denominator[0] = Complex64::new(1.0, 0.0);

    if n_den > 0 {
        // rows m = n_num+1 ..= n: sum_j l_j c_{m-j} = -c_m
        let mut a = DMatrix::zeros(n_den, n_den);
        let mut b = DVector::zeros(n_den);
        for (row, m) in (n_num + 1..=n).enumerate() {
            for j in 1..=n_den {
                a[(row, j - 1)] = c[m - j];
            }
            b[row] = -c[m];
        }
        let scale = a.iter().map(|v| v.norm()).fold(0.0f64, f64::max).max(
            b.iter().map(|v| v.norm()).fold(0.0f64, f64::max),
        );
        if scale == 0.0 {
            // constant series: denominator 1
        } else {
            let svd = a.clone().svd(true, true);
            let sol = svd
                .solve(&b, 1e-13 * scale)
                .map_err(|e| Error::DegeneratePade(e.to_string()))?;
            let resid = (&a * &sol - &b).norm();
            if !resid.is_finite() || resid > 1e-8 * scale * (1.0 + sol.norm()) {
                return Err(Error::DegeneratePade(format!(
                    "matching system inconsistent (residual {resid:.3e})"
                )));
            }
            for j in 1..=n_den {
                denominator[j] = sol[j - 1];
            }
        }
    }

    let mut numerator = vec![Complex64::new(0.0, 0.0); n_num + 1];
    for (m, num) in numerator.iter_mut().enumerate() {
        let mut acc = Complex64::new(0.0, 0.0);
        for j in 0..=m.min(n_den) {
            acc += denominator[j] * c[m - j];
        }
        *num = acc;
    }

    Ok(PadeApproximant {
        numerator,
        denominator,
    })
}

/// [`pade_from_series`] with the staircase fallback: on a degenerate table
/// the series is shortened by two coefficients and retried, down to N = 2.
pub fn pade_from_series_with_fallback(c: &[Complex64]) -> Result<PadeApproximant> {
    let mut len = c.len();
    loop {
        match pade_from_series(&c[..len]) {
            Ok(p) => return Ok(p),
            Err(e) => {
                if len < 5 {
                    return Err(e);
                }
                len -= 2;
            }
        }
    }
}

/// Evaluate the approximant at a real argument.
pub fn pade_eval(p: &PadeApproximant, alpha: f64) -> Result<Complex64> {
    let den = series_eval(&p.denominator, alpha);
    if den.norm() < 1e-14 {
        return Err(Error::PoleEvaluation(alpha));
    }
    Ok(series_eval(&p.numerator, alpha) / den)
}

/// All real roots of the denominator polynomial, sorted by magnitude.
///
/// Roots come from the eigenvalues of the companion matrix; a root counts
/// as real when |imag| <= tol_imag * (1 + |real|).
pub fn denominator_real_roots(p: &PadeApproximant, tol_imag: f64) -> Result<Vec<f64>> {
    let coeffs = &p.denominator;
    let max_mag = coeffs.iter().map(|v| v.norm()).fold(0.0f64, f64::max);
    if max_mag == 0.0 {
        return Err(Error::DegeneratePade("zero denominator polynomial".into()));
    }
    // effective degree after dropping trailing rounding-level coefficients
    let mut degree = coeffs.len() - 1;
    while degree > 0 && coeffs[degree].norm() <= 1e-14 * max_mag {
        degree -= 1;
    }
    if degree == 0 {
        return Ok(Vec::new());
    }
    let lead = coeffs[degree];
    let mut companion = DMatrix::zeros(degree, degree);
    for i in 1..degree {
        companion[(i, i - 1)] = Complex64::new(1.0, 0.0);
    }
    for i in 0..degree {
        companion[(i, degree - 1)] = -coeffs[i] / lead;
    }
    let schur = companion
        .try_schur(1e-12, 20_000)
        .ok_or_else(|| Error::DegeneratePade("companion Schur iteration failed".into()))?;
    let eigs = schur
        .eigenvalues()
        .ok_or_else(|| Error::DegeneratePade("companion eigenvalues unavailable".into()))?;
    let mut roots: Vec<f64> = eigs
        .iter()
        .filter(|z| z.im.abs() <= tol_imag * (1.0 + z.re.abs()))
        .map(|z| z.re)
        .collect();
    roots.sort_by(|a, b| a.abs().partial_cmp(&b.abs()).unwrap());
    Ok(roots)
}

/// Smallest-magnitude real denominator root across a set of approximants
/// whose sign matches the local direction of travel; `None` when no such
/// root exists.
pub fn min_pole(pades: &[PadeApproximant], travel_sign: f64) -> Option<f64> {
    min_pole_impl(pades, travel_sign, None)
}

/// [`min_pole`] that additionally drops near-cancelling pole-zero pairs:
/// a denominator root where the numerator also nearly vanishes is a
/// rounding artifact of the table, not a singularity of the function.
pub fn min_pole_filtered(
    pades: &[PadeApproximant],
    travel_sign: f64,
    residue_tol: f64,
) -> Option<f64> {
    min_pole_impl(pades, travel_sign, Some(residue_tol))
}

fn min_pole_impl(
    pades: &[PadeApproximant],
    travel_sign: f64,
    residue_tol: Option<f64>,
) -> Option<f64> {
    debug_assert!(travel_sign != 0.0);
    let mut best: Option<f64> = None;
    for p in pades {
        let Ok(roots) = denominator_real_roots(p, DEFAULT_TOL_IMAG) else {
            continue;
        };
        for zeta in roots {
            if zeta == 0.0 || zeta.signum() != travel_sign.signum() {
                continue;
            }
            if let Some(tol) = residue_tol {
                let num_at = series_eval(&p.numerator, zeta).norm();
                let num_scale: f64 = p
                    .numerator
                    .iter()
                    .enumerate()
                    .map(|(i, c)| c.norm() * zeta.abs().powi(i as i32))
                    .sum::<f64>()
                    .max(1e-300);
                if num_at / num_scale <= tol {
                    continue;
                }
            }
            if best.map(|b| zeta.abs() < b.abs()).unwrap_or(true) {
                best = Some(zeta);
            }
        }
    }
    best
}

//! Holomorphic embedding of the parameterized power flow equations.
//!
//! At a point on the curve the injections are re-based so the local series
//! parameter starts at zero: P_k(a) = P_k0 + K_pk a and Q_k(a) = Q_k0 + K_qk a
//! for PQ buses, |V_k(a)|^2 = Vm_k0^2 + K_vk a for PV and slack buses, with
//! the K entries taken from the active curve direction. Every bus voltage
//! V_k(a), its reciprocal W_k(a) and the PV reactive injections Q_k(a) are
//! holomorphic near a = 0, and their power series coefficients satisfy one
//! real linear system per degree that shares a single factorization.

use crate::case_model::{AdmittanceMatrix, BusKind};
use crate::curve_design::CurveDirection;
use crate::error::{Error, Result};
use crate::quadratic_form::{QuadraticSystem, StateVector};
use nalgebra::DMatrix;
use num_complex::Complex64;

/// Default truncation degree of the power series.
pub const DEFAULT_I_MAX: usize = 15;

/// Configurable truncation bounds; past 60 the coefficients deplete double
/// precision.
pub const I_MAX_RANGE: std::ops::RangeInclusive<usize> = 4..=60;

/// Voltages below this magnitude make W = 1/V ill-defined.
pub const VOLTAGE_FLOOR: f64 = 1e-6;

/// Injection bases and curve-direction entries for one embedding.
#[derive(Debug, Clone)]
pub struct EmbeddingCoefficients {
    /// Active power direction entry per bus (0 for the slack).
    pub k_p: Vec<f64>,
    /// Reactive power direction entry per bus (PQ buses).
    pub k_q: Vec<f64>,
    /// Magnitude-squared direction entry per bus (PV buses).
    pub k_v: Vec<f64>,
    /// Magnitude-squared direction entry of the slack bus.
    pub k_s: f64,
    /// Realized active injection per bus at the base point.
    pub p0: Vec<f64>,
    /// Realized reactive injection per bus at the base point.
    pub q0: Vec<f64>,
    /// Complex bus voltages at the base point.
    pub base_v: Vec<Complex64>,
    pub base_state: StateVector,
}

/// Power series coefficients of all embedded variables, degrees 0..=i_max.
#[derive(Debug, Clone)]
pub struct SeriesState {
    v: Vec<Vec<Complex64>>,
    /// Reciprocal voltage series; empty for the slack bus.
    w: Vec<Vec<Complex64>>,
    /// Reactive injection series; empty for non-PV buses.
    q: Vec<Vec<f64>>,
    i_max: usize,
}

impl SeriesState {
    pub fn i_max(&self) -> usize {
        self.i_max
    }

    pub fn n_bus(&self) -> usize {
        self.v.len()
    }

    pub fn v_series(&self, bus: usize) -> &[Complex64] {
        &self.v[bus]
    }

    pub fn w_series(&self, bus: usize) -> &[Complex64] {
        &self.w[bus]
    }

    pub fn q_series(&self, bus: usize) -> &[f64] {
        &self.q[bus]
    }

    /// Every tracked series as complex coefficient vectors: voltages, then
    /// reciprocals, then PV reactive injections.
    pub fn all_series(&self) -> Vec<Vec<Complex64>> {
        let mut out = Vec::new();
        for s in &self.v {
            out.push(s.clone());
        }
        for s in &self.w {
            if !s.is_empty() {
                out.push(s.clone());
            }
        }
        for s in &self.q {
            if !s.is_empty() {
                out.push(s.iter().map(|&x| Complex64::new(x, 0.0)).collect());
            }
        }
        out
    }

    /// Dump coefficients as CSV rows (series, bus, degree, re, im).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("series,bus,degree,re,im\n");
        for (k, s) in self.v.iter().enumerate() {
            for (i, c) in s.iter().enumerate() {
                out.push_str(&format!("v,{},{},{},{}\n", k + 1, i, c.re, c.im));
            }
        }
        for (k, s) in self.w.iter().enumerate() {
            for (i, c) in s.iter().enumerate() {
                out.push_str(&format!("w,{},{},{},{}\n", k + 1, i, c.re, c.im));
            }
        }
        for (k, s) in self.q.iter().enumerate() {
            for (i, c) in s.iter().enumerate() {
                out.push_str(&format!("q,{},{},{},0\n", k + 1, i, c));
            }
        }
        out
    }
}

/// Voltages and PV reactive injections at one local parameter value.
#[derive(Debug, Clone)]
pub struct SeriesEvaluation {
    pub v: Vec<Complex64>,
    /// Per bus; 0.0 where the bus has no reactive series.
    pub q: Vec<f64>,
}

/// Complex injection S_k = V_k (Y V)*_k realized at a voltage profile.
pub fn realized_injections(y: &AdmittanceMatrix, v: &[Complex64]) -> Vec<Complex64> {
    let iv = y.mul_vec(v);
    v.iter().zip(iv).map(|(vk, ik)| vk * ik.conj()).collect()
}

/// Real dimension of the per-degree linear system: 4 n_bus + n_gen - 3.
pub fn embedding_dimension(sys: &QuadraticSystem) -> usize {
    let n_bus = sys.n_bus();
    let n_gen = (0..n_bus)
        .filter(|&k| sys.bus_kind(k) == BusKind::PV)
        .count();
    4 * n_bus + n_gen - 3
}

/// Re-base the embedding at a point on the curve. The injection bases are
/// the values realized at `u`, so the local series parameter starts at 0;
/// the K entries are copied from the direction through the equation index.
pub fn embed_at_point(
    sys: &QuadraticSystem,
    y: &AdmittanceMatrix,
    dir: &CurveDirection,
    u: &StateVector,
    _alpha_here: f64,
) -> Result<EmbeddingCoefficients> {
    let n_bus = sys.n_bus();
    let base_v = sys.complex_voltages(u);
    for (k, v) in base_v.iter().enumerate() {
        if v.norm() < VOLTAGE_FLOOR {
            return Err(Error::DegenerateVoltage {
                bus: k + 1,
                magnitude: v.norm(),
                floor: VOLTAGE_FLOOR,
            });
        }
    }
    let s = realized_injections(y, &base_v);
    let mut k_p = vec![0.0; n_bus];
    let mut k_q = vec![0.0; n_bus];
    let mut k_v = vec![0.0; n_bus];
    let mut k_s = 0.0;
    for k in 0..n_bus {
        let eqs = sys.equations_of(k);
        if let Some(i) = eqs.active {
            k_p[k] = dir.d[i];
        }
        if let Some(i) = eqs.reactive {
            k_q[k] = dir.d[i];
        }
        if let Some(i) = eqs.magnitude {
            if k == sys.slack_bus() {
                k_s = dir.d[i];
            } else {
                k_v[k] = dir.d[i];
            }
        }
    }
    Ok(EmbeddingCoefficients {
        k_p,
        k_q,
        k_v,
        k_s,
        p0: s.iter().map(|x| x.re).collect(),
        q0: s.iter().map(|x| x.im).collect(),
        base_v,
        base_state: u.clone(),
    })
}

/// Column layout of the real per-degree linear system.
struct Layout {
    /// (re, im) columns of v per bus; im is None for the slack.
    v_cols: Vec<(usize, Option<usize>)>,
    /// (re, im) columns of w per non-slack bus.
    w_cols: Vec<Option<(usize, usize)>>,
    /// column of q per PV bus.
    q_cols: Vec<Option<usize>>,
    dim: usize,
}

fn layout(sys: &QuadraticSystem) -> Layout {
    let n_bus = sys.n_bus();
    let slack = sys.slack_bus();
    let mut v_cols = Vec::with_capacity(n_bus);
    let mut w_cols = vec![None; n_bus];
    let mut q_cols = vec![None; n_bus];
    let mut next = 0;
    for k in 0..n_bus {
        if k == slack {
            v_cols.push((next, None));
            next += 1;
        } else {
            v_cols.push((next, Some(next + 1)));
            next += 2;
        }
    }
    for (k, w) in w_cols.iter_mut().enumerate() {
        if k != slack {
            *w = Some((next, next + 1));
            next += 2;
        }
    }
    for (k, q) in q_cols.iter_mut().enumerate() {
        if sys.bus_kind(k) == BusKind::PV {
            *q = Some(next);
            next += 1;
        }
    }
    Layout {
        v_cols,
        w_cols,
        q_cols,
        dim: next,
    }
}

/// Solve the embedding recursion up to `i_max`, factorizing the constant
/// matrix once and reusing it for every degree.
pub fn series_coefficients(
    sys: &QuadraticSystem,
    y: &AdmittanceMatrix,
    coeffs: &EmbeddingCoefficients,
    i_max: usize,
) -> Result<SeriesState> {
    if i_max < 1 {
        return Err(Error::Config("i_max must be at least 1".into()));
    }
    let n_bus = sys.n_bus();
    let slack = sys.slack_bus();
    let lay = layout(sys);
    debug_assert_eq!(lay.dim, embedding_dimension(sys));

    let mut v = vec![Vec::with_capacity(i_max + 1); n_bus];
    let mut w = vec![Vec::new(); n_bus];
    let mut q = vec![Vec::new(); n_bus];
    for k in 0..n_bus {
        v[k].push(coeffs.base_v[k]);
        if k != slack {
            w[k].push(Complex64::new(1.0, 0.0) / coeffs.base_v[k]);
        }
        if sys.bus_kind(k) == BusKind::PV {
            q[k].push(coeffs.q0[k]);
        }
    }

    let a = assemble_matrix(sys, y, coeffs, &lay);
    let lu = a.lu();

    for degree in 1..=i_max {
        let rhs = assemble_rhs(sys, coeffs, &lay, &v, &w, &q, degree);
        let x = lu.solve(&rhs).ok_or(Error::EmbeddingSingular)?;
        if x.iter().any(|t| !t.is_finite()) {
            return Err(Error::EmbeddingSingular);
        }
        for k in 0..n_bus {
            let (re_col, im_col) = lay.v_cols[k];
            let im = im_col.map(|c| x[c]).unwrap_or(0.0);
            v[k].push(Complex64::new(x[re_col], im));
            if let Some((wr, wi)) = lay.w_cols[k] {
                w[k].push(Complex64::new(x[wr], x[wi]));
            }
            if let Some(qc) = lay.q_cols[k] {
                q[k].push(x[qc]);
            }
        }
    }

    Ok(SeriesState { v, w, q, i_max })
}

fn assemble_matrix(
    sys: &QuadraticSystem,
    y: &AdmittanceMatrix,
    coeffs: &EmbeddingCoefficients,
    lay: &Layout,
) -> DMatrix<f64> {
    let n_bus = sys.n_bus();
    let slack = sys.slack_bus();
    let mut a = DMatrix::zeros(lay.dim, lay.dim);
    let mut row = 0;

    for k in 0..n_bus {
        if k == slack {
            continue;
        }
        // power balance, real and imaginary rows
        let (pr, pi) = (row, row + 1);
        row += 2;
        for &(nb, ynk) in y.row(k) {
            let (g, b) = (ynk.re, ynk.im);
            let (a_col, b_col) = lay.v_cols[nb];
            a[(pr, a_col)] += g;
            a[(pi, a_col)] += b;
            if let Some(b_col) = b_col {
                a[(pr, b_col)] += -b;
                a[(pi, b_col)] += g;
            }
        }
        let (c_col, d_col) = lay.w_cols[k].expect("non-slack bus has w columns");
        match sys.bus_kind(k) {
            BusKind::PQ => {
                let (p0, q0) = (coeffs.p0[k], coeffs.q0[k]);
                a[(pr, c_col)] += -p0;
                a[(pr, d_col)] += q0;
                a[(pi, c_col)] += q0;
                a[(pi, d_col)] += p0;
            }
            BusKind::PV => {
                let (p0, q0) = (coeffs.p0[k], coeffs.q0[k]);
                a[(pr, c_col)] += -p0;
                a[(pr, d_col)] += q0;
                a[(pi, c_col)] += q0;
                a[(pi, d_col)] += p0;
                let w0 = Complex64::new(1.0, 0.0) / coeffs.base_v[k];
                let q_col = lay.q_cols[k].expect("PV bus has a q column");
                // + j q_i w*_0 = q_i Im(w_0) + j q_i Re(w_0)
                a[(pr, q_col)] += w0.im;
                a[(pi, q_col)] += w0.re;
            }
            BusKind::Slack => unreachable!(),
        }

        // reciprocal identity rows: v_0 w_i + w_0 v_i = rhs
        let (rr, ri) = (row, row + 1);
        row += 2;
        let v0 = coeffs.base_v[k];
        let w0 = Complex64::new(1.0, 0.0) / v0;
        let (va_col, vb_col) = lay.v_cols[k];
        let vb_col = vb_col.expect("non-slack bus has an imaginary column");
        a[(rr, c_col)] += v0.re;
        a[(rr, d_col)] += -v0.im;
        a[(ri, c_col)] += v0.im;
        a[(ri, d_col)] += v0.re;
        a[(rr, va_col)] += w0.re;
        a[(rr, vb_col)] += -w0.im;
        a[(ri, va_col)] += w0.im;
        a[(ri, vb_col)] += w0.re;

        // PV magnitude row: 2 Re(v*_0 v_i) = rhs
        if sys.bus_kind(k) == BusKind::PV {
            a[(row, va_col)] += 2.0 * v0.re;
            a[(row, vb_col)] += 2.0 * v0.im;
            row += 1;
        }
    }

    // slack magnitude row: 2 v_s0 a_s = rhs
    let (s_col, _) = lay.v_cols[slack];
    a[(row, s_col)] = 2.0 * coeffs.base_v[slack].re;
    row += 1;
    debug_assert_eq!(row, lay.dim);
    a
}

#[allow(clippy::too_many_arguments)]
fn assemble_rhs(
    sys: &QuadraticSystem,
    coeffs: &EmbeddingCoefficients,
    lay: &Layout,
    v: &[Vec<Complex64>],
    w: &[Vec<Complex64>],
    q: &[Vec<f64>],
    degree: usize,
) -> nalgebra::DVector<f64> {
    let n_bus = sys.n_bus();
    let slack = sys.slack_bus();
    let i = degree;
    let mut rhs = nalgebra::DVector::zeros(lay.dim);
    let mut row = 0;

    for k in 0..n_bus {
        if k == slack {
            continue;
        }
        let w_prev = w[k][i - 1].conj();
        let mut acc = match sys.bus_kind(k) {
            BusKind::PQ => {
                // kappa* w*_{i-1} with kappa = K_p + j K_q
                Complex64::new(coeffs.k_p[k], -coeffs.k_q[k]) * w_prev
            }
            BusKind::PV => {
                // K_p w*_{i-1} - j sum_{m=1}^{i-1} q_m w*_{i-m}
                let mut s = Complex64::new(coeffs.k_p[k], 0.0) * w_prev;
                for m in 1..i {
                    s -= Complex64::new(0.0, q[k][m]) * w[k][i - m].conj();
                }
                s
            }
            BusKind::Slack => unreachable!(),
        };
        // known slack column contribution is already in the matrix; nothing
        // else moves to the right-hand side for the power rows
        rhs[row] = acc.re;
        rhs[row + 1] = acc.im;
        row += 2;

        // reciprocal rows: -(sum_{m=1}^{i-1} v_m w_{i-m})
        acc = Complex64::new(0.0, 0.0);
        for m in 1..i {
            acc -= v[k][m] * w[k][i - m];
        }
        rhs[row] = acc.re;
        rhs[row + 1] = acc.im;
        row += 2;

        if sys.bus_kind(k) == BusKind::PV {
            let mut s = if i == 1 { coeffs.k_v[k] } else { 0.0 };
            for m in 1..i {
                s -= (v[k][m] * v[k][i - m].conj()).re;
            }
            rhs[row] = s;
            row += 1;
        }
    }

    // slack: 2 v_s0 v_si = delta_{i,1} K_s - sum_{m=1}^{i-1} v_m v_{i-m}
    let mut s = if i == 1 { coeffs.k_s } else { 0.0 };
    for m in 1..i {
        s -= v[slack][m].re * v[slack][i - m].re;
    }
    rhs[row] = s;
    row += 1;
    debug_assert_eq!(row, lay.dim);
    rhs
}

/// Horner evaluation of every truncated series at a real local parameter.
pub fn evaluate_series(s: &SeriesState, alpha: f64) -> SeriesEvaluation {
    let v = s
        .v
        .iter()
        .map(|series| {
            let mut acc = Complex64::new(0.0, 0.0);
            for c in series.iter().rev() {
                acc = acc * alpha + c;
            }
            acc
        })
        .collect();
    let q = s
        .q
        .iter()
        .map(|series| {
            let mut acc = 0.0;
            for c in series.iter().rev() {
                acc = acc * alpha + c;
            }
            acc
        })
        .collect();
    SeriesEvaluation { v, q }
}

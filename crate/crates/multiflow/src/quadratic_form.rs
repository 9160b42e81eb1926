//! The power flow equations as a quadratic system over the rectangular
//! state vector U = [V_d; V_q] with the slack imaginary voltage eliminated.
//!
//! Each equation is f_i(U) = U' M_i U - r_i with M_i symmetric. The system
//! holds n = 2*n_bus - 1 equations: the slack magnitude equation first,
//! then per bus in ascending index (P, Q) for PQ buses and (P, |V|^2) for
//! PV buses.

use crate::case_model::{AdmittanceMatrix, BusKind, Network};
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// Real state vector of length 2*n_bus - 1 (V_d entries then V_q entries,
/// slack V_q omitted).
pub type StateVector = DVector<f64>;

/// Symmetric sparse matrix stored as upper-triangle triplets.
#[derive(Debug, Clone)]
pub struct SymmetricSparse {
    n: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl SymmetricSparse {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            entries: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Accumulate the coefficient of the monomial x_i * x_j in the quadratic
    /// form. Off-diagonal contributions split evenly across (i, j) and (j, i).
    pub fn add_monomial(&mut self, i: usize, j: usize, coeff: f64) {
        if coeff == 0.0 {
            return;
        }
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        let value = if a == b { coeff } else { coeff / 2.0 };
        if let Some(e) = self.entries.iter_mut().find(|(x, y, _)| *x == a && *y == b) {
            e.2 += value;
        } else {
            self.entries.push((a, b, value));
        }
    }

    /// u' M u
    pub fn quad(&self, u: &StateVector) -> f64 {
        let mut acc = 0.0;
        for &(i, j, v) in &self.entries {
            if i == j {
                acc += v * u[i] * u[i];
            } else {
                acc += 2.0 * v * u[i] * u[j];
            }
        }
        acc
    }

    /// out += scale * (M u)
    pub fn mul_acc(&self, u: &StateVector, scale: f64, out: &mut [f64]) {
        for &(i, j, v) in &self.entries {
            out[i] += scale * v * u[j];
            if i != j {
                out[j] += scale * v * u[i];
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for &(i, j, v) in &self.entries {
            m[(i, j)] += v;
            if i != j {
                m[(j, i)] += v;
            }
        }
        m
    }

    pub fn triplets(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }
}

/// Role of one scalar equation in the system.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EquationKind {
    /// Slack |V|^2 with V_q,s substituted out.
    SlackMagnitude,
    /// Active power balance at a PQ or PV bus.
    ActivePower,
    /// Reactive power balance at a PQ bus.
    ReactivePower,
    /// |V|^2 at a PV bus.
    Magnitude,
}

#[derive(Debug, Clone)]
pub struct Equation {
    pub m: SymmetricSparse,
    pub r: f64,
    pub kind: EquationKind,
    /// 0-based bus the equation belongs to.
    pub bus: usize,
}

/// Per-bus equation positions inside the system ordering.
#[derive(Debug, Clone, Copy, Default)]
pub struct BusEquations {
    pub active: Option<usize>,
    pub reactive: Option<usize>,
    pub magnitude: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct QuadraticSystem {
    n: usize,
    n_bus: usize,
    slack: usize,
    kinds: Vec<BusKind>,
    equations: Vec<Equation>,
    /// bus -> position of V_q in U (None for the slack bus).
    vq_pos: Vec<Option<usize>>,
    eq_index: Vec<BusEquations>,
}

impl QuadraticSystem {
    /// Build a bare quadratic system from explicit equations. Intended for
    /// benchmark curves and tests; the bus-oriented accessors are not
    /// meaningful on systems built this way.
    pub fn synthetic(n: usize, equations: Vec<(SymmetricSparse, f64)>) -> Self {
        let equations = equations
            .into_iter()
            .map(|(m, r)| Equation {
                m,
                r,
                kind: EquationKind::Magnitude,
                bus: 0,
            })
            .collect();
        QuadraticSystem {
            n,
            n_bus: 0,
            slack: 0,
            kinds: Vec::new(),
            equations,
            vq_pos: Vec::new(),
            eq_index: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn n_bus(&self) -> usize {
        self.n_bus
    }

    pub fn slack_bus(&self) -> usize {
        self.slack
    }

    pub fn bus_kind(&self, bus: usize) -> BusKind {
        self.kinds[bus]
    }

    pub fn equations(&self) -> &[Equation] {
        &self.equations
    }

    /// Position of V_d,k in U.
    pub fn vd_position(&self, bus: usize) -> usize {
        bus
    }

    /// Position of V_q,k in U; None for the slack bus.
    pub fn vq_position(&self, bus: usize) -> Option<usize> {
        self.vq_pos[bus]
    }

    pub fn equations_of(&self, bus: usize) -> BusEquations {
        self.eq_index[bus]
    }

    /// Complex bus voltages of a state vector (slack V_q is zero).
    pub fn complex_voltages(&self, u: &StateVector) -> Vec<Complex64> {
        (0..self.n_bus)
            .map(|k| {
                let vq = self.vq_pos[k].map(|p| u[p]).unwrap_or(0.0);
                Complex64::new(u[k], vq)
            })
            .collect()
    }

    /// Inverse of [`Self::complex_voltages`]; the slack imaginary part is dropped.
    pub fn state_from_voltages(&self, v: &[Complex64]) -> StateVector {
        let mut u = DVector::zeros(self.n);
        for k in 0..self.n_bus {
            u[k] = v[k].re;
            if let Some(p) = self.vq_pos[k] {
                u[p] = v[k].im;
            }
        }
        u
    }

    /// f_i(u) for all equations.
    pub fn residual(&self, u: &StateVector) -> Result<DVector<f64>> {
        self.check_dim(u)?;
        let mut out = DVector::zeros(self.n);
        for (i, eq) in self.equations.iter().enumerate() {
            out[i] = eq.m.quad(u) - eq.r;
        }
        Ok(out)
    }

    /// Jacobian with row i equal to 2 (M_i u)'.
    pub fn jacobian(&self, u: &StateVector) -> Result<DMatrix<f64>> {
        self.check_dim(u)?;
        let mut jac = DMatrix::zeros(self.n, self.n);
        let mut row = vec![0.0; self.n];
        for (i, eq) in self.equations.iter().enumerate() {
            row.iter_mut().for_each(|v| *v = 0.0);
            eq.m.mul_acc(u, 2.0, &mut row);
            for (j, v) in row.iter().enumerate() {
                jac[(i, j)] = *v;
            }
        }
        Ok(jac)
    }

    fn check_dim(&self, u: &StateVector) -> Result<()> {
        if u.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                actual: u.len(),
            });
        }
        Ok(())
    }

    /// Debug dump of every (M_i, r_i) as a JSON sparse-triplet document.
    pub fn to_triplet_json(&self) -> String {
        #[derive(serde::Serialize)]
        struct EqDump {
            index: usize,
            bus: usize,
            kind: String,
            r: f64,
            triplets: Vec<(usize, usize, f64)>,
        }
        let eqs: Vec<EqDump> = self
            .equations
            .iter()
            .enumerate()
            .map(|(i, eq)| EqDump {
                index: i,
                bus: eq.bus + 1,
                kind: format!("{:?}", eq.kind),
                r: eq.r,
                triplets: eq.m.triplets().to_vec(),
            })
            .collect();
        serde_json::to_string_pretty(&serde_json::json!({
            "n": self.n,
            "equations": eqs,
        }))
        .expect("dump serializes")
    }
}

/// Assemble the quadratic system from a validated network and its admittance
/// matrix. The slack imaginary voltage is eliminated by substitution.
pub fn assemble_equations(net: &Network, y: &AdmittanceMatrix) -> Result<QuadraticSystem> {
    net.validate()?;
    let n_bus = net.n_bus();
    let n = 2 * n_bus - 1;
    let slack = net.slack_index();

    let mut vq_pos = vec![None; n_bus];
    let mut next = n_bus;
    for k in 0..n_bus {
        if k != slack {
            vq_pos[k] = Some(next);
            next += 1;
        }
    }

    let kinds: Vec<BusKind> = net.buses.iter().map(|b| b.kind).collect();
    let mut sys = QuadraticSystem {
        n,
        n_bus,
        slack,
        kinds,
        equations: Vec::with_capacity(n),
        vq_pos,
        eq_index: vec![BusEquations::default(); n_bus],
    };

    // Slack magnitude equation first.
    let slack_bus = &net.buses[slack];
    let mut m = SymmetricSparse::new(n);
    m.add_monomial(slack, slack, 1.0);
    sys.eq_index[slack].magnitude = Some(sys.equations.len());
    sys.equations.push(Equation {
        m,
        r: slack_bus.v_magnitude_setpoint.powi(2),
        kind: EquationKind::SlackMagnitude,
        bus: slack,
    });

    for (k, bus) in net.buses.iter().enumerate() {
        if k == slack {
            continue;
        }
        sys.eq_index[k].active = Some(sys.equations.len());
        sys.equations.push(active_power_equation(&sys, y, k, bus.p_injection()));
        match bus.kind {
            BusKind::PQ => {
                sys.eq_index[k].reactive = Some(sys.equations.len());
                sys.equations
                    .push(reactive_power_equation(&sys, y, k, bus.q_injection()));
            }
            BusKind::PV => {
                let mut m = SymmetricSparse::new(n);
                m.add_monomial(k, k, 1.0);
                m.add_monomial(sys.vq_pos[k].unwrap(), sys.vq_pos[k].unwrap(), 1.0);
                sys.eq_index[k].magnitude = Some(sys.equations.len());
                sys.equations.push(Equation {
                    m,
                    r: bus.v_magnitude_setpoint.powi(2),
                    kind: EquationKind::Magnitude,
                    bus: k,
                });
            }
            BusKind::Slack => unreachable!("slack handled above"),
        }
    }
    debug_assert_eq!(sys.equations.len(), n);
    Ok(sys)
}

/// P_k = V_d,k sum(G V_d - B V_q) + V_q,k sum(G V_q + B V_d)
fn active_power_equation(
    sys: &QuadraticSystem,
    y: &AdmittanceMatrix,
    k: usize,
    p_injection: f64,
) -> Equation {
    let mut m = SymmetricSparse::new(sys.n);
    let dk = sys.vd_position(k);
    let qk = sys.vq_position(k);
    for &(nb, ynk) in y.row(k) {
        let (g, b) = (ynk.re, ynk.im);
        let dn = sys.vd_position(nb);
        let qn = sys.vq_position(nb);
        m.add_monomial(dk, dn, g);
        if let Some(qn) = qn {
            m.add_monomial(dk, qn, -b);
        }
        if let Some(qk) = qk {
            if let Some(qn) = qn {
                m.add_monomial(qk, qn, g);
            }
            m.add_monomial(qk, dn, b);
        }
    }
    Equation {
        m,
        r: p_injection,
        kind: EquationKind::ActivePower,
        bus: k,
    }
}

/// Q_k = V_q,k sum(G V_d - B V_q) - V_d,k sum(G V_q + B V_d)
fn reactive_power_equation(
    sys: &QuadraticSystem,
    y: &AdmittanceMatrix,
    k: usize,
    q_injection: f64,
) -> Equation {
    let mut m = SymmetricSparse::new(sys.n);
    let dk = sys.vd_position(k);
    let qk = sys.vq_position(k);
    for &(nb, ynk) in y.row(k) {
        let (g, b) = (ynk.re, ynk.im);
        let dn = sys.vd_position(nb);
        let qn = sys.vq_position(nb);
        if let Some(qk) = qk {
            m.add_monomial(qk, dn, g);
            if let Some(qn) = qn {
                m.add_monomial(qk, qn, -b);
            }
        }
        if let Some(qn) = qn {
            m.add_monomial(dk, qn, -g);
        }
        m.add_monomial(dk, dn, -b);
    }
    Equation {
        m,
        r: q_injection,
        kind: EquationKind::ReactivePower,
        bus: k,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case_model::{build_admittance, parse_case};
    use approx::assert_abs_diff_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    const TWO_BUS: &str = r#"
mpc.baseMVA = 100;
mpc.bus = [
 1 3 0   0  0 0 1 1.0 0 345 1 1.1 0.9;
 2 1 50 20  0 0 1 1.0 0 345 1 1.1 0.9;
];
mpc.gen = [
 1 0 0 300 -300 1.0 100 1 250 10;
];
mpc.branch = [
 1 2 0.01 0.1 0 250 250 250 0 0 1 -360 360;
];
"#;

    fn two_bus_system() -> QuadraticSystem {
        let net = parse_case(TWO_BUS).unwrap();
        let y = build_admittance(&net).unwrap();
        assemble_equations(&net, &y).unwrap()
    }

    #[test]
    fn two_bus_counts() {
        let sys = two_bus_system();
        assert_eq!(sys.dim(), 3);
        assert_eq!(sys.equations().len(), 3);
        assert_eq!(sys.equations()[0].kind, EquationKind::SlackMagnitude);
        assert_eq!(sys.equations()[1].kind, EquationKind::ActivePower);
        assert_eq!(sys.equations()[2].kind, EquationKind::ReactivePower);
    }

    #[test]
    fn residual_at_origin_is_minus_r() {
        let sys = two_bus_system();
        let u = DVector::zeros(3);
        let res = sys.residual(&u).unwrap();
        for (i, eq) in sys.equations().iter().enumerate() {
            assert_abs_diff_eq!(res[i], -eq.r);
        }
    }

    #[test]
    fn quadratic_part_scales_quartically() {
        let sys = two_bus_system();
        let mut rng = StdRng::seed_from_u64(7);
        let u = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
        let u2 = &u * 2.0;
        let r1 = sys.residual(&u).unwrap();
        let r2 = sys.residual(&u2).unwrap();
        for i in 0..3 {
            let quad = r1[i] + sys.equations()[i].r;
            assert_abs_diff_eq!(r2[i], 4.0 * quad - sys.equations()[i].r, epsilon = 1e-12);
        }
    }

    #[test]
    fn matrices_are_symmetric() {
        let sys = two_bus_system();
        for eq in sys.equations() {
            let d = eq.m.to_dense();
            let diff = (&d - d.transpose()).abs().max();
            assert_eq!(diff, 0.0);
        }
    }

    #[test]
    fn jacobian_at_origin_is_zero() {
        let sys = two_bus_system();
        let u = DVector::zeros(3);
        let j = sys.jacobian(&u).unwrap();
        assert_eq!(j.abs().max(), 0.0);
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let sys = two_bus_system();
        let mut rng = StdRng::seed_from_u64(42);
        let eps = 1e-6;
        for _ in 0..100 {
            let u = DVector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0));
            let j = sys.jacobian(&u).unwrap();
            let d = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0)).normalize();
            let up = &u + &d * eps;
            let um = &u - &d * eps;
            let fd = (sys.residual(&up).unwrap() - sys.residual(&um).unwrap()) / (2.0 * eps);
            let jd = &j * &d;
            let scale = jd.norm().max(1.0);
            assert!((jd - fd).norm() / scale < 1e-6);
        }
    }

    #[test]
    fn residual_matches_naive_dense_evaluation() {
        let sys = two_bus_system();
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..50 {
            let u = DVector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0));
            let res = sys.residual(&u).unwrap();
            for (i, eq) in sys.equations().iter().enumerate() {
                let dense = eq.m.to_dense();
                let naive = (u.transpose() * &dense * &u)[(0, 0)] - eq.r;
                assert_abs_diff_eq!(res[i], naive, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn complex_residual_matches_pq_rows() {
        // Re/Im of V_k (Y V)*_k - S_k must equal the P/Q residual rows.
        let net = parse_case(TWO_BUS).unwrap();
        let y = build_admittance(&net).unwrap();
        let sys = assemble_equations(&net, &y).unwrap();
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..20 {
            let u = DVector::from_fn(3, |_, _| rng.gen_range(0.3..1.4));
            let v = sys.complex_voltages(&u);
            let iv = y.mul_vec(&v);
            let res = sys.residual(&u).unwrap();
            for (k, bus) in net.buses.iter().enumerate() {
                if bus.kind != BusKind::PQ {
                    continue;
                }
                let s_calc = v[k] * iv[k].conj();
                let eqs = sys.equations_of(k);
                let fp = res[eqs.active.unwrap()];
                let fq = res[eqs.reactive.unwrap()];
                let expect = Complex64::new(
                    s_calc.re - bus.p_injection(),
                    s_calc.im - bus.q_injection(),
                );
                assert_abs_diff_eq!(fp, expect.re, epsilon = 1e-12);
                assert_abs_diff_eq!(fq, expect.im, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn triplet_dump_is_json() {
        let sys = two_bus_system();
        let dump = sys.to_triplet_json();
        let parsed: serde_json::Value = serde_json::from_str(&dump).unwrap();
        assert_eq!(parsed["n"], 3);
        assert_eq!(parsed["equations"].as_array().unwrap().len(), 3);
    }
}

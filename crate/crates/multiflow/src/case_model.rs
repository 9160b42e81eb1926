//! Network case files, per-unit model, and bus admittance matrix assembly.
//!
//! Two input formats map onto the same [`Network`]: a restricted
//! Matpower-style `.m` file (the `mpc.bus` / `mpc.gen` / `mpc.branch` /
//! `mpc.baseMVA` tables) and a native JSON schema with the same fields.

use crate::error::{Error, Result};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Bus classification in the power flow model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BusKind {
    PQ,
    PV,
    Slack,
}

/// A single bus. All quantities are per-unit on the system base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    /// 1-based bus index; indices must be contiguous 1..=n_bus.
    pub id: usize,
    pub kind: BusKind,
    pub p_load: f64,
    pub q_load: f64,
    pub p_gen: f64,
    /// Voltage magnitude setpoint, PV and Slack buses only (0.0 on PQ buses).
    pub v_magnitude_setpoint: f64,
    pub shunt_g: f64,
    pub shunt_b: f64,
}

impl Bus {
    /// Net active power injection (generation minus load).
    pub fn p_injection(&self) -> f64 {
        self.p_gen - self.p_load
    }

    /// Net reactive power injection; only meaningful on PQ buses.
    pub fn q_injection(&self) -> f64 {
        -self.q_load
    }
}

/// A branch with the standard pi-model parameters, per-unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from_bus: usize,
    pub to_bus: usize,
    pub r: f64,
    pub x: f64,
    /// Total line-charging susceptance.
    pub b_charging: f64,
    /// Off-nominal turns ratio (1.0 when absent).
    pub tap_ratio: f64,
    /// Phase shift in radians (0 when absent).
    pub phase_shift: f64,
}

/// A connected power grid in per-unit quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub base_mva: f64,
}

impl Network {
    pub fn n_bus(&self) -> usize {
        self.buses.len()
    }

    /// Number of PV buses.
    pub fn n_gen(&self) -> usize {
        self.buses.iter().filter(|b| b.kind == BusKind::PV).count()
    }

    /// 0-based index of the slack bus.
    pub fn slack_index(&self) -> usize {
        self.buses
            .iter()
            .position(|b| b.kind == BusKind::Slack)
            .expect("validated network has a slack bus")
    }

    /// Check the structural invariants: contiguous ids, exactly one slack,
    /// positive setpoints on PV/Slack buses, connected branch graph.
    pub fn validate(&self) -> Result<()> {
        if self.buses.is_empty() {
            return Err(Error::Model("network has no buses".into()));
        }
        for (i, bus) in self.buses.iter().enumerate() {
            if bus.id != i + 1 {
                return Err(Error::Model(format!(
                    "bus indices must be contiguous 1..{}; found id {} at position {}",
                    self.buses.len(),
                    bus.id,
                    i + 1
                )));
            }
            if matches!(bus.kind, BusKind::PV | BusKind::Slack)
                && bus.v_magnitude_setpoint <= 0.0
            {
                return Err(Error::Model(format!(
                    "bus {} is {:?} but has voltage setpoint {}",
                    bus.id, bus.kind, bus.v_magnitude_setpoint
                )));
            }
        }
        let n_slack = self
            .buses
            .iter()
            .filter(|b| b.kind == BusKind::Slack)
            .count();
        if n_slack != 1 {
            return Err(Error::Model(format!(
                "expected exactly one slack bus, found {n_slack}"
            )));
        }
        for br in &self.branches {
            if br.from_bus == br.to_bus {
                return Err(Error::Model(format!(
                    "branch connects bus {} to itself",
                    br.from_bus
                )));
            }
            for end in [br.from_bus, br.to_bus] {
                if end == 0 || end > self.buses.len() {
                    return Err(Error::Model(format!(
                        "branch references bus {end} outside 1..{}",
                        self.buses.len()
                    )));
                }
            }
        }
        if !self.is_connected() {
            return Err(Error::Model("branch graph is not connected".into()));
        }
        Ok(())
    }

    fn is_connected(&self) -> bool {
        let n = self.buses.len();
        if n <= 1 {
            return true;
        }
        let mut adj = vec![Vec::new(); n];
        for br in &self.branches {
            adj[br.from_bus - 1].push(br.to_bus - 1);
            adj[br.to_bus - 1].push(br.from_bus - 1);
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(k) = stack.pop() {
            for &m in &adj[k] {
                if !seen[m] {
                    seen[m] = true;
                    stack.push(m);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Sparse bus admittance matrix Y = G + jB, stored by row.
#[derive(Debug, Clone)]
pub struct AdmittanceMatrix {
    n: usize,
    /// Per-row (column, value) pairs sorted by column.
    rows: Vec<Vec<(usize, Complex64)>>,
}

impl AdmittanceMatrix {
    pub fn n_bus(&self) -> usize {
        self.n
    }

    /// Nonzero entries of row `k`, sorted by column.
    pub fn row(&self, k: usize) -> &[(usize, Complex64)] {
        &self.rows[k]
    }

    /// Full complex entry (zero when outside the sparsity pattern).
    pub fn entry(&self, i: usize, j: usize) -> Complex64 {
        self.rows[i]
            .iter()
            .find(|(c, _)| *c == j)
            .map(|(_, v)| *v)
            .unwrap_or_else(|| Complex64::new(0.0, 0.0))
    }

    /// Conductance entry G[i][j].
    pub fn g(&self, i: usize, j: usize) -> f64 {
        self.entry(i, j).re
    }

    /// Susceptance entry B[i][j].
    pub fn b(&self, i: usize, j: usize) -> f64 {
        self.entry(i, j).im
    }

    /// Y * v for a complex voltage vector.
    pub fn mul_vec(&self, v: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.n];
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, y) in row {
                out[i] += y * v[j];
            }
        }
        out
    }
}

/// Replace zero series resistance with `r_floor` on every lossless branch.
///
/// Default floor is 1e-4 p.u.; passing 0 is the identity transformation.
pub fn regularize_lossless(net: &Network, r_floor: f64) -> Network {
    let mut out = net.clone();
    for br in &mut out.branches {
        if br.r == 0.0 {
            br.r = r_floor;
        }
    }
    out
}

/// Default resistance floor applied to lossless lines.
pub const DEFAULT_R_FLOOR: f64 = 1e-4;

/// Assemble the bus admittance matrix from the standard pi model.
pub fn build_admittance(net: &Network) -> Result<AdmittanceMatrix> {
    let n = net.n_bus();
    let mut dense = vec![vec![Complex64::new(0.0, 0.0); n]; n];
    for br in &net.branches {
        if br.r == 0.0 && br.x == 0.0 {
            return Err(Error::SingularBranch {
                from: br.from_bus,
                to: br.to_bus,
            });
        }
        let ys = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
        let ysh = Complex64::new(0.0, br.b_charging / 2.0);
        let tap = if br.tap_ratio == 0.0 { 1.0 } else { br.tap_ratio };
        let t = Complex64::from_polar(tap, br.phase_shift);
        let f = br.from_bus - 1;
        let to = br.to_bus - 1;
        dense[f][f] += (ys + ysh) / (tap * tap);
        dense[to][to] += ys + ysh;
        dense[f][to] += -ys / t.conj();
        dense[to][f] += -ys / t;
    }
    for (k, bus) in net.buses.iter().enumerate() {
        dense[k][k] += Complex64::new(bus.shunt_g, bus.shunt_b);
    }
    let rows = dense
        .into_iter()
        .map(|row| {
            row.into_iter()
                .enumerate()
                .filter(|(_, v)| v.norm() > 0.0)
                .collect()
        })
        .collect();
    Ok(AdmittanceMatrix { n, rows })
}

/// Parse a case file, auto-detecting the Matpower `.m` subset or the JSON schema.
pub fn parse_case(text: &str) -> Result<Network> {
    let net = if text.trim_start().starts_with('{') {
        parse_json_case(text)?
    } else {
        matpower::parse(text)?
    };
    net.validate()?;
    Ok(net)
}

fn parse_json_case(text: &str) -> Result<Network> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        message: e.to_string(),
    })
}

/// Serialize a network to the native JSON schema.
pub fn serialize_network(net: &Network) -> String {
    serde_json::to_string_pretty(net).expect("network serializes")
}

pub mod matpower {
    //! Restricted Matpower `.m` table reader. Numeric columns follow the
    //! Matpower column order for the supported subset; unknown sections
    //! are skipped.

    use super::{Branch, Bus, BusKind, Network};
    use crate::error::{Error, Result};

    struct GenRecord {
        bus: usize,
        pg: f64,
        qg: f64,
        vg: f64,
        status: bool,
    }

    struct RawRow {
        line: usize,
        values: Vec<f64>,
    }

    pub fn parse(text: &str) -> Result<Network> {
        let mut base_mva = 100.0;
        let mut bus_rows = Vec::new();
        let mut gen_rows = Vec::new();
        let mut branch_rows = Vec::new();

        let mut lines = text.lines().enumerate().peekable();
        while let Some((idx, raw)) = lines.next() {
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("mpc.baseMVA") {
                let value = rest.trim_start_matches(|c: char| c == '=' || c.is_whitespace());
                base_mva = value
                    .trim_end_matches(';')
                    .trim()
                    .parse()
                    .map_err(|_| Error::Parse {
                        line: idx + 1,
                        message: format!("invalid baseMVA value {value:?}"),
                    })?;
            } else if line.starts_with("mpc.bus") && line.contains('[') {
                bus_rows = read_matrix(line, idx, &mut lines)?;
            } else if line.starts_with("mpc.gencost") {
                if line.contains('[') && !line.contains("];") {
                    skip_matrix(&mut lines);
                }
            } else if line.starts_with("mpc.gen") && line.contains('[') {
                gen_rows = read_matrix(line, idx, &mut lines)?;
            } else if line.starts_with("mpc.branch") && line.contains('[') {
                branch_rows = read_matrix(line, idx, &mut lines)?;
            }
        }

        if bus_rows.is_empty() {
            return Err(Error::Parse {
                line: 0,
                message: "mpc.bus table not found".into(),
            });
        }

        let gens = gen_rows
            .iter()
            .map(|row| parse_gen(row))
            .collect::<Result<Vec<_>>>()?;

        let mut buses = Vec::with_capacity(bus_rows.len());
        for row in &bus_rows {
            buses.push(parse_bus(row, base_mva, &gens)?);
        }

        let mut branches = Vec::new();
        for row in &branch_rows {
            if let Some(br) = parse_branch(row)? {
                branches.push(br);
            }
        }

        Ok(Network {
            buses,
            branches,
            base_mva,
        })
    }

    fn strip_comment(line: &str) -> &str {
        match line.find('%') {
            Some(pos) => &line[..pos],
            None => line,
        }
    }

    fn read_matrix<'a, I>(
        header: &str,
        header_idx: usize,
        lines: &mut std::iter::Peekable<I>,
    ) -> Result<Vec<RawRow>>
    where
        I: Iterator<Item = (usize, &'a str)>,
    {
        let mut rows = Vec::new();
        // Data may start on the header line after '['.
        if let Some(after) = header.split('[').nth(1) {
            let closed = after.contains("];");
            let data = after.trim_end().trim_end_matches("];").trim();
            if !data.is_empty() {
                for chunk in data.split(';').filter(|c| !c.trim().is_empty()) {
                    rows.push(parse_numeric_row(chunk, header_idx + 1)?);
                }
            }
            if closed {
                return Ok(rows);
            }
        }
        for (idx, raw) in lines.by_ref() {
            let line = strip_comment(raw).trim();
            if line.starts_with("];") || line == "]" {
                break;
            }
            if line.is_empty() {
                continue;
            }
            let data = line.trim_end_matches("];").trim();
            for chunk in data.split(';').filter(|c| !c.trim().is_empty()) {
                rows.push(parse_numeric_row(chunk, idx + 1)?);
            }
            if line.ends_with("];") {
                break;
            }
        }
        Ok(rows)
    }

    fn skip_matrix<'a, I>(lines: &mut std::iter::Peekable<I>)
    where
        I: Iterator<Item = (usize, &'a str)>,
    {
        for (_, raw) in lines.by_ref() {
            let line = strip_comment(raw).trim();
            if line.ends_with("];") || line == "]" {
                break;
            }
        }
    }

    fn parse_numeric_row(chunk: &str, line: usize) -> Result<RawRow> {
        let mut values = Vec::new();
        for tok in chunk.split_whitespace().flat_map(|t| t.split(',')) {
            if tok.is_empty() {
                continue;
            }
            let v = tok.parse::<f64>().map_err(|_| Error::Parse {
                line,
                message: format!("expected a number, found {tok:?}"),
            })?;
            values.push(v);
        }
        Ok(RawRow { line, values })
    }

    fn parse_gen(row: &RawRow) -> Result<GenRecord> {
        if row.values.len() < 8 {
            return Err(Error::Parse {
                line: row.line,
                message: format!(
                    "gen record needs at least 8 columns, found {}",
                    row.values.len()
                ),
            });
        }
        Ok(GenRecord {
            bus: row.values[0] as usize,
            pg: row.values[1],
            qg: row.values[2],
            vg: row.values[5],
            status: row.values[7] > 0.0,
        })
    }

    fn parse_bus(row: &RawRow, base_mva: f64, gens: &[GenRecord]) -> Result<Bus> {
        if row.values.len() < 13 {
            return Err(Error::Parse {
                line: row.line,
                message: format!(
                    "bus record needs at least 13 columns, found {}",
                    row.values.len()
                ),
            });
        }
        let id = row.values[0] as usize;
        let kind = match row.values[1] as i64 {
            1 => BusKind::PQ,
            2 => BusKind::PV,
            3 => BusKind::Slack,
            other => {
                return Err(Error::Parse {
                    line: row.line,
                    message: format!("unsupported bus type {other} at bus {id}"),
                })
            }
        };
        let active: Vec<&GenRecord> = gens.iter().filter(|g| g.bus == id && g.status).collect();
        if kind == BusKind::PQ && !active.is_empty() {
            return Err(Error::Parse {
                line: row.line,
                message: format!("in-service generator at PQ bus {id}"),
            });
        }
        if kind != BusKind::PQ && active.is_empty() {
            return Err(Error::Parse {
                line: row.line,
                message: format!("{kind:?} bus {id} has no in-service generator"),
            });
        }
        let p_gen: f64 = active.iter().map(|g| g.pg).sum::<f64>() / base_mva;
        let v_setpoint = active.first().map(|g| g.vg).unwrap_or(0.0);
        // Reactive output of PV/slack machines is a solved quantity, so QG is
        // ignored except through the magnitude setpoint.
        let _ = active.iter().map(|g| g.qg).sum::<f64>();
        Ok(Bus {
            id,
            kind,
            p_load: row.values[2] / base_mva,
            q_load: row.values[3] / base_mva,
            p_gen,
            v_magnitude_setpoint: v_setpoint,
            shunt_g: row.values[4] / base_mva,
            shunt_b: row.values[5] / base_mva,
        })
    }

    fn parse_branch(row: &RawRow) -> Result<Option<Branch>> {
        if row.values.len() < 11 {
            return Err(Error::Parse {
                line: row.line,
                message: format!(
                    "branch record needs at least 11 columns, found {}",
                    row.values.len()
                ),
            });
        }
        if row.values[10] <= 0.0 {
            return Ok(None); // out of service
        }
        Ok(Some(Branch {
            from_bus: row.values[0] as usize,
            to_bus: row.values[1] as usize,
            r: row.values[2],
            x: row.values[3],
            b_charging: row.values[4],
            tap_ratio: if row.values[8] == 0.0 {
                1.0
            } else {
                row.values[8]
            },
            phase_shift: row.values[9].to_radians(),
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const TWO_BUS: &str = "
function mpc = case2
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
";

    #[test]
    fn parses_two_bus_case() {
        let net = parse_case(TWO_BUS).unwrap();
        assert_eq!(net.n_bus(), 2);
        assert_eq!(net.branches.len(), 1);
        assert_eq!(net.buses[0].kind, BusKind::Slack);
        assert_eq!(net.buses[1].kind, BusKind::PQ);
        assert_abs_diff_eq!(net.buses[1].p_load, 0.5);
        assert_abs_diff_eq!(net.buses[1].q_load, 0.2);
        assert_abs_diff_eq!(net.branches[0].r, 0.01);
        assert_abs_diff_eq!(net.branches[0].x, 0.1);
    }

    #[test]
    fn rejects_two_slack_buses() {
        let text = TWO_BUS.replace("2 1 50 20", "2 3 50 20");
        // Give the second slack a generator so only the invariant fails.
        let text = text.replace(
            "1 0 0 300 -300 1.0 100 1 250 10;",
            "1 0 0 300 -300 1.0 100 1 250 10;\n 2 0 0 300 -300 1.0 100 1 250 10;",
        );
        let err = parse_case(&text).unwrap_err();
        assert!(matches!(err, Error::Model(_)), "got {err:?}");
    }

    #[test]
    fn rejects_disconnected_graph() {
        let mut net = parse_case(TWO_BUS).unwrap();
        net.buses.push(Bus {
            id: 3,
            kind: BusKind::PQ,
            p_load: 0.0,
            q_load: 0.0,
            p_gen: 0.0,
            v_magnitude_setpoint: 0.0,
            shunt_g: 0.0,
            shunt_b: 0.0,
        });
        let err = net.validate().unwrap_err();
        assert!(matches!(err, Error::Model(_)));
    }

    #[test]
    fn reports_parse_error_line() {
        let text = TWO_BUS.replace("1 2 0.01 0.1 0", "1 2 bogus 0.1 0");
        let err = parse_case(&text).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert!(line > 0),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn regularize_replaces_only_zero_resistance() {
        let mut net = parse_case(TWO_BUS).unwrap();
        net.branches[0].r = 0.0;
        net.branches.push(Branch {
            from_bus: 1,
            to_bus: 2,
            r: 0.02,
            x: 0.1,
            b_charging: 0.0,
            tap_ratio: 1.0,
            phase_shift: 0.0,
        });
        let out = regularize_lossless(&net, 1e-4);
        assert_abs_diff_eq!(out.branches[0].r, 1e-4);
        assert_abs_diff_eq!(out.branches[1].r, 0.02);
        // zero floor is the identity
        let same = regularize_lossless(&net, 0.0);
        assert_eq!(same, net);
    }

    #[test]
    fn admittance_single_reactive_branch() {
        let mut net = parse_case(TWO_BUS).unwrap();
        net.branches[0].r = 0.0;
        let y = build_admittance(&net).unwrap();
        assert_abs_diff_eq!(y.b(0, 1), 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(y.b(1, 0), 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(y.b(0, 0), -10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(y.g(0, 0), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn admittance_shunt_only() {
        let net = Network {
            buses: vec![
                Bus {
                    id: 1,
                    kind: BusKind::Slack,
                    p_load: 0.0,
                    q_load: 0.0,
                    p_gen: 0.0,
                    v_magnitude_setpoint: 1.0,
                    shunt_g: 0.0,
                    shunt_b: 0.5,
                },
            ],
            branches: vec![],
            base_mva: 100.0,
        };
        let y = build_admittance(&net).unwrap();
        assert_abs_diff_eq!(y.b(0, 0), 0.5);
    }

    #[test]
    fn admittance_rejects_zero_impedance_branch() {
        let mut net = parse_case(TWO_BUS).unwrap();
        net.branches[0].r = 0.0;
        net.branches[0].x = 0.0;
        let err = build_admittance(&net).unwrap_err();
        assert!(matches!(err, Error::SingularBranch { .. }));
    }

    #[test]
    fn json_round_trip_identical() {
        let net = parse_case(TWO_BUS).unwrap();
        let json = serialize_network(&net);
        let back = parse_case(&json).unwrap();
        assert_eq!(net, back);
    }

    #[test]
    fn row_sums_vanish_without_shunts() {
        let net = parse_case(TWO_BUS).unwrap();
        let y = build_admittance(&net).unwrap();
        for i in 0..2 {
            let sum: Complex64 = (0..2).map(|j| y.entry(i, j)).sum();
            assert!(sum.norm() < 1e-12, "row {i} sum {sum}");
        }
    }
}

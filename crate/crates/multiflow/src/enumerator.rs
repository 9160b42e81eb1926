//! Outer enumeration loop: trace every curve family from every known
//! solution, merging newly found solutions into a deduplicated set until
//! each solution has served as a starting point.

use crate::case_model::{build_admittance, AdmittanceMatrix, Network};
use crate::curve_design::{design_curves, CurveDirection, Strategy};
use crate::error::{Error, Result};
use crate::hebc_tracer::{trace_curve, trace_curve_pc, HebcConfig, TraceResult, TraceStatus};
use crate::pc_engine::newton_fixed_alpha;
use crate::quadratic_form::{assemble_equations, QuadraticSystem, StateVector};
use nalgebra::DVector;
use serde::Serialize;

/// Which curve tracer drives the enumeration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TracerKind {
    Hebc,
    Pc,
}

/// Enumeration parameters.
#[derive(Debug, Clone)]
pub struct EnumerateConfig {
    pub tracer: TracerKind,
    pub strategy: Strategy,
    pub hebc: HebcConfig,
    /// Max-norm distance below which two solutions are the same.
    pub dedup_tol: f64,
    /// Parallel curve traces per start (1 = sequential).
    pub jobs: usize,
    /// Safety bound on the solution set size.
    pub max_solutions: usize,
}

impl Default for EnumerateConfig {
    fn default() -> Self {
        EnumerateConfig {
            tracer: TracerKind::Hebc,
            strategy: Strategy::Heuristic { seed: 0 },
            hebc: HebcConfig::default(),
            dedup_tol: 1e-4,
            jobs: 1,
            max_solutions: 10_000,
        }
    }
}

/// One stored solution with bookkeeping.
#[derive(Debug, Clone)]
pub struct SolutionEntry {
    pub u: StateVector,
    pub residual: f64,
    /// 1-based curve index the solution was first found on (0 = initial).
    pub found_on_curve: usize,
    /// Index of the start whose trace discovered it (0 = initial solve).
    pub from_start: usize,
}

/// Ordered, deduplicated solution collection.
#[derive(Debug, Clone, Default)]
pub struct SolutionSet {
    entries: Vec<SolutionEntry>,
}

impl SolutionSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[SolutionEntry] {
        &self.entries
    }

    pub fn states(&self) -> impl Iterator<Item = &StateVector> {
        self.entries.iter().map(|e| &e.u)
    }
}

/// The quadratic model keeps every equation invariant under a global sign
/// flip of U (the same physical state with all phasors rotated by half a
/// turn), so solutions are normalized to a positive slack voltage.
pub fn canonicalize(sys: &QuadraticSystem, u: &StateVector) -> StateVector {
    let slack_vd = sys.vd_position(sys.slack_bus());
    if u[slack_vd] < 0.0 {
        -u.clone()
    } else {
        u.clone()
    }
}

/// Insert a canonicalized solution unless an existing entry is closer than
/// the tolerance in max norm. The residual bound is enforced on entry.
pub fn dedup_insert(
    set: &mut SolutionSet,
    sys: &QuadraticSystem,
    u: &StateVector,
    tol: f64,
    residual_bound: f64,
    found_on_curve: usize,
    from_start: usize,
) -> Result<bool> {
    let canonical = canonicalize(sys, u);
    let residual = sys.residual(&canonical)?.amax();
    if residual >= residual_bound {
        return Err(Error::ResidualBound {
            residual,
            bound: residual_bound,
        });
    }
    for entry in &set.entries {
        if (&entry.u - &canonical).amax() <= tol {
            return Ok(false);
        }
    }
    set.entries.push(SolutionEntry {
        u: canonical,
        residual,
        found_on_curve,
        from_start,
    });
    Ok(true)
}

/// Newton from a flat start (V_d at setpoint or 1, V_q = 0); the usual
/// route to the high-voltage operating point.
pub fn initial_solution(sys: &QuadraticSystem) -> Result<StateVector> {
    let n = sys.dim();
    let mut u = DVector::zeros(n);
    for k in 0..sys.n_bus() {
        let eqs = sys.equations_of(k);
        u[k] = match eqs.magnitude {
            Some(i) => sys.equations()[i].r.sqrt(),
            None => 1.0,
        };
    }
    let zero_dir = CurveDirection {
        l: 1,
        d: DVector::zeros(n),
    };
    let (u, _) = newton_fixed_alpha(sys, &zero_dir, 0.0, &u, 1e-10, 50)
        .map_err(|e| Error::NewtonFailure(format!("flat start did not converge: {e}")))?;
    Ok(u)
}

/// Per-curve row of the run report.
#[derive(Debug, Clone, Serialize)]
pub struct CurveRun {
    pub from_start: usize,
    pub curve: usize,
    pub status: TraceStatus,
    pub n_holo_steps: usize,
    pub n_pc_steps: usize,
    pub solutions_found: usize,
    pub new_solutions: usize,
}

/// Completeness claim of an enumeration run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Completeness {
    /// Every traced curve closed.
    Complete,
    /// Some curve was stuck or ran out of budget; the set is a lower bound.
    Conditional,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub tracer: TracerKind,
    pub n_starts: usize,
    pub n_curves_per_start: usize,
    pub n_holo_steps: usize,
    pub n_pc_steps: usize,
    pub completeness: Completeness,
    pub curves: Vec<CurveRun>,
}

impl RunReport {
    pub fn total_steps(&self) -> usize {
        self.n_holo_steps + self.n_pc_steps
    }
}

/// Assembled inputs for an enumeration, reusable across runs.
pub struct Problem {
    pub sys: QuadraticSystem,
    pub y: AdmittanceMatrix,
    pub directions: Vec<CurveDirection>,
}

impl Problem {
    pub fn from_network(net: &Network, strategy: &Strategy) -> Result<Problem> {
        let y = build_admittance(net)?;
        let sys = assemble_equations(net, &y)?;
        let directions = design_curves(&sys, strategy)?;
        Ok(Problem { sys, y, directions })
    }
}

/// Run the full enumeration on a network.
pub fn find_all_solutions(
    net: &Network,
    cfg: &EnumerateConfig,
) -> Result<(SolutionSet, RunReport)> {
    let problem = Problem::from_network(net, &cfg.strategy)?;
    let start = initial_solution(&problem.sys)?;
    enumerate_from(&problem, &start, cfg)
}

/// Run the enumeration from a given first solution.
pub fn enumerate_from(
    problem: &Problem,
    first: &StateVector,
    cfg: &EnumerateConfig,
) -> Result<(SolutionSet, RunReport)> {
    let sys = &problem.sys;
    let mut set = SolutionSet::default();
    dedup_insert(
        &mut set,
        sys,
        first,
        cfg.dedup_tol,
        cfg.hebc.solution_tol,
        0,
        0,
    )?;

    let mut report = RunReport {
        tracer: cfg.tracer,
        n_starts: 0,
        n_curves_per_start: problem.directions.len(),
        n_holo_steps: 0,
        n_pc_steps: 0,
        completeness: Completeness::Complete,
        curves: Vec::new(),
    };

    let mut next_start = 0;
    while next_start < set.len() {
        if set.len() > cfg.max_solutions {
            report.completeness = Completeness::Conditional;
            break;
        }
        let start_idx = next_start;
        let start = set.entries[start_idx].u.clone();
        next_start += 1;
        report.n_starts += 1;

        let traces = trace_all_curves(problem, &start, cfg)?;
        for (dir_l, trace) in traces {
            report.n_holo_steps += trace.n_holo_steps;
            report.n_pc_steps += trace.n_pc_steps;
            if trace.status != TraceStatus::Closed {
                report.completeness = Completeness::Conditional;
            }
            let mut new_here = 0;
            for sol in &trace.solutions {
                match dedup_insert(
                    &mut set,
                    sys,
                    sol,
                    cfg.dedup_tol,
                    cfg.hebc.solution_tol,
                    dir_l,
                    start_idx,
                ) {
                    Ok(true) => new_here += 1,
                    Ok(false) => {}
                    Err(Error::ResidualBound { residual, bound }) => {
                        log::warn!(
                            "curve {dir_l}: rejected solution with residual {residual:.3e} \
                             (bound {bound:.1e})"
                        );
                    }
                    Err(e) => return Err(e),
                }
            }
            report.curves.push(CurveRun {
                from_start: start_idx,
                curve: dir_l,
                status: trace.status,
                n_holo_steps: trace.n_holo_steps,
                n_pc_steps: trace.n_pc_steps,
                solutions_found: trace.solutions.len(),
                new_solutions: new_here,
            });
        }
    }

    Ok((set, report))
}

fn trace_all_curves(
    problem: &Problem,
    start: &StateVector,
    cfg: &EnumerateConfig,
) -> Result<Vec<(usize, TraceResult)>> {
    let run_one = |dir: &CurveDirection| -> Result<(usize, TraceResult)> {
        let trace = match cfg.tracer {
            TracerKind::Hebc => trace_curve(&problem.sys, &problem.y, dir, start, &cfg.hebc)?,
            TracerKind::Pc => trace_curve_pc(&problem.sys, dir, start, &cfg.hebc)?,
        };
        Ok((dir.l, trace))
    };

    if cfg.jobs <= 1 {
        problem.directions.iter().map(run_one).collect()
    } else {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        // curve order is preserved by the indexed collect, so the merge is
        // deterministic regardless of the worker count
        pool.install(|| {
            problem
                .directions
                .par_iter()
                .map(run_one)
                .collect::<Result<Vec<_>>>()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case_model::parse_case;
    use approx::assert_abs_diff_eq;

    const TWO_BUS_ZERO_LOAD: &str = r#"
mpc.baseMVA = 100;
mpc.bus = [
 1 3 0 0 0 0 1 1.0 0 345 1 1.1 0.9;
 2 1 0 0 0 0 1 1.0 0 345 1 1.1 0.9;
];
mpc.gen = [
 1 0 0 300 -300 1.0 100 1 250 10;
];
mpc.branch = [
 1 2 0.01 0.1 0 250 250 250 0 0 1 -360 360;
];
"#;

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

    fn problem(case: &str, seed: u64) -> Problem {
        let net = parse_case(case).unwrap();
        Problem::from_network(&net, &Strategy::Heuristic { seed }).unwrap()
    }

    #[test]
    fn zero_load_flat_start_is_exact() {
        let p = problem(TWO_BUS_ZERO_LOAD, 1);
        let u = initial_solution(&p.sys).unwrap();
        assert_abs_diff_eq!(u[0], 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(u[1], 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(u[2], 0.0, epsilon = 1e-10);
    }

    #[test]
    fn dedup_inserts_and_rejects() {
        let p = problem(TWO_BUS, 1);
        let u = initial_solution(&p.sys).unwrap();
        let mut set = SolutionSet::default();
        assert!(dedup_insert(&mut set, &p.sys, &u, 1e-4, 1e-6, 0, 0).unwrap());
        // a copy within 1e-6 is a duplicate
        let mut nudged = u.clone();
        nudged[0] += 1e-7;
        assert!(!dedup_insert(&mut set, &p.sys, &nudged, 1e-4, 1e-6, 0, 0).unwrap());
        assert_eq!(set.len(), 1);
        // an off-curve point violates the residual bound
        let mut off = u.clone();
        off[0] += 0.1;
        let err = dedup_insert(&mut set, &p.sys, &off, 1e-4, 1e-6, 0, 0).unwrap_err();
        assert!(matches!(err, Error::ResidualBound { .. }));
    }

    #[test]
    fn mirror_images_are_one_solution() {
        let p = problem(TWO_BUS, 1);
        let u = initial_solution(&p.sys).unwrap();
        let mut set = SolutionSet::default();
        dedup_insert(&mut set, &p.sys, &u, 1e-4, 1e-6, 0, 0).unwrap();
        let mirrored = -u.clone();
        assert!(!dedup_insert(&mut set, &p.sys, &mirrored, 1e-4, 1e-6, 0, 0).unwrap());
    }

    #[test]
    fn two_bus_enumeration_contains_flat_solution() {
        let net = parse_case(TWO_BUS_ZERO_LOAD).unwrap();
        let cfg = EnumerateConfig {
            strategy: Strategy::Heuristic { seed: 3 },
            ..EnumerateConfig::default()
        };
        let (set, report) = find_all_solutions(&net, &cfg).unwrap();
        assert!(!set.is_empty());
        let flat =
            initial_solution(&Problem::from_network(&net, &Strategy::Identity).unwrap().sys)
                .unwrap();
        assert!(set.states().any(|s| (s - &flat).amax() < 1e-6));
        assert_eq!(report.n_starts, set.len());
        assert_eq!(report.n_curves_per_start, 3);
    }

    #[test]
    fn enumeration_is_deterministic() {
        let net = parse_case(TWO_BUS).unwrap();
        let cfg = EnumerateConfig {
            strategy: Strategy::Heuristic { seed: 11 },
            ..EnumerateConfig::default()
        };
        let (a, ra) = find_all_solutions(&net, &cfg).unwrap();
        let (b, rb) = find_all_solutions(&net, &cfg).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.states().zip(b.states()) {
            assert_eq!(x, y, "solutions differ between identical runs");
        }
        assert_eq!(ra.total_steps(), rb.total_steps());
    }

    #[test]
    fn parallel_merge_matches_sequential() {
        let net = parse_case(TWO_BUS).unwrap();
        let mk = |jobs| EnumerateConfig {
            strategy: Strategy::Heuristic { seed: 11 },
            jobs,
            ..EnumerateConfig::default()
        };
        let (seq, _) = find_all_solutions(&net, &mk(1)).unwrap();
        let (par, _) = find_all_solutions(&net, &mk(4)).unwrap();
        assert_eq!(seq.len(), par.len());
        for (x, y) in seq.states().zip(par.states()) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn both_tracers_agree_on_two_bus() {
        let net = parse_case(TWO_BUS).unwrap();
        let hebc_cfg = EnumerateConfig {
            strategy: Strategy::Heuristic { seed: 5 },
            tracer: TracerKind::Hebc,
            ..EnumerateConfig::default()
        };
        let pc_cfg = EnumerateConfig {
            tracer: TracerKind::Pc,
            ..hebc_cfg.clone()
        };
        let (a, _) = find_all_solutions(&net, &hebc_cfg).unwrap();
        let (b, _) = find_all_solutions(&net, &pc_cfg).unwrap();
        assert_eq!(a.len(), b.len());
        for s in a.states() {
            assert!(b.states().any(|t| (t - s).amax() < 1e-4));
        }
    }

    #[test]
    fn monotone_growth_and_visited_bound() {
        let net = parse_case(TWO_BUS).unwrap();
        let cfg = EnumerateConfig {
            strategy: Strategy::Heuristic { seed: 2 },
            ..EnumerateConfig::default()
        };
        let (set, report) = find_all_solutions(&net, &cfg).unwrap();
        assert!(report.n_starts <= set.len());
        for e in set.entries() {
            assert!(e.residual < 1e-6);
        }
    }
}

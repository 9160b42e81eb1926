//! Hybrid curve tracing: sequences of large holomorphic macro steps on
//! regular segments, switching into the predictor-corrector routine at
//! singular points and back out once the curve direction change has been
//! crossed. Solutions are collected whenever the global curve parameter
//! changes sign; a trace terminates when the curve closes onto its start,
//! when a step budget runs out, or when it is stuck.
//!
//! Two parameters are tracked per point: the global alpha of the curve
//! family (solution detection happens at global alpha = 0) and the local
//! series parameter of the active embedding (pole estimates and step
//! bounds live in the local frame).

use crate::case_model::AdmittanceMatrix;
use crate::curve_design::{parameterized_residual, CurveDirection};
use crate::error::{Error, Result};
use crate::hem_core::{
    embed_at_point, evaluate_series, series_coefficients, EmbeddingCoefficients, SeriesState,
};
use crate::pade::{self, PadeApproximant};
use crate::pc_engine::{
    adapt_step, cold_start, newton_fixed_alpha, quadratic_predict, secant_predict, secant_slope,
    tangent, traverse_singularity, warm_start, CurvePoint, HoloTail, PcConfig, Starter,
};
use crate::quadratic_form::{QuadraticSystem, StateVector};
use nalgebra::DVector;
use serde::Serialize;

/// Tuning knobs of the hybrid tracer.
#[derive(Debug, Clone)]
pub struct HebcConfig {
    /// Truncation degree of the embedding power series.
    pub i_max: usize,
    /// Power-mismatch acceptance threshold for a holomorphic step, p.u.
    pub dp_max: f64,
    /// Minimal useful holomorphic progress in the local parameter.
    pub d_alpha_min: f64,
    /// Outer bound on holomorphic/PC phase alternations.
    pub max_macro_steps: usize,
    /// Bound on consecutive holomorphic steps inside one phase.
    pub max_holo_steps: usize,
    /// Global step budget for one curve trace (either routine).
    pub max_total_steps: usize,
    /// Residual bound a reported solution must satisfy, p.u.
    pub solution_tol: f64,
    /// Max-norm tolerance identifying distinct solutions on one curve.
    pub dedup_tol: f64,
    /// Max-norm tolerance for closing the loop onto the start point.
    pub closure_tol: f64,
    /// Hard cap on the local holomorphic step during growth.
    pub delta_cap: f64,
    /// +1 or -1: initial direction of travel in alpha.
    pub initial_travel_sign: f64,
    pub pc: PcConfig,
}

impl Default for HebcConfig {
    fn default() -> Self {
        HebcConfig {
            i_max: crate::hem_core::DEFAULT_I_MAX,
            dp_max: 1e-3,
            d_alpha_min: 1e-6,
            max_macro_steps: 10_000,
            max_holo_steps: 500,
            max_total_steps: 200_000,
            solution_tol: 1e-6,
            dedup_tol: 1e-4,
            closure_tol: 1e-4,
            delta_cap: 100.0,
            initial_travel_sign: 1.0,
            pc: PcConfig::default(),
        }
    }
}

/// Which routine produced a step-log row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Routine {
    Holo,
    Pc,
}

/// One row of the step log (CSV-friendly).
#[derive(Debug, Clone, Serialize)]
pub struct StepLogRow {
    pub routine: Routine,
    pub arc: f64,
    pub alpha: f64,
    pub iters: usize,
    pub h: f64,
    pub r_m: f64,
}

/// Why the tracer switched into the predictor-corrector routine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SwitchReason {
    CorrectorFailed,
    ProgressTooSmall,
    SolutionMiss,
    EmbeddingSingular,
}

#[derive(Debug, Clone, Serialize)]
pub struct SwitchEvent {
    pub at_arc: f64,
    pub reason: SwitchReason,
    pub warm: bool,
    /// Step interval the predictor-corrector started from.
    pub s_pc: f64,
    /// Estimated pole distance when a warm start was possible.
    pub d_hp: Option<f64>,
    /// Last holomorphic step size at the switch.
    pub last_dh: Option<f64>,
}

/// Terminal state of one curve trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceStatus {
    Closed,
    BudgetExhausted,
    Stuck,
}

/// Everything one curve trace produced.
#[derive(Debug, Clone)]
pub struct TraceResult {
    pub solutions: Vec<StateVector>,
    pub status: TraceStatus,
    pub n_holo_steps: usize,
    pub n_pc_steps: usize,
    /// Newton iterations spent inside predictor-corrector phases.
    pub pc_corrector_iters: usize,
    pub step_log: Vec<StepLogRow>,
    pub switch_events: Vec<SwitchEvent>,
}

impl TraceResult {
    fn new(start: StateVector) -> Self {
        TraceResult {
            solutions: vec![start],
            status: TraceStatus::BudgetExhausted,
            n_holo_steps: 0,
            n_pc_steps: 0,
            pc_corrector_iters: 0,
            step_log: Vec::new(),
            switch_events: Vec::new(),
        }
    }

    fn total_steps(&self) -> usize {
        self.n_holo_steps + self.n_pc_steps
    }
}

/// The holomorphic model built at one embedding: coefficients, series, and
/// per-variable rational approximants.
pub struct HoloModel {
    pub coeffs: EmbeddingCoefficients,
    pub series: SeriesState,
    /// Rational approximant per bus voltage, used for evaluation.
    pub v_pades: Vec<Option<PadeApproximant>>,
    /// Signed minimum pole in the local frame, travel-filtered.
    pub p_min: Option<f64>,
    /// Global alpha at the embedding center.
    pub base_alpha: f64,
}

impl HoloModel {
    /// Evaluate the model at a local parameter: rational approximants per
    /// voltage with a truncated-series fallback, and the global alpha.
    pub fn eval_state(&self, sys: &QuadraticSystem, local: f64) -> (StateVector, f64) {
        let series_eval = evaluate_series(&self.series, local);
        let mut v = series_eval.v;
        for (k, p) in self.v_pades.iter().enumerate() {
            if let Some(p) = p {
                if let Ok(val) = pade::pade_eval(p, local) {
                    v[k] = val;
                }
            }
        }
        (sys.state_from_voltages(&v), self.base_alpha + local)
    }
}

/// Build the holomorphic model at a point: embed, expand, approximate, and
/// scan the denominators for the nearest correctly-signed pole.
pub fn build_holo_model(
    sys: &QuadraticSystem,
    y: &AdmittanceMatrix,
    dir: &CurveDirection,
    at: &CurvePoint,
    travel_sign: f64,
    i_max: usize,
) -> Result<HoloModel> {
    let coeffs = embed_at_point(sys, y, dir, &at.u, at.alpha)?;
    let series = series_coefficients(sys, y, &coeffs, i_max)?;
    let mut v_pades = Vec::with_capacity(sys.n_bus());
    for k in 0..sys.n_bus() {
        v_pades.push(pade::pade_from_series_with_fallback(series.v_series(k)).ok());
    }
    let mut all = Vec::new();
    for s in series.all_series() {
        if let Ok(p) = pade::pade_from_series_with_fallback(&s) {
            all.push(p);
        }
    }
    let p_min = pade::min_pole_filtered(&all, travel_sign, 1e-9);
    Ok(HoloModel {
        coeffs,
        series,
        v_pades,
        p_min,
        base_alpha: at.alpha,
    })
}

/// Outcome of one holomorphic macro step.
pub enum HoloOutcome {
    Accepted {
        next: CurvePoint,
        /// Signed local step actually taken.
        local_alpha_step: f64,
        /// Corrector iterations of the fixed-alpha polish.
        iters: usize,
    },
    CorrectorFailed,
    ProgressTooSmall,
}

pub struct HoloStep {
    pub outcome: HoloOutcome,
    /// Present whenever the embedding itself succeeded.
    pub model: Option<HoloModel>,
}

/// One holomorphic macro step: build the model, pick the local step by a
/// bidirectional factor-2 search bounded by the mismatch threshold and the
/// pole estimate, then polish with fixed-alpha Newton.
pub fn holo_step(
    sys: &QuadraticSystem,
    y: &AdmittanceMatrix,
    dir: &CurveDirection,
    current: &CurvePoint,
    travel_sign: f64,
    cfg: &HebcConfig,
) -> Result<HoloStep> {
    let model = match build_holo_model(sys, y, dir, current, travel_sign, cfg.i_max) {
        Ok(m) => m,
        Err(
            Error::EmbeddingSingular
            | Error::DegenerateVoltage { .. }
            | Error::DegeneratePade(_),
        ) => {
            return Ok(HoloStep {
                outcome: HoloOutcome::CorrectorFailed,
                model: None,
            })
        }
        Err(e) => return Err(e),
    };

    let mismatch = |delta: f64| -> f64 {
        let (u, alpha) = model.eval_state(sys, delta);
        match parameterized_residual(sys, dir, &u, alpha) {
            Ok(r) => r.amax(),
            Err(_) => f64::INFINITY,
        }
    };
    let pole_bound = model.p_min.map(|p| p.abs());
    let within_pole = |delta: f64| pole_bound.map(|b| delta.abs() < b).unwrap_or(true);

    let mut delta = travel_sign * 0.1f64.min(pole_bound.map(|b| 0.5 * b).unwrap_or(0.1));
    // grow while acceptable, then shrink until acceptable
    while delta.abs() * 2.0 <= cfg.delta_cap
        && within_pole(delta * 2.0)
        && mismatch(delta * 2.0) < cfg.dp_max
    {
        delta *= 2.0;
    }
    // the factor-2 ladder stops half way to the pole; probe the pole edge
    // directly so a fold is approached in a few macro steps
    if let Some(bound) = pole_bound {
        for frac in [0.95, 0.9, 0.8] {
            let probe = travel_sign * frac * bound;
            if probe.abs() > delta.abs()
                && probe.abs() <= cfg.delta_cap
                && mismatch(probe) < cfg.dp_max
            {
                delta = probe;
                break;
            }
        }
    }
    while delta.abs() >= cfg.d_alpha_min && (!within_pole(delta) || mismatch(delta) >= cfg.dp_max)
    {
        delta *= 0.5;
    }
    if delta.abs() < cfg.d_alpha_min {
        return Ok(HoloStep {
            outcome: HoloOutcome::ProgressTooSmall,
            model: Some(model),
        });
    }

    let (guess, alpha_next) = model.eval_state(sys, delta);
    match newton_fixed_alpha(
        sys,
        dir,
        alpha_next,
        &guess,
        cfg.pc.newton_tol,
        cfg.pc.newton_max_iters,
    ) {
        Ok((u, iters)) => {
            let dist = {
                let du = (&u - &current.u).norm_squared();
                let da = alpha_next - current.alpha;
                (du + da * da).sqrt()
            };
            let next = CurvePoint {
                u,
                alpha: alpha_next,
                arc: current.arc + dist,
            };
            Ok(HoloStep {
                outcome: HoloOutcome::Accepted {
                    next,
                    local_alpha_step: delta,
                    iters,
                },
                model: Some(model),
            })
        }
        Err(Error::CorrectorFailure { .. }) => Ok(HoloStep {
            outcome: HoloOutcome::CorrectorFailed,
            model: Some(model),
        }),
        Err(e) => Err(e),
    }
}

/// Check for a global-alpha sign change between two consecutive points and
/// refine the crossing to a solution of the unparameterized system.
pub fn detect_solution(
    sys: &QuadraticSystem,
    dir: &CurveDirection,
    prev: &CurvePoint,
    next: &CurvePoint,
    cfg: &HebcConfig,
) -> Result<Option<StateVector>> {
    let crossing = prev.alpha * next.alpha < 0.0 || next.alpha == 0.0;
    if !crossing {
        return Ok(None);
    }
    let guess = if next.alpha == 0.0 {
        next.u.clone()
    } else {
        let t = prev.alpha / (prev.alpha - next.alpha);
        &prev.u + (&next.u - &prev.u) * t
    };
    let (u, _) = newton_fixed_alpha(
        sys,
        dir,
        0.0,
        &guess,
        cfg.pc.newton_tol,
        cfg.pc.newton_max_iters,
    )?;
    let res = sys.residual(&u)?.amax();
    if res >= cfg.solution_tol {
        return Err(Error::ResidualBound {
            residual: res,
            bound: cfg.solution_tol,
        });
    }
    Ok(Some(u))
}

/// Closed-loop test: the last recorded point returns within the closure
/// tolerance (max norm over u and alpha) of the start after a warm-up
/// arclength of ten closure tolerances.
pub fn check_closure(points: &[CurvePoint], start: &CurvePoint, cfg: &HebcConfig) -> bool {
    if points.len() < 3 {
        return false;
    }
    let current = points.last().expect("nonempty");
    let arc_travelled = current.arc - points[0].arc;
    if arc_travelled <= 10.0 * cfg.closure_tol {
        return false;
    }
    let mut dist = (current.alpha - start.alpha).abs();
    for i in 0..current.u.len() {
        dist = dist.max((current.u[i] - start.u[i]).abs());
    }
    dist <= cfg.closure_tol
}

/// Crossing bookkeeping: the distinct solutions found on this trace and the
/// arclength at which each was last crossed. Re-crossing a known solution
/// after a warm-up arc means the trace has come around the component.
struct CrossingLog {
    last_arc: Vec<f64>,
    warm_up: f64,
}

impl CrossingLog {
    fn new(warm_up: f64) -> Self {
        CrossingLog {
            last_arc: vec![0.0],
            warm_up,
        }
    }

    /// Record a crossing; returns true when the component has been lapped.
    fn record(
        &mut self,
        solutions: &mut Vec<StateVector>,
        u: StateVector,
        arc: f64,
        tol: f64,
    ) -> bool {
        for (i, s) in solutions.iter().enumerate() {
            if (s - &u).amax() <= tol {
                let lapped = arc - self.last_arc[i] > self.warm_up;
                self.last_arc[i] = arc;
                return lapped;
            }
        }
        solutions.push(u);
        self.last_arc.push(arc);
        false
    }
}

/// Trace one curve with the hybrid holomorphic/predictor-corrector loop.
pub fn trace_curve(
    sys: &QuadraticSystem,
    y: &AdmittanceMatrix,
    dir: &CurveDirection,
    start: &StateVector,
    cfg: &HebcConfig,
) -> Result<TraceResult> {
    let start_res = sys.residual(start)?.amax();
    if start_res >= cfg.solution_tol {
        return Err(Error::ResidualBound {
            residual: start_res,
            bound: cfg.solution_tol,
        });
    }
    let start_pt = CurvePoint {
        u: start.clone(),
        alpha: 0.0,
        arc: 0.0,
    };
    let mut result = TraceResult::new(start.clone());
    let mut history = vec![start_pt.clone()];
    let mut crossings = CrossingLog::new(10.0 * cfg.closure_tol);
    let mut travel = cfg.initial_travel_sign;
    let mut last_dh: Option<f64> = None;
    let mut pending: Option<(SwitchReason, Option<HoloModel>)> = None;

    'outer: for _macro_step in 0..cfg.max_macro_steps {
        if result.total_steps() >= cfg.max_total_steps {
            result.status = TraceStatus::BudgetExhausted;
            break 'outer;
        }

        if pending.is_none() {
            // holomorphic phase
            for _k_h in 0..cfg.max_holo_steps {
                if result.total_steps() >= cfg.max_total_steps {
                    result.status = TraceStatus::BudgetExhausted;
                    break 'outer;
                }
                let current = history.last().expect("history nonempty").clone();
                let step = holo_step(sys, y, dir, &current, travel, cfg)?;
                match step.outcome {
                    HoloOutcome::Accepted {
                        next,
                        local_alpha_step,
                        iters,
                    } => {
                        match detect_solution(sys, dir, &current, &next, cfg) {
                            Ok(Some(u)) => {
                                let lapped = crossings.record(
                                    &mut result.solutions,
                                    u,
                                    next.arc,
                                    cfg.dedup_tol,
                                );
                                if lapped {
                                    push_holo_point(
                                        &mut result,
                                        &current,
                                        &next,
                                        local_alpha_step,
                                        iters,
                                    );
                                    history.push(next);
                                    result.status = TraceStatus::Closed;
                                    break 'outer;
                                }
                            }
                            Ok(None) => {}
                            Err(_) => {
                                // crossing refinement failed: drop the point
                                // and re-approach with a cold-started PC
                                pending = Some((SwitchReason::SolutionMiss, None));
                                break;
                            }
                        }
                        push_holo_point(&mut result, &current, &next, local_alpha_step, iters);
                        last_dh = Some(local_alpha_step.abs());
                        history.push(next);
                        if check_closure(&history, &start_pt, cfg) {
                            result.status = TraceStatus::Closed;
                            break 'outer;
                        }
                    }
                    HoloOutcome::ProgressTooSmall => {
                        pending = Some((SwitchReason::ProgressTooSmall, step.model));
                        break;
                    }
                    HoloOutcome::CorrectorFailed => {
                        let reason = if step.model.is_none() {
                            SwitchReason::EmbeddingSingular
                        } else {
                            SwitchReason::CorrectorFailed
                        };
                        pending = Some((reason, step.model));
                        break;
                    }
                }
            }
            if pending.is_none() {
                continue 'outer;
            }
        }

        // predictor-corrector phase
        let (reason, model) = pending.take().expect("switch pending");
        let current = history.last().expect("history nonempty").clone();
        let starter = make_starter(sys, dir, &history, &current, model.as_ref(), last_dh, travel, cfg);
        let starter = match starter {
            Ok(s) => s,
            Err(_) => {
                result.status = TraceStatus::Stuck;
                break 'outer;
            }
        };
        result.switch_events.push(SwitchEvent {
            at_arc: current.arc,
            reason,
            warm: starter.warm,
            s_pc: starter.s_pc,
            d_hp: model.as_ref().and_then(|m| m.p_min).map(|p| p.abs()),
            last_dh,
        });
        match traverse_singularity(sys, dir, &starter, &cfg.pc) {
            Ok(traversal) => {
                result.pc_corrector_iters += traversal.total_iters;
                let mut closed = false;
                for p in traversal.points {
                    let prev = history.last().expect("history nonempty").clone();
                    if result.total_steps() >= cfg.max_total_steps {
                        result.status = TraceStatus::BudgetExhausted;
                        break 'outer;
                    }
                    match detect_solution(sys, dir, &prev, &p, cfg) {
                        Ok(Some(u)) => {
                            closed = crossings.record(
                                &mut result.solutions,
                                u,
                                p.arc,
                                cfg.dedup_tol,
                            );
                        }
                        Ok(None) | Err(_) => {}
                    }
                    result.n_pc_steps += 1;
                    result.step_log.push(StepLogRow {
                        routine: Routine::Pc,
                        arc: p.arc,
                        alpha: p.alpha,
                        iters: 0,
                        h: p.arc - prev.arc,
                        r_m: secant_slope(&prev, &p),
                    });
                    history.push(p);
                    if closed || check_closure(&history, &start_pt, cfg) {
                        result.status = TraceStatus::Closed;
                        break 'outer;
                    }
                }
                let m = history.len();
                if m >= 2 {
                    let da = history[m - 1].alpha - history[m - 2].alpha;
                    if da != 0.0 {
                        travel = da.signum();
                    }
                }
            }
            Err(_) => {
                result.status = TraceStatus::Stuck;
                break 'outer;
            }
        }
    }
    Ok(result)
}

fn push_holo_point(
    result: &mut TraceResult,
    prev: &CurvePoint,
    next: &CurvePoint,
    delta: f64,
    iters: usize,
) {
    result.n_holo_steps += 1;
    result.step_log.push(StepLogRow {
        routine: Routine::Holo,
        arc: next.arc,
        alpha: next.alpha,
        iters,
        h: delta.abs(),
        r_m: secant_slope(prev, next),
    });
}

/// A detected crossing closes the curve when its refined solution lands
/// back on the start point after the warm-up arclength.
fn closes_at(
    history: &[CurvePoint],
    at: &CurvePoint,
    solution: &StateVector,
    start: &CurvePoint,
    cfg: &HebcConfig,
) -> bool {
    let mut probe: Vec<CurvePoint> = history.to_vec();
    probe.push(CurvePoint {
        u: solution.clone(),
        alpha: 0.0,
        arc: at.arc,
    });
    check_closure(&probe, start, cfg)
}

#[allow(clippy::too_many_arguments)]
fn make_starter(
    sys: &QuadraticSystem,
    dir: &CurveDirection,
    history: &[CurvePoint],
    current: &CurvePoint,
    model: Option<&HoloModel>,
    last_dh: Option<f64>,
    travel: f64,
    cfg: &HebcConfig,
) -> Result<Starter> {
    if let (Some(model), Some(dh)) = (model, last_dh) {
        if model.p_min.is_some() {
            let eval = |local: f64| model.eval_state(sys, local);
            let tail = HoloTail {
                last: current,
                local_alpha: 0.0,
                p_min: model.p_min,
                last_dh: dh * travel,
                eval: &eval,
            };
            if let Ok(s) = warm_start(sys, dir, &tail, &cfg.pc) {
                return Ok(s);
            }
        }
    }
    let travel_vec = travel_estimate(sys, dir, history, travel)?;
    cold_start(sys, dir, current, &travel_vec, &cfg.pc)
}

/// Direction of travel in (u, alpha) space: secant of the last two points,
/// or the oriented tangent when the trace has a single point.
fn travel_estimate(
    sys: &QuadraticSystem,
    dir: &CurveDirection,
    history: &[CurvePoint],
    travel_sign: f64,
) -> Result<DVector<f64>> {
    let n = sys.dim();
    let m = history.len();
    if m >= 2 {
        let (a, b) = (&history[m - 2], &history[m - 1]);
        let mut t = DVector::zeros(n + 1);
        for i in 0..n {
            t[i] = b.u[i] - a.u[i];
        }
        t[n] = b.alpha - a.alpha;
        let norm = t.norm();
        if norm > 1e-12 {
            return Ok(t / norm);
        }
    }
    let mut t = tangent(sys, dir, &history[m - 1])?;
    if t[n] * travel_sign < 0.0 {
        t = -t;
    }
    Ok(t)
}

/// Reference tracer: the same curve followed entirely by the
/// predictor-corrector routine.
pub fn trace_curve_pc(
    sys: &QuadraticSystem,
    dir: &CurveDirection,
    start: &StateVector,
    cfg: &HebcConfig,
) -> Result<TraceResult> {
    let start_res = sys.residual(start)?.amax();
    if start_res >= cfg.solution_tol {
        return Err(Error::ResidualBound {
            residual: start_res,
            bound: cfg.solution_tol,
        });
    }
    let start_pt = CurvePoint {
        u: start.clone(),
        alpha: 0.0,
        arc: 0.0,
    };
    let mut result = TraceResult::new(start.clone());
    let mut history = vec![start_pt.clone()];

    // seed backward points against the initial travel direction
    let mut t0 = tangent(sys, dir, &start_pt)?;
    if t0[sys.dim()] * cfg.initial_travel_sign < 0.0 {
        t0 = -t0;
    }
    let starter = cold_start(sys, dir, &start_pt, &t0, &cfg.pc)?;
    let mut trail = starter.seeds;
    let mut h = starter.s_pc;

    loop {
        if result.total_steps() >= cfg.max_total_steps {
            result.status = TraceStatus::BudgetExhausted;
            break;
        }
        let m = trail.len();
        let predicted = if m >= 3 {
            quadratic_predict(&trail[m - 3], &trail[m - 2], &trail[m - 1], h)
        } else {
            secant_predict(&trail[m - 2], &trail[m - 1], h)
        }?;
        let last = trail[m - 1].clone();
        let mut normal = DVector::zeros(sys.dim() + 1);
        for i in 0..sys.dim() {
            normal[i] = predicted.0[i] - last.u[i];
        }
        normal[sys.dim()] = predicted.1 - last.alpha;
        let norm = normal.norm();
        if norm < 1e-14 {
            result.status = TraceStatus::Stuck;
            break;
        }
        normal /= norm;

        match crate::pc_engine::newton_correct_with(
            sys,
            dir,
            (&predicted.0, predicted.1),
            &normal,
            cfg.pc.newton_tol,
            cfg.pc.newton_max_iters,
        ) {
            Ok(c) => {
                result.pc_corrector_iters += c.iters;
                let dist = {
                    let du = (&c.u - &last.u).norm_squared();
                    let da = c.alpha - last.alpha;
                    (du + da * da).sqrt()
                };
                let point = CurvePoint {
                    arc: last.arc + dist,
                    u: c.u,
                    alpha: c.alpha,
                };
                let mut closed = false;
                match detect_solution(sys, dir, &last, &point, cfg) {
                    Ok(Some(u)) => {
                        closed = closes_at(&history, &point, &u, &start_pt, cfg);
                        record_solution(&mut result.solutions, u, cfg.dedup_tol);
                    }
                    Ok(None) | Err(_) => {}
                }
                result.n_pc_steps += 1;
                result.step_log.push(StepLogRow {
                    routine: Routine::Pc,
                    arc: point.arc,
                    alpha: point.alpha,
                    iters: c.iters,
                    h,
                    r_m: secant_slope(&last, &point),
                });
                history.push(point.clone());
                trail.push(point);
                if trail.len() > 4 {
                    trail.remove(0);
                }
                if closed || check_closure(&history, &start_pt, cfg) {
                    result.status = TraceStatus::Closed;
                    break;
                }
                match adapt_step(h, c.iters, &cfg.pc) {
                    Ok(next) => h = next,
                    Err(_) => {
                        result.status = TraceStatus::Stuck;
                        break;
                    }
                }
            }
            Err(Error::CorrectorFailure { .. }) => {
                match adapt_step(h, cfg.pc.newton_max_iters + 1, &cfg.pc) {
                    Ok(next) => h = next,
                    Err(_) => {
                        result.status = TraceStatus::Stuck;
                        break;
                    }
                }
            }
            Err(e) => return Err(e),
        }
    }
    Ok(result)
}

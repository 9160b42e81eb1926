//! Predictor-corrector curve tracer: quadratic predictor over arclength,
//! Newton corrector with a pseudo-arclength hyperplane constraint, factor-2
//! adaptive step control, the pole-informed warm starter, and the
//! direction-change / secant-slope exit rule for singularity traversal.

use crate::curve_design::{parameterized_residual, CurveDirection};
use crate::error::{Error, Result};
use crate::quadratic_form::{QuadraticSystem, StateVector};
use nalgebra::{DMatrix, DVector};

/// A point on the traced curve with its cumulative arclength.
#[derive(Debug, Clone)]
pub struct CurvePoint {
    pub u: StateVector,
    pub alpha: f64,
    /// Monotone along the trace.
    pub arc: f64,
}

impl CurvePoint {
    /// Euclidean distance to another point in (u, alpha) space.
    pub fn distance(&self, other: &CurvePoint) -> f64 {
        let du = (&self.u - &other.u).norm_squared();
        let da = self.alpha - other.alpha;
        (du + da * da).sqrt()
    }
}

/// Step-control and corrector parameters.
#[derive(Debug, Clone)]
pub struct PcConfig {
    pub h_min: f64,
    pub h_max: f64,
    pub h_init: f64,
    pub newton_tol: f64,
    pub newton_max_iters: usize,
    /// Secant-slope threshold ending a singularity traversal.
    pub r_max: f64,
    pub growth: f64,
    pub shrink: f64,
    /// Step budget of one traversal call.
    pub max_traversal_steps: usize,
}

impl Default for PcConfig {
    fn default() -> Self {
        PcConfig {
            h_min: 1e-8,
            h_max: 0.5,
            h_init: 1e-3,
            newton_tol: 1e-8,
            newton_max_iters: 10,
            r_max: 2e4,
            growth: 2.0,
            shrink: 0.5,
            max_traversal_steps: 5000,
        }
    }
}

/// Corrector output before arclength bookkeeping.
#[derive(Debug, Clone)]
pub struct Corrected {
    pub u: StateVector,
    pub alpha: f64,
    pub iters: usize,
}

/// Newton iteration on the parameterized system at a fixed alpha.
pub fn newton_fixed_alpha(
    sys: &QuadraticSystem,
    dir: &CurveDirection,
    alpha: f64,
    start: &StateVector,
    tol: f64,
    max_iters: usize,
) -> Result<(StateVector, usize)> {
    let mut u = start.clone();
    let mut last_res = f64::INFINITY;
    for iter in 0..=max_iters {
        let res = parameterized_residual(sys, dir, &u, alpha)?;
        last_res = res.amax();
        if last_res < tol {
            return Ok((u, iter));
        }
        if iter == max_iters {
            break;
        }
        let jac = sys.jacobian(&u)?;
        let step = jac.lu().solve(&(-res)).ok_or(Error::CorrectorFailure {
            max_iters,
            residual: last_res,
        })?;
        if step.iter().any(|v| !v.is_finite()) {
            return Err(Error::CorrectorFailure {
                max_iters,
                residual: last_res,
            });
        }
        u += step;
    }
    Err(Error::CorrectorFailure {
        max_iters,
        residual: last_res,
    })
}

/// Lagrange extrapolation of (u, alpha) as quadratic functions of arclength,
/// evaluated at p3.arc + h. The points must be ordered by arclength.
pub fn quadratic_predict(
    p1: &CurvePoint,
    p2: &CurvePoint,
    p3: &CurvePoint,
    h: f64,
) -> Result<(StateVector, f64)> {
    let (s1, s2, s3) = (p1.arc, p2.arc, p3.arc);
    if s1 >= s2 || s2 >= s3 {
        return Err(Error::Prediction(format!(
            "arclength must increase through the predictor stencil ({s1}, {s2}, {s3})"
        )));
    }
    let s = s3 + h;
    let l1 = (s - s2) * (s - s3) / ((s1 - s2) * (s1 - s3));
    let l2 = (s - s1) * (s - s3) / ((s2 - s1) * (s2 - s3));
    let l3 = (s - s1) * (s - s2) / ((s3 - s1) * (s3 - s2));
    let u = &p1.u * l1 + &p2.u * l2 + &p3.u * l3;
    let alpha = p1.alpha * l1 + p2.alpha * l2 + p3.alpha * l3;
    Ok((u, alpha))
}

/// Secant prediction from two points.
pub fn secant_predict(p1: &CurvePoint, p2: &CurvePoint, h: f64) -> Result<(StateVector, f64)> {
    let ds = p2.arc - p1.arc;
    if ds <= 0.0 {
        return Err(Error::Prediction("coincident predictor points".into()));
    }
    let t = h / ds;
    let u = &p2.u + (&p2.u - &p1.u) * t;
    let alpha = p2.alpha + (p2.alpha - p1.alpha) * t;
    Ok((u, alpha))
}

/// Unit tangent of the curve at a point: the nullspace of the extended
/// Jacobian [J, -d], found through a bordered solve.
pub fn tangent(
    sys: &QuadraticSystem,
    dir: &CurveDirection,
    point: &CurvePoint,
) -> Result<DVector<f64>> {
    let n = sys.dim();
    let jac = sys.jacobian(&point.u)?;
    for border in 0..=n {
        let mut a = DMatrix::zeros(n + 1, n + 1);
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] = jac[(i, j)];
            }
            a[(i, n)] = -dir.d[i];
        }
        a[(n, n - border.min(n))] = 1.0;
        let mut rhs = DVector::zeros(n + 1);
        rhs[n] = 1.0;
        if let Some(t) = a.lu().solve(&rhs) {
            let norm = t.norm();
            if norm > 1e-10 && t.iter().all(|v| v.is_finite()) {
                return Ok(t / norm);
            }
        }
    }
    Err(Error::Prediction(
        "tangent bordered solves all failed; point may be singular".into(),
    ))
}

/// Newton on the augmented system [parameterized residual; hyperplane]
/// where the hyperplane passes through the predicted point with the given
/// normal in (u, alpha) space.
pub fn newton_correct(
    sys: &QuadraticSystem,
    dir: &CurveDirection,
    predicted: (&StateVector, f64),
    normal: &DVector<f64>,
) -> Result<Corrected> {
    let cfg = PcConfig::default();
    newton_correct_with(
        sys,
        dir,
        predicted,
        normal,
        cfg.newton_tol,
        cfg.newton_max_iters,
    )
}

pub fn newton_correct_with(
    sys: &QuadraticSystem,
    dir: &CurveDirection,
    predicted: (&StateVector, f64),
    normal: &DVector<f64>,
    tol: f64,
    max_iters: usize,
) -> Result<Corrected> {
    let n = sys.dim();
    if normal.len() != n + 1 || normal.norm() == 0.0 {
        return Err(Error::Prediction(
            "hyperplane normal must be nonzero".into(),
        ));
    }
    let (u_pred, alpha_pred) = predicted;
    let mut u = u_pred.clone();
    let mut alpha = alpha_pred;
    let mut last_res = f64::INFINITY;
    for iter in 0..=max_iters {
        let res = parameterized_residual(sys, dir, &u, alpha)?;
        let plane: f64 = (0..n).map(|i| normal[i] * (u[i] - u_pred[i])).sum::<f64>()
            + normal[n] * (alpha - alpha_pred);
        last_res = res.amax().max(plane.abs());
        if last_res < tol {
            return Ok(Corrected { u, alpha, iters: iter });
        }
        if iter == max_iters {
            break;
        }
        let jac = sys.jacobian(&u)?;
        let mut a = DMatrix::zeros(n + 1, n + 1);
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] = jac[(i, j)];
            }
            a[(i, n)] = -dir.d[i];
        }
        for j in 0..=n {
            a[(n, j)] = normal[j];
        }
        let mut rhs = DVector::zeros(n + 1);
        for i in 0..n {
            rhs[i] = -res[i];
        }
        rhs[n] = -plane;
        let step = a.lu().solve(&rhs).ok_or(Error::CorrectorFailure {
            max_iters,
            residual: last_res,
        })?;
        if step.iter().any(|v| !v.is_finite()) {
            return Err(Error::CorrectorFailure {
                max_iters,
                residual: last_res,
            });
        }
        for i in 0..n {
            u[i] += step[i];
        }
        alpha += step[n];
    }
    Err(Error::CorrectorFailure {
        max_iters,
        residual: last_res,
    })
}

/// Factor-2 step policy: grow when the corrector took at most 2 iterations,
/// hold on 3-4, shrink on 5 or more (failures report a large count).
pub fn adapt_step(h: f64, iters_used: usize, cfg: &PcConfig) -> Result<f64> {
    let next = if iters_used <= 2 {
        h * cfg.growth
    } else if iters_used <= 4 {
        h
    } else {
        h * cfg.shrink
    };
    if next < cfg.h_min {
        return Err(Error::StepFloor { floor: cfg.h_min });
    }
    Ok(next.min(cfg.h_max))
}

/// Maximum variable secant slope between consecutive points; +infinity when
/// alpha did not move.
pub fn secant_slope(p_prev: &CurvePoint, p_curr: &CurvePoint) -> f64 {
    let da = p_curr.alpha - p_prev.alpha;
    if da == 0.0 {
        return f64::INFINITY;
    }
    let mut max = 0.0f64;
    for i in 0..p_curr.u.len() {
        max = max.max(((p_curr.u[i] - p_prev.u[i]) / da).abs());
    }
    max
}

/// Seeds for the predictor-corrector routine: the initial step interval and
/// the seed stencil ending at the entry point.
#[derive(Debug, Clone)]
pub struct Starter {
    pub s_pc: f64,
    /// Ordered by arclength; the last entry is the entry point.
    pub seeds: Vec<CurvePoint>,
    pub warm: bool,
}

/// Holomorphic tail handed to the warm starter: an evaluator of the last
/// embedding at a local parameter offset, the local parameter of the last
/// accepted point, the signed minimum pole in the same local frame, and the
/// last holomorphic step size.
pub struct HoloTail<'a> {
    pub last: &'a CurvePoint,
    pub local_alpha: f64,
    pub p_min: Option<f64>,
    pub last_dh: f64,
    /// local parameter -> (state estimate, global alpha)
    pub eval: &'a dyn Fn(f64) -> (StateVector, f64),
}

/// Pole-informed warm starter: step interval of one fifth of the estimated
/// pole distance, capped at 0.45 of the last holomorphic step; two backward
/// points come from the rational approximants and are corrected onto the
/// curve at fixed alpha. Falls back to the cold starter when no pole
/// estimate exists.
pub fn warm_start(
    sys: &QuadraticSystem,
    dir: &CurveDirection,
    tail: &HoloTail,
    cfg: &PcConfig,
) -> Result<Starter> {
    let Some(p_min) = tail.p_min else {
        let travel = travel_direction(sys, dir, tail)?;
        return cold_start(sys, dir, tail.last, &travel, cfg);
    };
    let d_hp = (p_min - tail.local_alpha).abs();
    let s_pc = (d_hp / 5.0).min(0.45 * tail.last_dh.abs());
    if s_pc < cfg.h_min {
        return Err(Error::StepFloor { floor: cfg.h_min });
    }
    let mut seeds = Vec::with_capacity(3);
    for offset_steps in [2.0, 1.0] {
        let local = tail.local_alpha - offset_steps * s_pc * tail.last_dh.signum();
        let (guess, alpha) = (tail.eval)(local);
        let (u, _) =
            newton_fixed_alpha(sys, dir, alpha, &guess, cfg.newton_tol, cfg.newton_max_iters)?;
        seeds.push(CurvePoint { u, alpha, arc: 0.0 });
    }
    seeds.push(tail.last.clone());
    rebase_arcs(&mut seeds, tail.last.arc);
    validate_seed_order(&seeds)?;
    Ok(Starter {
        s_pc,
        seeds,
        warm: true,
    })
}

/// Cold starter: small fixed initial interval, backward points by small
/// corrected steps against the travel direction.
pub fn cold_start(
    sys: &QuadraticSystem,
    dir: &CurveDirection,
    at: &CurvePoint,
    travel: &DVector<f64>,
    cfg: &PcConfig,
) -> Result<Starter> {
    let n = sys.dim();
    let s_pc = cfg.h_init;
    let mut seeds = Vec::with_capacity(3);
    for offset_steps in [2.0, 1.0] {
        let mut u = at.u.clone();
        for i in 0..n {
            u[i] -= travel[i] * offset_steps * s_pc;
        }
        let alpha = at.alpha - travel[n] * offset_steps * s_pc;
        let corrected = newton_correct_with(
            sys,
            dir,
            (&u, alpha),
            travel,
            cfg.newton_tol,
            cfg.newton_max_iters,
        )?;
        seeds.push(CurvePoint {
            u: corrected.u,
            alpha: corrected.alpha,
            arc: 0.0,
        });
    }
    seeds.push(at.clone());
    rebase_arcs(&mut seeds, at.arc);
    validate_seed_order(&seeds)?;
    Ok(Starter {
        s_pc,
        seeds,
        warm: false,
    })
}

fn travel_direction(
    sys: &QuadraticSystem,
    dir: &CurveDirection,
    tail: &HoloTail,
) -> Result<DVector<f64>> {
    let n = sys.dim();
    let back = (tail.eval)(tail.local_alpha - 0.25 * tail.last_dh);
    let mut t = DVector::zeros(n + 1);
    for i in 0..n {
        t[i] = tail.last.u[i] - back.0[i];
    }
    t[n] = tail.last.alpha - back.1;
    let norm = t.norm();
    if norm > 1e-12 {
        return Ok(t / norm);
    }
    tangent(sys, dir, tail.last)
}

fn rebase_arcs(seeds: &mut [CurvePoint], last_arc: f64) {
    let m = seeds.len();
    let mut arcs = vec![0.0; m];
    for i in (0..m - 1).rev() {
        arcs[i] = arcs[i + 1] - seeds[i].distance(&seeds[i + 1]);
    }
    for (p, rel) in seeds.iter_mut().zip(arcs) {
        p.arc = last_arc + rel;
    }
}

fn validate_seed_order(seeds: &[CurvePoint]) -> Result<()> {
    for w in seeds.windows(2) {
        if w[1].arc <= w[0].arc {
            return Err(Error::Prediction(
                "starter produced coincident seed points".into(),
            ));
        }
    }
    Ok(())
}

/// Accept a corrected step only when it stayed near the prediction and did
/// not reverse along the already-traversed path; both symptoms mean the
/// corrector left the local branch.
pub fn step_is_sound(prev2: &CurvePoint, prev: &CurvePoint, c: &Corrected, h: f64) -> bool {
    let n = prev.u.len();
    let mut advance_dot = 0.0;
    let mut advance_sq = 0.0;
    for i in 0..n {
        let new_leg = c.u[i] - prev.u[i];
        let old_leg = prev.u[i] - prev2.u[i];
        advance_dot += new_leg * old_leg;
        advance_sq += new_leg * new_leg;
    }
    let new_da = c.alpha - prev.alpha;
    let old_da = prev.alpha - prev2.alpha;
    advance_dot += new_da * old_da;
    advance_sq += new_da * new_da;
    if advance_dot < 0.0 {
        return false;
    }
    // the step should not overshoot the intended arclength by much
    advance_sq.sqrt() <= 2.0 * h
}

/// Result of a singularity traversal.
#[derive(Debug, Clone)]
pub struct Traversal {
    /// Newly accepted points in order (the seeds are not repeated).
    pub points: Vec<CurvePoint>,
    /// Whether the alpha travel direction flipped during the traversal.
    pub direction_changed: bool,
    /// Corrector iterations spent.
    pub total_iters: usize,
}

/// Run predictor-corrector steps until the alpha direction has flipped and
/// the maximum secant slope has dropped back below the threshold.
///
/// A repeated flip inside the same traversal restarts the slope watch. The
/// step budget bounds the loop; hitting it returns the points accumulated
/// so far with `direction_changed` reporting what was seen.
pub fn traverse_singularity(
    sys: &QuadraticSystem,
    dir: &CurveDirection,
    starter: &Starter,
    cfg: &PcConfig,
) -> Result<Traversal> {
    if starter.seeds.len() < 2 {
        return Err(Error::Prediction(
            "traversal needs at least two seeds".into(),
        ));
    }
    let mut trail: Vec<CurvePoint> = starter.seeds.clone();
    let mut out = Vec::new();
    let mut h = starter.s_pc;
    let mut direction_changed = false;
    let mut total_iters = 0;

    for _ in 0..cfg.max_traversal_steps {
        let m = trail.len();
        let predicted = if m >= 3 {
            quadratic_predict(&trail[m - 3], &trail[m - 2], &trail[m - 1], h)
        } else {
            secant_predict(&trail[m - 2], &trail[m - 1], h)
        }?;
        let last = &trail[m - 1];
        let mut normal = DVector::zeros(sys.dim() + 1);
        for i in 0..sys.dim() {
            normal[i] = predicted.0[i] - last.u[i];
        }
        normal[sys.dim()] = predicted.1 - last.alpha;
        let norm = normal.norm();
        if norm < 1e-14 {
            return Err(Error::Prediction("degenerate prediction direction".into()));
        }
        normal /= norm;

        match newton_correct_with(
            sys,
            dir,
            (&predicted.0, predicted.1),
            &normal,
            cfg.newton_tol,
            cfg.newton_max_iters,
        ) {
            Ok(c) => {
                total_iters += c.iters;
                if !step_is_sound(&trail[m - 2], &trail[m - 1], &c, h) {
                    // landed on a different branch or doubled back
                    match adapt_step(h, cfg.newton_max_iters + 1, cfg) {
                        Ok(next) => {
                            h = next;
                            continue;
                        }
                        Err(e) => {
                            if direction_changed {
                                return Ok(Traversal {
                                    points: out,
                                    direction_changed,
                                    total_iters,
                                });
                            }
                            return Err(e);
                        }
                    }
                }
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
                let p_prev = &trail[m - 1];
                let p_prev2 = &trail[m - 2];
                let flip = (p_prev.alpha - p_prev2.alpha) * (point.alpha - p_prev.alpha) < 0.0;
                let slope = secant_slope(p_prev, &point);
                out.push(point.clone());
                trail.push(point);
                if flip {
                    direction_changed = true;
                }
                if direction_changed && !flip && slope <= cfg.r_max {
                    return Ok(Traversal {
                        points: out,
                        direction_changed,
                        total_iters,
                    });
                }
                h = adapt_step(h, c.iters, cfg)?;
            }
            Err(Error::CorrectorFailure { .. }) => {
                total_iters += cfg.newton_max_iters;
                match adapt_step(h, cfg.newton_max_iters + 1, cfg) {
                    Ok(next) => h = next,
                    Err(e) => {
                        if direction_changed {
                            return Ok(Traversal {
                                points: out,
                                direction_changed,
                                total_iters,
                            });
                        }
                        return Err(e);
                    }
                }
            }
            Err(e) => return Err(e),
        }
    }
    Ok(Traversal {
        points: out,
        direction_changed,
        total_iters,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadratic_form::SymmetricSparse;
    use approx::assert_abs_diff_eq;

    /// The circle benchmark: x^2 + y^2 = 1 swept against y^2 = r2 + alpha.
    /// Tracing the second equation gives a closed loop with folds at y = 0
    /// (alpha minimal) and x = 0 (alpha maximal).
    fn circle_system(r2: f64) -> (QuadraticSystem, CurveDirection) {
        let mut m1 = SymmetricSparse::new(2);
        m1.add_monomial(0, 0, 1.0);
        m1.add_monomial(1, 1, 1.0);
        let mut m2 = SymmetricSparse::new(2);
        m2.add_monomial(1, 1, 1.0);
        let sys = QuadraticSystem::synthetic(2, vec![(m1, 1.0), (m2, r2)]);
        let dir = CurveDirection {
            l: 2,
            d: DVector::from_column_slice(&[0.0, 1.0]),
        };
        (sys, dir)
    }

    fn circle_point(theta: f64, r2: f64, arc: f64) -> CurvePoint {
        CurvePoint {
            u: DVector::from_column_slice(&[theta.cos(), theta.sin()]),
            alpha: theta.sin().powi(2) - r2,
            arc,
        }
    }

    #[test]
    fn collinear_points_extrapolate_linearly() {
        let mk = |s: f64| CurvePoint {
            u: DVector::from_column_slice(&[2.0 * s, -s]),
            alpha: 0.5 * s,
            arc: s,
        };
        let (u, alpha) = quadratic_predict(&mk(0.0), &mk(0.1), &mk(0.2), 0.1).unwrap();
        assert_abs_diff_eq!(u[0], 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(u[1], -0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(alpha, 0.15, epsilon = 1e-12);
    }

    #[test]
    fn parabola_reproduced_exactly() {
        let mk = |a: f64| CurvePoint {
            u: DVector::from_element(1, a * a),
            alpha: a,
            arc: a,
        };
        let (u, alpha) = quadratic_predict(&mk(0.0), &mk(0.1), &mk(0.2), 0.1).unwrap();
        assert_abs_diff_eq!(alpha, 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(u[0], 0.09, epsilon = 1e-12);
    }

    #[test]
    fn coincident_points_error() {
        let p = CurvePoint {
            u: DVector::zeros(1),
            alpha: 0.0,
            arc: 0.0,
        };
        assert!(matches!(
            quadratic_predict(&p, &p, &p, 0.1),
            Err(Error::Prediction(_))
        ));
    }

    #[test]
    fn predictor_error_is_cubic_on_circle() {
        let r2 = 0.5;
        // sample three points separated by chordal arclength h, predict the
        // fourth, and compare against the analytic parameterization
        let residual_for = |h: f64| -> f64 {
            let theta0 = 0.7;
            let advance = |theta: f64, step: f64| {
                let mut t = theta;
                let mut here = circle_point(theta, r2, 0.0);
                let mut arc = 0.0;
                while arc < step {
                    t += 1e-5;
                    let next = circle_point(t, r2, 0.0);
                    arc += next.distance(&here);
                    here = next;
                }
                (t, arc)
            };
            let p1 = circle_point(theta0, r2, 0.0);
            let (t2, a2) = advance(theta0, h);
            let (t3, a3) = advance(t2, h);
            let mut p2 = circle_point(t2, r2, 0.0);
            let mut p3 = circle_point(t3, r2, 0.0);
            p2.arc = a2;
            p3.arc = a2 + a3;
            let (t4, a4) = advance(t3, h);
            let (u, alpha) = quadratic_predict(&p1, &p2, &p3, a4).unwrap();
            let truth = circle_point(t4, r2, 0.0);
            let du = (&u - &truth.u).norm_squared();
            (du + (alpha - truth.alpha).powi(2)).sqrt()
        };
        let e1 = residual_for(0.04);
        let e2 = residual_for(0.02);
        let order = (e1 / e2).log2();
        assert!(order > 2.5, "observed order {order} ({e1:.3e}, {e2:.3e})");
    }

    #[test]
    fn corrector_converges_quadratically_near_circle() {
        let (sys, dir) = circle_system(0.5);
        let truth = circle_point(0.9, 0.5, 0.0);
        let mut u = truth.u.clone();
        u[0] += 1e-3;
        let normal = tangent(&sys, &dir, &truth).unwrap();
        let c = newton_correct(&sys, &dir, (&u, truth.alpha), &normal).unwrap();
        assert!(c.iters <= 3, "iters {}", c.iters);
        let res = parameterized_residual(&sys, &dir, &c.u, c.alpha).unwrap();
        assert!(res.amax() < 1e-8);
    }

    #[test]
    fn fixed_alpha_correction_fails_across_fold() {
        // the circle fold at y = 0 sits at alpha = -r2; fixing alpha past it
        // leaves no nearby solution branch
        let (sys, dir) = circle_system(0.5);
        let near_fold = circle_point(0.02, 0.5, 0.0);
        let res = newton_fixed_alpha(&sys, &dir, -0.55, &near_fold.u, 1e-8, 10);
        assert!(matches!(res, Err(Error::CorrectorFailure { .. })));
    }

    #[test]
    fn already_on_curve_returns_immediately() {
        let (sys, dir) = circle_system(0.5);
        let p = circle_point(1.1, 0.5, 0.0);
        let normal = tangent(&sys, &dir, &p).unwrap();
        let c = newton_correct(&sys, &dir, (&p.u, p.alpha), &normal).unwrap();
        assert!(c.iters <= 1);
        assert_abs_diff_eq!((&c.u - &p.u).norm(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn step_policy_bands() {
        let cfg = PcConfig::default();
        assert_abs_diff_eq!(adapt_step(0.1, 1, &cfg).unwrap(), 0.2);
        assert_abs_diff_eq!(adapt_step(0.1, 3, &cfg).unwrap(), 0.1);
        assert_abs_diff_eq!(adapt_step(0.1, 6, &cfg).unwrap(), 0.05);
        assert_abs_diff_eq!(adapt_step(cfg.h_max, 1, &cfg).unwrap(), cfg.h_max);
        assert!(matches!(
            adapt_step(1.5e-8, 9, &cfg),
            Err(Error::StepFloor { .. })
        ));
    }

    #[test]
    fn secant_slope_cases() {
        let p1 = CurvePoint {
            u: DVector::from_column_slice(&[0.0, 0.0]),
            alpha: 0.0,
            arc: 0.0,
        };
        let p2 = CurvePoint {
            u: DVector::from_column_slice(&[0.1, 0.2]),
            alpha: 0.1,
            arc: 0.3,
        };
        assert_abs_diff_eq!(secant_slope(&p1, &p2), 2.0);
        let mut p3 = p2.clone();
        p3.alpha = 0.0;
        assert!(secant_slope(&p1, &p3).is_infinite());
    }

    #[test]
    fn slope_grows_near_circle_fold() {
        // approaching y = 0 the slope |dx/dalpha| ~ 1/(2|y|) diverges
        let r2 = 0.5;
        let mut prev_slope = 0.0;
        for k in 1..=4 {
            let theta = 0.4 / (k as f64);
            let a = circle_point(theta + 0.01, r2, 0.0);
            let b = circle_point(theta, r2, 0.0);
            let slope = secant_slope(&a, &b);
            assert!(slope > prev_slope);
            prev_slope = slope;
        }
        assert!(prev_slope > 4.0);
    }

    #[test]
    fn warm_start_respects_both_caps() {
        let (sys, dir) = circle_system(0.5);
        let r2 = 0.5;
        let last = circle_point(0.3, r2, 1.0);
        let eval = |local: f64| {
            let theta = 0.3 - local * 2.0;
            let p = circle_point(theta, r2, 0.0);
            (p.u, p.alpha)
        };
        let cfg = PcConfig::default();
        // d_hp = |0.5 - 0| -> s = 0.1; the 0.45 * last_dh cap stays loose
        let tail = HoloTail {
            last: &last,
            local_alpha: 0.0,
            p_min: Some(0.5),
            last_dh: 1.0,
            eval: &eval,
        };
        let starter = warm_start(&sys, &dir, &tail, &cfg).unwrap();
        assert!(starter.warm);
        assert_abs_diff_eq!(starter.s_pc, 0.1);
        assert_eq!(starter.seeds.len(), 3);
        // far pole: the 0.45 cap binds
        let tail2 = HoloTail {
            last: &last,
            local_alpha: 0.0,
            p_min: Some(5.0),
            last_dh: 1.0,
            eval: &eval,
        };
        let starter2 = warm_start(&sys, &dir, &tail2, &cfg).unwrap();
        assert_abs_diff_eq!(starter2.s_pc, 0.45);
        for w in starter2.seeds.windows(2) {
            assert!(w[0].arc < w[1].arc);
        }
        for p in &starter2.seeds {
            let r = parameterized_residual(&sys, &dir, &p.u, p.alpha).unwrap();
            assert!(r.amax() < 1e-7);
        }
    }

    #[test]
    fn missing_pole_falls_back_to_cold() {
        let (sys, dir) = circle_system(0.5);
        let last = circle_point(0.3, 0.5, 1.0);
        let eval = |local: f64| {
            let theta = 0.3 - local * 2.0;
            let p = circle_point(theta, 0.5, 0.0);
            (p.u, p.alpha)
        };
        let cfg = PcConfig::default();
        let tail = HoloTail {
            last: &last,
            local_alpha: 0.0,
            p_min: None,
            last_dh: 1.0,
            eval: &eval,
        };
        let starter = warm_start(&sys, &dir, &tail, &cfg).unwrap();
        assert!(!starter.warm);
        assert_abs_diff_eq!(starter.s_pc, cfg.h_init);
    }

    #[test]
    fn traversal_crosses_circle_fold_and_exits() {
        let (sys, dir) = circle_system(0.5);
        // travel toward the y = 0 fold, clockwise from theta = 0.5
        let seeds: Vec<CurvePoint> = {
            let mut pts = Vec::new();
            let mut arc = 0.0;
            let mut prev: Option<CurvePoint> = None;
            for k in 0..3 {
                let theta = 0.5 - 0.05 * k as f64;
                let mut p = circle_point(theta, 0.5, 0.0);
                if let Some(q) = &prev {
                    arc += p.distance(q);
                }
                p.arc = arc;
                prev = Some(p.clone());
                pts.push(p);
            }
            pts
        };
        let starter = Starter {
            s_pc: 0.05,
            seeds,
            warm: false,
        };
        let cfg = PcConfig {
            r_max: 10.0,
            ..PcConfig::default()
        };
        let t = traverse_singularity(&sys, &dir, &starter, &cfg).unwrap();
        assert!(t.direction_changed);
        let exit = t.points.last().unwrap();
        assert!(exit.u[1] < 0.0, "exit y = {}", exit.u[1]);
        let alphas: Vec<f64> = t.points.iter().map(|p| p.alpha).collect();
        let min_alpha = alphas.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min_alpha < alphas[0] && min_alpha < *alphas.last().unwrap());
        // sampled minimum sits within a step of the fold at alpha = -0.5
        assert!((min_alpha - (-0.5)).abs() < 2e-2, "fold alpha {min_alpha}");
        // the fold is bracketed: y changes sign across it
        assert!(t.points.iter().any(|p| p.u[1] > 0.0));
        assert!(t.points.iter().any(|p| p.u[1] < 0.0));
        for p in &t.points {
            let r = parameterized_residual(&sys, &dir, &p.u, p.alpha).unwrap();
            assert!(r.amax() < 1e-8);
        }
        for w in t.points.windows(2) {
            assert!(w[1].arc > w[0].arc);
        }
    }

    #[test]
    fn no_fold_no_direction_change() {
        // x^2 = 1 + alpha traced in alpha: no fold away from x = 0
        let mut m = SymmetricSparse::new(1);
        m.add_monomial(0, 0, 1.0);
        let sys = QuadraticSystem::synthetic(1, vec![(m, 1.0)]);
        let dir = CurveDirection {
            l: 1,
            d: DVector::from_element(1, 1.0),
        };
        let mk = |x: f64, arc: f64| CurvePoint {
            u: DVector::from_element(1, x),
            alpha: x * x - 1.0,
            arc,
        };
        let p1 = mk(1.0, 0.0);
        let second = mk(1.01, 0.0);
        let arc2 = p1.distance(&second);
        let p2 = mk(1.01, arc2);
        let starter = Starter {
            s_pc: 0.02,
            seeds: vec![p1, p2],
            warm: false,
        };
        let cfg = PcConfig {
            max_traversal_steps: 40,
            ..PcConfig::default()
        };
        let t = traverse_singularity(&sys, &dir, &starter, &cfg).unwrap();
        assert!(!t.direction_changed);
        assert_eq!(t.points.len(), 40);
    }
}

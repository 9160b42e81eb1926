//! Dense-matrix operation-count model and step-efficiency metrics.
//!
//! Counts are abstract flop estimates under a dense-factorization
//! assumption, not measured runtimes.

use crate::error::{Error, Result};
use serde::Serialize;

/// Operation counts for one holomorphic macro step versus Newton correction.
#[derive(Debug, Clone, Serialize)]
pub struct CostModel {
    pub n_bus: usize,
    pub n_gen: usize,
    pub i_max: usize,
    /// Power-series construction: one LU of the embedding system plus
    /// i_max forward/backward substitutions.
    pub c_tl: f64,
    /// Pade construction across all 2*n_bus - 1 state variables.
    pub c_pd: f64,
    /// One Newton iteration on the (2*n_bus - 1)-dimensional Jacobian.
    pub c_newton: f64,
    /// (c_tl + c_pd + 3 c_newton) / (3 c_newton): holomorphic step cost in
    /// units of a three-iteration predictor-corrector step.
    pub r_ratio: f64,
}

fn lu_cost(m: f64) -> f64 {
    (2.0 / 3.0) * m.powi(3)
}

fn solve_cost(m: f64) -> f64 {
    2.0 * m.powi(2)
}

/// Evaluate the cost model at a given system size.
pub fn complexity_estimates(n_bus: usize, n_gen: usize, i_max: usize) -> CostModel {
    let embed_dim = 4.0 * n_bus as f64 + n_gen as f64 - 3.0;
    let pade_dim = 2.0 * i_max as f64 + 2.0;
    let newton_dim = 2.0 * n_bus as f64 - 1.0;

    let c_tl = lu_cost(embed_dim) + solve_cost(embed_dim) * i_max as f64;
    let c_pd = (lu_cost(pade_dim) + solve_cost(pade_dim)) * newton_dim;
    let c_newton = lu_cost(newton_dim) + solve_cost(newton_dim);
    let r_ratio = (c_tl + c_pd + 3.0 * c_newton) / (3.0 * c_newton);

    CostModel {
        n_bus,
        n_gen,
        i_max,
        c_tl,
        c_pd,
        c_newton,
        r_ratio,
    }
}

/// Size of the Pade matching system in real arithmetic, 2 (i_max + 1).
pub fn pade_matching_dim_real(i_max: usize) -> usize {
    2 * (i_max + 1)
}

/// Equivalent predictor-corrector steps represented by one holomorphic step:
/// (n_pc - n_he_pc) / n_he_holo.
pub fn equivalent_steps(n_pc: usize, n_he_pc: usize, n_he_holo: usize) -> Result<f64> {
    if n_he_holo == 0 {
        return Err(Error::UndefinedMetric(
            "equivalent steps need at least one holomorphic step".into(),
        ));
    }
    Ok((n_pc as f64 - n_he_pc as f64) / n_he_holo as f64)
}

/// Average number of seed points per problem dimension, N^(1/(2 n_bus - 1)).
pub fn avg_steps_per_dim(total_steps: usize, n_bus: usize) -> f64 {
    (total_steps as f64).powf(1.0 / (2.0 * n_bus as f64 - 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn asymptotic_ratio_reaches_limit() {
        let model = complexity_estimates(1_000_000, 200_000, 15);
        assert!((model.r_ratio - 4.087).abs() < 0.01, "{}", model.r_ratio);
        // the limit is insensitive to i_max: the cubic Newton term dominates
        for i_max in [4, 15, 60] {
            let m = complexity_estimates(1_000_000, 200_000, i_max);
            assert!((m.r_ratio - 4.087).abs() < 0.01);
        }
    }

    #[test]
    fn newton_cost_hand_computed() {
        let model = complexity_estimates(2, 0, 15);
        assert_abs_diff_eq!(model.c_newton, 36.0);
    }

    #[test]
    fn formulas_match_hand_computation() {
        for (n_bus, n_gen, i_max) in [(2usize, 0usize, 15usize), (9, 2, 15), (14, 4, 15)] {
            let m = complexity_estimates(n_bus, n_gen, i_max);
            let e = (4 * n_bus + n_gen - 3) as f64;
            let p = (2 * i_max + 2) as f64;
            let w = (2 * n_bus - 1) as f64;
            let rel = 1e-14;
            assert_abs_diff_eq!(
                m.c_tl,
                2.0 / 3.0 * e * e * e + 2.0 * e * e * i_max as f64,
                epsilon = rel * m.c_tl
            );
            assert_abs_diff_eq!(
                m.c_pd,
                (2.0 / 3.0 * p * p * p + 2.0 * p * p) * w,
                epsilon = rel * m.c_pd
            );
            assert_abs_diff_eq!(
                m.c_newton,
                2.0 / 3.0 * w * w * w + 2.0 * w * w,
                epsilon = rel * m.c_newton
            );
        }
    }

    #[test]
    fn ratio_decreases_toward_limit() {
        let mut prev = f64::INFINITY;
        for exp in 2..=6 {
            let n_bus = 10usize.pow(exp);
            let m = complexity_estimates(n_bus, n_bus / 5, 15);
            assert!(m.r_ratio < prev);
            prev = m.r_ratio;
        }
        assert!((prev - 4.087).abs() < 0.01);
    }

    #[test]
    fn equivalent_steps_table_row() {
        let n_eqv = equivalent_steps(2962, 228, 253).unwrap();
        assert!((n_eqv - 10.81).abs() < 0.01);
        assert_abs_diff_eq!(equivalent_steps(100, 100, 7).unwrap(), 0.0);
        assert!(equivalent_steps(10, 5, 0).is_err());
    }

    #[test]
    fn seeds_per_dimension() {
        let r_eq = avg_steps_per_dim(253 + 228, 3);
        assert!((r_eq - 3.44).abs() < 0.01);
        assert_abs_diff_eq!(avg_steps_per_dim(1, 14), 1.0);
    }

    #[test]
    fn pade_real_dimension() {
        assert_eq!(pade_matching_dim_real(15), 32);
    }
}

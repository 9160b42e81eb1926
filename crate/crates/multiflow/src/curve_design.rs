//! Curve design: the parameterized families {PF(U) - alpha * d_l} with
//! d_l the l-th column of the inverse of an invertible recombination map.
//!
//! Three strategies produce the map: identity (the classic design),
//! a user-supplied matrix file, and a seeded randomized search for a
//! recombination whose rows are positive-definite quadratic forms with
//! positive constants (so every single-equation level set is an ellipse
//! and the traced curves are compact).

use crate::error::{Error, Result};
use crate::quadratic_form::{QuadraticSystem, StateVector};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Where a map came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Identity,
    UserFile,
    Heuristic,
}

/// An invertible linear recombination of the equations.
#[derive(Debug, Clone)]
pub struct EllipticalMap {
    e_matrix: DMatrix<f64>,
    e_inverse: DMatrix<f64>,
    provenance: Provenance,
}

impl EllipticalMap {
    pub fn identity(n: usize) -> Self {
        EllipticalMap {
            e_matrix: DMatrix::identity(n, n),
            e_inverse: DMatrix::identity(n, n),
            provenance: Provenance::Identity,
        }
    }

    /// Wrap an explicit matrix, verifying invertibility.
    pub fn from_matrix(m: DMatrix<f64>, provenance: Provenance) -> Result<Self> {
        let n = m.nrows();
        if n != m.ncols() {
            return Err(Error::Design(format!(
                "map must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let inv = m
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Design("map matrix is not invertible".into()))?;
        let residual = (&m * &inv - DMatrix::<f64>::identity(n, n)).abs().max();
        if !residual.is_finite() || residual > 1e-10 {
            return Err(Error::Design(format!(
                "map inverse residual {residual:.3e} exceeds 1e-10; matrix is near-singular"
            )));
        }
        Ok(EllipticalMap {
            e_matrix: m,
            e_inverse: inv,
            provenance,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.e_matrix
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.e_inverse
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn dim(&self) -> usize {
        self.e_matrix.nrows()
    }
}

/// One curve family: d = inverse map applied to the l-th unit vector.
#[derive(Debug, Clone)]
pub struct CurveDirection {
    /// 1-based equation index.
    pub l: usize,
    pub d: DVector<f64>,
}

/// How the map should be produced.
#[derive(Debug, Clone)]
pub enum Strategy {
    Identity,
    UserFile(DMatrix<f64>),
    Heuristic { seed: u64 },
}

/// Per-row elliptical check result.
#[derive(Debug, Clone, Copy)]
pub struct RowCheck {
    pub pd: bool,
    pub gamma_positive: bool,
}

/// Attempt bound for the randomized map search.
pub const HEURISTIC_ATTEMPTS: usize = 200;

/// Residual of the parameterized system: residual(sys, u) - alpha * d.
pub fn parameterized_residual(
    sys: &QuadraticSystem,
    dir: &CurveDirection,
    u: &StateVector,
    alpha: f64,
) -> Result<DVector<f64>> {
    if dir.d.len() != sys.dim() {
        return Err(Error::DimensionMismatch {
            expected: sys.dim(),
            actual: dir.d.len(),
        });
    }
    Ok(sys.residual(u)? - &dir.d * alpha)
}

/// Check every row of the map: pd is true when the recombined quadratic
/// part passes a Cholesky factorization, gamma_positive when the recombined
/// constant is positive.
pub fn verify_elliptical(sys: &QuadraticSystem, map: &EllipticalMap) -> Result<Vec<RowCheck>> {
    let n = sys.dim();
    if map.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: map.dim(),
        });
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let weights: Vec<f64> = (0..n).map(|j| map.e_matrix[(i, j)]).collect();
        let h = combine_quadratic(sys, &weights);
        let gamma: f64 = sys
            .equations()
            .iter()
            .enumerate()
            .map(|(j, eq)| weights[j] * eq.r)
            .sum();
        out.push(RowCheck {
            pd: h.cholesky().is_some(),
            gamma_positive: gamma > 0.0,
        });
    }
    Ok(out)
}

/// Produce the map for a strategy and derive all n curve directions.
pub fn design_curves(sys: &QuadraticSystem, strategy: &Strategy) -> Result<Vec<CurveDirection>> {
    let map = design_map(sys, strategy)?;
    Ok(directions_from_map(&map))
}

/// Produce the map alone; [`design_curves`] wraps this.
pub fn design_map(sys: &QuadraticSystem, strategy: &Strategy) -> Result<EllipticalMap> {
    let n = sys.dim();
    match strategy {
        Strategy::Identity => Ok(EllipticalMap::identity(n)),
        Strategy::UserFile(m) => {
            let map = EllipticalMap::from_matrix(m.clone(), Provenance::UserFile)?;
            let checks = verify_elliptical(sys, &map)?;
            for (i, c) in checks.iter().enumerate() {
                if !c.pd {
                    return Err(Error::Design(format!(
                        "row {} of the supplied map is not positive definite",
                        i + 1
                    )));
                }
                if !c.gamma_positive {
                    return Err(Error::Design(format!(
                        "row {} of the supplied map has non-positive constant",
                        i + 1
                    )));
                }
            }
            Ok(map)
        }
        Strategy::Heuristic { seed } => Ok(heuristic_map(sys, *seed)),
    }
}

pub fn directions_from_map(map: &EllipticalMap) -> Vec<CurveDirection> {
    let n = map.dim();
    (0..n)
        .map(|l| CurveDirection {
            l: l + 1,
            d: map.e_inverse.column(l).into_owned(),
        })
        .collect()
}

fn combine_quadratic(sys: &QuadraticSystem, weights: &[f64]) -> DMatrix<f64> {
    let n = sys.dim();
    let mut h = DMatrix::zeros(n, n);
    for (j, eq) in sys.equations().iter().enumerate() {
        let w = weights[j];
        if w == 0.0 {
            continue;
        }
        for &(a, b, v) in eq.m.triplets() {
            h[(a, b)] += w * v;
            if a != b {
                h[(b, a)] += w * v;
            }
        }
    }
    h
}

/// Randomized search for an elliptical recombination.
///
/// Each attempt samples positive weights, sharpens them toward a larger
/// smallest eigenvalue (the smallest eigenvalue of an affine matrix family
/// is concave in the weights, so shifting mass onto the equation with the
/// largest Rayleigh quotient of the current minimal eigenvector improves
/// monotonically in the limit), then perturbs the accepted base combination
/// into n distinct rows. Falls back to the identity map with a warning when
/// every attempt fails.
fn heuristic_map(sys: &QuadraticSystem, seed: u64) -> EllipticalMap {
    let n = sys.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    for _attempt in 0..HEURISTIC_ATTEMPTS {
        let mut c: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05f64..1.0)).collect();
        let sum: f64 = c.iter().sum();
        c.iter_mut().for_each(|v| *v /= sum);

        let mut lambda = f64::NEG_INFINITY;
        for iter in 0..60 {
            let h = combine_quadratic(sys, &c);
            let eig = h.symmetric_eigen();
            let (idx, lmin) = eig
                .eigenvalues
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, v)| (i, *v))
                .unwrap();
            lambda = lmin;
            if lmin > 1e-6 {
                break;
            }
            let v = eig.eigenvectors.column(idx).into_owned();
            let sv = StateVector::from_column_slice(v.as_slice());
            let best = sys
                .equations()
                .iter()
                .map(|eq| eq.m.quad(&sv))
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            let gamma = 2.0 / (iter as f64 + 2.0);
            c.iter_mut().for_each(|w| *w *= 1.0 - gamma);
            c[best] += gamma;
        }
        if lambda <= 0.0 {
            continue;
        }
        let gamma_base: f64 = sys
            .equations()
            .iter()
            .enumerate()
            .map(|(j, eq)| c[j] * eq.r)
            .sum();
        if gamma_base <= 0.0 {
            continue;
        }

        let max_norm = sys
            .equations()
            .iter()
            .map(|eq| eq.m.to_dense().norm())
            .fold(0.0f64, f64::max)
            .max(1e-12);
        let mut eps = 0.5 * lambda / max_norm;
        for _ in 0..40 {
            let mut m = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    m[(i, j)] = c[j] + if i == j { eps } else { 0.0 };
                }
            }
            if let Ok(map) = EllipticalMap::from_matrix(m, Provenance::Heuristic) {
                if let Ok(checks) = verify_elliptical(sys, &map) {
                    if checks.iter().all(|r| r.pd && r.gamma_positive) {
                        return normalize_directions(map);
                    }
                }
            }
            eps *= 0.5;
            if eps < 1e-12 {
                break;
            }
        }
    }

    log::warn!(
        "heuristic curve design found no elliptical recombination in {HEURISTIC_ATTEMPTS} \
         attempts; falling back to the identity design"
    );
    EllipticalMap::identity(n)
}

/// Rescale map rows so every derived direction has unit norm. Positive row
/// scaling preserves definiteness and the sign of the constants.
fn normalize_directions(map: EllipticalMap) -> EllipticalMap {
    let n = map.dim();
    let mut scale = DVector::from_element(n, 1.0);
    for l in 0..n {
        let norm = map.e_inverse.column(l).norm();
        if norm > 0.0 {
            scale[l] = norm;
        }
    }
    // scaling row l of the map by s_l divides direction d_l by s_l
    let mut e = map.e_matrix;
    let mut inv = map.e_inverse;
    for l in 0..n {
        for j in 0..n {
            e[(l, j)] *= scale[l];
            inv[(j, l)] /= scale[l];
        }
    }
    EllipticalMap {
        e_matrix: e,
        e_inverse: inv,
        provenance: Provenance::Heuristic,
    }
}

/// Parse a dense map matrix from CSV (first data line holds n, then n rows
/// of n comma-separated values) or JSON ({"n": ..., "rows": [[...]]}).
pub fn parse_e_matrix(text: &str) -> Result<DMatrix<f64>> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('{') {
        #[derive(serde::Deserialize)]
        struct File {
            n: usize,
            rows: Vec<Vec<f64>>,
        }
        let file: File = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        if file.rows.len() != file.n || file.rows.iter().any(|r| r.len() != file.n) {
            return Err(Error::Design(format!(
                "map file header says n = {} but rows disagree",
                file.n
            )));
        }
        let flat: Vec<f64> = file.rows.into_iter().flatten().collect();
        return Ok(DMatrix::from_row_slice(file.n, file.n, &flat));
    }
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    let n: usize = lines
        .next()
        .ok_or_else(|| Error::Design("empty map file".into()))?
        .parse()
        .map_err(|_| Error::Design("first CSV line must hold the dimension n".into()))?;
    let mut flat = Vec::with_capacity(n * n);
    for (i, line) in lines.enumerate() {
        if i >= n {
            return Err(Error::Design(format!("map file has more than {n} rows")));
        }
        for tok in line.split(',') {
            let v: f64 = tok
                .trim()
                .parse()
                .map_err(|_| Error::Design(format!("bad number {tok:?} in map row {}", i + 1)))?;
            flat.push(v);
        }
    }
    if flat.len() != n * n {
        return Err(Error::Design(format!(
            "map file should hold {} values, found {}",
            n * n,
            flat.len()
        )));
    }
    Ok(DMatrix::from_row_slice(n, n, &flat))
}

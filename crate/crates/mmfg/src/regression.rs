//! Polynomial least-squares regression on particle states.
//!
//! The backward pass realizes conditional expectations E[·|X_n, γ_n] by
//! regressing targets onto a total-degree polynomial basis in the state
//! coordinates; the same machinery fits the decoupling fields exported with
//! an equilibrium bundle. Solves go through a thresholded SVD, which returns
//! the minimum-norm coefficients when the design is collinear — an everyday
//! occurrence here, because a point-mass initial condition makes the time-0
//! design rank one, where the minimum-norm fit correctly degrades to the
//! plain conditional mean. A hard error is reserved for designs that cannot
//! identify the basis at all: fewer rows than basis functions, or non-finite
//! data.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::measure::ParticleEnsemble;

/// Monomial basis of total degree ≤ `degree` in `vars` variables.
///
/// Ordering is graded lexicographic with the constant first, e.g. for two
/// variables and degree two: 1, x, γ, x², xγ, γ².
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolyBasis {
    degree: usize,
    vars: usize,
    exponents: Vec<Vec<u32>>,
}

impl PolyBasis {
    #[must_use]
    pub fn new(degree: usize, vars: usize) -> Self {
        let mut exponents = Vec::new();
        let mut current = vec![0u32; vars];
        for total in 0..=degree as u32 {
            emit_exponents(&mut exponents, &mut current, 0, total);
        }
        Self { degree, vars, exponents }
    }

    #[must_use]
    pub fn degree(&self) -> usize {
        self.degree
    }

    #[must_use]
    pub fn vars(&self) -> usize {
        self.vars
    }

    /// Number of basis functions.
    #[must_use]
    pub fn size(&self) -> usize {
        self.exponents.len()
    }

    /// Evaluates all basis functions at `point` into `out`.
    pub fn eval_into(&self, point: &[f64], out: &mut [f64]) {
        debug_assert_eq!(point.len(), self.vars);
        debug_assert_eq!(out.len(), self.size());
        for (slot, exps) in out.iter_mut().zip(&self.exponents) {
            let mut v = 1.0;
            for (x, &e) in point.iter().zip(exps) {
                for _ in 0..e {
                    v *= x;
                }
            }
            *slot = v;
        }
    }
}

/// Emits all exponent vectors of exact total degree `total` over the
/// variables from `var` on, in lexicographic order.
fn emit_exponents(out: &mut Vec<Vec<u32>>, current: &mut Vec<u32>, var: usize, total: u32) {
    if var + 1 == current.len() {
        current[var] = total;
        out.push(current.clone());
        current[var] = 0;
        return;
    }
    for e in (0..=total).rev() {
        current[var] = e;
        emit_exponents(out, current, var + 1, total - e);
        current[var] = 0;
    }
}

/// A fitted polynomial map ℝ^vars → ℝ.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyFit {
    pub basis: PolyBasis,
    pub coeffs: Vec<f64>,
    /// Root-mean-square residual over the training rows.
    pub residual_rms: f64,
    /// Largest absolute residual over the training rows.
    pub residual_sup: f64,
    /// Coefficient of determination (1 when the target is constant at
    /// working precision).
    pub r2: f64,
    /// Rank retained by the SVD threshold.
    pub effective_rank: usize,
}

impl PolyFit {
    /// A constant fit, used for warm starts before any regression exists.
    #[must_use]
    pub fn constant(basis: PolyBasis, value: f64) -> Self {
        let mut coeffs = vec![0.0; basis.size()];
        coeffs[0] = value;
        Self { basis, coeffs, residual_rms: 0.0, residual_sup: 0.0, r2: 1.0, effective_rank: 1 }
    }

    #[must_use]
    pub fn eval(&self, point: &[f64]) -> f64 {
        let mut scratch = vec![0.0; self.basis.size()];
        self.basis.eval_into(point, &mut scratch);
        scratch.iter().zip(&self.coeffs).map(|(b, c)| b * c).sum()
    }

    /// Convex combination of coefficients; both fits must share the basis.
    pub fn mix_coeffs(&self, other: &PolyFit, rho: f64) -> Result<PolyFit> {
        if self.basis != other.basis {
            return Err(Error::DimensionMismatch {
                expected: self.basis.size(),
                got: other.basis.size(),
            });
        }
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| (1.0 - rho) * a + rho * b)
            .collect();
        Ok(PolyFit { basis: self.basis.clone(), coeffs, ..other.clone() })
    }
}

/// Relative tolerance below which a design column counts as linearly
/// dependent on the lower-degree columns and is dropped from the fit.
/// Degenerate training clouds are routine here — a coordinate with zero
/// cross-sectional spread makes its monomials collinear with the constant —
/// and spreading coefficient mass across collinear columns would distort
/// the fit away from the training support.
const RANK_TOL: f64 = 1e-8;

/// Fits one or more target columns against the same design matrix, sharing a
/// single factorization across targets.
///
/// Columns are screened in graded order: a column linearly dependent (at
/// working precision) on the columns before it is dropped and its
/// coefficient pinned to zero, so degenerate clouds yield the natural
/// lowest-degree representation instead of a minimum-norm smear. The
/// surviving columns are solved by SVD.
///
/// Returns one [`PolyFit`] per target. Errors: fewer rows than basis
/// functions ([`Error::BasisDegeneracy`]) or non-finite targets.
pub fn fit_many(
    basis: &PolyBasis,
    states: &ParticleEnsemble,
    targets: &[&[f64]],
) -> Result<Vec<PolyFit>> {
    let n = states.count();
    let b = basis.size();
    if n < b {
        return Err(Error::BasisDegeneracy { rows: n, basis: b });
    }
    for t in targets {
        if t.len() != n {
            return Err(Error::CountMismatch { left: n, right: t.len() });
        }
        if let Some(bad) = t.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("regression target {bad}")));
        }
    }

    let mut design = DMatrix::zeros(n, b);
    let mut row = vec![0.0; b];
    for (i, p) in states.particles().enumerate() {
        basis.eval_into(p, &mut row);
        for (j, &v) in row.iter().enumerate() {
            design[(i, j)] = v;
        }
    }

    // Graded-order rank screen: modified Gram–Schmidt with one
    // re-orthogonalization pass, keeping each column only if it carries new
    // direction relative to the lower-degree ones.
    let mut kept: Vec<usize> = Vec::with_capacity(b);
    let mut ortho: Vec<DVector<f64>> = Vec::with_capacity(b);
    for j in 0..b {
        let norm0 = design.column(j).norm();
        let mut residual = design.column(j).clone_owned();
        for _ in 0..2 {
            for q in &ortho {
                let c = q.dot(&residual);
                residual.axpy(-c, q, 1.0);
            }
        }
        let norm = residual.norm();
        if norm0 > 0.0 && norm > RANK_TOL * norm0 {
            kept.push(j);
            ortho.push(residual / norm);
        }
    }

    let reduced = design.select_columns(kept.iter());
    let svd = reduced.clone().svd(true, true);
    let sv_max = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let eps = sv_max * n.max(kept.len()) as f64 * f64::EPSILON;
    let effective_rank = svd.singular_values.iter().filter(|&&s| s > eps).count();

    let mut fits = Vec::with_capacity(targets.len());
    for t in targets {
        let rhs = DVector::from_column_slice(t);
        let solved = svd
            .solve(&rhs, eps)
            .map_err(|e| Error::NonFinite(format!("SVD solve failed: {e}")))?;
        let mut coeffs = DVector::zeros(b);
        for (slot, &j) in kept.iter().enumerate() {
            coeffs[j] = solved[slot];
        }
        let fitted = &design * &coeffs;
        let mut ss_res = 0.0;
        let mut sup = 0.0_f64;
        let mean = t.iter().sum::<f64>() / n as f64;
        let mut ss_tot = 0.0;
        for i in 0..n {
            let r = t[i] - fitted[i];
            ss_res += r * r;
            sup = sup.max(r.abs());
            let c = t[i] - mean;
            ss_tot += c * c;
        }
        // Targets whose spread is at rounding-noise scale are constant for
        // all practical purposes; reporting 1 − ss_res/ss_tot there would
        // compare one rounding error against another.
        let scale = t.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        let tot_floor = n as f64 * (1e-10 * scale) * (1e-10 * scale);
        let r2 = if ss_tot <= tot_floor { 1.0 } else { 1.0 - ss_res / ss_tot };
        fits.push(PolyFit {
            basis: basis.clone(),
            coeffs: coeffs.iter().cloned().collect(),
            residual_rms: (ss_res / n as f64).sqrt(),
            residual_sup: sup,
            r2,
            effective_rank,
        });
    }
    Ok(fits)
}

/// Single-target convenience wrapper over [`fit_many`].
pub fn fit(basis: &PolyBasis, states: &ParticleEnsemble, target: &[f64]) -> Result<PolyFit> {
    Ok(fit_many(basis, states, &[target])?.pop().expect("one fit per target"))
}

//! Empirical measures, Wasserstein distances, and L-derivatives.
//!
//! Probability measures are represented throughout by uniformly weighted
//! particle ensembles: a measure μ ∈ P₂(ℝ^q) is the empirical law
//! (1/n) Σᵢ δ_{ξᵢ}. This module provides
//!
//! * summary statistics (coordinate means, second moment),
//! * the exact 1-D quadratic Wasserstein distance via sorted order statistics,
//!   extended to flows of measures by a sup-over-time / max-over-coordinates
//!   composition,
//! * L-derivatives (Lions derivatives) of the functional families the model
//!   coefficients use: linear functionals μ ↦ ∫h dμ, whose derivative at ξ is
//!   ∂h(ξ), and the reciprocal mean μ ↦ 1/μ̄, whose derivative is the constant
//!   −1/μ̄², and
//! * the embedding of a marginal L-derivative into a joint measure's
//!   derivative (the missing block is zero).
//!
//! All operations are deterministic and read-only; ensembles are plain data.

use crate::error::{Error, Result};

/// Magnitude floor for ensemble means that appear in denominators.
///
/// Shared with the Hamiltonian minimizers, which apply the same floor to the
/// α₀² denominators of the minor minimizer.
pub const MEAN_FLOOR: f64 = 1e-8;

/// A uniformly weighted particle ensemble in ℝ^dim.
///
/// Storage is row-major: particle `i` occupies `data[i*dim .. (i+1)*dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    data: Vec<f64>,
    count: usize,
    dim: usize,
}

impl ParticleEnsemble {
    /// Builds an ensemble from per-particle rows.
    ///
    /// Errors: empty input, ragged rows, non-finite entries.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyEnsemble);
        }
        let dim = rows[0].len();
        if dim == 0 {
            return Err(Error::DimensionMismatch { expected: 1, got: 0 });
        }
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: row.len() });
            }
            data.extend_from_slice(row);
        }
        Self::from_flat(data, dim)
    }

    /// Builds an ensemble from coordinate columns of equal length.
    pub fn from_columns(columns: &[&[f64]]) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::DimensionMismatch { expected: 1, got: 0 });
        }
        let count = columns[0].len();
        for col in columns {
            if col.len() != count {
                return Err(Error::CountMismatch { left: count, right: col.len() });
            }
        }
        if count == 0 {
            return Err(Error::EmptyEnsemble);
        }
        let dim = columns.len();
        let mut data = Vec::with_capacity(count * dim);
        for i in 0..count {
            for col in columns {
                data.push(col[i]);
            }
        }
        Self::from_flat(data, dim)
    }

    /// Builds an ensemble from row-major flat storage.
    pub fn from_flat(data: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::DimensionMismatch { expected: 1, got: 0 });
        }
        if data.is_empty() || data.len() % dim != 0 {
            return Err(Error::EmptyEnsemble);
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("particle entry {bad}")));
        }
        let count = data.len() / dim;
        Ok(Self { data, count, dim })
    }

    #[must_use]
    pub fn count(&self) -> usize {
        self.count
    }

    #[must_use]
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Particle `i` as a coordinate slice.
    #[must_use]
    pub fn particle(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Iterator over particles.
    pub fn particles(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    /// Copy of coordinate `coord` across all particles.
    pub fn column(&self, coord: usize) -> Result<Vec<f64>> {
        self.check_coord(coord)?;
        Ok((0..self.count).map(|i| self.data[i * self.dim + coord]).collect())
    }

    /// Restriction of each particle to a coordinate subset (a marginal).
    pub fn marginal(&self, coords: &[usize]) -> Result<ParticleEnsemble> {
        for &c in coords {
            self.check_coord(c)?;
        }
        if coords.is_empty() {
            return Err(Error::DimensionMismatch { expected: 1, got: 0 });
        }
        let mut data = Vec::with_capacity(self.count * coords.len());
        for i in 0..self.count {
            for &c in coords {
                data.push(self.data[i * self.dim + c]);
            }
        }
        ParticleEnsemble::from_flat(data, coords.len())
    }

    /// Per-index convex interpolation `(1−rho)·self + rho·other`.
    ///
    /// Requires matching shapes; used by the outer fixed-point iteration,
    /// where common random numbers keep particle indices aligned.
    pub fn mix(&self, other: &ParticleEnsemble, rho: f64) -> Result<ParticleEnsemble> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: other.dim });
        }
        if self.count != other.count {
            return Err(Error::CountMismatch { left: self.count, right: other.count });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (1.0 - rho) * a + rho * b)
            .collect();
        ParticleEnsemble::from_flat(data, self.dim)
    }

    fn check_coord(&self, coord: usize) -> Result<()> {
        if coord >= self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: coord + 1 });
        }
        Ok(())
    }
}

/// Mean of the selected coordinates.
pub fn mean(ensemble: &ParticleEnsemble, coords: &[usize]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; coords.len()];
    for (slot, &c) in coords.iter().enumerate() {
        let col = ensemble.column(c)?;
        out[slot] = col.iter().sum::<f64>() / ensemble.count() as f64;
    }
    Ok(out)
}

/// Mean of a single coordinate.
pub fn mean_coord(ensemble: &ParticleEnsemble, coord: usize) -> Result<f64> {
    Ok(mean(ensemble, &[coord])?[0])
}

/// Mean squared Euclidean norm, (1/n) Σᵢ ‖ξᵢ‖².
#[must_use]
pub fn second_moment(ensemble: &ParticleEnsemble) -> f64 {
    let mut acc = 0.0;
    for p in ensemble.particles() {
        acc += p.iter().map(|v| v * v).sum::<f64>();
    }
    acc / ensemble.count() as f64
}

/// Exact 1-D quadratic Wasserstein distance between the `coord`-marginals.
///
/// For equal-count uniform ensembles the optimal coupling pairs sorted order
/// statistics, so W₂² = (1/n) Σᵢ (a₍ᵢ₎ − b₍ᵢ₎)².
pub fn wasserstein2_1d(a: &ParticleEnsemble, b: &ParticleEnsemble, coord: usize) -> Result<f64> {
    if a.count() != b.count() {
        return Err(Error::CountMismatch { left: a.count(), right: b.count() });
    }
    let mut xa = a.column(coord)?;
    let mut xb = b.column(coord)?;
    xa.sort_by(f64::total_cmp);
    xb.sort_by(f64::total_cmp);
    let n = xa.len() as f64;
    let sum: f64 = xa.iter().zip(&xb).map(|(u, v)| (u - v) * (u - v)).sum();
    Ok((sum / n).sqrt())
}

/// A time-indexed family of ensembles on a shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureFlow {
    times: Vec<f64>,
    ensembles: Vec<ParticleEnsemble>,
}

impl MeasureFlow {
    /// Builds a flow; times must be strictly increasing and ensembles must
    /// share count and dimension.
    pub fn new(times: Vec<f64>, ensembles: Vec<ParticleEnsemble>) -> Result<Self> {
        if times.len() != ensembles.len() {
            return Err(Error::GridMismatch(format!(
                "{} times vs {} ensembles",
                times.len(),
                ensembles.len()
            )));
        }
        if times.is_empty() {
            return Err(Error::EmptyEnsemble);
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::GridMismatch("times must be strictly increasing".into()));
        }
        let (count, dim) = (ensembles[0].count(), ensembles[0].dim());
        for e in &ensembles {
            if e.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: e.dim() });
            }
            if e.count() != count {
                return Err(Error::CountMismatch { left: count, right: e.count() });
            }
        }
        Ok(Self { times, ensembles })
    }

    #[must_use]
    pub fn len(&self) -> usize {
        self.times.len()
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    #[must_use]
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    #[must_use]
    pub fn ensemble(&self, n: usize) -> &ParticleEnsemble {
        &self.ensembles[n]
    }

    /// Per-index convex interpolation of two flows on the same grid.
    pub fn mix(&self, other: &MeasureFlow, rho: f64) -> Result<MeasureFlow> {
        check_same_grid(self, other)?;
        let ensembles = self
            .ensembles
            .iter()
            .zip(&other.ensembles)
            .map(|(a, b)| a.mix(b, rho))
            .collect::<Result<Vec<_>>>()?;
        MeasureFlow::new(self.times.clone(), ensembles)
    }
}

fn check_same_grid(a: &MeasureFlow, b: &MeasureFlow) -> Result<()> {
    if a.times.len() != b.times.len() || a.times.iter().zip(&b.times).any(|(s, t)| s != t) {
        return Err(Error::GridMismatch("flow time grids differ".into()));
    }
    Ok(())
}

/// Distance between two flows on the same grid:
/// sup over times of the max over coordinates of the 1-D W₂ distances.
pub fn flow_distance(a: &MeasureFlow, b: &MeasureFlow) -> Result<f64> {
    check_same_grid(a, b)?;
    let dim = a.ensemble(0).dim();
    let mut sup = 0.0_f64;
    for (ea, eb) in a.ensembles.iter().zip(&b.ensembles) {
        for c in 0..dim {
            sup = sup.max(wasserstein2_1d(ea, eb, c)?);
        }
    }
    Ok(sup)
}

/// L-derivative of the linear functional φ(μ) = ∫ h dμ for h: ℝ^q → ℝ^p.
///
/// The lift φ̃(ξ) = E[h(ξ)] is Fréchet-differentiable with Dφ̃(ξ) = ∂h(ξ), so
/// the L-derivative at the particle ξᵢ is simply the Jacobian of h there.
/// `h_jacobian(ξ)` must return the p×q Jacobian as `p` rows of length `q`.
pub fn l_derivative_linear<F>(h_jacobian: F, ensemble: &ParticleEnsemble) -> Result<Vec<Vec<Vec<f64>>>>
where
    F: Fn(&[f64]) -> Vec<Vec<f64>>,
{
    let q = ensemble.dim();
    let mut out = Vec::with_capacity(ensemble.count());
    let mut p_rows = None;
    for particle in ensemble.particles() {
        let jac = h_jacobian(particle);
        let p = *p_rows.get_or_insert(jac.len());
        if jac.len() != p {
            return Err(Error::DimensionMismatch { expected: p, got: jac.len() });
        }
        for row in &jac {
            if row.len() != q {
                return Err(Error::DimensionMismatch { expected: q, got: row.len() });
            }
        }
        out.push(jac);
    }
    Ok(out)
}

/// L-derivative of μ ↦ 1/μ̄ where μ̄ is the mean of coordinate `coord`.
///
/// The derivative is the constant −1/μ̄² (independent of the evaluation
/// point); it is returned per particle for uniformity with the other
/// derivative families. Means with |μ̄| < [`MEAN_FLOOR`] are rejected.
pub fn l_derivative_reciprocal_mean(ensemble: &ParticleEnsemble, coord: usize) -> Result<Vec<f64>> {
    let m = mean_coord(ensemble, coord)?;
    if m.abs() < MEAN_FLOOR {
        return Err(Error::SingularMean { value: m, floor: MEAN_FLOOR });
    }
    Ok(vec![-1.0 / (m * m); ensemble.count()])
}

/// Which marginal of a product measure a derivative was taken against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarginalSlot {
    First,
    Second,
}

/// Embeds per-particle marginal L-derivatives (p×q₁ or p×q₂ matrices) into
/// the joint derivative on ℝ^{q₁+q₂}: when a functional of a joint measure
/// only reads one marginal, the derivative block against the other marginal
/// vanishes, so the embedding pads with a zero block.
pub fn marginal_embed(
    derivs: &[Vec<Vec<f64>>],
    slot: MarginalSlot,
    dims: (usize, usize),
) -> Result<Vec<Vec<Vec<f64>>>> {
    let (q1, q2) = dims;
    let expected = match slot {
        MarginalSlot::First => q1,
        MarginalSlot::Second => q2,
    };
    let mut out = Vec::with_capacity(derivs.len());
    for mat in derivs {
        let mut rows = Vec::with_capacity(mat.len());
        for row in mat {
            if row.len() != expected {
                return Err(Error::DimensionMismatch { expected, got: row.len() });
            }
            let mut padded = vec![0.0; q1 + q2];
            match slot {
                MarginalSlot::First => padded[..q1].copy_from_slice(row),
                MarginalSlot::Second => padded[q1..].copy_from_slice(row),
            }
            rows.push(padded);
        }
        out.push(rows);
    }
    Ok(out)
}

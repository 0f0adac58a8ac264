//! Reduced Hamiltonians, their two-level minimizers, and optimality audits.
//!
//! With the enlarged minor state (X, γ) and a volatility that does not depend
//! on the controls, the objects driving the adjoint equations are the reduced
//! Hamiltonians
//!
//! ```text
//! H₀(t, x, γ, p, p̀, α₀, α, λ) = b·p + α·p̀ + f₀(t, α₀, λ),
//! H (t, x, γ, y, ỳ, α₀, α, λ) = b·y + α·ỳ + f(t, x, γ, α₀, α, λ).
//! ```
//!
//! Minimization happens on two levels: the major player minimizes the
//! population average of H₀ over its scalar action α₀ (the measure argument
//! couples all particles through f₀), while each minor particle minimizes H
//! over its own action α with α₀ held fixed. [`minimize_alpha0`] and
//! [`minimize_alpha`] use the model's closed-form minimizers when declared
//! and otherwise fall back to projected gradient descent with Armijo line
//! search; the numeric major path also probes for cross-derivatives between
//! α₀ and the minor actions, since the two-level decomposition is only valid
//! when the averaged Hamiltonian separates.
//!
//! [`verify_necessary_conditions`] audits a solved forward–backward system
//! against brute-force grid search on both levels, reporting the worst
//! optimality violation it can find.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fbsde::FBSDEPaths;
use crate::measure::{ParticleEnsemble, MeasureFlow, MEAN_FLOOR};
use crate::model::{ActionSet, JointSummary, LambdaSummary, ModelSpec};

/// Armijo sufficient-decrease constant.
const ARMIJO_C: f64 = 1e-4;
/// Backtracking shrink factor.
const ARMIJO_SHRINK: f64 = 0.5;
/// Projected-gradient stationarity tolerance.
const PGD_TOL: f64 = 1e-8;
/// Projected-gradient iteration cap.
const PGD_MAX_ITER: usize = 500;
/// Probe size for the cross-derivative (separability) check.
const SEPARABILITY_PROBE: f64 = 1e-3;
/// Tolerance on the probed cross-derivative.
const SEPARABILITY_TOL: f64 = 1e-6;

/// The major player's reduced Hamiltonian H₀ at one minor particle.
#[allow(clippy::too_many_arguments)]
pub fn eval_h0r(
    model: &ModelSpec,
    t: f64,
    x: f64,
    gamma: f64,
    p: f64,
    p_grave: f64,
    alpha0: f64,
    alpha: f64,
    lambda: &LambdaSummary,
) -> Result<f64> {
    let b = model.drift(t, x, gamma, alpha0, alpha, lambda)?;
    let f0 = model.run_cost_major(t, alpha0, lambda)?;
    Ok(b * p + alpha * p_grave + f0)
}

/// A minor player's reduced Hamiltonian H.
#[allow(clippy::too_many_arguments)]
pub fn eval_hr(
    model: &ModelSpec,
    t: f64,
    x: f64,
    gamma: f64,
    y: f64,
    y_grave: f64,
    alpha0: f64,
    alpha: f64,
    lambda: &LambdaSummary,
) -> Result<f64> {
    let b = model.drift(t, x, gamma, alpha0, alpha, lambda)?;
    let f = model.run_cost_minor(t, x, gamma, alpha0, alpha, lambda)?;
    Ok(b * y + alpha * y_grave + f)
}

/// The population average of H₀ over a joint (x, γ, P, P̀) ensemble with
/// per-particle minor actions — the objective the major player minimizes.
///
/// The measure argument of the coefficients is the (x, γ) marginal of the
/// ensemble itself.
pub fn averaged_h0r(
    model: &ModelSpec,
    t: f64,
    joint: &ParticleEnsemble,
    alphas: &[f64],
    alpha0: f64,
) -> Result<f64> {
    check_joint(joint, alphas)?;
    let lambda = model.lambda_summary(&joint.marginal(&[0, 1])?)?;
    averaged_h0r_with(model, t, joint, alphas, alpha0, &lambda)
}

/// [`averaged_h0r`] with the measure summary precomputed by the caller.
fn averaged_h0r_with(
    model: &ModelSpec,
    t: f64,
    joint: &ParticleEnsemble,
    alphas: &[f64],
    alpha0: f64,
    lambda: &LambdaSummary,
) -> Result<f64> {
    let mut acc = 0.0;
    for (i, &alpha) in alphas.iter().enumerate() {
        let row = joint.particle(i);
        acc += eval_h0r(model, t, row[0], row[1], row[2], row[3], alpha0, alpha, lambda)?;
    }
    Ok(acc / joint.count() as f64)
}

fn check_joint(joint: &ParticleEnsemble, alphas: &[f64]) -> Result<()> {
    if joint.dim() != 4 {
        return Err(Error::DimensionMismatch { expected: 4, got: joint.dim() });
    }
    if alphas.len() != joint.count() {
        return Err(Error::CountMismatch { left: joint.count(), right: alphas.len() });
    }
    Ok(())
}

/// Minimizes the averaged major Hamiltonian over α₀ at one time slice.
///
/// `joint` carries columns (x, γ, P, P̀); `alphas` the current per-particle
/// minor actions. Dispatches to the model's closed form when declared,
/// otherwise to [`minimize_alpha0_numeric`].
///
/// For example 2 with particles (0, 1, −1, 0) and (0, 3, −1, 0) the mean
/// adjoint is E[P] = −1 and the mean aim is E[γ] = 2, so the minimizer is
/// E[P]·E[γ] = −2.
pub fn minimize_alpha0(
    model: &ModelSpec,
    t: f64,
    joint: &ParticleEnsemble,
    alphas: &[f64],
) -> Result<f64> {
    check_joint(joint, alphas)?;
    let nu = JointSummary::from_joint_ensemble(joint)?;
    match model.analytic_alpha0(t, &nu) {
        Some(result) => result,
        None => minimize_alpha0_numeric(model, t, joint, alphas),
    }
}

/// Projected-gradient minimization of the averaged major Hamiltonian,
/// independent of any closed form the model declares.
///
/// Before descending, probes the cross-derivative of the averaged gradient
/// with respect to a uniform shift of the minor actions; a nonzero value
/// means α₀ and α interact inside H₀ and level-wise minimization is invalid.
pub fn minimize_alpha0_numeric(
    model: &ModelSpec,
    t: f64,
    joint: &ParticleEnsemble,
    alphas: &[f64],
) -> Result<f64> {
    check_joint(joint, alphas)?;
    let lambda = model.lambda_summary(&joint.marginal(&[0, 1])?)?;
    let n = joint.count() as f64;

    let grad_with = |a0: f64, acts: &[f64]| -> Result<f64> {
        let mut acc = 0.0;
        for (i, &alpha) in acts.iter().enumerate() {
            let row = joint.particle(i);
            acc += model.drift_dalpha0(t, row[0], row[1], a0, alpha, &lambda)? * row[2];
        }
        Ok(acc / n + model.run_cost_major_dalpha0(t, a0, &lambda)?)
    };

    let start = model.action_major().project(0.0);
    let shifted: Vec<f64> = alphas.iter().map(|a| a + SEPARABILITY_PROBE).collect();
    let cross =
        (grad_with(start, &shifted)? - grad_with(start, alphas)?).abs() / SEPARABILITY_PROBE;
    if cross > SEPARABILITY_TOL {
        return Err(Error::SeparabilityViolation { cross, tol: SEPARABILITY_TOL });
    }

    projected_gradient(
        model.action_major(),
        |a0| averaged_h0r_with(model, t, joint, alphas, a0, &lambda),
        |a0| grad_with(a0, alphas),
        PGD_TOL,
        PGD_MAX_ITER,
    )
}

/// Minimizes a minor player's Hamiltonian over α at one state.
///
/// Requires the minor Hamiltonian to be strongly convex in α, which fails
/// when α₀ degenerates; both paths share that guard so they agree on their
/// domain. Dispatches to the model's closed form when declared.
#[allow(clippy::too_many_arguments)]
pub fn minimize_alpha(
    model: &ModelSpec,
    t: f64,
    x: f64,
    gamma: f64,
    y: f64,
    y_grave: f64,
    alpha0: f64,
    lambda: &LambdaSummary,
) -> Result<f64> {
    guard_minor_convexity(model, alpha0)?;
    match model.analytic_alpha(t, x, gamma, y, y_grave, alpha0, lambda) {
        Some(result) => result,
        None => minimize_alpha_numeric(model, t, x, gamma, y, y_grave, alpha0, lambda),
    }
}

/// Projected-gradient minimization of the minor Hamiltonian, independent of
/// any closed form the model declares.
#[allow(clippy::too_many_arguments)]
pub fn minimize_alpha_numeric(
    model: &ModelSpec,
    t: f64,
    x: f64,
    gamma: f64,
    y: f64,
    y_grave: f64,
    alpha0: f64,
    lambda: &LambdaSummary,
) -> Result<f64> {
    guard_minor_convexity(model, alpha0)?;
    projected_gradient(
        model.action_minor(),
        |a| eval_hr(model, t, x, gamma, y, y_grave, alpha0, a, lambda),
        |a| {
            Ok(model.drift_dalpha(t, x, gamma, alpha0, a, lambda)? * y
                + y_grave
                + model.run_cost_minor_dalpha(t, x, gamma, alpha0, a, lambda)?)
        },
        PGD_TOL,
        PGD_MAX_ITER,
    )
}

fn guard_minor_convexity(model: &ModelSpec, alpha0: f64) -> Result<f64> {
    let modulus = model.convexity_alpha(alpha0);
    if modulus < MEAN_FLOOR {
        return Err(Error::SingularControl { value: alpha0.abs(), floor: MEAN_FLOOR });
    }
    Ok(modulus)
}

/// Scalar projected gradient descent with Armijo backtracking.
///
/// Starts from the projection of zero; terminates when the unit-step
/// projected-gradient residual |x − proj(x − ∇φ(x))| drops below `tol`.
pub fn projected_gradient(
    set: ActionSet,
    objective: impl Fn(f64) -> Result<f64>,
    gradient: impl Fn(f64) -> Result<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<f64> {
    let mut x = set.project(0.0);
    for iterations in 0..max_iter {
        let g = gradient(x)?;
        let residual = (x - set.project(x - g)).abs();
        if residual <= tol {
            return Ok(x);
        }
        let fx = objective(x)?;
        let mut step = 1.0;
        loop {
            let candidate = set.project(x - step * g);
            let fc = objective(candidate)?;
            if fc <= fx + ARMIJO_C * g * (candidate - x) {
                x = candidate;
                break;
            }
            step *= ARMIJO_SHRINK;
            if step < 1e-18 {
                return gradient_bisection(set, &gradient, x, tol, iterations);
            }
        }
    }
    gradient_bisection(set, &gradient, x, tol, max_iter)
}

/// Closes the final stretch of [`projected_gradient`] on the gradient alone.
///
/// The Armijo test certifies descent through objective differences, whose
/// floating-point floor (machine epsilon times |φ|) can exceed the descent
/// still available near the minimizer; the iterate then stalls above a tight
/// residual target even though the gradient is evaluated exactly. Strong
/// convexity makes the gradient monotone, so a sign bracket plus bisection
/// reaches machine-level residuals without consulting the objective.
fn gradient_bisection(
    set: ActionSet,
    gradient: &impl Fn(f64) -> Result<f64>,
    from: f64,
    tol: f64,
    iterations: usize,
) -> Result<f64> {
    let fail = |gradient_norm: f64, iterate: f64| {
        Err(Error::OptimizationFailure { iterations, gradient_norm, iterate })
    };
    let residual_of = |x: f64, g: f64| (x - set.project(x - g)).abs();

    let a = from;
    let ga = gradient(a)?;
    if residual_of(a, ga) <= tol {
        return Ok(a);
    }

    // March against the gradient until it flips sign or the action set's
    // boundary absorbs the step (then that bound is the projected minimizer).
    let mut radius = a.abs().max(1.0);
    let mut bracket = None;
    for _ in 0..64 {
        let b = set.project(a - ga.signum() * radius);
        let gb = gradient(b)?;
        if residual_of(b, gb) <= tol {
            return Ok(b);
        }
        if gb.signum() != ga.signum() {
            bracket = Some((b, gb));
            break;
        }
        if b == set.project(a - ga.signum() * (radius * 2.0)) {
            return fail(residual_of(b, gb), b);
        }
        radius *= 2.0;
    }
    let Some((b, gb)) = bracket else {
        return fail(residual_of(a, ga), a);
    };

    let (mut lo, mut hi, mut glo) = if a < b { (a, b, ga) } else { (b, a, gb) };
    let mut last = (residual_of(a, ga), a);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let gm = gradient(mid)?;
        let r = residual_of(mid, gm);
        if r <= tol {
            return Ok(mid);
        }
        last = (r, mid);
        if gm.signum() == glo.signum() {
            lo = mid;
            glo = gm;
        } else {
            hi = mid;
        }
        if (hi - lo) <= f64::EPSILON * lo.abs().max(hi.abs()).max(1.0) {
            break;
        }
    }
    fail(last.0, last.1)
}

/// A uniform candidate grid for optimality audits, intersected with the
/// action set before use.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionGrid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl ActionGrid {
    pub fn new(lo: f64, hi: f64, step: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && step.is_finite()) || hi <= lo || step <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "action grid [{lo}, {hi}] with step {step} is not a valid search range"
            )));
        }
        Ok(ActionGrid { lo, hi, step })
    }

    /// The default audit grid: [−10, 10] in steps of 0.01.
    #[must_use]
    pub fn coarse() -> Self {
        ActionGrid { lo: -10.0, hi: 10.0, step: 1e-2 }
    }

    /// A fine grid for minimizer cross-checks: [−10, 10] in steps of 1e−4.
    #[must_use]
    pub fn fine() -> Self {
        ActionGrid { lo: -10.0, hi: 10.0, step: 1e-4 }
    }

    /// Grid values clipped to the action set (at least one point).
    #[must_use]
    pub fn values(&self, set: ActionSet) -> Vec<f64> {
        let (mut lo, mut hi) = (self.lo, self.hi);
        if let ActionSet::Box { lower, upper } = set {
            lo = lo.max(lower);
            hi = hi.min(upper);
        }
        if lo > hi {
            return vec![set.project(0.5 * (self.lo + self.hi))];
        }
        let n = ((hi - lo) / self.step).floor() as usize;
        let mut values: Vec<f64> = (0..=n).map(|k| lo + k as f64 * self.step).collect();
        if hi - values[values.len() - 1] > 1e-12 * self.step.max(1.0) {
            values.push(hi);
        }
        values
    }
}

/// Outcome of a grid-search optimality audit of a solved system.
#[derive(Debug, Clone, PartialEq)]
pub struct NecessaryConditionReport {
    /// Tolerance the violations were compared against.
    pub tol: f64,
    /// Worst major-level optimality gap found: averaged H₀ at the stored α₀
    /// minus the grid minimum (0 when the stored action is grid-optimal).
    pub max_violation_major: f64,
    /// (time index, better α₀) achieving the worst major gap, if positive.
    pub worst_major: Option<(usize, f64)>,
    /// Worst minor-level optimality gap over all times and particles.
    pub max_violation_minor: f64,
    /// (time index, particle, better α) achieving the worst minor gap.
    pub worst_minor: Option<(usize, usize, f64)>,
    /// Whether both levels pass at `tol`.
    pub passed: bool,
}

/// Audits the Pontryagin optimality of a solved forward–backward system by
/// grid search at every stored time slice.
///
/// The major level re-minimizes the population-averaged H₀ over `major_grid`
/// against the stored α₀ path; the minor level re-minimizes each particle's H
/// over `minor_grid` against its stored action. The minor coefficients read
/// `minor_flow` when given (the frozen population flow the strategies were
/// computed against) and the paths' own empirical flow otherwise.
pub fn verify_necessary_conditions(
    model: &ModelSpec,
    paths: &FBSDEPaths,
    minor_flow: Option<&MeasureFlow>,
    major_grid: &ActionGrid,
    minor_grid: &ActionGrid,
    tol: f64,
) -> Result<NecessaryConditionReport> {
    let nodes = paths.node_count();
    if let Some(flow) = minor_flow {
        if flow.len() != nodes {
            return Err(Error::GridMismatch(format!(
                "population flow has {} slices but the paths have {nodes}",
                flow.len()
            )));
        }
    }
    let major_values = major_grid.values(model.action_major());
    let minor_values = minor_grid.values(model.action_minor());

    struct NodeAudit {
        major_gap: f64,
        major_arg: f64,
        minor_gap: f64,
        minor_particle: usize,
        minor_arg: f64,
    }

    let audits: Vec<NodeAudit> = (0..nodes)
        .into_par_iter()
        .map(|n| -> Result<NodeAudit> {
            let t = paths.grid().time(n);
            let joint = paths.joint_ensemble(n)?;
            let alphas = paths.alphas_at(n);
            let lambda_own = model.lambda_summary(&joint.marginal(&[0, 1])?)?;

            let base = averaged_h0r_with(model, t, &joint, alphas, paths.alpha0(n), &lambda_own)?;
            let mut major_gap = 0.0;
            let mut major_arg = paths.alpha0(n);
            for &a0 in &major_values {
                let phi = averaged_h0r_with(model, t, &joint, alphas, a0, &lambda_own)?;
                if base - phi > major_gap {
                    major_gap = base - phi;
                    major_arg = a0;
                }
            }

            let lambda_minor = match minor_flow {
                Some(flow) => model.lambda_summary(flow.ensemble(n))?,
                None => lambda_own,
            };
            let alpha0 = paths.alpha0(n);
            let mut minor_gap = 0.0;
            let mut minor_particle = 0;
            let mut minor_arg = 0.0;
            for i in 0..paths.particle_count() {
                let (x, gamma) = (paths.x(n, i), paths.gamma(n, i));
                let (y, y_grave) = (paths.y(n, i), paths.y_grave(n, i));
                let base = eval_hr(
                    model,
                    t,
                    x,
                    gamma,
                    y,
                    y_grave,
                    alpha0,
                    paths.alpha(n, i),
                    &lambda_minor,
                )?;
                for &a in &minor_values {
                    let h = eval_hr(model, t, x, gamma, y, y_grave, alpha0, a, &lambda_minor)?;
                    if base - h > minor_gap {
                        minor_gap = base - h;
                        minor_particle = i;
                        minor_arg = a;
                    }
                }
            }
            Ok(NodeAudit { major_gap, major_arg, minor_gap, minor_particle, minor_arg })
        })
        .collect::<Result<_>>()?;

    let mut report = NecessaryConditionReport {
        tol,
        max_violation_major: 0.0,
        worst_major: None,
        max_violation_minor: 0.0,
        worst_minor: None,
        passed: true,
    };
    for (n, audit) in audits.iter().enumerate() {
        if audit.major_gap > report.max_violation_major {
            report.max_violation_major = audit.major_gap;
            report.worst_major = Some((n, audit.major_arg));
        }
        if audit.minor_gap > report.max_violation_minor {
            report.max_violation_minor = audit.minor_gap;
            report.worst_minor = Some((n, audit.minor_particle, audit.minor_arg));
        }
    }
    report.passed = report.max_violation_major <= tol && report.max_violation_minor <= tol;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_example1, make_example2, make_example3, ModelParams, SigmaSchedule};
    use crate::rng::{standard_normals, stream, DOMAIN_TEST};

    fn noiseless_example1() -> ModelSpec {
        make_example1(&ModelParams { sigma: SigmaSchedule::constant(0.0), ..ModelParams::default() })
    }

    #[test]
    fn major_hamiltonian_hand_value() {
        // b = 1 − (−1) − 0 = 2, so H₀ = 2·(−1) + 1·1 + 0.5 = −0.5.
        let m = noiseless_example1();
        let l = LambdaSummary::dirac(0.0, 0.0);
        let h = eval_h0r(&m, 0.3, 0.0, 0.0, -1.0, 1.0, -1.0, 1.0, &l).unwrap();
        assert!((h + 0.5).abs() < 1e-15);
    }

    #[test]
    fn minor_hamiltonian_hand_value() {
        // b = 2, so H = 2·(−1) + 1·0 + 0.5 = −1.5.
        let m = noiseless_example1();
        let l = LambdaSummary::dirac(0.0, 0.0);
        let h = eval_hr(&m, 0.3, 0.0, 0.0, -1.0, 0.0, -1.0, 1.0, &l).unwrap();
        assert!((h + 1.5).abs() < 1e-15);
    }

    #[test]
    fn example2_major_minimizer_doc_value() {
        let m = make_example2(&ModelParams::default());
        let joint = ParticleEnsemble::from_rows(&[
            vec![0.0, 1.0, -1.0, 0.0],
            vec![0.0, 3.0, -1.0, 0.0],
        ])
        .unwrap();
        let a0 = minimize_alpha0(&m, 0.2, &joint, &[0.5, 0.5]).unwrap();
        assert!((a0 + 2.0).abs() < 1e-12);
    }

    /// A seeded random joint ensemble whose γ coordinates keep the population
    /// mean safely positive.
    fn random_joint(seed_index: u64, n: usize) -> (ParticleEnsemble, Vec<f64>) {
        let mut rng = stream(9, DOMAIN_TEST, seed_index);
        let draws = standard_normals(&mut rng, 5 * n);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                vec![
                    draws[5 * i],
                    1.5 + 0.4 * draws[5 * i + 1],
                    -1.0 + 0.3 * draws[5 * i + 2],
                    1.0 + 0.3 * draws[5 * i + 3],
                ]
            })
            .collect();
        let alphas: Vec<f64> = (0..n).map(|i| 0.5 * draws[5 * i + 4]).collect();
        (ParticleEnsemble::from_rows(&rows).unwrap(), alphas)
    }

    #[test]
    fn numeric_and_analytic_major_minimizers_agree() {
        let params = ModelParams::default();
        for model in [make_example1(&params), make_example2(&params), make_example3(&params)] {
            for trial in 0..20 {
                let (joint, alphas) = random_joint(trial, 8);
                let analytic = minimize_alpha0(&model, 0.4, &joint, &alphas).unwrap();
                let numeric = minimize_alpha0_numeric(&model, 0.4, &joint, &alphas).unwrap();
                assert!(
                    (analytic - numeric).abs() <= 1e-6,
                    "{} trial {trial}: {analytic} vs {numeric}",
                    model.name()
                );
            }
        }
    }

    #[test]
    fn numeric_and_analytic_minor_minimizers_agree() {
        let m = make_example1(&ModelParams::default());
        let mut rng = stream(11, DOMAIN_TEST, 0);
        let draws = standard_normals(&mut rng, 100);
        let l = LambdaSummary::dirac(0.3, 0.8);
        for c in draws.chunks_exact(5) {
            let (x, g, y, yg) = (c[0], c[1], -1.0 + 0.4 * c[2], 0.4 * c[3]);
            let a0 = if c[4] >= 0.0 { 0.4 + c[4] } else { -0.4 + c[4] };
            let analytic = minimize_alpha(&m, 0.1, x, g, y, yg, a0, &l).unwrap();
            let numeric = minimize_alpha_numeric(&m, 0.1, x, g, y, yg, a0, &l).unwrap();
            assert!((analytic - numeric).abs() <= 1e-6, "{analytic} vs {numeric}");
        }
    }

    #[test]
    fn first_order_conditions_hold_at_the_minimizers() {
        let params = ModelParams::default();
        for model in [make_example1(&params), make_example2(&params), make_example3(&params)] {
            for trial in 0..30 {
                let (joint, alphas) = random_joint(100 + trial, 6);
                let lambda = model.lambda_summary(&joint.marginal(&[0, 1]).unwrap()).unwrap();
                let a0 = minimize_alpha0(&model, 0.7, &joint, &alphas).unwrap();
                let mut grad = 0.0;
                for (i, &a) in alphas.iter().enumerate() {
                    let row = joint.particle(i);
                    grad += model
                        .drift_dalpha0(0.7, row[0], row[1], a0, a, &lambda)
                        .unwrap()
                        * row[2];
                }
                grad /= joint.count() as f64;
                grad += model.run_cost_major_dalpha0(0.7, a0, &lambda).unwrap();
                assert!(grad.abs() <= 1e-10, "{} major FOC: {grad:e}", model.name());

                let row = joint.particle(0);
                let a = minimize_alpha(&model, 0.7, row[0], row[1], -1.0, 0.2, a0, &lambda).unwrap();
                let minor_grad = model.drift_dalpha(0.7, row[0], row[1], a0, a, &lambda).unwrap()
                    * -1.0
                    + 0.2
                    + model.run_cost_minor_dalpha(0.7, row[0], row[1], a0, a, &lambda).unwrap();
                assert!(minor_grad.abs() <= 1e-10, "{} minor FOC: {minor_grad:e}", model.name());
            }
        }
    }

    #[test]
    fn major_minimizer_matches_fine_grid_search() {
        let m = make_example2(&ModelParams::default());
        let (joint, alphas) = random_joint(500, 4);
        let a0 = minimize_alpha0(&m, 0.5, &joint, &alphas).unwrap();
        let mut best = (f64::INFINITY, f64::NAN);
        for a in ActionGrid::fine().values(m.action_major()) {
            let phi = averaged_h0r(&m, 0.5, &joint, &alphas, a).unwrap();
            if phi < best.0 {
                best = (phi, a);
            }
        }
        assert!((a0 - best.1).abs() <= 2e-4, "minimizer {a0} vs grid {}", best.1);
    }

    #[test]
    fn box_constraints_clip_both_paths_identically() {
        let params = ModelParams {
            action_major: ActionSet::Box { lower: -0.5, upper: 0.5 },
            ..ModelParams::default()
        };
        let m = make_example1(&params);
        let (joint, alphas) = random_joint(7, 6);
        // The unconstrained minimizer E[P] ≈ −1 lies left of the box.
        let analytic = minimize_alpha0(&m, 0.0, &joint, &alphas).unwrap();
        let numeric = minimize_alpha0_numeric(&m, 0.0, &joint, &alphas).unwrap();
        assert_eq!(analytic, -0.5);
        assert!((numeric - analytic).abs() <= 1e-6);
    }

    #[test]
    fn degenerate_major_action_is_a_singular_control() {
        let m = make_example1(&ModelParams::default());
        let l = LambdaSummary::dirac(0.0, 0.0);
        let err = minimize_alpha(&m, 0.1, 0.0, 0.0, -1.0, 0.0, 0.0, &l).unwrap_err();
        assert!(matches!(err, Error::SingularControl { .. }));
    }

    #[test]
    fn projected_gradient_solves_a_shifted_quadratic() {
        let free = projected_gradient(
            ActionSet::All,
            |a| Ok((a - 3.0) * (a - 3.0)),
            |a| Ok(2.0 * (a - 3.0)),
            1e-10,
            500,
        )
        .unwrap();
        assert!((free - 3.0).abs() < 1e-9);

        let boxed = projected_gradient(
            ActionSet::Box { lower: -1.0, upper: 1.0 },
            |a| Ok((a - 3.0) * (a - 3.0)),
            |a| Ok(2.0 * (a - 3.0)),
            1e-10,
            500,
        )
        .unwrap();
        assert!((boxed - 1.0).abs() < 1e-9);
    }

    #[test]
    fn action_grid_respects_the_action_set() {
        let grid = ActionGrid::new(-1.0, 1.0, 0.5).unwrap();
        assert_eq!(grid.values(ActionSet::All), vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        let clipped = grid.values(ActionSet::Box { lower: -0.25, upper: 10.0 });
        assert_eq!(clipped, vec![-0.25, 0.25, 0.75, 1.0]);
        assert!(ActionGrid::new(1.0, -1.0, 0.5).is_err());
    }
}

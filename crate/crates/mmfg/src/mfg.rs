//! The equilibrium loop: fix a population flow, solve the resulting
//! forward–backward system, and iterate until the flow induced by the
//! solution reproduces the frozen one, L(X̂^μ) = μ. The fixed point is the
//! game's equilibrium; its strategies export as a serializable bundle of
//! the major action path, fitted decoupling fields, and per-time population
//! summaries — everything the finite-player harness needs to build feedback
//! strategies.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbsde::{
    initial_point, picard_solve, BrownianGrid, FBSDEPaths, SolverConfig, TimeGrid,
};
use crate::measure::{flow_distance, mean_coord, second_moment, MeasureFlow, ParticleEnsemble};
use crate::model::{LambdaSummary, ModelSpec};
use crate::regression::{fit_many, PolyBasis, PolyFit};

/// Version tag of every serialized artifact schema.
pub const SPEC_VERSION: &str = "1.0.0";

/// Configuration of the outer fixed-point loop on population flows.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterConfig {
    /// Cap on outer iterations.
    pub max_iter: usize,
    /// Flow damping ρ ∈ (0, 1]: the next frozen flow is the per-particle
    /// convex mix (1 − ρ)·current + ρ·induced.
    pub damping: f64,
    /// Convergence tolerance on the flow distance between successive
    /// induced flows (the Monte Carlo floor of the fixed-point defect).
    pub fp_tol: f64,
}

impl Default for OuterConfig {
    fn default() -> Self {
        OuterConfig { max_iter: 30, damping: 0.5, fp_tol: 5e-2 }
    }
}

impl OuterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("outer max_iter must be positive".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "outer damping must lie in (0, 1], got {}",
                self.damping
            )));
        }
        if !(self.fp_tol.is_finite() && self.fp_tol > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "fixed-point tolerance must be positive, got {}",
                self.fp_tol
            )));
        }
        Ok(())
    }
}

/// A converged equilibrium: the solved trajectories, the equilibrium flow
/// they induce, and the outer-loop diagnostics.
#[derive(Debug, Clone)]
pub struct MFGSolution {
    /// Solved forward–backward trajectories of the final inner solve.
    pub paths: FBSDEPaths,
    /// The (x, γ) flow induced by `paths` — the fixed point itself.
    pub equilibrium_flow: MeasureFlow,
    /// Flow distance per outer iteration (first entry: distance from the
    /// uncontrolled initialization).
    pub fixed_point_residuals: Vec<f64>,
    /// Outer iterations performed.
    pub outer_iterations: usize,
    /// Model identity echo for export.
    pub model_name: String,
    /// Model parameter echo for export.
    pub model_params: Vec<(String, f64)>,
    /// Inner solver configuration echo.
    pub config: SolverConfig,
    /// Outer loop configuration echo.
    pub outer: OuterConfig,
}

impl MFGSolution {
    /// The equilibrium major action path.
    #[must_use]
    pub fn alpha0_path(&self) -> &[f64] {
        self.paths.alpha0s()
    }
}

/// The population flow of the uncontrolled dynamics: both players apply the
/// projection of zero onto their action sets, no minimization involved.
/// This initializes the fixed-point loop; the same Brownian draws as the
/// inner solves keep particles aligned across iterations.
fn uncontrolled_flow(
    model: &ModelSpec,
    grid: &TimeGrid,
    brownian: &BrownianGrid,
    init: (f64, f64),
) -> Result<MeasureFlow> {
    let a0 = model.action_major().project(0.0);
    let a = model.action_minor().project(0.0);
    let n_particles = brownian.particles();
    let mut x = vec![init.0; n_particles];
    let mut gamma = vec![init.1; n_particles];
    let mut ensembles = Vec::with_capacity(grid.node_count());
    let dt = grid.dt();
    for n in 0..grid.node_count() {
        let ensemble = ParticleEnsemble::from_columns(&[&x, &gamma])?;
        if n < grid.steps() {
            let t = grid.time(n);
            let lambda = model.lambda_summary(&ensemble)?;
            let sigma = model.sigma().value(t);
            for i in 0..n_particles {
                let b = model.drift(t, x[i], gamma[i], a0, a, &lambda)?;
                x[i] += b * dt + sigma * brownian.increment(n, i);
                gamma[i] += a * dt;
                if !(x[i].is_finite() && gamma[i].is_finite()) {
                    return Err(Error::Divergence { step: n, time: t });
                }
            }
        }
        ensembles.push(ensemble);
    }
    MeasureFlow::new(grid.nodes(), ensembles)
}

/// Solves for the equilibrium: fix a flow, solve the inner system against
/// it, and repeat with the damped per-particle flow mix until the induced
/// flow stops moving.
///
/// The loop freezes the flow only where the population enters as an
/// exogenous law (the minor player's side); the major side and the forward
/// dynamics always read the live empirical law. The residual compares
/// successive induced flows, so the reported convergence measures the
/// fixed-point defect of the returned solution rather than the damping
/// step size. Models with no population coupling at all skip the loop.
pub fn solve_mmmfg(
    model: &ModelSpec,
    config: &SolverConfig,
    outer: &OuterConfig,
) -> Result<MFGSolution> {
    model.validate()?;
    config.validate(model)?;
    outer.validate()?;

    let solution = |paths: FBSDEPaths, residuals: Vec<f64>, iterations: usize| -> Result<MFGSolution> {
        let equilibrium_flow = paths.flow()?;
        Ok(MFGSolution {
            paths,
            equilibrium_flow,
            fixed_point_residuals: residuals,
            outer_iterations: iterations,
            model_name: model.name().to_string(),
            model_params: model.params().to_vec(),
            config: config.clone(),
            outer: outer.clone(),
        })
    };

    if !model.reads_measure() {
        let paths = picard_solve(model, config, None)?;
        return solution(paths, vec![0.0], 1);
    }

    let t_min = config.resolved_t_min(model);
    let grid = TimeGrid::new(t_min, model.horizon(), config.steps)?;
    let brownian = BrownianGrid::generate(config.seed, config.particles, &grid)?;
    let init = initial_point(model, config, t_min);
    let mut frozen = uncontrolled_flow(model, &grid, &brownian, init)?;
    let mut previous_induced: Option<MeasureFlow> = None;
    let mut residuals = Vec::new();

    for iteration in 1..=outer.max_iter {
        let paths = picard_solve(model, config, Some(&frozen))?;
        let induced = paths.flow()?;
        let residual = match &previous_induced {
            None => flow_distance(&frozen, &induced)?,
            Some(previous) => flow_distance(previous, &induced)?,
        };
        residuals.push(residual);
        if residual <= outer.fp_tol {
            return solution(paths, residuals, iteration);
        }
        frozen = frozen.mix(&induced, outer.damping)?;
        previous_induced = Some(induced);
    }

    let last = *residuals.last().unwrap_or(&f64::INFINITY);
    Err(Error::FixedPointFailure {
        iterations: outer.max_iter,
        last,
        tol: outer.fp_tol,
        residuals,
    })
}

/// Post-hoc consistency audit of a returned solution: one extra inner solve
/// against the equilibrium flow must leave the strategies within twice the
/// inner tolerance and the induced flow within twice the outer tolerance.
#[derive(Debug, Clone)]
pub struct FixedPointCertificate {
    /// Sup-norm change of (α₀, α) under the extra solve.
    pub strategy_delta: f64,
    /// Flow distance between the equilibrium flow and the re-induced flow.
    pub flow_delta: f64,
    /// Bound applied to `strategy_delta` (2 × inner tolerance).
    pub strategy_tol: f64,
    /// Bound applied to `flow_delta` (2 × outer tolerance).
    pub flow_tol: f64,
    pub passed: bool,
}

pub fn fixed_point_certificate(
    model: &ModelSpec,
    solution: &MFGSolution,
) -> Result<FixedPointCertificate> {
    let again = picard_solve(model, &solution.config, Some(&solution.equilibrium_flow))?;
    let paths = &solution.paths;
    if again.node_count() != paths.node_count() || again.particle_count() != paths.particle_count()
    {
        return Err(Error::GridMismatch("certificate solve changed the grid".into()));
    }
    let mut strategy_delta = 0.0_f64;
    for n in 0..paths.node_count() {
        strategy_delta = strategy_delta.max((again.alpha0(n) - paths.alpha0(n)).abs());
        for (a, b) in again.alphas_at(n).iter().zip(paths.alphas_at(n)) {
            strategy_delta = strategy_delta.max((a - b).abs());
        }
    }
    let flow_delta = flow_distance(&solution.equilibrium_flow, &again.flow()?)?;
    let strategy_tol = 2.0 * solution.config.tol;
    let flow_tol = 2.0 * solution.outer.fp_tol;
    Ok(FixedPointCertificate {
        strategy_delta,
        flow_delta,
        strategy_tol,
        flow_tol,
        passed: strategy_delta <= strategy_tol && flow_delta <= flow_tol,
    })
}

/// Per-time polynomial fits of the adjoint processes as functions of the
/// minor state: θ_P(t, x, γ) ≈ (P, P̀) and θ_Y(t, x, γ) ≈ (Y, Ỳ).
#[derive(Debug, Clone)]
pub struct DecouplingFields {
    pub degree: usize,
    pub times: Vec<f64>,
    /// Per node: fits of (P, P̀).
    pub theta_p: Vec<[PolyFit; 2]>,
    /// Per node: fits of (Y, Ỳ).
    pub theta_y: Vec<[PolyFit; 2]>,
}

impl DecouplingFields {
    #[must_use]
    pub fn node_count(&self) -> usize {
        self.times.len()
    }

    /// (P, P̀) at node `n` and state (x, γ).
    #[must_use]
    pub fn theta_p_at(&self, n: usize, x: f64, gamma: f64) -> [f64; 2] {
        let point = [x, gamma];
        [self.theta_p[n][0].eval(&point), self.theta_p[n][1].eval(&point)]
    }

    /// (Y, Ỳ) at node `n` and state (x, γ).
    #[must_use]
    pub fn theta_y_at(&self, n: usize, x: f64, gamma: f64) -> [f64; 2] {
        let point = [x, gamma];
        [self.theta_y[n][0].eval(&point), self.theta_y[n][1].eval(&point)]
    }

    /// Largest training residual of any component fit at node `n`.
    #[must_use]
    pub fn residual_sup(&self, n: usize) -> f64 {
        self.theta_p[n][0]
            .residual_sup
            .max(self.theta_p[n][1].residual_sup)
            .max(self.theta_y[n][0].residual_sup)
            .max(self.theta_y[n][1].residual_sup)
    }
}

/// Refits the solution's adjoints onto a polynomial basis in (x, γ), one
/// least-squares problem per time node and adjoint component.
pub fn fit_decoupling_fields(solution: &MFGSolution, degree: usize) -> Result<DecouplingFields> {
    let paths = &solution.paths;
    let basis = PolyBasis::new(degree, 2);
    let mut theta_p = Vec::with_capacity(paths.node_count());
    let mut theta_y = Vec::with_capacity(paths.node_count());
    for n in 0..paths.node_count() {
        let states = paths.state_ensemble(n)?;
        let targets: [&[f64]; 4] =
            [paths.ps_at(n), paths.p_graves_at(n), paths.ys_at(n), paths.y_graves_at(n)];
        let mut fits = fit_many(&basis, &states, &targets)?;
        let y_grave = fits.pop().expect("four fits");
        let y = fits.pop().expect("four fits");
        let p_grave = fits.pop().expect("four fits");
        let p = fits.pop().expect("four fits");
        theta_p.push([p, p_grave]);
        theta_y.push([y, y_grave]);
    }
    Ok(DecouplingFields { degree, times: paths.grid().nodes(), theta_p, theta_y })
}

/// Model identity echoed into a bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleModel {
    pub name: String,
    pub params: BTreeMap<String, f64>,
}

/// Solver configuration echoed into a bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleConfig {
    pub particles: usize,
    pub steps: usize,
    pub t_min: f64,
    pub seed: u64,
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub basis_degree: usize,
    pub x0: f64,
    pub gamma0: f64,
    pub outer_max_iter: usize,
    pub outer_damping: f64,
    pub fp_tol: f64,
}

/// Grid description of a bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleGrid {
    pub t_min: f64,
    pub t_max: f64,
    pub steps: usize,
}

/// One fitted decoupling field: basis degree plus, per time node, the two
/// component coefficient vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleTheta {
    pub degree: usize,
    /// `coefficients[n][c]` is the coefficient vector of component `c`
    /// (0: first adjoint, 1: second) at node `n`.
    pub coefficients: Vec<[Vec<f64>; 2]>,
}

/// Per-time population summary of the equilibrium flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSummary {
    pub mean_x: f64,
    pub mean_gamma: f64,
    pub second_moment: f64,
}

/// Serializable equilibrium: everything needed to rebuild the feedback
/// strategies in the finite-player harness without re-solving.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumBundle {
    pub spec_version: String,
    pub model: BundleModel,
    pub config: BundleConfig,
    pub grid: BundleGrid,
    /// Major action per grid node.
    pub alpha0: Vec<f64>,
    #[serde(rename = "theta_P")]
    pub theta_p: BundleTheta,
    #[serde(rename = "theta_Y")]
    pub theta_y: BundleTheta,
    pub flow_summaries: Vec<FlowSummary>,
}

impl EquilibriumBundle {
    /// The time grid the bundle was produced on.
    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.grid.t_min, self.grid.t_max, self.grid.steps)
    }

    /// The population summary at node `n`, as frozen into the bundle.
    #[must_use]
    pub fn lambda_at(&self, n: usize) -> LambdaSummary {
        let s = &self.flow_summaries[n];
        LambdaSummary::from_parts(Some(s.mean_x), Some(s.mean_gamma), Some(s.second_moment))
    }

    /// (Y, Ỳ) of the bundled θ_Y field at node `n` and state (x, γ).
    #[must_use]
    pub fn theta_y_at(&self, n: usize, x: f64, gamma: f64) -> [f64; 2] {
        let basis = PolyBasis::new(self.theta_y.degree, 2);
        let mut row = vec![0.0; basis.size()];
        basis.eval_into(&[x, gamma], &mut row);
        let dot = |coeffs: &[f64]| coeffs.iter().zip(&row).map(|(c, b)| c * b).sum::<f64>();
        let node = &self.theta_y.coefficients[n];
        [dot(&node[0]), dot(&node[1])]
    }

    /// The minor feedback action at node `n` and state (x, γ): re-minimizes
    /// the minor Hamiltonian level at the bundled θ_Y values, the bundled
    /// major action, and the bundled flow summary.
    pub fn minor_action(&self, model: &ModelSpec, n: usize, x: f64, gamma: f64) -> Result<f64> {
        let grid = self.time_grid()?;
        let [y, y_grave] = self.theta_y_at(n, x, gamma);
        let lambda = self.lambda_at(n);
        crate::hamiltonian::minimize_alpha(
            model,
            grid.time(n),
            x,
            gamma,
            y,
            y_grave,
            self.alpha0[n],
            &lambda,
        )
    }

    /// Confirms the bundle was produced by `model` with matching
    /// parameters.
    pub fn check_model(&self, model: &ModelSpec) -> Result<()> {
        if self.model.name != model.name() {
            return Err(Error::InvalidConfig(format!(
                "bundle was produced by model '{}' but '{}' was requested",
                self.model.name,
                model.name()
            )));
        }
        for (key, value) in model.params() {
            match self.model.params.get(key) {
                Some(b) if (b - value).abs() <= 1e-12 * value.abs().max(1.0) => {}
                Some(b) => {
                    return Err(Error::InvalidConfig(format!(
                        "bundle parameter {key} = {b} differs from the model's {value}"
                    )));
                }
                None => {
                    return Err(Error::InvalidConfig(format!(
                        "bundle is missing model parameter {key}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Exports a solution and its fitted decoupling fields as one bundle.
/// Both inputs must come from the same solve.
pub fn export_equilibrium(
    solution: &MFGSolution,
    fields: &DecouplingFields,
) -> Result<EquilibriumBundle> {
    let paths = &solution.paths;
    if fields.node_count() != paths.node_count() {
        return Err(Error::GridMismatch(format!(
            "decoupling fields carry {} nodes but the solution has {}",
            fields.node_count(),
            paths.node_count()
        )));
    }
    for (a, b) in fields.times.iter().zip(paths.grid().nodes()) {
        if (a - b).abs() > 1e-12 {
            return Err(Error::GridMismatch(
                "decoupling fields and solution grids disagree".into(),
            ));
        }
    }

    let grid = paths.grid();
    let flow = &solution.equilibrium_flow;
    let mut flow_summaries = Vec::with_capacity(flow.len());
    for n in 0..flow.len() {
        let ensemble = flow.ensemble(n);
        flow_summaries.push(FlowSummary {
            mean_x: mean_coord(ensemble, 0)?,
            mean_gamma: mean_coord(ensemble, 1)?,
            second_moment: second_moment(ensemble),
        });
    }

    let coefficients = |fields: &[[PolyFit; 2]]| -> Vec<[Vec<f64>; 2]> {
        fields.iter().map(|pair| [pair[0].coeffs.clone(), pair[1].coeffs.clone()]).collect()
    };

    Ok(EquilibriumBundle {
        spec_version: SPEC_VERSION.to_string(),
        model: BundleModel {
            name: solution.model_name.clone(),
            params: solution.model_params.iter().cloned().collect(),
        },
        config: BundleConfig {
            particles: solution.config.particles,
            steps: solution.config.steps,
            t_min: grid.t_min(),
            seed: solution.config.seed,
            damping: solution.config.damping,
            tol: solution.config.tol,
            max_iter: solution.config.max_iter,
            basis_degree: solution.config.basis_degree,
            x0: solution.config.x0,
            gamma0: solution.config.gamma0,
            outer_max_iter: solution.outer.max_iter,
            outer_damping: solution.outer.damping,
            fp_tol: solution.outer.fp_tol,
        },
        grid: BundleGrid { t_min: grid.t_min(), t_max: grid.t_max(), steps: grid.steps() },
        alpha0: paths.alpha0s().to_vec(),
        theta_p: BundleTheta { degree: fields.degree, coefficients: coefficients(&fields.theta_p) },
        theta_y: BundleTheta { degree: fields.degree, coefficients: coefficients(&fields.theta_y) },
        flow_summaries,
    })
}

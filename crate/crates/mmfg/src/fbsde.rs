//! The particle McKean–Vlasov forward–backward solver.
//!
//! The optimality system couples the forward minor state (X, γ) with two
//! backward adjoint pairs: (P, P̀) for the major player and (Y, Ỳ) for the
//! representative minor player,
//!
//! ```text
//! d(P, P̀)_t = −[∂_(x,γ) H₀ + Ẽ(∂_λ H₀)(X̃, X)] dt + martingale,
//!     (P, P̀)_T = ∂_λ g₀(λ_T)(X_T, γ_T),
//! d(Y, Ỳ)_t = −∂_(x,γ) H dt + martingale,      (Y, Ỳ)_T = ∂_(x,γ) g,
//! ```
//!
//! which [`picard_solve`] resolves by iterating: simulate the particle system
//! forward under the current strategies ([`simulate_forward`]), propagate the
//! adjoints backward with least-squares Monte Carlo conditional expectations
//! ([`solve_backward`]), re-minimize both Hamiltonian levels to propose new
//! strategies, and damp the strategy update. The volatility does not depend
//! on the controls, so the martingale integrands never enter the strategy
//! computation and are not stored.
//!
//! Measure arguments follow the major/minor asymmetry: the forward dynamics
//! and everything on the major side read the live empirical law of the
//! particle system (the major player internalizes its influence on the
//! population), while the minor side — the (Y, Ỳ) drivers, the minor
//! terminal costs, and the λ argument of the minor minimizer — reads the
//! frozen population flow supplied by the outer fixed-point loop when one is
//! given.
//!
//! [`mean_field_ode_solve`] integrates the deterministic mean reduction of
//! the same system (exact for models whose mean dynamics close) and supplies
//! the Picard warm start.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hamiltonian::{minimize_alpha, minimize_alpha0};
use crate::measure::{MeasureFlow, ParticleEnsemble};
use crate::model::{LambdaSummary, ModelSpec};
use crate::regression::{fit_many, PolyBasis, PolyFit};
use crate::rng::{standard_normals, stream, DOMAIN_FORWARD};

/// Forward states larger than this abort the simulation as divergent.
const STATE_CEILING: f64 = 1e9;
/// Fixed-point tolerance of the mean-field ODE sweep iteration.
const ODE_TOL: f64 = 1e-12;
/// Iteration cap of the mean-field ODE sweep iteration.
const ODE_MAX_ITER: usize = 400;
/// Floor on the total fine integration step count, and minimum refinement
/// under each coarse grid step. The closed forms of interest behave like
/// t^{1/3} near the lower time edge, where the minor minimizer amplifies
/// stage-interpolation error by 2/|α₀|³, so the ODE integrates on a much
/// finer internal lattice and samples the coarse nodes from it.
const ODE_MIN_SUBSTEPS: usize = 20000;
const ODE_MIN_REFINE: usize = 10;

/// A uniform time grid on [t_min, t_max] with `steps` intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    t_min: f64,
    t_max: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(t_min: f64, t_max: f64, steps: usize) -> Result<Self> {
        if !(t_min.is_finite() && t_max.is_finite()) || t_min < 0.0 || t_max <= t_min {
            return Err(Error::InvalidConfig(format!(
                "time grid needs 0 <= t_min < t_max, got [{t_min}, {t_max}]"
            )));
        }
        if steps == 0 {
            return Err(Error::InvalidConfig("time grid needs at least one step".into()));
        }
        Ok(TimeGrid { t_min, t_max, steps })
    }

    #[must_use]
    pub fn t_min(&self) -> f64 {
        self.t_min
    }

    #[must_use]
    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    #[must_use]
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Number of grid nodes (`steps + 1`).
    #[must_use]
    pub fn node_count(&self) -> usize {
        self.steps + 1
    }

    #[must_use]
    pub fn dt(&self) -> f64 {
        (self.t_max - self.t_min) / self.steps as f64
    }

    /// The n-th node; the last node is exactly `t_max`.
    #[must_use]
    pub fn time(&self, n: usize) -> f64 {
        if n == self.steps {
            self.t_max
        } else {
            self.t_min + n as f64 * self.dt()
        }
    }

    #[must_use]
    pub fn nodes(&self) -> Vec<f64> {
        (0..self.node_count()).map(|n| self.time(n)).collect()
    }
}

/// Configuration of one inner forward–backward solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Number of particles N.
    pub particles: usize,
    /// Number of time steps M.
    pub steps: usize,
    /// Grid start; defaults to the model's preferred start when `None`.
    pub t_min: Option<f64>,
    /// Seed of the Brownian driver streams.
    pub seed: u64,
    /// Strategy damping ρ ∈ (0, 1]; 1 disables damping.
    pub damping: f64,
    /// Sup-norm tolerance on successive strategy proposals.
    pub tol: f64,
    /// Cap on strategy-update sweeps.
    pub max_iter: usize,
    /// Total degree of the regression basis in (x, γ).
    pub basis_degree: usize,
    /// Initial minor state offset.
    pub x0: f64,
    /// Initial aim offset.
    pub gamma0: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            particles: 1000,
            steps: 100,
            t_min: None,
            seed: 7,
            damping: 0.5,
            tol: 1e-3,
            max_iter: 50,
            basis_degree: 2,
            x0: 0.0,
            gamma0: 0.0,
        }
    }
}

impl SolverConfig {
    /// The grid start this configuration resolves to for `model`.
    #[must_use]
    pub fn resolved_t_min(&self, model: &ModelSpec) -> f64 {
        self.t_min.unwrap_or_else(|| model.default_t_min())
    }

    pub fn validate(&self, model: &ModelSpec) -> Result<()> {
        if self.particles == 0 {
            return Err(Error::InvalidConfig("particles must be positive".into()));
        }
        if self.steps == 0 {
            return Err(Error::InvalidConfig("steps must be positive".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "damping must lie in (0, 1], got {}",
                self.damping
            )));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(Error::InvalidConfig(format!("tolerance must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("max_iter must be positive".into()));
        }
        if self.basis_degree > 10 {
            return Err(Error::InvalidConfig(format!(
                "basis degree {} is unreasonably large",
                self.basis_degree
            )));
        }
        if !(self.x0.is_finite() && self.gamma0.is_finite()) {
            return Err(Error::InvalidConfig("initial state must be finite".into()));
        }
        let t_min = self.resolved_t_min(model);
        if !t_min.is_finite() || t_min < 0.0 || t_min >= model.horizon() {
            return Err(Error::InvalidConfig(format!(
                "t_min {t_min} outside [0, {})",
                model.horizon()
            )));
        }
        let (_, gamma_init) = initial_point(model, self, t_min);
        if model.startup(t_min).is_some() && gamma_init.abs() < crate::measure::MEAN_FLOOR {
            return Err(Error::InvalidConfig(format!(
                "the model is singular at the start: the initial mean aim at t_min = {t_min} \
                 is {gamma_init}; use a positive t_min or a nonzero gamma0"
            )));
        }
        Ok(())
    }
}

/// Initial (x, γ) point of the Dirac particle cloud: the configured offsets,
/// shifted by the model's exact startup means at `t_min` when it declares
/// them (so the default offsets (0, 0) start on the reference trajectory).
#[must_use]
pub fn initial_point(model: &ModelSpec, config: &SolverConfig, t_min: f64) -> (f64, f64) {
    match model.startup(t_min) {
        Some(s) => (config.x0 + s.mean_x, config.gamma0 + s.mean_gamma),
        None => (config.x0, config.gamma0),
    }
}

/// Pre-drawn Brownian increments, one independent stream per particle, so
/// trajectories do not depend on scheduling or thread count.
#[derive(Debug, Clone)]
pub struct BrownianGrid {
    /// Particle-major flat layout: `increments[i * steps + n]` is √dt·ξ.
    increments: Vec<f64>,
    steps: usize,
    particles: usize,
}

impl BrownianGrid {
    pub fn generate(seed: u64, particles: usize, grid: &TimeGrid) -> Result<Self> {
        if particles == 0 {
            return Err(Error::EmptyEnsemble);
        }
        let steps = grid.steps();
        let scale = grid.dt().sqrt();
        let per_particle: Vec<Vec<f64>> = (0..particles)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream(seed, DOMAIN_FORWARD, i as u64);
                let mut draws = standard_normals(&mut rng, steps);
                for d in &mut draws {
                    *d *= scale;
                }
                draws
            })
            .collect();
        Ok(BrownianGrid { increments: per_particle.concat(), steps, particles })
    }

    #[must_use]
    pub fn particles(&self) -> usize {
        self.particles
    }

    #[must_use]
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// The increment over [t_n, t_{n+1}) for particle `i`.
    #[must_use]
    pub fn increment(&self, n: usize, i: usize) -> f64 {
        self.increments[i * self.steps + n]
    }
}

/// A strategy pair on a time grid: the major action path and, per node, the
/// fitted minor decoupling fields (ŷ, ỳ̂) from which the minor action is
/// re-minimized at any state.
#[derive(Debug, Clone)]
pub struct StrategyProfile {
    /// Major action per grid node.
    pub alpha0: Vec<f64>,
    /// Fitted Y field per grid node.
    pub y_fit: Vec<PolyFit>,
    /// Fitted Ỳ field per grid node.
    pub y_grave_fit: Vec<PolyFit>,
}

impl StrategyProfile {
    fn check_nodes(&self, nodes: usize) -> Result<()> {
        if self.alpha0.len() != nodes {
            return Err(Error::CountMismatch { left: nodes, right: self.alpha0.len() });
        }
        if self.y_fit.len() != nodes || self.y_grave_fit.len() != nodes {
            return Err(Error::CountMismatch { left: nodes, right: self.y_fit.len() });
        }
        Ok(())
    }

    /// The minor action at node `n` and state (x, γ) under population
    /// summary `lambda`.
    pub fn minor_action(
        &self,
        model: &ModelSpec,
        grid: &TimeGrid,
        n: usize,
        x: f64,
        gamma: f64,
        lambda: &LambdaSummary,
    ) -> Result<f64> {
        let point = [x, gamma];
        let y = self.y_fit[n].eval(&point);
        let y_grave = self.y_grave_fit[n].eval(&point);
        minimize_alpha(model, grid.time(n), x, gamma, y, y_grave, self.alpha0[n], lambda)
    }
}

/// Forward particle trajectories with the actions that produced them.
/// Flat arrays are time-major: index `n * particles + i`.
#[derive(Debug, Clone)]
pub struct ForwardSweep {
    pub x: Vec<f64>,
    pub gamma: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha0: Vec<f64>,
    particles: usize,
}

impl ForwardSweep {
    #[must_use]
    pub fn particles(&self) -> usize {
        self.particles
    }

    /// The (x, γ) ensemble at node `n`.
    pub fn state_ensemble(&self, n: usize) -> Result<ParticleEnsemble> {
        let lo = n * self.particles;
        let hi = lo + self.particles;
        ParticleEnsemble::from_columns(&[&self.x[lo..hi], &self.gamma[lo..hi]])
    }

    /// The minor actions at node `n`.
    #[must_use]
    pub fn alphas_at(&self, n: usize) -> &[f64] {
        &self.alpha[n * self.particles..(n + 1) * self.particles]
    }
}

/// Adjoint values and per-node regression fits from one backward pass.
/// Flat arrays are time-major like [`ForwardSweep`].
#[derive(Debug, Clone)]
pub struct BackwardSweep {
    pub p: Vec<f64>,
    pub p_grave: Vec<f64>,
    pub y: Vec<f64>,
    pub y_grave: Vec<f64>,
    pub fits: Vec<NodeFits>,
}

/// The four decoupling-field fits at one grid node.
#[derive(Debug, Clone)]
pub struct NodeFits {
    pub p: PolyFit,
    pub p_grave: PolyFit,
    pub y: PolyFit,
    pub y_grave: PolyFit,
}

impl NodeFits {
    /// R² of the (P, P̀, Y, Ỳ) fits at this node.
    #[must_use]
    pub fn r2(&self) -> [f64; 4] {
        [self.p.r2, self.p_grave.r2, self.y.r2, self.y_grave.r2]
    }
}

/// Per-node population summaries of the frozen minor-side flow, or `None`
/// to read the live empirical law.
fn minor_summaries(
    model: &ModelSpec,
    grid: &TimeGrid,
    flow: Option<&MeasureFlow>,
) -> Result<Option<Vec<LambdaSummary>>> {
    let Some(flow) = flow else { return Ok(None) };
    if flow.len() != grid.node_count() {
        return Err(Error::GridMismatch(format!(
            "population flow has {} slices but the grid has {} nodes",
            flow.len(),
            grid.node_count()
        )));
    }
    for (n, &ft) in flow.times().iter().enumerate() {
        if (ft - grid.time(n)).abs() > 1e-9 {
            return Err(Error::GridMismatch(format!(
                "population flow time {ft} differs from grid node {}",
                grid.time(n)
            )));
        }
    }
    let summaries = (0..flow.len())
        .map(|n| model.lambda_summary(flow.ensemble(n)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Some(summaries))
}

/// Euler–Maruyama simulation of the particle system under a fixed strategy.
///
/// Each step draws the drift's measure argument from the live empirical law
/// (McKean–Vlasov), while the minor minimizer inside the strategy reads the
/// frozen `minor_flow` when one is given. The aim integrates its action
/// exactly: γ_{n+1} = γ_n + α_n·dt.
pub fn simulate_forward(
    model: &ModelSpec,
    grid: &TimeGrid,
    init: (f64, f64),
    brownian: &BrownianGrid,
    strategy: &StrategyProfile,
    minor_flow: Option<&MeasureFlow>,
) -> Result<ForwardSweep> {
    let nodes = grid.node_count();
    let n_particles = brownian.particles();
    if brownian.steps() != grid.steps() {
        return Err(Error::GridMismatch(format!(
            "Brownian grid has {} steps but the time grid has {}",
            brownian.steps(),
            grid.steps()
        )));
    }
    strategy.check_nodes(nodes)?;
    let minor_lams = minor_summaries(model, grid, minor_flow)?;

    let mut x = vec![0.0; nodes * n_particles];
    let mut gamma = vec![0.0; nodes * n_particles];
    let mut alpha = vec![0.0; nodes * n_particles];
    x[..n_particles].fill(init.0);
    gamma[..n_particles].fill(init.1);

    let dt = grid.dt();
    for n in 0..nodes {
        let t = grid.time(n);
        let lo = n * n_particles;
        let hi = lo + n_particles;
        let ensemble = ParticleEnsemble::from_columns(&[&x[lo..hi], &gamma[lo..hi]])?;
        let lambda_live = model.lambda_summary(&ensemble)?;
        let lambda_minor = match &minor_lams {
            Some(s) => s[n],
            None => lambda_live,
        };

        let actions: Vec<f64> = (0..n_particles)
            .into_par_iter()
            .map(|i| strategy.minor_action(model, grid, n, x[lo + i], gamma[lo + i], &lambda_minor))
            .collect::<Result<_>>()?;
        alpha[lo..hi].copy_from_slice(&actions);

        if n == grid.steps() {
            break;
        }
        let a0 = strategy.alpha0[n];
        let sigma = model.sigma().value(t);
        for i in 0..n_particles {
            let b = model.drift(t, x[lo + i], gamma[lo + i], a0, actions[i], &lambda_live)?;
            let xn = x[lo + i] + b * dt + sigma * brownian.increment(n, i);
            let gn = gamma[lo + i] + actions[i] * dt;
            if !(xn.is_finite() && gn.is_finite()) || xn.abs() > STATE_CEILING {
                return Err(Error::Divergence { step: n, time: t });
            }
            x[hi + i] = xn;
            gamma[hi + i] = gn;
        }
    }

    Ok(ForwardSweep { x, gamma, alpha, alpha0: strategy.alpha0.clone(), particles: n_particles })
}

/// One backward adjoint pass along fixed forward trajectories.
///
/// Walks the explicit conditional-expectation scheme
/// `V_n = E[V_{n+1} + G(t_{n+1}, ·) dt | X_n, γ_n]`, realizing each
/// conditional expectation as a polynomial regression on (x, γ); the four
/// adjoint targets share one design factorization per step. The terminal
/// slice is fitted too, so every node carries decoupling fields.
pub fn solve_backward(
    model: &ModelSpec,
    grid: &TimeGrid,
    forward: &ForwardSweep,
    minor_flow: Option<&MeasureFlow>,
    basis_degree: usize,
) -> Result<BackwardSweep> {
    let nodes = grid.node_count();
    let n_particles = forward.particles();
    let minor_lams = minor_summaries(model, grid, minor_flow)?;
    let basis = PolyBasis::new(basis_degree, 2);

    let mut p = vec![0.0; nodes * n_particles];
    let mut p_grave = vec![0.0; nodes * n_particles];
    let mut y = vec![0.0; nodes * n_particles];
    let mut y_grave = vec![0.0; nodes * n_particles];
    let mut fits_rev: Vec<NodeFits> = Vec::with_capacity(nodes);

    // Terminal slice: (P, P̀)_T from the measure derivative of g₀ on the live
    // terminal law, (Y, Ỳ)_T from the state partials of g on the minor side.
    let last = grid.steps();
    let lo = last * n_particles;
    let ensemble_t = forward.state_ensemble(last)?;
    let lambda_live_t = model.lambda_summary(&ensemble_t)?;
    let lambda_minor_t = minor_lams.as_ref().map_or(lambda_live_t, |s| s[last]);
    let terminal_rows = model.dlambda_term_major(&lambda_live_t, &ensemble_t)?;
    if terminal_rows.len() != n_particles {
        return Err(Error::CountMismatch { left: n_particles, right: terminal_rows.len() });
    }
    for i in 0..n_particles {
        let (xi, gi) = (forward.x[lo + i], forward.gamma[lo + i]);
        p[lo + i] = terminal_rows[i][0];
        p_grave[lo + i] = terminal_rows[i][1];
        y[lo + i] = model.term_cost_minor_dx(xi, gi, &lambda_minor_t)?;
        y_grave[lo + i] = model.term_cost_minor_dgamma(xi, gi, &lambda_minor_t)?;
    }
    fits_rev.push(fit_node(
        &basis,
        &ensemble_t,
        &p[lo..lo + n_particles],
        &p_grave[lo..lo + n_particles],
        &y[lo..lo + n_particles],
        &y_grave[lo..lo + n_particles],
    )?);

    let dt = grid.dt();
    for n in (0..last).rev() {
        let lo = n * n_particles;
        let up = (n + 1) * n_particles;
        let t_up = grid.time(n + 1);
        let ensemble_up = forward.state_ensemble(n + 1)?;
        let lambda_live = model.lambda_summary(&ensemble_up)?;
        let lambda_minor = minor_lams.as_ref().map_or(lambda_live, |s| s[n + 1]);
        let a0 = forward.alpha0[n + 1];
        let mean_field = model.mean_field_rows(t_up, a0, &lambda_live, &ensemble_up)?;
        if mean_field.len() != n_particles {
            return Err(Error::CountMismatch { left: n_particles, right: mean_field.len() });
        }

        let mut target_p = vec![0.0; n_particles];
        let mut target_pg = vec![0.0; n_particles];
        let mut target_y = vec![0.0; n_particles];
        let mut target_yg = vec![0.0; n_particles];
        for i in 0..n_particles {
            let (xi, gi) = (forward.x[up + i], forward.gamma[up + i]);
            let ai = forward.alpha[up + i];
            let db_dx = model.drift_dx(t_up, xi, gi, a0, ai, &lambda_live)?;
            let db_dg = model.drift_dgamma(t_up, xi, gi, a0, ai, &lambda_live)?;
            target_p[i] = p[up + i] + (db_dx * p[up + i] + mean_field[i][0]) * dt;
            target_pg[i] = p_grave[up + i] + (db_dg * p[up + i] + mean_field[i][1]) * dt;

            let db_dx_m = model.drift_dx(t_up, xi, gi, a0, ai, &lambda_minor)?;
            let db_dg_m = model.drift_dgamma(t_up, xi, gi, a0, ai, &lambda_minor)?;
            let df_dx = model.run_cost_minor_dx(t_up, xi, gi, a0, ai, &lambda_minor)?;
            let df_dg = model.run_cost_minor_dgamma(t_up, xi, gi, a0, ai, &lambda_minor)?;
            target_y[i] = y[up + i] + (db_dx_m * y[up + i] + df_dx) * dt;
            target_yg[i] = y_grave[up + i] + (db_dg_m * y[up + i] + df_dg) * dt;
        }

        let ensemble_n = forward.state_ensemble(n)?;
        let node = fit_node(&basis, &ensemble_n, &target_p, &target_pg, &target_y, &target_yg)?;
        for i in 0..n_particles {
            let point = [forward.x[lo + i], forward.gamma[lo + i]];
            p[lo + i] = node.p.eval(&point);
            p_grave[lo + i] = node.p_grave.eval(&point);
            y[lo + i] = node.y.eval(&point);
            y_grave[lo + i] = node.y_grave.eval(&point);
        }
        fits_rev.push(node);
    }

    fits_rev.reverse();
    Ok(BackwardSweep { p, p_grave, y, y_grave, fits: fits_rev })
}

fn fit_node(
    basis: &PolyBasis,
    states: &ParticleEnsemble,
    p: &[f64],
    p_grave: &[f64],
    y: &[f64],
    y_grave: &[f64],
) -> Result<NodeFits> {
    let mut fits = fit_many(basis, states, &[p, p_grave, y, y_grave])?;
    let y_grave = fits.pop().expect("four fits");
    let y = fits.pop().expect("four fits");
    let p_grave = fits.pop().expect("four fits");
    let p = fits.pop().expect("four fits");
    Ok(NodeFits { p, p_grave, y, y_grave })
}

/// Complete solved trajectories of the forward–backward system.
/// Flat arrays are time-major: index `n * particles + i`.
#[derive(Debug, Clone)]
pub struct FBSDEPaths {
    grid: TimeGrid,
    particles: usize,
    x: Vec<f64>,
    gamma: Vec<f64>,
    p: Vec<f64>,
    p_grave: Vec<f64>,
    y: Vec<f64>,
    y_grave: Vec<f64>,
    alpha0: Vec<f64>,
    alpha: Vec<f64>,
    fits: Vec<NodeFits>,
    picard_residuals: Vec<f64>,
}

impl FBSDEPaths {
    fn assemble(
        grid: TimeGrid,
        forward: ForwardSweep,
        backward: BackwardSweep,
        picard_residuals: Vec<f64>,
    ) -> Self {
        let particles = forward.particles;
        FBSDEPaths {
            grid,
            particles,
            x: forward.x,
            gamma: forward.gamma,
            p: backward.p,
            p_grave: backward.p_grave,
            y: backward.y,
            y_grave: backward.y_grave,
            alpha0: forward.alpha0,
            alpha: forward.alpha,
            fits: backward.fits,
            picard_residuals,
        }
    }

    #[must_use]
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    #[must_use]
    pub fn node_count(&self) -> usize {
        self.grid.node_count()
    }

    #[must_use]
    pub fn particle_count(&self) -> usize {
        self.particles
    }

    #[must_use]
    pub fn x(&self, n: usize, i: usize) -> f64 {
        self.x[n * self.particles + i]
    }

    #[must_use]
    pub fn gamma(&self, n: usize, i: usize) -> f64 {
        self.gamma[n * self.particles + i]
    }

    #[must_use]
    pub fn p(&self, n: usize, i: usize) -> f64 {
        self.p[n * self.particles + i]
    }

    #[must_use]
    pub fn p_grave(&self, n: usize, i: usize) -> f64 {
        self.p_grave[n * self.particles + i]
    }

    #[must_use]
    pub fn y(&self, n: usize, i: usize) -> f64 {
        self.y[n * self.particles + i]
    }

    #[must_use]
    pub fn y_grave(&self, n: usize, i: usize) -> f64 {
        self.y_grave[n * self.particles + i]
    }

    #[must_use]
    pub fn alpha0(&self, n: usize) -> f64 {
        self.alpha0[n]
    }

    #[must_use]
    pub fn alpha0s(&self) -> &[f64] {
        &self.alpha0
    }

    #[must_use]
    pub fn alpha(&self, n: usize, i: usize) -> f64 {
        self.alpha[n * self.particles + i]
    }

    #[must_use]
    pub fn alphas_at(&self, n: usize) -> &[f64] {
        &self.alpha[n * self.particles..(n + 1) * self.particles]
    }

    fn slice_at<'a>(&self, data: &'a [f64], n: usize) -> &'a [f64] {
        &data[n * self.particles..(n + 1) * self.particles]
    }

    #[must_use]
    pub fn xs_at(&self, n: usize) -> &[f64] {
        self.slice_at(&self.x, n)
    }

    #[must_use]
    pub fn gammas_at(&self, n: usize) -> &[f64] {
        self.slice_at(&self.gamma, n)
    }

    #[must_use]
    pub fn ps_at(&self, n: usize) -> &[f64] {
        self.slice_at(&self.p, n)
    }

    #[must_use]
    pub fn p_graves_at(&self, n: usize) -> &[f64] {
        self.slice_at(&self.p_grave, n)
    }

    #[must_use]
    pub fn ys_at(&self, n: usize) -> &[f64] {
        self.slice_at(&self.y, n)
    }

    #[must_use]
    pub fn y_graves_at(&self, n: usize) -> &[f64] {
        self.slice_at(&self.y_grave, n)
    }

    /// The (x, γ) ensemble at node `n`.
    pub fn state_ensemble(&self, n: usize) -> Result<ParticleEnsemble> {
        let lo = n * self.particles;
        let hi = lo + self.particles;
        ParticleEnsemble::from_columns(&[&self.x[lo..hi], &self.gamma[lo..hi]])
    }

    /// The (x, γ, P, P̀) ensemble at node `n`.
    pub fn joint_ensemble(&self, n: usize) -> Result<ParticleEnsemble> {
        let lo = n * self.particles;
        let hi = lo + self.particles;
        ParticleEnsemble::from_columns(&[
            &self.x[lo..hi],
            &self.gamma[lo..hi],
            &self.p[lo..hi],
            &self.p_grave[lo..hi],
        ])
    }

    /// The empirical state flow induced by these trajectories.
    pub fn flow(&self) -> Result<MeasureFlow> {
        let ensembles = (0..self.node_count())
            .map(|n| self.state_ensemble(n))
            .collect::<Result<Vec<_>>>()?;
        MeasureFlow::new(self.grid.nodes(), ensembles)
    }

    /// Decoupling-field fits per node.
    #[must_use]
    pub fn node_fits(&self) -> &[NodeFits] {
        &self.fits
    }

    /// Strategy-update residual history of the solve.
    #[must_use]
    pub fn picard_residuals(&self) -> &[f64] {
        &self.picard_residuals
    }

    /// The strategy profile these paths realize.
    #[must_use]
    pub fn strategy(&self) -> StrategyProfile {
        StrategyProfile {
            alpha0: self.alpha0.clone(),
            y_fit: self.fits.iter().map(|f| f.y.clone()).collect(),
            y_grave_fit: self.fits.iter().map(|f| f.y_grave.clone()).collect(),
        }
    }

    /// Shifts the whole major action path, leaving states and adjoints in
    /// place; used to audit the sensitivity of the optimality check.
    pub fn perturb_alpha0(&mut self, delta: f64) {
        for a in &mut self.alpha0 {
            *a += delta;
        }
    }

    /// Shifts every minor action, leaving states and adjoints in place; the
    /// minor-level counterpart of [`FBSDEPaths::perturb_alpha0`].
    pub fn perturb_alpha(&mut self, delta: f64) {
        for a in &mut self.alpha {
            *a += delta;
        }
    }

    fn node_mean(&self, data: &[f64], n: usize) -> f64 {
        let lo = n * self.particles;
        data[lo..lo + self.particles].iter().sum::<f64>() / self.particles as f64
    }

    #[must_use]
    pub fn mean_x(&self, n: usize) -> f64 {
        self.node_mean(&self.x, n)
    }

    #[must_use]
    pub fn mean_gamma(&self, n: usize) -> f64 {
        self.node_mean(&self.gamma, n)
    }

    #[must_use]
    pub fn mean_p(&self, n: usize) -> f64 {
        self.node_mean(&self.p, n)
    }

    #[must_use]
    pub fn mean_p_grave(&self, n: usize) -> f64 {
        self.node_mean(&self.p_grave, n)
    }

    #[must_use]
    pub fn mean_y(&self, n: usize) -> f64 {
        self.node_mean(&self.y, n)
    }

    #[must_use]
    pub fn mean_y_grave(&self, n: usize) -> f64 {
        self.node_mean(&self.y_grave, n)
    }
}

/// Undamped strategy proposals from one forward/backward pass: re-minimized
/// major actions per node and minor actions per node and particle (the minor
/// level already sees the proposed major action).
fn propose_strategies(
    model: &ModelSpec,
    grid: &TimeGrid,
    forward: &ForwardSweep,
    backward: &BackwardSweep,
    minor_lams: &Option<Vec<LambdaSummary>>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n_particles = forward.particles();
    let per_node: Vec<(f64, Vec<f64>)> = (0..grid.node_count())
        .into_par_iter()
        .map(|n| -> Result<(f64, Vec<f64>)> {
            let t = grid.time(n);
            let lo = n * n_particles;
            let hi = lo + n_particles;
            let joint = ParticleEnsemble::from_columns(&[
                &forward.x[lo..hi],
                &forward.gamma[lo..hi],
                &backward.p[lo..hi],
                &backward.p_grave[lo..hi],
            ])?;
            let a0 = minimize_alpha0(model, t, &joint, forward.alphas_at(n))?;
            let lambda_minor = match minor_lams {
                Some(s) => s[n],
                None => model.lambda_summary(&joint.marginal(&[0, 1])?)?,
            };
            let actions = (0..n_particles)
                .map(|i| {
                    minimize_alpha(
                        model,
                        t,
                        forward.x[lo + i],
                        forward.gamma[lo + i],
                        backward.y[lo + i],
                        backward.y_grave[lo + i],
                        a0,
                        &lambda_minor,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((a0, actions))
        })
        .collect::<Result<_>>()?;

    let mut alpha0 = Vec::with_capacity(per_node.len());
    let mut alpha = Vec::with_capacity(per_node.len() * n_particles);
    for (a0, actions) in per_node {
        alpha0.push(a0);
        alpha.extend_from_slice(&actions);
    }
    Ok((alpha0, alpha))
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Solves the McKean–Vlasov forward–backward system under a frozen
/// minor-side population flow by damped strategy iteration.
///
/// Each sweep simulates forward under the current strategies, regresses the
/// adjoints backward, and re-minimizes both Hamiltonian levels into undamped
/// proposals. The residual is the sup-norm gap between successive proposals
/// (for the first sweep: between the proposal and the warm start), so the
/// reported convergence is a genuine Cauchy criterion on the strategies and
/// is not inflated by the damping. On convergence after the first sweep the
/// proposals are adopted as-is and one final consolidation sweep aligns
/// paths, adjoints, and actions; strategies between sweeps move by the
/// damped update `(1 − ρ)·current + ρ·proposal` on the major path and the
/// minor fit coefficients.
///
/// The warm start integrates [`mean_field_ode_solve`] when the model's mean
/// dynamics close, and otherwise starts from projected-zero actions and
/// vanishing adjoint fields.
pub fn picard_solve(
    model: &ModelSpec,
    config: &SolverConfig,
    minor_flow: Option<&MeasureFlow>,
) -> Result<FBSDEPaths> {
    model.validate()?;
    config.validate(model)?;
    let t_min = config.resolved_t_min(model);
    let grid = TimeGrid::new(t_min, model.horizon(), config.steps)?;
    let brownian = BrownianGrid::generate(config.seed, config.particles, &grid)?;
    let init = initial_point(model, config, t_min);
    let minor_lams = minor_summaries(model, &grid, minor_flow)?;
    let basis = PolyBasis::new(config.basis_degree, 2);

    let mut strategy = warm_start(model, config, &grid, &basis);
    let mut prev_alpha0: Vec<f64> = Vec::new();
    let mut prev_alpha: Vec<f64> = Vec::new();
    let mut residuals: Vec<f64> = Vec::new();

    for sweep in 1..=config.max_iter {
        let forward = simulate_forward(model, &grid, init, &brownian, &strategy, minor_flow)?;
        let backward = solve_backward(model, &grid, &forward, minor_flow, config.basis_degree)?;
        let (prop_alpha0, prop_alpha) =
            propose_strategies(model, &grid, &forward, &backward, &minor_lams)?;

        let residual = if sweep == 1 {
            sup_diff(&prop_alpha0, &forward.alpha0).max(sup_diff(&prop_alpha, &forward.alpha))
        } else {
            sup_diff(&prop_alpha0, &prev_alpha0).max(sup_diff(&prop_alpha, &prev_alpha))
        };
        residuals.push(residual);

        if residual <= config.tol {
            if sweep == 1 {
                // The warm start is already a fixed point: keep it.
                return Ok(FBSDEPaths::assemble(grid, forward, backward, residuals));
            }
            // Adopt the undamped proposals and consolidate once.
            let final_strategy = StrategyProfile {
                alpha0: prop_alpha0,
                y_fit: backward.fits.iter().map(|f| f.y.clone()).collect(),
                y_grave_fit: backward.fits.iter().map(|f| f.y_grave.clone()).collect(),
            };
            let forward =
                simulate_forward(model, &grid, init, &brownian, &final_strategy, minor_flow)?;
            let backward = solve_backward(model, &grid, &forward, minor_flow, config.basis_degree)?;
            return Ok(FBSDEPaths::assemble(grid, forward, backward, residuals));
        }

        let rho = config.damping;
        for (current, proposal) in strategy.alpha0.iter_mut().zip(&prop_alpha0) {
            *current = (1.0 - rho) * *current + rho * proposal;
        }
        for (n, fits) in backward.fits.iter().enumerate() {
            strategy.y_fit[n] = strategy.y_fit[n].mix_coeffs(&fits.y, rho)?;
            strategy.y_grave_fit[n] = strategy.y_grave_fit[n].mix_coeffs(&fits.y_grave, rho)?;
        }
        prev_alpha0 = prop_alpha0;
        prev_alpha = prop_alpha;
    }

    let last = *residuals.last().unwrap_or(&f64::INFINITY);
    Err(Error::NonConvergence {
        iterations: config.max_iter,
        last,
        tol: config.tol,
        residuals,
    })
}

/// The strategy iteration starts from the deterministic mean reduction when
/// it exists, and from neutral strategies otherwise.
fn warm_start(
    model: &ModelSpec,
    config: &SolverConfig,
    grid: &TimeGrid,
    basis: &PolyBasis,
) -> StrategyProfile {
    if model.reducible() {
        if let Ok(ode) =
            mean_field_ode_solve(model, grid.t_min(), grid.steps(), config.x0, config.gamma0)
        {
            return StrategyProfile {
                alpha0: ode.alpha0,
                y_fit: ode.y.iter().map(|&v| PolyFit::constant(basis.clone(), v)).collect(),
                y_grave_fit: ode
                    .y_grave
                    .iter()
                    .map(|&v| PolyFit::constant(basis.clone(), v))
                    .collect(),
            };
        }
    }
    let nodes = grid.node_count();
    StrategyProfile {
        alpha0: vec![model.action_major().project(0.0); nodes],
        y_fit: vec![PolyFit::constant(basis.clone(), 0.0); nodes],
        y_grave_fit: vec![PolyFit::constant(basis.clone(), 0.0); nodes],
    }
}

/// Mean trajectories of the solved system from its deterministic reduction.
#[derive(Debug, Clone)]
pub struct MeanFieldOde {
    pub times: Vec<f64>,
    pub mean_x: Vec<f64>,
    pub mean_gamma: Vec<f64>,
    pub p: Vec<f64>,
    pub p_grave: Vec<f64>,
    pub y: Vec<f64>,
    pub y_grave: Vec<f64>,
    pub alpha0: Vec<f64>,
    pub alpha: Vec<f64>,
    /// Sweep iterations until the α₀ path became stationary.
    pub iterations: usize,
    /// Final sup-norm change of the α₀ path.
    pub residual: f64,
}

/// Frozen lattice values with midpoint access by endpoint averaging.
struct Lattice<'a>(&'a [f64]);

impl Lattice<'_> {
    /// Value at lattice index `j` (integer) or `j + 1/2` (averaged).
    fn at(&self, j: usize, half: bool) -> f64 {
        if half {
            0.5 * (self.0[j] + self.0[j + 1])
        } else {
            self.0[j]
        }
    }
}

/// Integrates the deterministic mean reduction of the optimality system.
///
/// For models whose mean dynamics close (state-independent drift partials
/// and measure dependence through means), the population collapses to a
/// single deterministic particle: each sweep integrates the adjoint pair
/// backward along the frozen mean path with a classical fourth-order
/// Runge–Kutta scheme, re-minimizes the major action on the collapsed
/// one-particle ensemble, and integrates the means forward under the fresh
/// strategies; sweeps repeat until the α₀ path is stationary. Stage values
/// of frozen counterpart quantities use endpoint averages.
///
/// The returned samples live on the `steps`-node coarse grid, but the
/// integration itself runs on a finer internal lattice whose resolution
/// absorbs the t^{1/3}-type startup behavior of the worked models.
pub fn mean_field_ode_solve(
    model: &ModelSpec,
    t_min: f64,
    steps: usize,
    x0: f64,
    gamma0: f64,
) -> Result<MeanFieldOde> {
    if !model.reducible() {
        return Err(Error::NotReducible(model.name().to_string()));
    }
    model.validate()?;
    let coarse = TimeGrid::new(t_min, model.horizon(), steps)?;
    let refine = ODE_MIN_REFINE.max(ODE_MIN_SUBSTEPS.div_ceil(steps));
    let fine = TimeGrid::new(t_min, model.horizon(), steps * refine)?;
    let s = fine.steps();
    let h = fine.dt();

    let init = match model.startup(t_min) {
        Some(st) => (x0 + st.mean_x, gamma0 + st.mean_gamma),
        None => (x0, gamma0),
    };

    let mut mean_x = vec![init.0; s + 1];
    let mut mean_gamma = vec![init.1; s + 1];
    let (p_init, pg_init) = dirac_terminal_major(model, init.0, init.1)?;
    let mut p = vec![p_init; s + 1];
    let mut p_grave = vec![pg_init; s + 1];
    let lambda_init = LambdaSummary::dirac(init.0, init.1);
    let mut y = vec![model.term_cost_minor_dx(init.0, init.1, &lambda_init)?; s + 1];
    let mut y_grave = vec![model.term_cost_minor_dgamma(init.0, init.1, &lambda_init)?; s + 1];
    let mut alpha = vec![0.0; s + 1];
    let mut alpha0 = vec![0.0; s + 1];
    for j in 0..=s {
        alpha0[j] = dirac_alpha0(model, fine.time(j), mean_x[j], mean_gamma[j], p[j], p_grave[j], alpha[j])?;
    }
    for j in 0..=s {
        let lambda = LambdaSummary::dirac(mean_x[j], mean_gamma[j]);
        alpha[j] =
            minimize_alpha(model, fine.time(j), mean_x[j], mean_gamma[j], y[j], y_grave[j], alpha0[j], &lambda)?;
    }

    let mut residuals = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for sweep in 1..=ODE_MAX_ITER {
        iterations = sweep;

        // Backward adjoint sweep along the frozen mean path.
        let (xm, gm, a0l, al) =
            (Lattice(&mean_x), Lattice(&mean_gamma), Lattice(&alpha0), Lattice(&alpha));
        let (pt, pgt) = dirac_terminal_major(model, mean_x[s], mean_gamma[s])?;
        p[s] = pt;
        p_grave[s] = pgt;
        let lambda_t = LambdaSummary::dirac(mean_x[s], mean_gamma[s]);
        y[s] = model.term_cost_minor_dx(mean_x[s], mean_gamma[s], &lambda_t)?;
        y_grave[s] = model.term_cost_minor_dgamma(mean_x[s], mean_gamma[s], &lambda_t)?;
        for j in (0..s).rev() {
            let deriv = |j_base: usize, half: bool, back: f64, v: [f64; 4]| -> Result<[f64; 4]> {
                let tau = if half { fine.time(j_base) + 0.5 * h } else { fine.time(j_base) } - back;
                let (x, g) = (xm.at(j_base, half), gm.at(j_base, half));
                let (a0, a) = (a0l.at(j_base, half), al.at(j_base, half));
                adjoint_derivative(model, tau, x, g, a0, a, v)
            };
            // Classical RK4 from t_{j+1} down to t_j (step −h).
            let v1 = [p[j + 1], p_grave[j + 1], y[j + 1], y_grave[j + 1]];
            let k1 = deriv(j + 1, false, 0.0, v1)?;
            let k2 = deriv(j, true, 0.0, axpy(&v1, -0.5 * h, &k1))?;
            let k3 = deriv(j, true, 0.0, axpy(&v1, -0.5 * h, &k2))?;
            let k4 = deriv(j, false, 0.0, axpy(&v1, -h, &k3))?;
            for (slot, idx) in [&mut p, &mut p_grave, &mut y, &mut y_grave].into_iter().zip(0..4) {
                slot[j] = v1[idx] - h / 6.0 * (k1[idx] + 2.0 * k2[idx] + 2.0 * k3[idx] + k4[idx]);
                if !slot[j].is_finite() {
                    return Err(Error::Divergence { step: j, time: fine.time(j) });
                }
            }
        }

        // Fresh major actions on the collapsed one-particle ensemble.
        let mut residual = 0.0f64;
        for j in 0..=s {
            let a0 = dirac_alpha0(model, fine.time(j), mean_x[j], mean_gamma[j], p[j], p_grave[j], alpha[j])?;
            residual = residual.max((a0 - alpha0[j]).abs());
            alpha0[j] = a0;
        }
        residuals.push(residual);

        // Forward mean sweep under the fresh strategies.
        let (yl, ygl, a0l) = (Lattice(&y), Lattice(&y_grave), Lattice(&alpha0));
        for j in 0..s {
            let deriv = |j_base: usize, half: bool, v: [f64; 2]| -> Result<[f64; 2]> {
                let tau = if half { fine.time(j_base) + 0.5 * h } else { fine.time(j_base) };
                let lambda = LambdaSummary::dirac(v[0], v[1]);
                let a0 = a0l.at(j_base, half);
                let a = minimize_alpha(model, tau, v[0], v[1], yl.at(j_base, half), ygl.at(j_base, half), a0, &lambda)?;
                Ok([model.drift(tau, v[0], v[1], a0, a, &lambda)?, a])
            };
            let v0 = [mean_x[j], mean_gamma[j]];
            let k1 = deriv(j, false, v0)?;
            let k2 = deriv(j, true, [v0[0] + 0.5 * h * k1[0], v0[1] + 0.5 * h * k1[1]])?;
            let k3 = deriv(j, true, [v0[0] + 0.5 * h * k2[0], v0[1] + 0.5 * h * k2[1]])?;
            let k4 = deriv(j + 1, false, [v0[0] + h * k3[0], v0[1] + h * k3[1]])?;
            mean_x[j + 1] = v0[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]);
            mean_gamma[j + 1] = v0[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]);
            if !(mean_x[j + 1].is_finite() && mean_gamma[j + 1].is_finite())
                || mean_x[j + 1].abs() > STATE_CEILING
            {
                return Err(Error::Divergence { step: j, time: fine.time(j) });
            }
        }
        for j in 0..=s {
            let lambda = LambdaSummary::dirac(mean_x[j], mean_gamma[j]);
            alpha[j] = minimize_alpha(
                model,
                fine.time(j),
                mean_x[j],
                mean_gamma[j],
                y[j],
                y_grave[j],
                alpha0[j],
                &lambda,
            )?;
        }

        if residual <= ODE_TOL && sweep >= 2 {
            converged = true;
            break;
        }
    }
    if !converged {
        let last = *residuals.last().unwrap_or(&f64::INFINITY);
        return Err(Error::NonConvergence {
            iterations: ODE_MAX_ITER,
            last,
            tol: ODE_TOL,
            residuals,
        });
    }

    let pick = |v: &[f64]| -> Vec<f64> { (0..=steps).map(|n| v[n * refine]).collect() };
    Ok(MeanFieldOde {
        times: coarse.nodes(),
        mean_x: pick(&mean_x),
        mean_gamma: pick(&mean_gamma),
        p: pick(&p),
        p_grave: pick(&p_grave),
        y: pick(&y),
        y_grave: pick(&y_grave),
        alpha0: pick(&alpha0),
        alpha: pick(&alpha),
        iterations,
        residual: *residuals.last().unwrap_or(&0.0),
    })
}

fn axpy(v: &[f64; 4], scale: f64, k: &[f64; 4]) -> [f64; 4] {
    [v[0] + scale * k[0], v[1] + scale * k[1], v[2] + scale * k[2], v[3] + scale * k[3]]
}

/// Time derivative of (P, P̀, Y, Ỳ) along the mean path: the negated adjoint
/// drivers, with the mean-field contribution evaluated on the collapsed
/// one-particle ensemble.
fn adjoint_derivative(
    model: &ModelSpec,
    t: f64,
    x: f64,
    gamma: f64,
    alpha0: f64,
    alpha: f64,
    v: [f64; 4],
) -> Result<[f64; 4]> {
    let lambda = LambdaSummary::dirac(x, gamma);
    let dirac = ParticleEnsemble::from_rows(&[vec![x, gamma]])?;
    let mf = model.mean_field_rows(t, alpha0, &lambda, &dirac)?[0];
    let db_dx = model.drift_dx(t, x, gamma, alpha0, alpha, &lambda)?;
    let db_dg = model.drift_dgamma(t, x, gamma, alpha0, alpha, &lambda)?;
    let df_dx = model.run_cost_minor_dx(t, x, gamma, alpha0, alpha, &lambda)?;
    let df_dg = model.run_cost_minor_dgamma(t, x, gamma, alpha0, alpha, &lambda)?;
    Ok([
        -(db_dx * v[0] + mf[0]),
        -(db_dg * v[0] + mf[1]),
        -(db_dx * v[2] + df_dx),
        -(db_dg * v[2] + df_dg),
    ])
}

/// (P_T, P̀_T) of the collapsed one-particle ensemble at (x, γ).
fn dirac_terminal_major(model: &ModelSpec, x: f64, gamma: f64) -> Result<(f64, f64)> {
    let dirac = ParticleEnsemble::from_rows(&[vec![x, gamma]])?;
    let lambda = LambdaSummary::dirac(x, gamma);
    let rows = model.dlambda_term_major(&lambda, &dirac)?;
    Ok((rows[0][0], rows[0][1]))
}

/// The major minimizer on the collapsed one-particle ensemble.
fn dirac_alpha0(
    model: &ModelSpec,
    t: f64,
    x: f64,
    gamma: f64,
    p: f64,
    p_grave: f64,
    alpha: f64,
) -> Result<f64> {
    let joint = ParticleEnsemble::from_rows(&[vec![x, gamma, p, p_grave]])?;
    minimize_alpha0(model, t, &joint, &[alpha])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_example1, make_example2, ModelParams};

    #[test]
    fn time_grid_nodes_are_exact_at_the_edges() {
        let g = TimeGrid::new(0.0, 1.0, 4).unwrap();
        assert_eq!(g.nodes(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(g.time(4), 1.0);
        assert!(TimeGrid::new(0.5, 0.5, 3).is_err());
        assert!(TimeGrid::new(0.0, 1.0, 0).is_err());
    }

    #[test]
    fn brownian_grid_is_seed_deterministic() {
        let g = TimeGrid::new(0.0, 1.0, 16).unwrap();
        let a = BrownianGrid::generate(3, 8, &g).unwrap();
        let b = BrownianGrid::generate(3, 8, &g).unwrap();
        let c = BrownianGrid::generate(4, 8, &g).unwrap();
        assert_eq!(a.increments, b.increments);
        assert_ne!(a.increments, c.increments);
    }

    fn constant_strategy(grid: &TimeGrid, alpha0: f64, y: f64, y_grave: f64) -> StrategyProfile {
        let basis = PolyBasis::new(2, 2);
        StrategyProfile {
            alpha0: vec![alpha0; grid.node_count()],
            y_fit: vec![PolyFit::constant(basis.clone(), y); grid.node_count()],
            y_grave_fit: vec![PolyFit::constant(basis.clone(), y_grave); grid.node_count()],
        }
    }

    #[test]
    fn forward_simulation_reproduces_the_constant_equilibrium_means() {
        let model = make_example1(&ModelParams::default());
        let grid = TimeGrid::new(0.0, 1.0, 50).unwrap();
        let brownian = BrownianGrid::generate(11, 2000, &grid).unwrap();
        let strategy = constant_strategy(&grid, -1.0, -1.0, 0.0);
        let fwd = simulate_forward(&model, &grid, (0.0, 0.0), &brownian, &strategy, None).unwrap();

        // α ≡ 1 makes the aim exactly linear in time, particle by particle.
        for n in [0, 10, 50] {
            for i in [0, 1999] {
                let g = fwd.gamma[n * 2000 + i];
                assert!((g - grid.time(n)).abs() < 1e-12, "gamma at node {n}: {g}");
            }
            for &a in fwd.alphas_at(n) {
                assert!((a - 1.0).abs() < 1e-12);
            }
        }
        // E[X_T] = (1 + 1 − 0.02)·T = 1.98 up to Monte Carlo noise.
        let ens = fwd.state_ensemble(50).unwrap();
        let mean_x = crate::measure::mean_coord(&ens, 0).unwrap();
        assert!((mean_x - 1.98).abs() < 0.05, "terminal mean {mean_x}");
    }

    #[test]
    fn backward_pass_recovers_the_constant_adjoints() {
        let model = make_example1(&ModelParams::default());
        let grid = TimeGrid::new(0.0, 1.0, 20).unwrap();
        let brownian = BrownianGrid::generate(5, 500, &grid).unwrap();
        let strategy = constant_strategy(&grid, -1.0, -1.0, 0.0);
        let fwd = simulate_forward(&model, &grid, (0.0, 0.0), &brownian, &strategy, None).unwrap();
        let bwd = solve_backward(&model, &grid, &fwd, None, 2).unwrap();
        for (values, expected) in
            [(&bwd.p, -1.0), (&bwd.p_grave, 1.0), (&bwd.y, -1.0), (&bwd.y_grave, 0.0)]
        {
            for &v in values.iter() {
                assert!((v - expected).abs() < 1e-10, "adjoint {v} vs {expected}");
            }
        }
        for fits in &bwd.fits {
            for r2 in fits.r2() {
                assert!((r2 - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn mean_ode_is_exact_for_the_constant_equilibrium() {
        let model = make_example1(&ModelParams::default());
        let ode = mean_field_ode_solve(&model, 0.0, 25, 0.0, 0.0).unwrap();
        for (n, &t) in ode.times.iter().enumerate() {
            assert!((ode.alpha0[n] + 1.0).abs() < 1e-12);
            assert!((ode.alpha[n] - 1.0).abs() < 1e-12);
            assert!((ode.p[n] + 1.0).abs() < 1e-12);
            assert!((ode.p_grave[n] - 1.0).abs() < 1e-12);
            assert!((ode.mean_gamma[n] - t).abs() < 1e-12);
            assert!((ode.mean_x[n] - 1.98 * t).abs() < 1e-12);
        }
        assert!(ode.iterations <= 3, "iterations {}", ode.iterations);
    }

    #[test]
    fn mean_ode_tracks_the_closed_form_startup_model() {
        let model = make_example2(&ModelParams::default());
        let oracle = model.oracle().unwrap().clone();
        let ode = mean_field_ode_solve(&model, 0.01, 40, 0.0, 0.0).unwrap();
        for (n, &t) in ode.times.iter().enumerate() {
            let exact = (oracle.mean_gamma)(t);
            let rel = (ode.mean_gamma[n] - exact).abs() / exact.abs();
            assert!(rel < 1e-6, "mean aim at t={t}: rel err {rel:e}");
            let exact_a0 = (oracle.alpha0)(t);
            let rel = (ode.alpha0[n] - exact_a0).abs() / exact_a0.abs();
            assert!(rel < 1e-6, "alpha0 at t={t}: rel err {rel:e}");
            let exact_pg = oracle.mean_pgrave.as_ref().unwrap()(t);
            assert!((ode.p_grave[n] - exact_pg).abs() < 1e-6, "p_grave at t={t}");
        }
    }

    #[test]
    fn picard_solve_locks_onto_the_constant_equilibrium() {
        let model = make_example1(&ModelParams::default());
        let config = SolverConfig { particles: 300, steps: 20, seed: 13, ..SolverConfig::default() };
        let paths = picard_solve(&model, &config, None).unwrap();
        assert!(paths.picard_residuals().len() <= 2, "{:?}", paths.picard_residuals());
        for n in 0..paths.node_count() {
            assert!((paths.alpha0(n) + 1.0).abs() < 1e-8, "alpha0 {}", paths.alpha0(n));
            for i in 0..paths.particle_count() {
                assert!((paths.alpha(n, i) - 1.0).abs() < 1e-8);
                assert!((paths.p(n, i) + 1.0).abs() < 1e-8);
                assert!((paths.y(n, i) + 1.0).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn degenerate_start_is_rejected_up_front() {
        let model = make_example2(&ModelParams::default());
        let config = SolverConfig { t_min: Some(0.0), ..SolverConfig::default() };
        assert!(matches!(config.validate(&model), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn mismatched_population_flow_is_rejected() {
        let model = make_example1(&ModelParams::default());
        let grid = TimeGrid::new(0.0, 1.0, 4).unwrap();
        let short = MeasureFlow::new(
            vec![0.0, 1.0],
            vec![
                ParticleEnsemble::from_rows(&[vec![0.0, 0.0]]).unwrap(),
                ParticleEnsemble::from_rows(&[vec![0.0, 0.0]]).unwrap(),
            ],
        )
        .unwrap();
        let err = minor_summaries(&model, &grid, Some(&short)).unwrap_err();
        assert!(matches!(err, Error::GridMismatch(_)));
    }
}

//! Model specifications: dynamics, costs, partial derivatives, minimizers.
//!
//! A model couples one major player (action α₀, no private state) with a
//! continuum of minor players whose enlarged state (X, γ) follows
//!
//! ```text
//! dX_t = b(t, X_t, γ_t, α₀_t, α_t, λ_t) dt + σ_t dB_t,      dγ_t = α_t dt,
//! ```
//!
//! where λ_t is (a summary of) the joint law of (X_t, γ_t). The major player
//! minimizes ∫ f₀(t, α₀, λ) dt + g₀(λ_T); each minor player minimizes
//! ∫ f(t, X, γ, α₀, α, λ) dt + g(X_T, γ_T, λ_T). A [`ModelSpec`] carries the
//! coefficients together with the partial derivatives the adjoint equations
//! need, L-derivatives of the measure arguments (via the [`crate::measure`]
//! derivative families), optional closed-form Hamiltonian minimizers, and an
//! optional analytic oracle for verification.
//!
//! Three ready-made models ship with the crate, all scalar (d = k = 1) with
//!
//! ```text
//! b = α − α₀ − σ_t²/2,   f = α²α₀²/2,   g = −x,   g₀ = −λ̄_x + λ̄_γ,
//! ```
//!
//! differing in the major running cost:
//!
//! * [`make_example1`]: f₀ = α₀²/2 — constant equilibrium (α̂₀ ≡ −1, α̂ ≡ 1);
//! * [`make_example2`]: f₀ = α₀²/(2λ̄_γ) — closed form E[γ̂_t] = (3t)^{1/3},
//!   α̂₀(t) = −(3t)^{1/3}, α̂(t) = (3t)^{−2/3}, singular at t = 0;
//! * [`make_example3`]: f₀ = α₀²/(2λ̄_γ) + κ α₀ λ̄_x — no closed form; recovers
//!   example 2 at κ = 0.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::measure::{
    l_derivative_linear, l_derivative_reciprocal_mean, marginal_embed, mean_coord,
    second_moment, MarginalSlot, ParticleEnsemble, MEAN_FLOOR,
};

/// State/action dimensions. The shipped models are scalar; the fields exist
/// so interfaces state their shapes explicitly. `d0 = 0`: the major player
/// carries no private state in this layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    /// Minor state dimension.
    pub d: usize,
    /// Minor strategy dimension (γ shares it).
    pub k: usize,
    /// Major state dimension (zero here).
    pub d0: usize,
    /// Major strategy dimension.
    pub k0: usize,
    /// Brownian dimension.
    pub m: usize,
}

impl Dims {
    /// The scalar layout used by every shipped model.
    #[must_use]
    pub fn scalar() -> Self {
        Dims { d: 1, k: 1, d0: 0, k0: 1, m: 1 }
    }
}

/// An admissible action set for a scalar control.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActionSet {
    /// The whole real line.
    All,
    /// A closed interval `[lower, upper]`.
    Box { lower: f64, upper: f64 },
}

impl ActionSet {
    pub fn validate(&self) -> Result<()> {
        if let ActionSet::Box { lower, upper } = self {
            if !(lower.is_finite() && upper.is_finite()) {
                return Err(Error::InvalidConfig("action bounds must be finite".into()));
            }
            if lower > upper {
                return Err(Error::InvalidConfig(format!(
                    "action set lower bound {lower} exceeds upper bound {upper}"
                )));
            }
        }
        Ok(())
    }

    /// Euclidean projection onto the set.
    #[must_use]
    pub fn project(&self, a: f64) -> f64 {
        match *self {
            ActionSet::All => a,
            ActionSet::Box { lower, upper } => a.clamp(lower, upper),
        }
    }

    #[must_use]
    pub fn contains(&self, a: f64) -> bool {
        match *self {
            ActionSet::All => a.is_finite(),
            ActionSet::Box { lower, upper } => (lower..=upper).contains(&a),
        }
    }
}

/// A named statistic of the minor population law that coefficients may read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatKind {
    MeanX,
    MeanGamma,
    SecondMoment,
}

/// Summary statistics of a joint (X, γ) law.
///
/// Statistics are optional so that hand-built summaries can omit entries; a
/// coefficient reading a missing statistic gets a configuration error rather
/// than a silent default.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LambdaSummary {
    mean_x: Option<f64>,
    mean_gamma: Option<f64>,
    second_moment: Option<f64>,
}

impl LambdaSummary {
    /// All three statistics of an (x, γ) ensemble (dimension exactly 2).
    pub fn from_state_ensemble(ensemble: &ParticleEnsemble) -> Result<Self> {
        if ensemble.dim() != 2 {
            return Err(Error::DimensionMismatch { expected: 2, got: ensemble.dim() });
        }
        Ok(LambdaSummary {
            mean_x: Some(mean_coord(ensemble, 0)?),
            mean_gamma: Some(mean_coord(ensemble, 1)?),
            second_moment: Some(second_moment(ensemble)),
        })
    }

    /// The summary of a point mass at (x, γ).
    #[must_use]
    pub fn dirac(x: f64, gamma: f64) -> Self {
        LambdaSummary {
            mean_x: Some(x),
            mean_gamma: Some(gamma),
            second_moment: Some(x * x + gamma * gamma),
        }
    }

    /// A summary with explicit (possibly missing) statistics.
    #[must_use]
    pub fn from_parts(
        mean_x: Option<f64>,
        mean_gamma: Option<f64>,
        second_moment: Option<f64>,
    ) -> Self {
        LambdaSummary { mean_x, mean_gamma, second_moment }
    }

    pub fn mean_x(&self) -> Result<f64> {
        self.mean_x.ok_or(Error::MissingStatistic("mean_x"))
    }

    pub fn mean_gamma(&self) -> Result<f64> {
        self.mean_gamma.ok_or(Error::MissingStatistic("mean_gamma"))
    }

    pub fn second_moment(&self) -> Result<f64> {
        self.second_moment.ok_or(Error::MissingStatistic("second_moment"))
    }

    /// The γ-mean guarded by the shared [`MEAN_FLOOR`]; used by coefficients
    /// that divide by it.
    pub fn mean_gamma_guarded(&self) -> Result<f64> {
        let m = self.mean_gamma()?;
        if m.abs() < MEAN_FLOOR {
            return Err(Error::SingularMean { value: m, floor: MEAN_FLOOR });
        }
        Ok(m)
    }
}

/// Means of the joint (X, γ, P, P̀) law, the argument of the major player's
/// analytic minimizers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointSummary {
    pub mean_x: f64,
    pub mean_gamma: f64,
    pub mean_p: f64,
    pub mean_pgrave: f64,
}

impl JointSummary {
    /// Means of a joint ensemble with columns (x, γ, P, P̀).
    pub fn from_joint_ensemble(joint: &ParticleEnsemble) -> Result<Self> {
        if joint.dim() != 4 {
            return Err(Error::DimensionMismatch { expected: 4, got: joint.dim() });
        }
        Ok(JointSummary {
            mean_x: mean_coord(joint, 0)?,
            mean_gamma: mean_coord(joint, 1)?,
            mean_p: mean_coord(joint, 2)?,
            mean_pgrave: mean_coord(joint, 3)?,
        })
    }
}

/// Piecewise-constant volatility schedule t ↦ σ_t.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaSchedule {
    /// (start time, value) knots; the first knot must start at 0.
    knots: Vec<(f64, f64)>,
}

impl SigmaSchedule {
    #[must_use]
    pub fn constant(value: f64) -> Self {
        SigmaSchedule { knots: vec![(0.0, value)] }
    }

    /// Builds a schedule from (start time, value) knots.
    pub fn piecewise(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::InvalidConfig("sigma schedule needs at least one knot".into()));
        }
        if knots[0].0 != 0.0 {
            return Err(Error::InvalidConfig("sigma schedule must start at t = 0".into()));
        }
        if knots.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidConfig("sigma schedule knots must be increasing".into()));
        }
        if knots.iter().any(|(t, v)| !t.is_finite() || !v.is_finite()) {
            return Err(Error::InvalidConfig("sigma schedule entries must be finite".into()));
        }
        Ok(SigmaSchedule { knots })
    }

    /// σ_t: the value of the last knot starting at or before `t`.
    #[must_use]
    pub fn value(&self, t: f64) -> f64 {
        let mut v = self.knots[0].1;
        for &(start, val) in &self.knots {
            if start <= t {
                v = val;
            } else {
                break;
            }
        }
        v
    }

    /// ∫₀ᵗ σ_s² ds, exact for the piecewise-constant schedule.
    #[must_use]
    pub fn integral_sq(&self, t: f64) -> f64 {
        let mut acc = 0.0;
        for (i, &(start, val)) in self.knots.iter().enumerate() {
            if start >= t {
                break;
            }
            let end = self.knots.get(i + 1).map_or(t, |k| k.0.min(t));
            acc += val * val * (end - start);
        }
        acc
    }

    #[must_use]
    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }
}

/// Deterministic startup means at a positive `t_min`, used where the exact
/// solution is singular at t = 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StartupState {
    pub mean_x: f64,
    pub mean_gamma: f64,
}

/// How a verification run compares computed strategies to the oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VerifyMode {
    /// Max absolute error over the whole grid must stay below `tol`.
    Absolute { tol: f64 },
    /// Max relative error for grid times ≥ `from_time` must stay below `tol`.
    Relative { tol: f64, from_time: f64 },
}

/// Closed-form reference trajectories (valid for the default initial
/// conditions x₀ = γ₀ = 0).
#[derive(Clone)]
pub struct AnalyticOracle {
    pub alpha0: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub alpha: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub mean_gamma: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub mean_x: Option<Arc<dyn Fn(f64) -> f64 + Send + Sync>>,
    pub mean_pgrave: Option<Arc<dyn Fn(f64) -> f64 + Send + Sync>>,
    pub verify: VerifyMode,
}

impl std::fmt::Debug for AnalyticOracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AnalyticOracle").field("verify", &self.verify).finish()
    }
}

type CoeffFn = Arc<dyn Fn(f64, f64, f64, f64, f64, &LambdaSummary) -> Result<f64> + Send + Sync>;
type MajorRunFn = Arc<dyn Fn(f64, f64, &LambdaSummary) -> Result<f64> + Send + Sync>;
type MajorTermFn = Arc<dyn Fn(&LambdaSummary) -> Result<f64> + Send + Sync>;
type MinorTermFn = Arc<dyn Fn(f64, f64, &LambdaSummary) -> Result<f64> + Send + Sync>;
type LambdaTermRowsFn =
    Arc<dyn Fn(&LambdaSummary, &ParticleEnsemble) -> Result<Vec<[f64; 2]>> + Send + Sync>;
type LambdaRunRowsFn =
    Arc<dyn Fn(f64, f64, &LambdaSummary, &ParticleEnsemble) -> Result<Vec<[f64; 2]>> + Send + Sync>;
type Alpha0MinFn = Arc<dyn Fn(f64, &JointSummary) -> Result<f64> + Send + Sync>;
type AlphaMinFn =
    Arc<dyn Fn(f64, f64, f64, f64, f64, f64, &LambdaSummary) -> Result<f64> + Send + Sync>;
type ConvexAlpha0Fn = Arc<dyn Fn(&LambdaSummary) -> Result<f64> + Send + Sync>;
type StartupFn = Arc<dyn Fn(f64) -> StartupState + Send + Sync>;

/// A complete model: coefficients, partials, measure derivatives, optional
/// analytic minimizers/oracle, and solver-relevant metadata.
#[derive(Clone)]
pub struct ModelSpec {
    name: String,
    params: Vec<(String, f64)>,
    dims: Dims,
    horizon: f64,
    sigma: SigmaSchedule,
    action_major: ActionSet,
    action_minor: ActionSet,
    lambda_stats: Vec<StatKind>,
    default_t_min: f64,
    reducible: bool,

    b: CoeffFn,
    b_x: CoeffFn,
    b_gamma: CoeffFn,
    b_alpha0: CoeffFn,
    b_alpha: CoeffFn,

    f0: MajorRunFn,
    f0_alpha0: MajorRunFn,
    g0: MajorTermFn,
    g0_lambda: LambdaTermRowsFn,
    f0_lambda: Option<LambdaRunRowsFn>,

    f: CoeffFn,
    f_x: CoeffFn,
    f_gamma: CoeffFn,
    f_alpha: CoeffFn,
    g: MinorTermFn,
    g_x: MinorTermFn,
    g_gamma: MinorTermFn,

    analytic_alpha0: Option<Alpha0MinFn>,
    analytic_alpha: Option<AlphaMinFn>,
    convexity_alpha0: ConvexAlpha0Fn,
    startup: Option<StartupFn>,
    oracle: Option<AnalyticOracle>,
}

impl std::fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("params", &self.params)
            .field("horizon", &self.horizon)
            .finish()
    }
}

impl ModelSpec {
    #[must_use]
    pub fn name(&self) -> &str {
        &self.name
    }

    /// Named scalar parameters, echoed into exported bundles.
    #[must_use]
    pub fn params(&self) -> &[(String, f64)] {
        &self.params
    }

    #[must_use]
    pub fn dims(&self) -> Dims {
        self.dims
    }

    #[must_use]
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    #[must_use]
    pub fn sigma(&self) -> &SigmaSchedule {
        &self.sigma
    }

    #[must_use]
    pub fn action_major(&self) -> ActionSet {
        self.action_major
    }

    #[must_use]
    pub fn action_minor(&self) -> ActionSet {
        self.action_minor
    }

    /// Statistics of the population law the coefficients read.
    #[must_use]
    pub fn lambda_stats(&self) -> &[StatKind] {
        &self.lambda_stats
    }

    /// Whether any coefficient reads the population law at all.
    #[must_use]
    pub fn reads_measure(&self) -> bool {
        !self.lambda_stats.is_empty()
    }

    /// Model-preferred grid start (positive where t = 0 is singular).
    #[must_use]
    pub fn default_t_min(&self) -> f64 {
        self.default_t_min
    }

    /// Whether the mean dynamics close into a deterministic ODE system.
    #[must_use]
    pub fn reducible(&self) -> bool {
        self.reducible
    }

    #[must_use]
    pub fn oracle(&self) -> Option<&AnalyticOracle> {
        self.oracle.as_ref()
    }

    /// Exact startup means at `t_min`, where the model provides them.
    #[must_use]
    pub fn startup(&self, t_min: f64) -> Option<StartupState> {
        self.startup.as_ref().map(|s| s(t_min))
    }

    pub fn drift(&self, t: f64, x: f64, g: f64, a0: f64, a: f64, l: &LambdaSummary) -> Result<f64> {
        (self.b)(t, x, g, a0, a, l)
    }

    pub fn drift_dx(&self, t: f64, x: f64, g: f64, a0: f64, a: f64, l: &LambdaSummary) -> Result<f64> {
        (self.b_x)(t, x, g, a0, a, l)
    }

    pub fn drift_dgamma(&self, t: f64, x: f64, g: f64, a0: f64, a: f64, l: &LambdaSummary) -> Result<f64> {
        (self.b_gamma)(t, x, g, a0, a, l)
    }

    pub fn drift_dalpha0(&self, t: f64, x: f64, g: f64, a0: f64, a: f64, l: &LambdaSummary) -> Result<f64> {
        (self.b_alpha0)(t, x, g, a0, a, l)
    }

    pub fn drift_dalpha(&self, t: f64, x: f64, g: f64, a0: f64, a: f64, l: &LambdaSummary) -> Result<f64> {
        (self.b_alpha)(t, x, g, a0, a, l)
    }

    pub fn run_cost_major(&self, t: f64, a0: f64, l: &LambdaSummary) -> Result<f64> {
        (self.f0)(t, a0, l)
    }

    pub fn run_cost_major_dalpha0(&self, t: f64, a0: f64, l: &LambdaSummary) -> Result<f64> {
        (self.f0_alpha0)(t, a0, l)
    }

    pub fn term_cost_major(&self, l: &LambdaSummary) -> Result<f64> {
        (self.g0)(l)
    }

    /// Per-particle rows of ∂_λ g₀ evaluated on the terminal ensemble;
    /// columns are the (x, γ) slots. These are the (P_T, P̀_T) terminals.
    pub fn dlambda_term_major(
        &self,
        l: &LambdaSummary,
        ensemble: &ParticleEnsemble,
    ) -> Result<Vec<[f64; 2]>> {
        (self.g0_lambda)(l, ensemble)
    }

    /// Per-particle rows of Ẽ[∂_λ H₀](·) — for the shipped models this is
    /// ∂_λ f₀ evaluated on the current ensemble (the drift contributes no
    /// measure derivative). Models without measure-dependent running costs
    /// return zero rows.
    pub fn mean_field_rows(
        &self,
        t: f64,
        a0: f64,
        l: &LambdaSummary,
        ensemble: &ParticleEnsemble,
    ) -> Result<Vec<[f64; 2]>> {
        match &self.f0_lambda {
            Some(f) => f(t, a0, l, ensemble),
            None => Ok(vec![[0.0, 0.0]; ensemble.count()]),
        }
    }

    pub fn run_cost_minor(&self, t: f64, x: f64, g: f64, a0: f64, a: f64, l: &LambdaSummary) -> Result<f64> {
        (self.f)(t, x, g, a0, a, l)
    }

    pub fn run_cost_minor_dx(&self, t: f64, x: f64, g: f64, a0: f64, a: f64, l: &LambdaSummary) -> Result<f64> {
        (self.f_x)(t, x, g, a0, a, l)
    }

    pub fn run_cost_minor_dgamma(&self, t: f64, x: f64, g: f64, a0: f64, a: f64, l: &LambdaSummary) -> Result<f64> {
        (self.f_gamma)(t, x, g, a0, a, l)
    }

    pub fn run_cost_minor_dalpha(&self, t: f64, x: f64, g: f64, a0: f64, a: f64, l: &LambdaSummary) -> Result<f64> {
        (self.f_alpha)(t, x, g, a0, a, l)
    }

    pub fn term_cost_minor(&self, x: f64, g: f64, l: &LambdaSummary) -> Result<f64> {
        (self.g)(x, g, l)
    }

    pub fn term_cost_minor_dx(&self, x: f64, g: f64, l: &LambdaSummary) -> Result<f64> {
        (self.g_x)(x, g, l)
    }

    pub fn term_cost_minor_dgamma(&self, x: f64, g: f64, l: &LambdaSummary) -> Result<f64> {
        (self.g_gamma)(x, g, l)
    }

    /// Closed-form α̊₀ where the model declares one.
    pub fn analytic_alpha0(&self, t: f64, nu: &JointSummary) -> Option<Result<f64>> {
        self.analytic_alpha0.as_ref().map(|f| f(t, nu).map(|a| self.action_major.project(a)))
    }

    /// Closed-form α̊ where the model declares one.
    #[allow(clippy::too_many_arguments)]
    pub fn analytic_alpha(
        &self,
        t: f64,
        x: f64,
        g: f64,
        y: f64,
        y_grave: f64,
        a0: f64,
        l: &LambdaSummary,
    ) -> Option<Result<f64>> {
        self.analytic_alpha
            .as_ref()
            .map(|f| f(t, x, g, y, y_grave, a0, l).map(|a| self.action_minor.project(a)))
    }

    /// Strong-convexity modulus of the averaged major Hamiltonian in α₀.
    pub fn convexity_alpha0(&self, l: &LambdaSummary) -> Result<f64> {
        (self.convexity_alpha0)(l)
    }

    /// Strong-convexity modulus of the minor Hamiltonian in α (= α₀² here).
    #[must_use]
    pub fn convexity_alpha(&self, a0: f64) -> f64 {
        a0 * a0
    }

    /// The λ-summary of an (x, γ) ensemble (all statistics populated).
    pub fn lambda_summary(&self, ensemble: &ParticleEnsemble) -> Result<LambdaSummary> {
        LambdaSummary::from_state_ensemble(ensemble)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::InvalidConfig(format!("horizon must be positive, got {}", self.horizon)));
        }
        self.action_major.validate()?;
        self.action_minor.validate()?;
        if self.default_t_min < 0.0 || self.default_t_min >= self.horizon {
            return Err(Error::InvalidConfig(format!(
                "default t_min {} outside [0, horizon)",
                self.default_t_min
            )));
        }
        Ok(())
    }
}

/// Shared scalar parameters of the shipped models.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Horizon T.
    pub horizon: f64,
    /// Volatility schedule (default: constant 0.2).
    pub sigma: SigmaSchedule,
    /// Coupling strength of example 3's α₀λ̄_x term (default 1).
    pub kappa: f64,
    /// Major action set.
    pub action_major: ActionSet,
    /// Minor action set.
    pub action_minor: ActionSet,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            horizon: 1.0,
            sigma: SigmaSchedule::constant(0.2),
            kappa: 1.0,
            action_major: ActionSet::All,
            action_minor: ActionSet::All,
        }
    }
}

/// Pieces shared by all three examples: drift b = α − α₀ − σ_t²/2 with its
/// constant partials, minor costs f = α²α₀²/2 and g = −x, and the terminal
/// measure derivative of g₀ = −λ̄_x + λ̄_γ assembled from the linear-functional
/// derivative family on each marginal.
struct CommonPieces {
    b: CoeffFn,
    b_x: CoeffFn,
    b_gamma: CoeffFn,
    b_alpha0: CoeffFn,
    b_alpha: CoeffFn,
    f: CoeffFn,
    f_x: CoeffFn,
    f_gamma: CoeffFn,
    f_alpha: CoeffFn,
    g: MinorTermFn,
    g_x: MinorTermFn,
    g_gamma: MinorTermFn,
    g0: MajorTermFn,
    g0_lambda: LambdaTermRowsFn,
    analytic_alpha: AlphaMinFn,
}

fn common_pieces(sigma: SigmaSchedule) -> CommonPieces {
    let sig = sigma.clone();
    CommonPieces {
        b: Arc::new(move |t, _x, _g, a0, a, _l| {
            let s = sig.value(t);
            Ok(a - a0 - 0.5 * s * s)
        }),
        b_x: Arc::new(|_, _, _, _, _, _| Ok(0.0)),
        b_gamma: Arc::new(|_, _, _, _, _, _| Ok(0.0)),
        b_alpha0: Arc::new(|_, _, _, _, _, _| Ok(-1.0)),
        b_alpha: Arc::new(|_, _, _, _, _, _| Ok(1.0)),
        f: Arc::new(|_t, _x, _g, a0, a, _l| Ok(0.5 * a * a * a0 * a0)),
        f_x: Arc::new(|_, _, _, _, _, _| Ok(0.0)),
        f_gamma: Arc::new(|_, _, _, _, _, _| Ok(0.0)),
        f_alpha: Arc::new(|_t, _x, _g, a0, a, _l| Ok(a * a0 * a0)),
        g: Arc::new(|x, _g, _l| Ok(-x)),
        g_x: Arc::new(|_, _, _| Ok(-1.0)),
        g_gamma: Arc::new(|_, _, _| Ok(0.0)),
        g0: Arc::new(|l| Ok(-l.mean_x()? + l.mean_gamma()?)),
        g0_lambda: Arc::new(|_l, ensemble| {
            // ∂_λ(−λ̄_x) on the x-marginal and ∂_λ(λ̄_γ) on the γ-marginal,
            // each a linear functional with constant Jacobian, embedded into
            // the joint (x, γ) derivative and summed.
            let dx = l_derivative_linear(|_| vec![vec![-1.0]], &ensemble.marginal(&[0])?)?;
            let dg = l_derivative_linear(|_| vec![vec![1.0]], &ensemble.marginal(&[1])?)?;
            let ex = marginal_embed(&dx, MarginalSlot::First, (1, 1))?;
            let eg = marginal_embed(&dg, MarginalSlot::Second, (1, 1))?;
            Ok(ex
                .iter()
                .zip(&eg)
                .map(|(a, b)| [a[0][0] + b[0][0], a[0][1] + b[0][1]])
                .collect())
        }),
        analytic_alpha: Arc::new(|_t, _x, _g, y, y_grave, a0, _l| {
            let denom = a0 * a0;
            if denom < MEAN_FLOOR {
                return Err(Error::SingularControl { value: a0.abs(), floor: MEAN_FLOOR });
            }
            Ok(-(y + y_grave) / denom)
        }),
    }
}

/// Example 1: f₀ = α₀²/2. Constant equilibrium α̂₀ ≡ −1, α̂ ≡ 1, E[γ̂_t] = t.
#[must_use]
pub fn make_example1(params: &ModelParams) -> ModelSpec {
    let c = common_pieces(params.sigma.clone());
    let sigma = params.sigma.clone();
    let sig_x = sigma.clone();
    ModelSpec {
        name: "example1".into(),
        params: vec![("horizon".into(), params.horizon)],
        dims: Dims::scalar(),
        horizon: params.horizon,
        sigma,
        action_major: params.action_major,
        action_minor: params.action_minor,
        // Only g₀ reads the law (its terminal means).
        lambda_stats: vec![StatKind::MeanX, StatKind::MeanGamma],
        default_t_min: 0.0,
        reducible: true,
        b: c.b,
        b_x: c.b_x,
        b_gamma: c.b_gamma,
        b_alpha0: c.b_alpha0,
        b_alpha: c.b_alpha,
        f0: Arc::new(|_t, a0, _l| Ok(0.5 * a0 * a0)),
        f0_alpha0: Arc::new(|_t, a0, _l| Ok(a0)),
        g0: c.g0,
        g0_lambda: c.g0_lambda,
        f0_lambda: None,
        f: c.f,
        f_x: c.f_x,
        f_gamma: c.f_gamma,
        f_alpha: c.f_alpha,
        g: c.g,
        g_x: c.g_x,
        g_gamma: c.g_gamma,
        analytic_alpha0: Some(Arc::new(|_t, nu| Ok(nu.mean_p))),
        analytic_alpha: Some(c.analytic_alpha),
        convexity_alpha0: Arc::new(|_l| Ok(1.0)),
        startup: None,
        oracle: Some(AnalyticOracle {
            alpha0: Arc::new(|_t| -1.0),
            alpha: Arc::new(|_t| 1.0),
            mean_gamma: Arc::new(|t| t),
            mean_x: Some(Arc::new(move |t| 2.0 * t - 0.5 * sig_x.integral_sq(t))),
            mean_pgrave: Some(Arc::new(|_t| 1.0)),
            verify: VerifyMode::Absolute { tol: 1e-8 },
        }),
    }
}

/// Example 2: f₀ = α₀²/(2λ̄_γ). Closed form E[γ̂_t] = (3t)^{1/3},
/// α̂₀(t) = −(3t)^{1/3}, α̂(t) = (3t)^{−2/3}; singular at t = 0, so the solver
/// operates on [t_min, T] with the exact startup below.
#[must_use]
pub fn make_example2(params: &ModelParams) -> ModelSpec {
    let c = common_pieces(params.sigma.clone());
    let sigma = params.sigma.clone();
    let sig_startup = sigma.clone();
    let sig_x = sigma.clone();
    let horizon = params.horizon;
    ModelSpec {
        name: "example2".into(),
        params: vec![("horizon".into(), params.horizon)],
        dims: Dims::scalar(),
        horizon: params.horizon,
        sigma,
        action_major: params.action_major,
        action_minor: params.action_minor,
        lambda_stats: vec![StatKind::MeanX, StatKind::MeanGamma],
        default_t_min: 1e-2,
        reducible: true,
        b: c.b,
        b_x: c.b_x,
        b_gamma: c.b_gamma,
        b_alpha0: c.b_alpha0,
        b_alpha: c.b_alpha,
        f0: Arc::new(|_t, a0, l| Ok(0.5 * a0 * a0 / l.mean_gamma_guarded()?)),
        f0_alpha0: Arc::new(|_t, a0, l| Ok(a0 / l.mean_gamma_guarded()?)),
        g0: c.g0,
        g0_lambda: c.g0_lambda,
        f0_lambda: Some(Arc::new(|_t, a0, _l, ensemble| {
            reciprocal_mean_rows(a0, ensemble)
        })),
        f: c.f,
        f_x: c.f_x,
        f_gamma: c.f_gamma,
        f_alpha: c.f_alpha,
        g: c.g,
        g_x: c.g_x,
        g_gamma: c.g_gamma,
        analytic_alpha0: Some(Arc::new(|_t, nu| Ok(nu.mean_p * nu.mean_gamma))),
        analytic_alpha: Some(c.analytic_alpha),
        convexity_alpha0: Arc::new(|l| Ok(1.0 / l.mean_gamma_guarded()?)),
        startup: Some(Arc::new(move |t| example2_startup(t, &sig_startup))),
        oracle: Some(AnalyticOracle {
            alpha0: Arc::new(|t| -(3.0 * t).cbrt()),
            alpha: Arc::new(|t| (3.0 * t).cbrt().powi(-2)),
            mean_gamma: Arc::new(|t| (3.0 * t).cbrt()),
            mean_x: Some(Arc::new(move |t| {
                (3.0 * t).cbrt() + 0.75 * t * (3.0 * t).cbrt() - 0.5 * sig_x.integral_sq(t)
            })),
            mean_pgrave: Some(Arc::new(move |t| 1.0 - 0.5 * (horizon - t))),
            verify: VerifyMode::Relative { tol: 2e-2, from_time: 0.05 },
        }),
    }
}

/// Example 3: f₀ = α₀²/(2λ̄_γ) + κ α₀ λ̄_x. No closed form; κ = 0 recovers
/// example 2 exactly.
#[must_use]
pub fn make_example3(params: &ModelParams) -> ModelSpec {
    let c = common_pieces(params.sigma.clone());
    let sigma = params.sigma.clone();
    let sig_startup = sigma.clone();
    let kappa = params.kappa;
    ModelSpec {
        name: "example3".into(),
        params: vec![("horizon".into(), params.horizon), ("kappa".into(), kappa)],
        dims: Dims::scalar(),
        horizon: params.horizon,
        sigma,
        action_major: params.action_major,
        action_minor: params.action_minor,
        lambda_stats: vec![StatKind::MeanX, StatKind::MeanGamma],
        default_t_min: 1e-2,
        reducible: true,
        b: c.b,
        b_x: c.b_x,
        b_gamma: c.b_gamma,
        b_alpha0: c.b_alpha0,
        b_alpha: c.b_alpha,
        f0: Arc::new(move |_t, a0, l| {
            Ok(0.5 * a0 * a0 / l.mean_gamma_guarded()? + kappa * a0 * l.mean_x()?)
        }),
        f0_alpha0: Arc::new(move |_t, a0, l| {
            Ok(a0 / l.mean_gamma_guarded()? + kappa * l.mean_x()?)
        }),
        g0: c.g0,
        g0_lambda: c.g0_lambda,
        f0_lambda: Some(Arc::new(move |_t, a0, _l, ensemble| {
            let mut rows = reciprocal_mean_rows(a0, ensemble)?;
            // κ α₀ λ̄_x: a linear functional of the x-marginal with constant
            // derivative κα₀, embedded into the x slot.
            let dx = l_derivative_linear(|_| vec![vec![kappa * a0]], &ensemble.marginal(&[0])?)?;
            let ex = marginal_embed(&dx, MarginalSlot::First, (1, 1))?;
            for (row, e) in rows.iter_mut().zip(&ex) {
                row[0] += e[0][0];
            }
            Ok(rows)
        })),
        f: c.f,
        f_x: c.f_x,
        f_gamma: c.f_gamma,
        f_alpha: c.f_alpha,
        g: c.g,
        g_x: c.g_x,
        g_gamma: c.g_gamma,
        analytic_alpha0: Some(Arc::new(move |_t, nu| {
            Ok((nu.mean_p - kappa * nu.mean_x) * nu.mean_gamma)
        })),
        analytic_alpha: Some(c.analytic_alpha),
        convexity_alpha0: Arc::new(|l| Ok(1.0 / l.mean_gamma_guarded()?)),
        startup: Some(Arc::new(move |t| example2_startup(t, &sig_startup))),
        oracle: None,
    }
}

/// ∂_λ of α₀²/(2λ̄_γ) on an (x, γ) ensemble: the reciprocal-mean derivative
/// family scaled by α₀²/2, embedded into the γ slot.
fn reciprocal_mean_rows(a0: f64, ensemble: &ParticleEnsemble) -> Result<Vec<[f64; 2]>> {
    let recip = l_derivative_reciprocal_mean(ensemble, 1)?;
    let mats: Vec<Vec<Vec<f64>>> =
        recip.iter().map(|&r| vec![vec![0.5 * a0 * a0 * r]]).collect();
    let embedded = marginal_embed(&mats, MarginalSlot::Second, (1, 1))?;
    Ok(embedded.iter().map(|m| [m[0][0], m[0][1]]).collect())
}

/// Exact startup means for example 2 (and the κ-vanishing limit of
/// example 3): E[γ_t] = (3t)^{1/3} and
/// E[X_t] = (3t)^{1/3} + (3/4)·t·(3t)^{1/3} − ½∫₀ᵗσ², valid for x₀ = γ₀ = 0.
fn example2_startup(t: f64, sigma: &SigmaSchedule) -> StartupState {
    let cbrt = (3.0 * t).cbrt();
    StartupState {
        mean_x: cbrt + 0.75 * t * cbrt - 0.5 * sigma.integral_sq(t),
        mean_gamma: cbrt,
    }
}

/// The shipped models by name.
pub fn by_name(name: &str, params: &ModelParams) -> Result<ModelSpec> {
    match name {
        "example1" => Ok(make_example1(params)),
        "example2" => Ok(make_example2(params)),
        "example3" => Ok(make_example3(params)),
        other => Err(Error::InvalidConfig(format!(
            "unknown model `{other}` (expected example1 | example2 | example3)"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lambda(mx: f64, mg: f64) -> LambdaSummary {
        LambdaSummary::from_parts(Some(mx), Some(mg), Some(mx * mx + mg * mg))
    }

    #[test]
    fn example1_running_cost_value() {
        let m = make_example1(&ModelParams::default());
        let f0 = m.run_cost_major(0.3, 2.0, &lambda(0.0, 1.0)).unwrap();
        assert_eq!(f0, 2.0);
    }

    #[test]
    fn example2_running_cost_value_and_guard() {
        let m = make_example2(&ModelParams::default());
        let f0 = m.run_cost_major(0.3, 2.0, &lambda(0.0, 4.0)).unwrap();
        assert_eq!(f0, 0.5);
        assert!(matches!(
            m.run_cost_major(0.3, 2.0, &lambda(0.0, 0.0)),
            Err(Error::SingularMean { .. })
        ));
    }

    #[test]
    fn example3_adds_the_coupling_term() {
        let params = ModelParams { kappa: 2.0, ..ModelParams::default() };
        let m = make_example3(&params);
        let f0 = m.run_cost_major(0.0, 2.0, &lambda(3.0, 4.0)).unwrap();
        assert_eq!(f0, 0.5 + 2.0 * 2.0 * 3.0);
    }

    #[test]
    fn missing_statistic_is_a_configuration_error() {
        let m = make_example2(&ModelParams::default());
        let l = LambdaSummary::from_parts(Some(0.0), None, None);
        assert!(matches!(
            m.run_cost_major(0.0, 1.0, &l),
            Err(Error::MissingStatistic("mean_gamma"))
        ));
    }

    #[test]
    fn terminal_measure_derivative_rows_are_constant() {
        let m = make_example1(&ModelParams::default());
        let ens = ParticleEnsemble::from_rows(&[vec![0.3, 0.7], vec![-1.0, 2.0]]).unwrap();
        let l = m.lambda_summary(&ens).unwrap();
        let rows = m.dlambda_term_major(&l, &ens).unwrap();
        assert_eq!(rows, vec![[-1.0, 1.0], [-1.0, 1.0]]);
    }

    #[test]
    fn example2_mean_field_rows_value() {
        let m = make_example2(&ModelParams::default());
        let ens = ParticleEnsemble::from_rows(&[vec![0.0, 1.0], vec![0.0, 3.0]]).unwrap();
        let l = m.lambda_summary(&ens).unwrap();
        // (α₀²/2)·∂_λ(1/λ̄_γ) with λ̄_γ = 2: (4/2)·(−1/4) = −0.5 in the γ slot.
        let rows = m.mean_field_rows(0.0, 2.0, &l, &ens).unwrap();
        assert_eq!(rows, vec![[0.0, -0.5], [0.0, -0.5]]);
    }

    #[test]
    fn example3_at_kappa_zero_matches_example2() {
        let p2 = ModelParams::default();
        let p3 = ModelParams { kappa: 0.0, ..ModelParams::default() };
        let (m2, m3) = (make_example2(&p2), make_example3(&p3));
        let states = [
            (0.1, 0.4, 0.2, -1.3, 0.7, 0.5, 1.5),
            (0.9, -0.8, 1.1, 0.4, -0.2, -1.0, 2.5),
        ];
        for &(t, x, g, a0, a, mx, mg) in &states {
            let l = lambda(mx, mg);
            assert_eq!(
                m2.run_cost_major(t, a0, &l).unwrap(),
                m3.run_cost_major(t, a0, &l).unwrap()
            );
            assert_eq!(
                m2.drift(t, x, g, a0, a, &l).unwrap(),
                m3.drift(t, x, g, a0, a, &l).unwrap()
            );
            let nu = JointSummary { mean_x: mx, mean_gamma: mg, mean_p: -1.0, mean_pgrave: 1.0 };
            assert_eq!(
                m2.analytic_alpha0(t, &nu).unwrap().unwrap(),
                m3.analytic_alpha0(t, &nu).unwrap().unwrap()
            );
        }
    }

    #[test]
    fn closed_form_mean_gamma_solves_its_ode() {
        // d/dt (3t)^{1/3} = (3t)^{−2/3}: check the residual of the oracle
        // against a central finite difference at sampled times.
        let m = make_example2(&ModelParams::default());
        let oracle = m.oracle().unwrap();
        for &t in &[0.01, 0.05, 0.2, 0.5, 0.9] {
            let h = 1e-6;
            let fd = ((oracle.mean_gamma)(t + h) - (oracle.mean_gamma)(t - h)) / (2.0 * h);
            let rhs = 1.0 / (oracle.mean_gamma)(t).powi(2);
            assert!((fd - rhs).abs() < 1e-6, "residual at t={t}: {}", fd - rhs);
        }
    }

    #[test]
    fn oracle_alpha0_is_minus_mean_gamma_for_example2() {
        let m = make_example2(&ModelParams::default());
        let o = m.oracle().unwrap();
        for &t in &[0.02, 0.3, 1.0] {
            assert_eq!((o.alpha0)(t), -(o.mean_gamma)(t));
        }
    }

    #[test]
    fn sigma_schedule_value_and_integral() {
        let s = SigmaSchedule::piecewise(vec![(0.0, 0.2), (0.5, 0.4)]).unwrap();
        assert_eq!(s.value(0.1), 0.2);
        assert_eq!(s.value(0.5), 0.4);
        assert_eq!(s.value(0.9), 0.4);
        let exact = 0.04 * 0.5 + 0.16 * 0.25;
        assert!((s.integral_sq(0.75) - exact).abs() < 1e-15);
        assert!(SigmaSchedule::piecewise(vec![(0.1, 0.2)]).is_err());
    }

    #[test]
    fn action_set_projection() {
        let b = ActionSet::Box { lower: -1.0, upper: 2.0 };
        assert_eq!(b.project(-3.0), -1.0);
        assert_eq!(b.project(0.5), 0.5);
        assert_eq!(b.project(7.0), 2.0);
        assert!(ActionSet::Box { lower: 1.0, upper: 0.0 }.validate().is_err());
    }

    #[test]
    fn startup_matches_oracle_at_t_min() {
        let m = make_example2(&ModelParams::default());
        let s = m.startup(0.01).unwrap();
        let o = m.oracle().unwrap();
        assert!((s.mean_gamma - (o.mean_gamma)(0.01)).abs() < 1e-15);
        assert!((s.mean_x - o.mean_x.as_ref().unwrap()(0.01)).abs() < 1e-15);
    }

    #[test]
    fn unknown_model_name_is_rejected() {
        assert!(by_name("example9", &ModelParams::default()).is_err());
    }
}

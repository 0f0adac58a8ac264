//! The finite (N+1)-player game harness.
//!
//! Rebuilds the approximate equilibrium profile from an exported
//! [`EquilibriumBundle`] — the major plays the bundled action path α̌₀, each
//! minor player plays the feedback α̌ᵢ(t) = α̊(t, Xᵢ, γᵢ) re-minimized at the
//! bundled decoupling fields and flow summaries — simulates the N-player
//! system with independent Brownian drivers, and estimates how far the
//! profile is from a Nash equilibrium by probing deviations of one player
//! at a time under common random numbers.
//!
//! Measure arguments follow the finite game's asymmetry: each minor
//! player's coefficients read the leave-one-out empirical measure of the
//! other N − 1 players, while the major's cost reads the full N-player
//! empirical measure.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbsde::TimeGrid;
use crate::hamiltonian::minimize_alpha;
use crate::mfg::EquilibriumBundle;
use crate::model::{LambdaSummary, ModelSpec};
use crate::regression::PolyBasis;
use crate::rng::{run_player_index, standard_normals, stream, DOMAIN_GAME};

/// Configuration of the finite-game simulation and the deviation probe.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteGameConfig {
    /// Number of minor players N (the major is player 0 in all outputs).
    pub minor_players: usize,
    /// Monte Carlo repetitions of the whole game.
    pub mc_runs: usize,
    /// Seed of the per-(run, player) Brownian streams.
    pub seed: u64,
    /// Constant action shifts probed at both levels; the null deviation is
    /// always probed in addition.
    pub deviation_shifts: Vec<f64>,
    /// Whether to probe the frozen-flow best response at the minor level.
    pub best_response: bool,
}

impl Default for FiniteGameConfig {
    fn default() -> Self {
        FiniteGameConfig {
            minor_players: 20,
            mc_runs: 200,
            seed: 7,
            deviation_shifts: vec![-0.5, -0.25, 0.25, 0.5],
            best_response: true,
        }
    }
}

impl FiniteGameConfig {
    pub fn validate(&self) -> Result<()> {
        if self.minor_players < 2 {
            return Err(Error::InvalidConfig(
                "the finite game needs at least 2 minor players: leave-one-out measures are \
                 undefined otherwise"
                    .into(),
            ));
        }
        if self.mc_runs == 0 {
            return Err(Error::InvalidConfig("mc_runs must be positive".into()));
        }
        if let Some(bad) = self.deviation_shifts.iter().find(|s| !s.is_finite()) {
            return Err(Error::InvalidConfig(format!("deviation shift {bad} is not finite")));
        }
        Ok(())
    }
}

/// Realized costs and population paths of one simulated profile.
#[derive(Debug, Clone, Serialize)]
pub struct GameOutcome {
    /// `costs[run][player]` with player 0 the major and players 1..=N the
    /// minor players.
    pub costs: Vec<Vec<f64>>,
    /// Run-averaged cost per player (same indexing).
    pub mean_costs: Vec<f64>,
    /// Run-averaged full-ensemble mean of x per grid node.
    pub mean_x_path: Vec<f64>,
    /// Run-averaged full-ensemble mean of γ per grid node.
    pub mean_gamma_path: Vec<f64>,
    /// Run-averaged full-ensemble second moment of (x, γ) per grid node.
    pub second_moment_path: Vec<f64>,
}

impl GameOutcome {
    /// Run-averaged major cost J₀.
    #[must_use]
    pub fn major_cost(&self) -> f64 {
        self.mean_costs[0]
    }

    /// Run-averaged cost of minor player `i` (1-based, matching `costs`).
    #[must_use]
    pub fn minor_cost(&self, i: usize) -> f64 {
        self.mean_costs[i]
    }
}

/// One probed deviation and its paired cost gap.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeviationGap {
    /// Human-readable deviation label ("null", "shift", "best-response").
    pub label: String,
    /// The constant shift, when the deviation is one.
    pub shift: Option<f64>,
    /// Deviating minor player (1-based), absent for major-level rows.
    pub player: Option<usize>,
    /// Run-averaged paired gap: candidate cost − deviated cost. Positive
    /// means the deviation improved on the candidate profile.
    pub gap: f64,
    /// Monte Carlo standard error of the paired gap.
    pub se: f64,
}

/// The ε-Nash estimate: per-deviation paired gaps and their maxima.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NashGapReport {
    /// Largest major-level gap over the probed family (≥ 0: the null
    /// deviation is always probed).
    pub eps_major: f64,
    /// Standard error of the gap attaining `eps_major`.
    pub se_major: f64,
    /// Largest minor-level gap over probed players and deviations (≥ 0).
    pub eps_minor_max: f64,
    /// Standard error of the gap attaining `eps_minor_max`.
    pub se_minor: f64,
    /// Run-averaged major cost of the candidate profile.
    pub j0_candidate: f64,
    /// Run-averaged minor costs of the candidate profile (players 1..=N).
    pub ji_candidate: Vec<f64>,
    /// Minor players whose deviations were probed (1-based).
    pub sampled_players: Vec<usize>,
    /// All probed major-level deviations.
    pub major_gaps: Vec<DeviationGap>,
    /// All probed minor-level deviations.
    pub minor_gaps: Vec<DeviationGap>,
}

/// Deviation applied to at most one player while everyone else follows the
/// candidate profile.
enum Deviation<'a> {
    /// The major shifts its whole action path; the minors keep playing the
    /// bundled feedback, which bakes in the candidate α̌₀.
    MajorShift(f64),
    /// Minor `player` (1-based) shifts its feedback action.
    MinorShift { player: usize, shift: f64 },
    /// Minor `player` plays the frozen-flow best response.
    MinorBestResponse { player: usize, strategy: &'a BestResponse },
}

/// Adjoint paths of a single minor player's control problem against the
/// frozen population flow, from which the best-response action re-minimizes
/// the minor Hamiltonian level.
struct BestResponse {
    y: Vec<f64>,
    y_grave: Vec<f64>,
    lambdas: Vec<LambdaSummary>,
}

/// Precomputed bundle feedback machinery shared across runs.
struct Feedback<'a> {
    model: &'a ModelSpec,
    grid: TimeGrid,
    basis: PolyBasis,
    bundle: &'a EquilibriumBundle,
    lambdas: Vec<LambdaSummary>,
}

impl Feedback<'_> {
    /// The candidate minor feedback action at node `n` and state (x, γ).
    fn action(&self, n: usize, x: f64, gamma: f64, scratch: &mut [f64]) -> Result<f64> {
        self.basis.eval_into(&[x, gamma], scratch);
        let node = &self.bundle.theta_y.coefficients[n];
        let dot = |c: &[f64]| c.iter().zip(scratch.iter()).map(|(a, b)| a * b).sum::<f64>();
        minimize_alpha(
            self.model,
            self.grid.time(n),
            x,
            gamma,
            dot(&node[0]),
            dot(&node[1]),
            self.bundle.alpha0[n],
            &self.lambdas[n],
        )
    }
}

fn build_feedback<'a>(
    model: &'a ModelSpec,
    bundle: &'a EquilibriumBundle,
) -> Result<Feedback<'a>> {
    bundle.check_model(model)?;
    let grid = bundle.time_grid()?;
    if bundle.alpha0.len() != grid.node_count()
        || bundle.theta_y.coefficients.len() != grid.node_count()
        || bundle.flow_summaries.len() != grid.node_count()
    {
        return Err(Error::GridMismatch(format!(
            "bundle arrays disagree with its {}-node grid",
            grid.node_count()
        )));
    }
    let lambdas = (0..grid.node_count()).map(|n| bundle.lambda_at(n)).collect();
    Ok(Feedback {
        model,
        grid,
        basis: PolyBasis::new(bundle.theta_y.degree, 2),
        bundle,
        lambdas,
    })
}

/// The initial (x, γ) point of every player, matching the solver's
/// convention: configured offsets shifted by the model's startup means.
fn bundle_initial_point(model: &ModelSpec, bundle: &EquilibriumBundle) -> (f64, f64) {
    match model.startup(bundle.grid.t_min) {
        Some(s) => (bundle.config.x0 + s.mean_x, bundle.config.gamma0 + s.mean_gamma),
        None => (bundle.config.x0, bundle.config.gamma0),
    }
}

struct RunRow {
    costs: Vec<f64>,
    mean_x: Vec<f64>,
    mean_gamma: Vec<f64>,
    second_moment: Vec<f64>,
}

fn simulate_run(
    feedback: &Feedback<'_>,
    cfg: &FiniteGameConfig,
    run: usize,
    deviation: Option<&Deviation<'_>>,
) -> Result<RunRow> {
    let model = feedback.model;
    let grid = &feedback.grid;
    let bundle = feedback.bundle;
    let n_minor = cfg.minor_players;
    let nodes = grid.node_count();
    let steps = grid.steps();
    let dt = grid.dt();
    let scale = dt.sqrt();

    let increments: Vec<Vec<f64>> = (1..=n_minor)
        .map(|player| {
            let mut rng =
                stream(cfg.seed, DOMAIN_GAME, run_player_index(run, player));
            let mut draws = standard_normals(&mut rng, steps);
            for d in &mut draws {
                *d *= scale;
            }
            draws
        })
        .collect();

    let init = bundle_initial_point(model, bundle);
    let mut x = vec![init.0; n_minor];
    let mut gamma = vec![init.1; n_minor];
    let mut j_major = 0.0;
    let mut j_minor = vec![0.0; n_minor];
    let mut mean_x = Vec::with_capacity(nodes);
    let mut mean_gamma = Vec::with_capacity(nodes);
    let mut second_moment = Vec::with_capacity(nodes);
    let mut scratch = vec![0.0; feedback.basis.size()];
    let mut actions = vec![0.0; n_minor];

    for n in 0..nodes {
        let t = grid.time(n);
        let sum_x: f64 = x.iter().sum();
        let sum_g: f64 = gamma.iter().sum();
        let sum_sq: f64 = x.iter().zip(&gamma).map(|(a, b)| a * a + b * b).sum();
        let count = n_minor as f64;
        mean_x.push(sum_x / count);
        mean_gamma.push(sum_g / count);
        second_moment.push(sum_sq / count);
        let lambda_full =
            LambdaSummary::from_parts(Some(sum_x / count), Some(sum_g / count), Some(sum_sq / count));

        // The α₀ actually played; the minors' feedback keeps the bundled
        // candidate α̌₀ baked in regardless (they do not observe deviations).
        let a0 = match deviation {
            Some(Deviation::MajorShift(delta)) => {
                model.action_major().project(bundle.alpha0[n] + delta)
            }
            _ => bundle.alpha0[n],
        };

        for (i, action) in actions.iter_mut().enumerate() {
            let player = i + 1;
            *action = match deviation {
                Some(Deviation::MinorShift { player: p, shift }) if *p == player => {
                    let base = feedback.action(n, x[i], gamma[i], &mut scratch)?;
                    model.action_minor().project(base + shift)
                }
                Some(Deviation::MinorBestResponse { player: p, strategy }) if *p == player => {
                    minimize_alpha(
                        model,
                        t,
                        x[i],
                        gamma[i],
                        strategy.y[n],
                        strategy.y_grave[n],
                        bundle.alpha0[n],
                        &strategy.lambdas[n],
                    )?
                }
                _ => feedback.action(n, x[i], gamma[i], &mut scratch)?,
            };
        }

        if n == steps {
            j_major += model.term_cost_major(&lambda_full)?;
            for i in 0..n_minor {
                let lambda_loo = leave_one_out(sum_x, sum_g, sum_sq, x[i], gamma[i], n_minor);
                j_minor[i] += model.term_cost_minor(x[i], gamma[i], &lambda_loo)?;
            }
            break;
        }

        j_major += model.run_cost_major(t, a0, &lambda_full)? * dt;
        let sigma = model.sigma().value(t);
        for i in 0..n_minor {
            let lambda_loo = leave_one_out(sum_x, sum_g, sum_sq, x[i], gamma[i], n_minor);
            j_minor[i] += model.run_cost_minor(t, x[i], gamma[i], a0, actions[i], &lambda_loo)? * dt;
            let b = model.drift(t, x[i], gamma[i], a0, actions[i], &lambda_loo)?;
            x[i] += b * dt + sigma * increments[i][n];
            gamma[i] += actions[i] * dt;
            if !(x[i].is_finite() && gamma[i].is_finite()) {
                return Err(Error::Divergence { step: n, time: t });
            }
        }
    }

    let mut costs = Vec::with_capacity(n_minor + 1);
    costs.push(j_major);
    costs.extend_from_slice(&j_minor);
    Ok(RunRow { costs, mean_x, mean_gamma, second_moment })
}

fn leave_one_out(
    sum_x: f64,
    sum_g: f64,
    sum_sq: f64,
    x: f64,
    gamma: f64,
    n_minor: usize,
) -> LambdaSummary {
    let rest = (n_minor - 1) as f64;
    LambdaSummary::from_parts(
        Some((sum_x - x) / rest),
        Some((sum_g - gamma) / rest),
        Some((sum_sq - x * x - gamma * gamma) / rest),
    )
}

fn run_game(
    feedback: &Feedback<'_>,
    cfg: &FiniteGameConfig,
    deviation: Option<&Deviation<'_>>,
) -> Result<GameOutcome> {
    let rows: Vec<RunRow> = (0..cfg.mc_runs)
        .into_par_iter()
        .map(|run| simulate_run(feedback, cfg, run, deviation))
        .collect::<Result<_>>()?;

    let runs = cfg.mc_runs as f64;
    let players = cfg.minor_players + 1;
    let nodes = feedback.grid.node_count();
    let mut mean_costs = vec![0.0; players];
    let mut mean_x_path = vec![0.0; nodes];
    let mut mean_gamma_path = vec![0.0; nodes];
    let mut second_moment_path = vec![0.0; nodes];
    for row in &rows {
        for (acc, v) in mean_costs.iter_mut().zip(&row.costs) {
            *acc += v / runs;
        }
        for (acc, v) in mean_x_path.iter_mut().zip(&row.mean_x) {
            *acc += v / runs;
        }
        for (acc, v) in mean_gamma_path.iter_mut().zip(&row.mean_gamma) {
            *acc += v / runs;
        }
        for (acc, v) in second_moment_path.iter_mut().zip(&row.second_moment) {
            *acc += v / runs;
        }
    }
    Ok(GameOutcome {
        costs: rows.into_iter().map(|r| r.costs).collect(),
        mean_costs,
        mean_x_path,
        mean_gamma_path,
        second_moment_path,
    })
}

/// Simulates the candidate profile built from the bundle: α̌₀ from the
/// bundle, every minor player on the bundled feedback, leave-one-out
/// empirical measures in the minor coefficients and the full empirical
/// measure in the major's cost. Returns per-run, per-player realized costs
/// and run-averaged population paths.
pub fn simulate_finite_game(
    model: &ModelSpec,
    bundle: &EquilibriumBundle,
    cfg: &FiniteGameConfig,
) -> Result<GameOutcome> {
    cfg.validate()?;
    let feedback = build_feedback(model, bundle)?;
    run_game(&feedback, cfg, None)
}

/// Backward sweep of the deviating player's adjoints (Y, Ỳ) against the
/// frozen population flow, Euler-discretized on the bundle grid. The state
/// argument of the drivers is frozen at the population mean path — exact
/// whenever the minor drivers are state-independent, which holds for all
/// worked models — and the flow is the run-averaged full-ensemble law of
/// the candidate profile (the leave-one-out correction is O(1/N), below
/// Monte Carlo resolution).
fn frozen_flow_best_response(
    feedback: &Feedback<'_>,
    base: &GameOutcome,
) -> Result<BestResponse> {
    let model = feedback.model;
    let grid = &feedback.grid;
    let nodes = grid.node_count();
    let dt = grid.dt();
    let lambdas: Vec<LambdaSummary> = (0..nodes)
        .map(|n| {
            LambdaSummary::from_parts(
                Some(base.mean_x_path[n]),
                Some(base.mean_gamma_path[n]),
                Some(base.second_moment_path[n]),
            )
        })
        .collect();

    let mut y = vec![0.0; nodes];
    let mut y_grave = vec![0.0; nodes];
    let last = nodes - 1;
    let (xt, gt) = (base.mean_x_path[last], base.mean_gamma_path[last]);
    y[last] = model.term_cost_minor_dx(xt, gt, &lambdas[last])?;
    y_grave[last] = model.term_cost_minor_dgamma(xt, gt, &lambdas[last])?;
    let mut scratch = vec![0.0; feedback.basis.size()];
    for n in (0..last).rev() {
        let up = n + 1;
        let t = grid.time(up);
        let (xu, gu) = (base.mean_x_path[up], base.mean_gamma_path[up]);
        let a0 = feedback.bundle.alpha0[up];
        let a = feedback.action(up, xu, gu, &mut scratch)?;
        let db_dx = model.drift_dx(t, xu, gu, a0, a, &lambdas[up])?;
        let db_dg = model.drift_dgamma(t, xu, gu, a0, a, &lambdas[up])?;
        let df_dx = model.run_cost_minor_dx(t, xu, gu, a0, a, &lambdas[up])?;
        let df_dg = model.run_cost_minor_dgamma(t, xu, gu, a0, a, &lambdas[up])?;
        y[n] = y[up] + (db_dx * y[up] + df_dx) * dt;
        y_grave[n] = y_grave[up] + (db_dg * y[up] + df_dg) * dt;
    }
    Ok(BestResponse { y, y_grave, lambdas })
}

/// Minor players probed when N is large: a deterministic spread of at most
/// eight indices. Exchangeability of the minor population makes a sample
/// representative; the full sweep is O(N²) games.
fn sampled_players(n_minor: usize) -> Vec<usize> {
    const MAX_SAMPLED: usize = 8;
    if n_minor <= MAX_SAMPLED {
        (1..=n_minor).collect()
    } else {
        (0..MAX_SAMPLED).map(|k| 1 + k * n_minor / MAX_SAMPLED).collect()
    }
}

fn paired_gap(base: &GameOutcome, deviated: &GameOutcome, player: usize) -> (f64, f64) {
    let runs = base.costs.len();
    let diffs: Vec<f64> = base
        .costs
        .iter()
        .zip(&deviated.costs)
        .map(|(b, d)| b[player] - d[player])
        .collect();
    let mean = diffs.iter().sum::<f64>() / runs as f64;
    if runs < 2 {
        return (mean, 0.0);
    }
    let var =
        diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (runs as f64 - 1.0);
    (mean, (var / runs as f64).sqrt())
}

/// Estimates the ε-Nash gap of the bundled profile.
///
/// Probes, under common random numbers: the null deviation and constant
/// path shifts at the major level; and, per sampled minor player, the null
/// deviation, constant feedback shifts, and (optionally) the frozen-flow
/// best response. Each gap is the paired run-average of candidate cost
/// minus deviated cost, so a positive gap certifies an improving deviation;
/// eps values are maxima over the probed family and are exactly 0 when no
/// probed deviation improves.
pub fn estimate_eps_nash(
    model: &ModelSpec,
    bundle: &EquilibriumBundle,
    cfg: &FiniteGameConfig,
) -> Result<NashGapReport> {
    cfg.validate()?;
    let feedback = build_feedback(model, bundle)?;
    let base = run_game(&feedback, cfg, None)?;

    let mut major_gaps = Vec::new();
    {
        let null = run_game(&feedback, cfg, Some(&Deviation::MajorShift(0.0)))?;
        let (gap, se) = paired_gap(&base, &null, 0);
        major_gaps.push(DeviationGap {
            label: "null".into(),
            shift: Some(0.0),
            player: None,
            gap,
            se,
        });
    }
    for &shift in &cfg.deviation_shifts {
        let deviated = run_game(&feedback, cfg, Some(&Deviation::MajorShift(shift)))?;
        let (gap, se) = paired_gap(&base, &deviated, 0);
        major_gaps.push(DeviationGap {
            label: "shift".into(),
            shift: Some(shift),
            player: None,
            gap,
            se,
        });
    }

    let players = sampled_players(cfg.minor_players);
    let best_response = if cfg.best_response {
        Some(frozen_flow_best_response(&feedback, &base)?)
    } else {
        None
    };
    let mut minor_gaps = Vec::new();
    for &player in &players {
        {
            let deviation = Deviation::MinorShift { player, shift: 0.0 };
            let deviated = run_game(&feedback, cfg, Some(&deviation))?;
            let (gap, se) = paired_gap(&base, &deviated, player);
            minor_gaps.push(DeviationGap {
                label: "null".into(),
                shift: Some(0.0),
                player: Some(player),
                gap,
                se,
            });
        }
        for &shift in &cfg.deviation_shifts {
            let deviation = Deviation::MinorShift { player, shift };
            let deviated = run_game(&feedback, cfg, Some(&deviation))?;
            let (gap, se) = paired_gap(&base, &deviated, player);
            minor_gaps.push(DeviationGap {
                label: "shift".into(),
                shift: Some(shift),
                player: Some(player),
                gap,
                se,
            });
        }
        if let Some(strategy) = &best_response {
            let deviation = Deviation::MinorBestResponse { player, strategy };
            let deviated = run_game(&feedback, cfg, Some(&deviation))?;
            let (gap, se) = paired_gap(&base, &deviated, player);
            minor_gaps.push(DeviationGap {
                label: "best-response".into(),
                shift: None,
                player: Some(player),
                gap,
                se,
            });
        }
    }

    let argmax = |gaps: &[DeviationGap]| -> (f64, f64) {
        let mut best = (f64::NEG_INFINITY, 0.0);
        for g in gaps {
            if g.gap > best.0 {
                best = (g.gap, g.se);
            }
        }
        best
    };
    let (eps_major, se_major) = argmax(&major_gaps);
    let (eps_minor_max, se_minor) = argmax(&minor_gaps);
    let report = NashGapReport {
        eps_major,
        se_major,
        eps_minor_max,
        se_minor,
        j0_candidate: base.major_cost(),
        ji_candidate: base.mean_costs[1..].to_vec(),
        sampled_players: players,
        major_gaps,
        minor_gaps,
    };
    for gap in report.major_gaps.iter().chain(&report.minor_gaps) {
        if !(gap.gap.is_finite() && gap.se.is_finite()) {
            return Err(Error::NonFinite(format!("deviation gap {}", gap.label)));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbsde::SolverConfig;
    use crate::mfg::{export_equilibrium, fit_decoupling_fields, solve_mmmfg, OuterConfig};
    use crate::model::{make_example1, ModelParams, SigmaSchedule};

    fn example1_bundle(sigma: f64) -> (crate::model::ModelSpec, EquilibriumBundle) {
        let params =
            ModelParams { sigma: SigmaSchedule::constant(sigma), ..ModelParams::default() };
        let model = make_example1(&params);
        let config = SolverConfig { particles: 200, steps: 20, seed: 3, ..SolverConfig::default() };
        let solution = solve_mmmfg(&model, &config, &OuterConfig::default()).unwrap();
        let fields = fit_decoupling_fields(&solution, 2).unwrap();
        let bundle = export_equilibrium(&solution, &fields).unwrap();
        (model, bundle)
    }

    #[test]
    fn noiseless_game_reproduces_the_constant_equilibrium_paths() {
        let (model, bundle) = example1_bundle(0.0);
        let cfg = FiniteGameConfig {
            minor_players: 2,
            mc_runs: 3,
            deviation_shifts: vec![],
            best_response: false,
            ..FiniteGameConfig::default()
        };
        let outcome = simulate_finite_game(&model, &bundle, &cfg).unwrap();
        let grid = bundle.time_grid().unwrap();
        for (n, t) in grid.nodes().into_iter().enumerate() {
            assert!((outcome.mean_gamma_path[n] - t).abs() < 1e-10, "gamma at {t}");
            assert!((outcome.mean_x_path[n] - 2.0 * t).abs() < 1e-10, "x at {t}");
        }
        // σ ≡ 0 with identical initials: both minor paths coincide, so each
        // run's cost vector has identical minor entries.
        for row in &outcome.costs {
            assert_eq!(row[1], row[2]);
        }
    }

    #[test]
    fn major_cost_matches_the_closed_form() {
        let (model, bundle) = example1_bundle(0.2);
        let cfg = FiniteGameConfig {
            minor_players: 50,
            mc_runs: 60,
            deviation_shifts: vec![],
            best_response: false,
            ..FiniteGameConfig::default()
        };
        let outcome = simulate_finite_game(&model, &bundle, &cfg).unwrap();
        let runs = outcome.costs.len() as f64;
        let mean = outcome.major_cost();
        let var = outcome
            .costs
            .iter()
            .map(|r| (r[0] - mean) * (r[0] - mean))
            .sum::<f64>()
            / (runs - 1.0);
        let se = (var / runs).sqrt();
        assert!(
            (mean + 0.48).abs() <= (3.0 * se).max(0.02),
            "J0 {mean} vs closed form -0.48 (se {se})"
        );
    }

    #[test]
    fn null_deviations_report_exactly_zero_gaps() {
        let (model, bundle) = example1_bundle(0.2);
        let cfg = FiniteGameConfig {
            minor_players: 4,
            mc_runs: 5,
            deviation_shifts: vec![],
            best_response: false,
            ..FiniteGameConfig::default()
        };
        let report = estimate_eps_nash(&model, &bundle, &cfg).unwrap();
        assert_eq!(report.major_gaps[0].gap, 0.0);
        assert_eq!(report.major_gaps[0].se, 0.0);
        for gap in &report.minor_gaps {
            assert_eq!(gap.gap, 0.0, "null-only family must gap at zero");
        }
        assert_eq!(report.eps_major, 0.0);
        assert_eq!(report.eps_minor_max, 0.0);
    }

    #[test]
    fn constant_shift_costs_the_strong_convexity_penalty() {
        let (model, bundle) = example1_bundle(0.2);
        let cfg = FiniteGameConfig {
            minor_players: 5,
            mc_runs: 4,
            deviation_shifts: vec![0.25],
            best_response: false,
            ..FiniteGameConfig::default()
        };
        let report = estimate_eps_nash(&model, &bundle, &cfg).unwrap();
        // The equilibrium is exact at any N here, so every probed deviation
        // loses money: deterministically δ²/2 for a constant shift δ (the
        // Brownian contributions cancel under common random numbers).
        for gap in report.minor_gaps.iter().filter(|g| g.label == "shift") {
            assert!(
                (-gap.gap - 0.03125).abs() < 1e-8,
                "shift gap {} should cost 0.03125",
                gap.gap
            );
            assert!(gap.se < 1e-10, "paired noise should cancel, se {}", gap.se);
        }
        assert_eq!(report.eps_minor_max, 0.0);
    }

    #[test]
    fn best_response_agrees_with_the_candidate_when_it_is_exact() {
        let (model, bundle) = example1_bundle(0.2);
        let cfg = FiniteGameConfig {
            minor_players: 4,
            mc_runs: 5,
            deviation_shifts: vec![],
            best_response: true,
            ..FiniteGameConfig::default()
        };
        let report = estimate_eps_nash(&model, &bundle, &cfg).unwrap();
        // The candidate feedback reads θ_Y through fitted coefficients, the
        // best response integrates the adjoints directly, so the actions
        // agree only to the fitting error (here: last-ulp noise).
        for gap in report.minor_gaps.iter().filter(|g| g.label == "best-response") {
            assert!(
                gap.gap.abs() < 1e-12,
                "best response should coincide with the candidate feedback, gap {}",
                gap.gap
            );
        }
    }

    #[test]
    fn symmetric_deviations_gap_identically_without_noise() {
        let (model, bundle) = example1_bundle(0.0);
        let cfg = FiniteGameConfig {
            minor_players: 3,
            mc_runs: 2,
            deviation_shifts: vec![0.5],
            best_response: false,
            ..FiniteGameConfig::default()
        };
        let report = estimate_eps_nash(&model, &bundle, &cfg).unwrap();
        let shifts: Vec<&DeviationGap> =
            report.minor_gaps.iter().filter(|g| g.label == "shift").collect();
        assert_eq!(shifts.len(), 3);
        assert_eq!(shifts[0].gap, shifts[1].gap);
        assert_eq!(shifts[1].gap, shifts[2].gap);
    }

    #[test]
    fn config_is_validated() {
        let cfg = FiniteGameConfig { minor_players: 1, ..FiniteGameConfig::default() };
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
        let cfg = FiniteGameConfig { mc_runs: 0, ..FiniteGameConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn player_sampling_spreads_and_caps() {
        assert_eq!(sampled_players(3), vec![1, 2, 3]);
        let sampled = sampled_players(50);
        assert_eq!(sampled.len(), 8);
        assert_eq!(sampled[0], 1);
        assert!(sampled.windows(2).all(|w| w[0] < w[1]));
        assert!(*sampled.last().unwrap() <= 50);
    }
}

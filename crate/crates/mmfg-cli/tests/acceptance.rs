//! Release acceptance gate. Each test audits one criterion end to end and
//! prints `ACCEPTANCE <n> (<label>): PASS|FAIL`; every tolerance is pinned
//! here, next to the assertion it guards.

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use rand::Rng;
use serde_json::Value;

use mmfg::fbsde::{mean_field_ode_solve, SolverConfig};
use mmfg::hamiltonian::{
    averaged_h0r, eval_hr, minimize_alpha, minimize_alpha0, minimize_alpha0_numeric,
    minimize_alpha_numeric, verify_necessary_conditions, ActionGrid,
};
use mmfg::measure::{l_derivative_linear, l_derivative_reciprocal_mean, ParticleEnsemble};
use mmfg::mfg::{
    export_equilibrium, fit_decoupling_fields, fixed_point_certificate, solve_mmmfg, OuterConfig,
};
use mmfg::model::{by_name, ModelParams, ModelSpec};
use mmfg::nplayer::{estimate_eps_nash, FiniteGameConfig};
use mmfg::rng::{stream, DOMAIN_TEST};

fn criterion(index: usize, label: &str, body: impl FnOnce()) {
    match panic::catch_unwind(AssertUnwindSafe(body)) {
        Ok(()) => println!("ACCEPTANCE {index} ({label}): PASS"),
        Err(cause) => {
            println!("ACCEPTANCE {index} ({label}): FAIL");
            panic::resume_unwind(cause);
        }
    }
}

fn model(name: &str) -> ModelSpec {
    by_name(name, &ModelParams::default()).unwrap()
}

fn run_cli(args: &[&str], thread_env: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mmfg"));
    match thread_env {
        Some(threads) => cmd.env("RAYON_NUM_THREADS", threads),
        None => cmd.env_remove("RAYON_NUM_THREADS"),
    };
    cmd.args(args).output().expect("binary must spawn")
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.cfg");
    fs::write(&path, body).unwrap();
    path
}

fn rel_err(value: f64, reference: f64) -> f64 {
    (value - reference).abs() / reference.abs().max(f64::MIN_POSITIVE)
}

/// Criterion 1: the first worked model's all-constant equilibrium is
/// reproduced to 1e-8 in both action levels at the default particle count,
/// and the packaged verification command does so in under ten seconds.
#[test]
fn criterion_1_constant_equilibrium_reproduction() {
    criterion(1, "example1 closed-form reproduction", || {
        let dir = tempfile::tempdir().unwrap();
        let started = Instant::now();
        let out = run_cli(
            &["verify-example", "example1", "--output", dir.path().to_str().unwrap()],
            None,
        );
        let elapsed = started.elapsed().as_secs_f64();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(elapsed <= 10.0, "verification took {elapsed:.2}s, budget is 10s");
        let s = summary(dir.path());
        assert_eq!(s["verify"]["metric"], "alpha0_max_abs_err");
        assert!(s["verify"]["value"].as_f64().unwrap() <= 1e-8);
        assert_eq!(s["verify"]["passed"], true);

        // Both strategy levels, audited directly on the solved paths.
        let model = model("example1");
        let solution =
            solve_mmmfg(&model, &SolverConfig::default(), &OuterConfig::default()).unwrap();
        for n in 0..solution.paths.node_count() {
            let a0 = solution.paths.alpha0(n);
            assert!((a0 + 1.0).abs() <= 1e-8, "alpha0({n}) = {a0}");
            for (i, a) in solution.paths.alphas_at(n).iter().enumerate() {
                assert!((a - 1.0).abs() <= 1e-8, "alpha({n}, {i}) = {a}");
            }
        }
    });
}

/// Criterion 2: the reduced deterministic system matches the second worked
/// model's closed form to 1e-6, and the full Monte Carlo solve tracks the
/// major action to 2e-2 relative error away from the singular start.
#[test]
fn criterion_2_growth_equilibrium_accuracy() {
    criterion(2, "example2 ODE and Monte Carlo accuracy", || {
        let model = model("example2");
        let ode = mean_field_ode_solve(&model, 0.01, 99, 0.0, 0.0).unwrap();
        for (n, &t) in ode.times.iter().enumerate() {
            let gamma = (3.0 * t).cbrt();
            assert!(
                rel_err(ode.mean_gamma[n], gamma) <= 1e-6,
                "mean_gamma at t={t}: {} vs {gamma}",
                ode.mean_gamma[n]
            );
            assert!(
                rel_err(ode.alpha0[n], -gamma) <= 1e-6,
                "alpha0 at t={t}: {} vs {}",
                ode.alpha0[n],
                -gamma
            );
        }

        let dir = tempfile::tempdir().unwrap();
        let cfg = write_config(
            dir.path(),
            "model.name = example2\nsolver.particles = 10000\nsolver.steps = 200\n\
             solver.t_min = 0.01\nsolver.seed = 7\n",
        );
        let started = Instant::now();
        let out = run_cli(
            &[
                "verify-example",
                "--config",
                cfg.to_str().unwrap(),
                "--output",
                dir.path().to_str().unwrap(),
            ],
            None,
        );
        let elapsed = started.elapsed().as_secs_f64();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(elapsed <= 300.0, "verification took {elapsed:.2}s, budget is 5min");
        let s = summary(dir.path());
        assert_eq!(s["verify"]["metric"], "alpha0_max_rel_err");
        assert!(s["verify"]["value"].as_f64().unwrap() <= 2e-2);
        assert_eq!(s["verify"]["passed"], true);
    });
}

/// Criterion 3: on random states of all three models the closed-form
/// minimizers agree with projected gradient descent to 1e-6, and with an
/// exhaustive 1e-4-step grid search on [-10, 10] to 2e-4.
#[test]
fn criterion_3_hamiltonian_minimizer_agreement() {
    criterion(3, "pointwise Hamiltonian minimizer agreement", || {
        for (m, name) in ["example1", "example2", "example3"].iter().enumerate() {
            let model = model(name);
            let grid = ActionGrid::fine();
            for k in 0..100 {
                let mut rng = stream(11, DOMAIN_TEST, (m * 1000 + k) as u64);
                let t: f64 = rng.random_range(0.05..=1.0);
                let x: f64 = rng.random_range(-1.0..=1.0);
                let gamma: f64 = rng.random_range(-1.0..=1.0);
                let y: f64 = rng.random_range(-1.0..=1.0);
                let y_grave: f64 = rng.random_range(-1.0..=1.0);
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let alpha0: f64 = sign * rng.random_range(0.8..=1.6);

                // A small population with its aim mean held away from zero,
                // where every model's Hamiltonians are strongly convex.
                let x_shift: f64 = rng.random_range(-1.0..=1.0);
                let gamma_shift: f64 = rng.random_range(0.8..=1.6);
                let mut rows = Vec::new();
                for _ in 0..5 {
                    rows.push(vec![
                        x_shift + rng.random_range(-1.0..=1.0),
                        gamma_shift + rng.random_range(-0.3..=0.3),
                        rng.random_range(-2.0..=2.0),
                        rng.random_range(-1.0..=1.0),
                    ]);
                }
                let joint = ParticleEnsemble::from_rows(&rows).unwrap();
                let alphas: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..=1.0)).collect();
                let lambda = model.lambda_summary(&joint.marginal(&[0, 1]).unwrap()).unwrap();

                let a_closed =
                    minimize_alpha(&model, t, x, gamma, y, y_grave, alpha0, &lambda).unwrap();
                let a_pgd =
                    minimize_alpha_numeric(&model, t, x, gamma, y, y_grave, alpha0, &lambda)
                        .unwrap();
                assert!(
                    (a_closed - a_pgd).abs() <= 1e-6,
                    "{name} minor state {k}: closed {a_closed} vs pgd {a_pgd}"
                );

                let a0_closed = minimize_alpha0(&model, t, &joint, &alphas).unwrap();
                let a0_pgd = minimize_alpha0_numeric(&model, t, &joint, &alphas).unwrap();
                assert!(
                    (a0_closed - a0_pgd).abs() <= 1e-6,
                    "{name} major state {k}: closed {a0_closed} vs pgd {a0_pgd}"
                );

                // Exhaustive grid search on the first ten states per model.
                if k < 10 {
                    let minor_grid = grid.values(model.action_minor());
                    let a_grid = argmin(&minor_grid, |a| {
                        eval_hr(&model, t, x, gamma, y, y_grave, alpha0, a, &lambda).unwrap()
                    });
                    assert!(
                        (a_grid - a_closed).abs() <= 2e-4,
                        "{name} minor grid {k}: {a_grid} vs {a_closed}"
                    );

                    let major_grid = grid.values(model.action_major());
                    let a0_grid = argmin(&major_grid, |a0| {
                        averaged_h0r(&model, t, &joint, &alphas, a0).unwrap()
                    });
                    assert!(
                        (a0_grid - a0_closed).abs() <= 2e-4,
                        "{name} major grid {k}: {a0_grid} vs {a0_closed}"
                    );
                }
            }
        }
    });
}

fn argmin(candidates: &[f64], mut objective: impl FnMut(f64) -> f64) -> f64 {
    let mut best = (f64::INFINITY, f64::NAN);
    for &a in candidates {
        let value = objective(a);
        if value < best.0 {
            best = (value, a);
        }
    }
    best.1
}

/// Criterion 4: a converged solution passes the two-level necessary-condition
/// audit at 1e-4, and a constant +0.25 shift of the minor strategy is flagged
/// with a violation of at least 0.03.
#[test]
fn criterion_4_necessary_condition_audit() {
    criterion(4, "necessary-condition audit and perturbation sensitivity", || {
        let model = model("example1");
        let config = SolverConfig { particles: 500, steps: 50, ..SolverConfig::default() };
        let solution = solve_mmmfg(&model, &config, &OuterConfig::default()).unwrap();
        let flow = Some(&solution.equilibrium_flow);

        let clean = verify_necessary_conditions(
            &model,
            &solution.paths,
            flow,
            &ActionGrid::coarse(),
            &ActionGrid::coarse(),
            1e-4,
        )
        .unwrap();
        assert!(clean.passed, "clean audit: {clean:?}");

        let mut shifted = solution.paths.clone();
        shifted.perturb_alpha(0.25);
        let audit = verify_necessary_conditions(
            &model,
            &shifted,
            flow,
            &ActionGrid::coarse(),
            &ActionGrid::coarse(),
            1e-4,
        )
        .unwrap();
        assert!(!audit.passed, "perturbed audit must fail: {audit:?}");
        assert!(
            audit.max_violation_minor >= 0.03,
            "violation {} below the 0.03 floor",
            audit.max_violation_minor
        );
    });
}

/// Criterion 5: measure derivatives of linear functionals and of the
/// reciprocal mean match Richardson-extrapolated finite differences of their
/// lifted versions to 1e-5 relative error; the identity map returns the
/// identity matrix exactly.
#[test]
fn criterion_5_measure_derivatives() {
    criterion(5, "empirical L-derivatives against lifted finite differences", || {
        const N: usize = 64;
        let mut rng = stream(11, DOMAIN_TEST, 77);
        let xs: Vec<f64> = (0..N).map(|_| 2.0 + rng.random_range(-1.0..=1.0)).collect();
        let rows: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
        let ensemble = ParticleEnsemble::from_rows(&rows).unwrap();

        // x, x^2, x^3 with their pointwise Jacobians.
        for power in 1..=3i32 {
            let derivatives = l_derivative_linear(
                |p: &[f64]| vec![vec![power as f64 * p[0].powi(power - 1)]],
                &ensemble,
            )
            .unwrap();
            let lifted = |xs: &[f64]| -> f64 {
                xs.iter().map(|x| x.powi(power)).sum::<f64>() / N as f64
            };
            for i in 0..N {
                let reference = N as f64 * richardson(&xs, i, lifted);
                let value = derivatives[i][0][0];
                assert!(
                    rel_err(value, reference) <= 1e-5,
                    "power {power}, particle {i}: {value} vs {reference}"
                );
            }
        }

        // 1 / mean.
        let derivatives = l_derivative_reciprocal_mean(&ensemble, 0).unwrap();
        let lifted = |xs: &[f64]| -> f64 { N as f64 / xs.iter().sum::<f64>() };
        for (i, &value) in derivatives.iter().enumerate() {
            let reference = N as f64 * richardson(&xs, i, lifted);
            assert!(
                rel_err(value, reference) <= 1e-5,
                "reciprocal mean, particle {i}: {value} vs {reference}"
            );
        }

        // The identity map's derivative is the identity matrix, exactly.
        let pair_rows: Vec<Vec<f64>> =
            xs.iter().map(|&x| vec![x, -0.5 * x]).collect();
        let pairs = ParticleEnsemble::from_rows(&pair_rows).unwrap();
        let identity =
            l_derivative_linear(|_p: &[f64]| vec![vec![1.0, 0.0], vec![0.0, 1.0]], &pairs)
                .unwrap();
        for matrix in &identity {
            assert_eq!(*matrix, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        }
    });
}

/// Central difference in coordinate `i` of a lifted functional, Richardson
/// extrapolated: (4 D(e/2) - D(e)) / 3.
fn richardson(xs: &[f64], i: usize, f: impl Fn(&[f64]) -> f64) -> f64 {
    let eps = 1e-3 * xs[i].abs().max(1.0);
    let central = |e: f64| -> f64 {
        let mut up = xs.to_vec();
        let mut down = xs.to_vec();
        up[i] += e;
        down[i] -= e;
        (f(&up) - f(&down)) / (2.0 * e)
    };
    (4.0 * central(0.5 * eps) - central(eps)) / 3.0
}

/// Criterion 6: the third model converges within the pinned iteration budget
/// at full scale, passes the fixed-point certificate and the optimality
/// audit, and collapses onto the second model when the coupling is switched
/// off.
#[test]
fn criterion_6_coupled_model_fixed_point() {
    criterion(6, "example3 fixed point, certificate, and coupling-off reduction", || {
        let full = model("example3");
        let config = SolverConfig { particles: 10_000, steps: 200, ..SolverConfig::default() };
        let outer = OuterConfig::default();

        let solution = solve_mmmfg(&full, &config, &outer).unwrap();
        assert!(solution.outer_iterations <= 30);
        let picard = solution.paths.picard_residuals();
        assert!(picard.len() <= 50, "{} strategy sweeps", picard.len());
        assert!(*picard.last().unwrap() <= 1e-3);
        assert!(*solution.fixed_point_residuals.last().unwrap() <= 5e-2);

        let certificate = fixed_point_certificate(&full, &solution).unwrap();
        assert!(certificate.passed, "{certificate:?}");

        let grid = ActionGrid::new(-10.0, 10.0, 0.05).unwrap();
        let audit = verify_necessary_conditions(
            &full,
            &solution.paths,
            Some(&solution.equilibrium_flow),
            &grid,
            &grid,
            1e-4,
        )
        .unwrap();
        assert!(audit.passed, "{audit:?}");

        // kappa = 0 removes the coupling term; the trajectories must agree
        // with the second model's (same seed, so the match is near-exact).
        let decoupled =
            by_name("example3", &ModelParams { kappa: 0.0, ..ModelParams::default() }).unwrap();
        let a = solve_mmmfg(&decoupled, &config, &outer).unwrap();
        let b = solve_mmmfg(&model("example2"), &config, &outer).unwrap();
        assert_eq!(a.paths.node_count(), b.paths.node_count());
        for n in 0..a.paths.node_count() {
            assert!(
                (a.paths.mean_x(n) - b.paths.mean_x(n)).abs() <= 1e-2,
                "mean_x diverges at node {n}"
            );
            assert!(
                (a.paths.mean_gamma(n) - b.paths.mean_gamma(n)).abs() <= 1e-2,
                "mean_gamma diverges at node {n}"
            );
        }
    });
}

/// Criterion 7: finite-game deviation gaps of the exported equilibrium are
/// exactly zero under the null deviation, and the worst minor gap does not
/// grow with the player count beyond three standard errors.
#[test]
fn criterion_7_epsilon_nash_trend() {
    criterion(7, "epsilon-Nash gaps of the finite game", || {
        let model = model("example1");
        let config = SolverConfig { particles: 300, steps: 25, ..SolverConfig::default() };
        let solution = solve_mmmfg(&model, &config, &OuterConfig::default()).unwrap();
        let fields = fit_decoupling_fields(&solution, config.basis_degree).unwrap();
        let bundle = export_equilibrium(&solution, &fields).unwrap();

        let mut trend = Vec::new();
        for minor_players in [5usize, 20, 50] {
            let cfg = FiniteGameConfig {
                minor_players,
                mc_runs: 200,
                seed: 7,
                ..FiniteGameConfig::default()
            };
            let report = estimate_eps_nash(&model, &bundle, &cfg).unwrap();

            assert_eq!(report.major_gaps[0].label, "null");
            assert_eq!(report.major_gaps[0].gap, 0.0, "major null gap must be exactly zero");
            let minor_nulls: Vec<_> =
                report.minor_gaps.iter().filter(|g| g.label == "null").collect();
            assert!(!minor_nulls.is_empty());
            for gap in minor_nulls {
                assert_eq!(gap.gap, 0.0, "minor null gap must be exactly zero: {gap:?}");
            }
            trend.push((report.eps_minor_max, report.se_minor));
        }
        for pair in trend.windows(2) {
            let (prev, prev_se) = pair[0];
            let (next, next_se) = pair[1];
            assert!(
                next <= prev + 3.0 * prev_se.hypot(next_se),
                "eps_minor_max grew beyond noise: {prev} +- {prev_se} -> {next} +- {next_se}"
            );
        }
    });
}

/// Criterion 8: identical configuration and seed produce byte-identical
/// trajectory and bundle artifacts at every thread count.
#[test]
fn criterion_8_bitwise_determinism() {
    criterion(8, "bitwise determinism across thread counts", || {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_config(
            dir.path(),
            "solver.particles = 400\nsolver.steps = 30\nsolver.seed = 5\n",
        );
        let mut outputs = Vec::new();
        for (tag, threads) in [("one", Some("1")), ("eight", Some("8")), ("auto", None)] {
            let out_dir = dir.path().join(tag);
            let out = run_cli(
                &[
                    "solve-mfg",
                    "--config",
                    cfg.to_str().unwrap(),
                    "--output",
                    out_dir.to_str().unwrap(),
                ],
                threads,
            );
            assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
            outputs.push((
                fs::read(out_dir.join("trajectories.csv")).unwrap(),
                fs::read(out_dir.join("bundle.json")).unwrap(),
            ));
        }
        for (trajectories, bundle) in &outputs[1..] {
            assert_eq!(trajectories, &outputs[0].0, "trajectories.csv differs between runs");
            assert_eq!(bundle, &outputs[0].1, "bundle.json differs between runs");
        }
    });
}

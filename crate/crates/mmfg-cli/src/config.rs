//! Flat `key = value` run configuration.
//!
//! Keys are dotted section paths (`solver.particles`), `#` starts a comment
//! anywhere on a line, blank lines are skipped, and later assignments win.
//! Unknown keys are a validation error listing every offender, so typos
//! cannot silently fall back to defaults.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::Serialize;

use mmfg::fbsde::SolverConfig;
use mmfg::mfg::OuterConfig;
use mmfg::model::{by_name, ModelParams, ModelSpec, SigmaSchedule};
use mmfg::nplayer::FiniteGameConfig;
use mmfg::{Error, Result};

/// `model.*`: which worked example to run and its free parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelKeys {
    pub name: String,
    pub horizon: f64,
    pub sigma: f64,
    pub kappa: f64,
}

/// `solver.*`: the inner particle solver, mirroring [`SolverConfig`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverKeys {
    pub particles: usize,
    pub steps: usize,
    pub t_min: Option<f64>,
    pub seed: u64,
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub basis_degree: usize,
    pub x0: f64,
    pub gamma0: f64,
}

/// `outer.*`: the measure fixed-point loop, mirroring [`OuterConfig`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OuterKeys {
    pub max_iter: usize,
    pub damping: f64,
    pub fp_tol: f64,
}

/// `ode.*`: the reduced deterministic mean-field integration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OdeKeys {
    pub steps: usize,
}

/// `game.*`: the finite-game harness, mirroring [`FiniteGameConfig`] plus
/// the bundle consumed by `finite-game` and `nash-gap`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GameKeys {
    pub minor_players: usize,
    pub mc_runs: usize,
    pub seed: u64,
    pub deviation_shifts: Vec<f64>,
    pub best_response: bool,
    pub bundle: Option<String>,
}

/// The full run configuration; every command reads the sections it needs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub model: ModelKeys,
    pub solver: SolverKeys,
    pub outer: OuterKeys,
    pub ode: OdeKeys,
    pub game: GameKeys,
}

impl Default for RunConfig {
    fn default() -> Self {
        let solver = SolverConfig::default();
        let outer = OuterConfig::default();
        let game = FiniteGameConfig::default();
        let params = ModelParams::default();
        RunConfig {
            model: ModelKeys {
                name: "example1".into(),
                horizon: params.horizon,
                sigma: 0.2,
                kappa: params.kappa,
            },
            solver: SolverKeys {
                particles: solver.particles,
                steps: solver.steps,
                t_min: solver.t_min,
                seed: solver.seed,
                damping: solver.damping,
                tol: solver.tol,
                max_iter: solver.max_iter,
                basis_degree: solver.basis_degree,
                x0: solver.x0,
                gamma0: solver.gamma0,
            },
            outer: OuterKeys {
                max_iter: outer.max_iter,
                damping: outer.damping,
                fp_tol: outer.fp_tol,
            },
            ode: OdeKeys { steps: 100 },
            game: GameKeys {
                minor_players: game.minor_players,
                mc_runs: game.mc_runs,
                seed: game.seed,
                deviation_shifts: game.deviation_shifts,
                best_response: game.best_response,
                bundle: None,
            },
        }
    }
}

impl RunConfig {
    /// Parses configuration text, starting from the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut unknown = BTreeSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::InvalidConfig(format!(
                    "config line {line_no}: expected 'key = value', got '{line}'"
                )));
            };
            let key = key.trim();
            let value = value.trim();
            if !cfg.assign(key, value, line_no)? {
                unknown.insert(key.to_string());
            }
        }
        if !unknown.is_empty() {
            let keys: Vec<String> = unknown.into_iter().collect();
            return Err(Error::InvalidConfig(format!(
                "unknown config keys: {}",
                keys.join(", ")
            )));
        }
        Ok(cfg)
    }

    /// Assigns one key; returns false when the key is not recognized.
    fn assign(&mut self, key: &str, value: &str, line_no: usize) -> Result<bool> {
        fn num<T: std::str::FromStr>(key: &str, value: &str, line_no: usize) -> Result<T> {
            value.parse().map_err(|_| {
                Error::InvalidConfig(format!(
                    "config line {line_no}: cannot parse '{value}' for key '{key}'"
                ))
            })
        }
        match key {
            "model.name" => self.model.name = value.to_string(),
            "model.horizon" => self.model.horizon = num(key, value, line_no)?,
            "model.sigma" => self.model.sigma = num(key, value, line_no)?,
            "model.kappa" => self.model.kappa = num(key, value, line_no)?,
            "solver.particles" => self.solver.particles = num(key, value, line_no)?,
            "solver.steps" => self.solver.steps = num(key, value, line_no)?,
            "solver.t_min" => {
                self.solver.t_min =
                    if value.is_empty() { None } else { Some(num(key, value, line_no)?) }
            }
            "solver.seed" => self.solver.seed = num(key, value, line_no)?,
            "solver.damping" => self.solver.damping = num(key, value, line_no)?,
            "solver.tol" => self.solver.tol = num(key, value, line_no)?,
            "solver.max_iter" => self.solver.max_iter = num(key, value, line_no)?,
            "solver.basis_degree" => self.solver.basis_degree = num(key, value, line_no)?,
            "solver.x0" => self.solver.x0 = num(key, value, line_no)?,
            "solver.gamma0" => self.solver.gamma0 = num(key, value, line_no)?,
            "outer.max_iter" => self.outer.max_iter = num(key, value, line_no)?,
            "outer.damping" => self.outer.damping = num(key, value, line_no)?,
            "outer.fp_tol" => self.outer.fp_tol = num(key, value, line_no)?,
            "ode.steps" => self.ode.steps = num(key, value, line_no)?,
            "game.minor_players" => self.game.minor_players = num(key, value, line_no)?,
            "game.mc_runs" => self.game.mc_runs = num(key, value, line_no)?,
            "game.seed" => self.game.seed = num(key, value, line_no)?,
            "game.deviation_shifts" => {
                let mut shifts = Vec::new();
                for part in value.split(',') {
                    let part = part.trim();
                    if !part.is_empty() {
                        shifts.push(num(key, part, line_no)?);
                    }
                }
                self.game.deviation_shifts = shifts;
            }
            "game.best_response" => match value {
                "true" => self.game.best_response = true,
                "false" => self.game.best_response = false,
                _ => {
                    return Err(Error::InvalidConfig(format!(
                        "config line {line_no}: '{key}' expects true or false, got '{value}'"
                    )))
                }
            },
            "game.bundle" => {
                self.game.bundle =
                    if value.is_empty() { None } else { Some(value.to_string()) }
            }
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// The model the configuration selects.
    pub fn to_model(&self) -> Result<ModelSpec> {
        let params = ModelParams {
            horizon: self.model.horizon,
            sigma: SigmaSchedule::constant(self.model.sigma),
            kappa: self.model.kappa,
            ..ModelParams::default()
        };
        by_name(&self.model.name, &params)
    }

    pub fn to_solver(&self) -> SolverConfig {
        SolverConfig {
            particles: self.solver.particles,
            steps: self.solver.steps,
            t_min: self.solver.t_min,
            seed: self.solver.seed,
            damping: self.solver.damping,
            tol: self.solver.tol,
            max_iter: self.solver.max_iter,
            basis_degree: self.solver.basis_degree,
            x0: self.solver.x0,
            gamma0: self.solver.gamma0,
        }
    }

    pub fn to_outer(&self) -> OuterConfig {
        OuterConfig {
            max_iter: self.outer.max_iter,
            damping: self.outer.damping,
            fp_tol: self.outer.fp_tol,
        }
    }

    pub fn to_game(&self) -> FiniteGameConfig {
        FiniteGameConfig {
            minor_players: self.game.minor_players,
            mc_runs: self.game.mc_runs,
            seed: self.game.seed,
            deviation_shifts: self.game.deviation_shifts.clone(),
            best_response: self.game.best_response,
        }
    }

    /// Renders the configuration in the accepted input format.
    #[must_use]
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# Run configuration; '#' starts a comment, later keys win.");
        let _ = writeln!(out);
        let _ = writeln!(out, "# Worked example: example1 | example2 | example3.");
        let _ = writeln!(out, "model.name = {}", self.model.name);
        let _ = writeln!(out, "model.horizon = {}", self.model.horizon);
        let _ = writeln!(out, "model.sigma = {}", self.model.sigma);
        let _ = writeln!(out, "# Coupling strength; read by example3 only.");
        let _ = writeln!(out, "model.kappa = {}", self.model.kappa);
        let _ = writeln!(out);
        let _ = writeln!(out, "solver.particles = {}", self.solver.particles);
        let _ = writeln!(out, "solver.steps = {}", self.solver.steps);
        let _ = writeln!(out, "# Start time of the grid; empty means the model's default.");
        let _ = writeln!(
            out,
            "solver.t_min = {}",
            self.solver.t_min.map(|v| v.to_string()).unwrap_or_default()
        );
        let _ = writeln!(out, "solver.seed = {}", self.solver.seed);
        let _ = writeln!(out, "solver.damping = {}", self.solver.damping);
        let _ = writeln!(out, "solver.tol = {}", self.solver.tol);
        let _ = writeln!(out, "solver.max_iter = {}", self.solver.max_iter);
        let _ = writeln!(out, "solver.basis_degree = {}", self.solver.basis_degree);
        let _ = writeln!(out, "# Initial offsets added to the model's startup point.");
        let _ = writeln!(out, "solver.x0 = {}", self.solver.x0);
        let _ = writeln!(out, "solver.gamma0 = {}", self.solver.gamma0);
        let _ = writeln!(out);
        let _ = writeln!(out, "outer.max_iter = {}", self.outer.max_iter);
        let _ = writeln!(out, "outer.damping = {}", self.outer.damping);
        let _ = writeln!(out, "outer.fp_tol = {}", self.outer.fp_tol);
        let _ = writeln!(out);
        let _ = writeln!(out, "# Grid steps for the mean-field-ode command.");
        let _ = writeln!(out, "ode.steps = {}", self.ode.steps);
        let _ = writeln!(out);
        let _ = writeln!(out, "game.minor_players = {}", self.game.minor_players);
        let _ = writeln!(out, "game.mc_runs = {}", self.game.mc_runs);
        let _ = writeln!(out, "game.seed = {}", self.game.seed);
        let shifts: Vec<String> =
            self.game.deviation_shifts.iter().map(|s| s.to_string()).collect();
        let _ = writeln!(out, "game.deviation_shifts = {}", shifts.join(", "));
        let _ = writeln!(out, "game.best_response = {}", self.game.best_response);
        let _ = writeln!(out, "# Equilibrium bundle consumed by finite-game and nash-gap.");
        let _ = writeln!(
            out,
            "game.bundle = {}",
            self.game.bundle.clone().unwrap_or_default()
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_render_and_reparse_unchanged() {
        let defaults = RunConfig::default();
        let parsed = RunConfig::parse(&defaults.render()).unwrap();
        assert_eq!(parsed, defaults);
    }

    #[test]
    fn unknown_keys_are_listed() {
        let err = RunConfig::parse("solver.particels = 10\nmodle.name = example2\n")
            .unwrap_err();
        let message = err.to_string();
        assert!(message.contains("modle.name"), "{message}");
        assert!(message.contains("solver.particels"), "{message}");
    }

    #[test]
    fn comments_blanks_and_overrides_apply_in_order() {
        let cfg = RunConfig::parse(
            "# full-line comment\n\nsolver.particles = 10\nsolver.particles = 20 # later wins\n",
        )
        .unwrap();
        assert_eq!(cfg.solver.particles, 20);
    }

    #[test]
    fn malformed_lines_name_their_line_number() {
        let err = RunConfig::parse("solver.particles = 10\nnot a key value pair\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        let err = RunConfig::parse("solver.particles = many\n").unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }

    #[test]
    fn lists_options_and_booleans_parse() {
        let cfg = RunConfig::parse(
            "game.deviation_shifts = -0.5, 0.25\ngame.best_response = false\n\
             solver.t_min = 0.025\ngame.bundle = out/bundle.json\n",
        )
        .unwrap();
        assert_eq!(cfg.game.deviation_shifts, vec![-0.5, 0.25]);
        assert!(!cfg.game.best_response);
        assert_eq!(cfg.solver.t_min, Some(0.025));
        assert_eq!(cfg.game.bundle.as_deref(), Some("out/bundle.json"));
        let cfg = RunConfig::parse("game.deviation_shifts =\nsolver.t_min =\n").unwrap();
        assert!(cfg.game.deviation_shifts.is_empty());
        assert_eq!(cfg.solver.t_min, None);
    }
}

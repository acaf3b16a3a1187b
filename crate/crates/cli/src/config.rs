//! Flat `key = value` scenario configuration with `#` comments. CLI flags
//! override file values; the effective configuration is written back next
//! to the outputs so every run is reproducible from its artifacts.

use std::fmt::Write as _;
use std::path::Path;

use seir_mpc_core::mpc::MpcConfig;
use seir_mpc_core::{ModelParams, State};

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub beta_min: f64,
    pub beta_nom: f64,
    pub gamma_nom: f64,
    pub gamma_max: f64,
    pub eta: f64,
    pub i_max: f64,
    pub epsilon: f64,
    pub lambda: f64,
    pub x0: [f64; 3],
    pub delta: f64,
    pub horizon: f64,
    pub h: f64,
    pub termination_tol: f64,
    pub max_sim_days: f64,
    pub seed: u64,
    pub out_dir: String,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let p = ModelParams::baseline();
        ScenarioConfig {
            beta_min: p.beta_min,
            beta_nom: p.beta_nom,
            gamma_nom: p.gamma_nom,
            gamma_max: p.gamma_max,
            eta: p.eta,
            i_max: p.i_max,
            epsilon: p.epsilon,
            lambda: p.lambda,
            x0: [0.5, 0.18, 0.01],
            delta: 1.0,
            horizon: 20.0,
            h: 0.25,
            termination_tol: 1e-8,
            max_sim_days: 2500.0,
            seed: 0,
            out_dir: "out".to_string(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_file(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut cfg = ScenarioConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key = value", lineno + 1))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| format!("line {}: {e}", lineno + 1))?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let num = |v: &str| {
            v.parse::<f64>()
                .map_err(|_| format!("invalid number '{v}' for key '{key}'"))
        };
        match key {
            "beta_min" => self.beta_min = num(value)?,
            "beta_nom" => self.beta_nom = num(value)?,
            "gamma_nom" => self.gamma_nom = num(value)?,
            "gamma_max" => self.gamma_max = num(value)?,
            "eta" => self.eta = num(value)?,
            "i_max" => self.i_max = num(value)?,
            "epsilon" => self.epsilon = num(value)?,
            "lambda" => self.lambda = num(value)?,
            "x0" => self.x0 = parse_x0(value)?,
            "delta" => self.delta = num(value)?,
            "horizon" => self.horizon = num(value)?,
            "h" => self.h = num(value)?,
            "termination_tol" => self.termination_tol = num(value)?,
            "max_sim_days" => self.max_sim_days = num(value)?,
            "seed" => {
                self.seed = value
                    .parse()
                    .map_err(|_| format!("invalid seed '{value}'"))?
            }
            "out_dir" => self.out_dir = value.to_string(),
            _ => return Err(format!("unknown key '{key}'")),
        }
        Ok(())
    }

    pub fn params(&self) -> ModelParams {
        ModelParams {
            beta_min: self.beta_min,
            beta_nom: self.beta_nom,
            gamma_nom: self.gamma_nom,
            gamma_max: self.gamma_max,
            eta: self.eta,
            i_max: self.i_max,
            epsilon: self.epsilon,
            lambda: self.lambda,
        }
    }

    pub fn state0(&self) -> Result<State, seir_mpc_core::Error> {
        State::new(self.x0[0], self.x0[1], self.x0[2])
    }

    /// Number of control horizons in the prediction horizon; errors unless
    /// `horizon` is an integer multiple of `delta`.
    pub fn n_steps(&self) -> Result<usize, String> {
        let r = self.horizon / self.delta;
        if !(r > 0.5) || (r - r.round()).abs() > 1e-9 {
            return Err(format!(
                "horizon ({}) must be a positive integer multiple of delta ({})",
                self.horizon, self.delta
            ));
        }
        Ok(r.round() as usize)
    }

    pub fn mpc_config(&self) -> Result<MpcConfig, String> {
        let mut cfg = MpcConfig::new(self.params(), self.delta, self.n_steps()?, self.h);
        cfg.termination_tol = self.termination_tol;
        cfg.max_sim_days = self.max_sim_days;
        Ok(cfg)
    }

    /// Render in the same format `parse` accepts (round-trip identity).
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# effective configuration");
        let _ = writeln!(s, "beta_min = {}", self.beta_min);
        let _ = writeln!(s, "beta_nom = {}", self.beta_nom);
        let _ = writeln!(s, "gamma_nom = {}", self.gamma_nom);
        let _ = writeln!(s, "gamma_max = {}", self.gamma_max);
        let _ = writeln!(s, "eta = {}", self.eta);
        let _ = writeln!(s, "i_max = {}", self.i_max);
        let _ = writeln!(s, "epsilon = {}", self.epsilon);
        let _ = writeln!(s, "lambda = {}", self.lambda);
        let _ = writeln!(s, "x0 = {},{},{}", self.x0[0], self.x0[1], self.x0[2]);
        let _ = writeln!(s, "delta = {}", self.delta);
        let _ = writeln!(s, "horizon = {}", self.horizon);
        let _ = writeln!(s, "h = {}", self.h);
        let _ = writeln!(s, "termination_tol = {}", self.termination_tol);
        let _ = writeln!(s, "max_sim_days = {}", self.max_sim_days);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "out_dir = {}", self.out_dir);
        s
    }
}

pub fn parse_x0(value: &str) -> Result<[f64; 3], String> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("x0 must be three comma-separated numbers, got '{value}'"));
    }
    let mut out = [0.0; 3];
    for (o, p) in out.iter_mut().zip(&parts) {
        *o = p
            .parse()
            .map_err(|_| format!("invalid x0 component '{p}'"))?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut cfg = ScenarioConfig::default();
        cfg.lambda = 0.7;
        cfg.x0 = [0.3, 0.01, 0.002];
        cfg.seed = 42;
        let reparsed = ScenarioConfig::parse(&cfg.render()).unwrap();
        assert_eq!(cfg, reparsed);
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(ScenarioConfig::parse("lamda = 0.5").is_err());
    }

    #[test]
    fn comments_and_blanks_ignored() {
        let cfg = ScenarioConfig::parse("# comment\n\nlambda = 0.2 # trailing\n").unwrap();
        assert_eq!(cfg.lambda, 0.2);
    }

    #[test]
    fn horizon_must_divide() {
        let mut cfg = ScenarioConfig::default();
        cfg.horizon = 20.5;
        assert!(cfg.n_steps().is_err());
        cfg.horizon = 2.0;
        assert_eq!(cfg.n_steps().unwrap(), 2);
    }
}

//! Run configuration: file values overridden by command-line flags.

use std::fmt;

/// Effective parameters of one run. Defaults apply first, then the config
/// file, then flags.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub n_levels: usize,
    pub horizon: f64,
    pub chunks: usize,
    pub rtol: f64,
    pub atol: f64,
    pub trajectories: usize,
    pub master_seed: u64,
    /// Path of a tableau file, or none for the builtin default pair.
    pub tableau: Option<String>,
    pub renormalize: bool,
    pub out: Option<String>,
    /// Worker threads; 0 picks the runtime default. Never affects output
    /// values, only wall time.
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            n_levels: 11,
            horizon: 3.0,
            chunks: 64,
            rtol: 1e-8,
            atol: 1e-10,
            trajectories: 1000,
            master_seed: 7864531,
            tableau: None,
            renormalize: false,
            out: None,
            workers: 0,
        }
    }
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl RunConfig {
    /// Applies `key=value` lines; `#` starts a comment.
    pub fn apply_file(&mut self, text: &str, path: &str) -> Result<(), ConfigError> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                ConfigError(format!("{path}:{}: expected key=value, got '{line}'", idx + 1))
            })?;
            self.set(key.trim(), value.trim())
                .map_err(|e| ConfigError(format!("{path}:{}: {}", idx + 1, e.0)))?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
        where
            T::Err: fmt::Display,
        {
            value
                .parse()
                .map_err(|e| ConfigError(format!("invalid value '{value}' for {key}: {e}")))
        }
        match key {
            "n_levels" => self.n_levels = parse(key, value)?,
            "T" | "horizon" => self.horizon = parse(key, value)?,
            "chunks" => self.chunks = parse(key, value)?,
            "rtol" => self.rtol = parse(key, value)?,
            "atol" => self.atol = parse(key, value)?,
            "trajectories" => self.trajectories = parse(key, value)?,
            "master_seed" => self.master_seed = parse(key, value)?,
            "tableau" => self.tableau = Some(value.to_string()),
            "renormalize" => self.renormalize = parse(key, value)?,
            "workers" => self.workers = parse(key, value)?,
            other => return Err(ConfigError(format!("unknown configuration key '{other}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_levels < 2 {
            return Err(ConfigError(format!("n_levels must be at least 2, got {}", self.n_levels)));
        }
        if !(self.horizon > 0.0) {
            return Err(ConfigError(format!("horizon must be positive, got {}", self.horizon)));
        }
        if self.chunks == 0 {
            return Err(ConfigError("chunks must be positive".into()));
        }
        if self.trajectories == 0 {
            return Err(ConfigError("trajectories must be positive".into()));
        }
        if !(self.rtol >= 0.0 && self.atol >= 0.0 && self.rtol + self.atol > 0.0) {
            return Err(ConfigError(format!(
                "tolerances must satisfy rtol >= 0, atol >= 0, rtol + atol > 0; got {} and {}",
                self.rtol, self.atol
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_values_then_flag_overrides() {
        let mut cfg = RunConfig::default();
        cfg.apply_file("n_levels=7\nT=2.5\nrenormalize=true\n# comment\n", "test").unwrap();
        assert_eq!(cfg.n_levels, 7);
        assert_eq!(cfg.horizon, 2.5);
        assert!(cfg.renormalize);
        cfg.set("n_levels", "9").unwrap();
        assert_eq!(cfg.n_levels, 9);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let mut cfg = RunConfig::default();
        assert!(cfg.apply_file("bogus=1\n", "test").is_err());
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut cfg = RunConfig::default();
        cfg.n_levels = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.rtol = 0.0;
        cfg.atol = 0.0;
        assert!(cfg.validate().is_err());
    }
}

//! Field configuration files (TOML).
//!
//! ```toml
//! N = 3
//! R = 1.0
//! family = "gilbarg_serrin"
//! gamma = "0"
//! beta = "0"
//! sigma = 0.0
//! K = "1"
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fields::{CoefficientField, Potential};
use crate::profile::{ProfileError, RadialProfile};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}:{line}:{column}: {message}")]
    Parse { path: String, line: usize, column: usize, message: String },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    #[serde(rename = "N")]
    pub dim: usize,
    #[serde(rename = "R")]
    pub radius: f64,
    pub family: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    pub potential: Option<String>,
}

/// 1-based line and column of a byte offset.
pub fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

pub(crate) fn parse_toml<T: for<'de> Deserialize<'de>>(text: &str, path: &str) -> Result<T, ConfigError> {
    toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((1, 1), |s| line_column(text, s.start));
        ConfigError::Parse { path: path.to_string(), line, column, message: e.message().to_string() }
    })
}

impl FieldConfig {
    pub fn parse(text: &str, path: &str) -> Result<Self, ConfigError> {
        let cfg: FieldConfig = parse_toml(text, path)?;
        cfg.build(path)?;
        Ok(cfg)
    }

    pub fn load(path: &str) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_string(), source })?;
        Self::parse(&text, path)
    }

    pub fn build(&self, path: &str) -> Result<CoefficientField, ConfigError> {
        let invalid = |message: String| ConfigError::Invalid { path: path.to_string(), message };
        let profile = |key: &str, text: &str| -> Result<RadialProfile, ConfigError> {
            RadialProfile::parse(self.radius, text).map_err(|e: ProfileError| invalid(format!("{key}: {e}")))
        };
        if self.dim < 1 {
            return Err(invalid("N must be at least 1".into()));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(invalid(format!("R must be positive, got {}", self.radius)));
        }
        let k_profile = match &self.potential {
            Some(t) => profile("K", t)?,
            None => RadialProfile::constant(self.radius, 1.0),
        };
        let potential = match self.sigma {
            Some(s) if s.is_finite() && s >= 0.0 => Potential::PowerLaw { sigma: s, prefactor: k_profile },
            Some(s) => return Err(invalid(format!("sigma must be finite and >= 0, got {s}"))),
            None => Potential::Bounded { profile: k_profile },
        };
        let field = match self.family.as_str() {
            "gilbarg_serrin" => {
                if self.k.is_some() {
                    return Err(invalid("key `k` only applies to family diagonal_power".into()));
                }
                let gamma = profile("gamma", self.gamma.as_deref().unwrap_or("0"))?;
                let beta = profile("beta", self.beta.as_deref().unwrap_or("0"))?;
                CoefficientField::gilbarg_serrin(self.dim, self.radius, gamma, beta, potential)
            }
            "diagonal_power" => {
                if self.gamma.is_some() || self.beta.is_some() {
                    return Err(invalid("keys `gamma`/`beta` only apply to family gilbarg_serrin".into()));
                }
                let k = self.k.ok_or_else(|| invalid("family diagonal_power needs `k`".into()))?;
                CoefficientField::diagonal_power(self.dim, self.radius, k, potential)
            }
            "general" => {
                return Err(invalid("family general takes matrix-valued callbacks and is only available through the library API".into()))
            }
            other => return Err(invalid(format!("unknown family `{other}` (expected gilbarg_serrin or diagonal_power)"))),
        };
        Ok(field)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma.unwrap_or(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn laplacian_config() {
        let c = FieldConfig::parse("N = 3\nR = 1.0\nfamily = \"gilbarg_serrin\"\n", "lap.toml").unwrap();
        let f = c.build("lap.toml").unwrap();
        assert_eq!(f.dim, 3);
        assert!((f.psi_closed_form(0.3).unwrap() - 3.0).abs() < 1e-15);
    }

    #[test]
    fn unknown_key_has_position() {
        let err = FieldConfig::parse("N = 3\nR = 1.0\nfamily = \"gilbarg_serrin\"\ngama = \"1\"\n", "x.toml").unwrap_err();
        match err {
            ConfigError::Parse { line, column, message, .. } => {
                assert_eq!((line, column), (4, 1));
                assert!(message.contains("gama"), "{message}");
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn bad_expression_and_family() {
        let err = FieldConfig::parse("N = 3\nR = 1.0\nfamily = \"gilbarg_serrin\"\ngamma = \"r +\"\n", "x.toml").unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { .. }));
        let err = FieldConfig::parse("N = 3\nR = 1.0\nfamily = \"general\"\n", "x.toml").unwrap_err();
        assert!(err.to_string().contains("general"));
        let err = FieldConfig::parse("N = 3\nR = 1.0\nfamily = \"diagonal_power\"\n", "x.toml").unwrap_err();
        assert!(err.to_string().contains("needs `k`"));
    }

    #[test]
    fn line_column_counts_chars() {
        assert_eq!(line_column("ab\ncd", 4), (2, 2));
        assert_eq!(line_column("", 0), (1, 1));
    }
}

//! The `--generator` mini-language.

use std::time::Duration;

use remia_core::generators::{ExternalAdapter, GeneratorSpec};
use remia_core::Table;

#[derive(Debug, Clone, PartialEq)]
pub enum GeneratorFlag {
    IndependentMarginals,
    Identity,
    Leaky { p: f64 },
    Anonymizer { alpha: f64 },
    Exec { template: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Leaky,
    Anonymizer,
}

fn parse_param(rest: &str, key: &str, flag: &str) -> Result<f64, String> {
    let value = rest
        .strip_prefix(key)
        .and_then(|r| r.strip_prefix('='))
        .ok_or_else(|| format!("generator '{flag}': expected {key}=<value>"))?;
    let v: f64 = value
        .parse()
        .map_err(|_| format!("generator '{flag}': '{value}' is not a number"))?;
    if !(0.0..=1.0).contains(&v) {
        return Err(format!("generator '{flag}': {key}={v} outside [0, 1]"));
    }
    Ok(v)
}

impl GeneratorFlag {
    pub fn parse(flag: &str) -> Result<Self, String> {
        if let Some(template) = flag.strip_prefix("exec:") {
            if !template.contains("{out}") {
                return Err("exec template must contain the {out} placeholder".into());
            }
            return Ok(GeneratorFlag::Exec {
                template: template.to_string(),
            });
        }
        match flag {
            "builtin:independent_marginals" => return Ok(GeneratorFlag::IndependentMarginals),
            "builtin:identity" => return Ok(GeneratorFlag::Identity),
            _ => {}
        }
        if let Some(rest) = flag.strip_prefix("risk:leaky:") {
            return Ok(GeneratorFlag::Leaky {
                p: parse_param(rest, "p", flag)?,
            });
        }
        if let Some(rest) = flag.strip_prefix("risk:anonymizer:") {
            return Ok(GeneratorFlag::Anonymizer {
                alpha: parse_param(rest, "alpha", flag)?,
            });
        }
        Err(format!(
            "unknown generator '{flag}' (builtin:independent_marginals, builtin:identity, \
             risk:leaky:p=<v>, risk:anonymizer:alpha=<v>, exec:<template>)"
        ))
    }

    pub fn needs_pool(&self) -> bool {
        matches!(self, GeneratorFlag::Leaky { .. })
    }

    pub fn resolve(&self, pool: Option<&Table>, timeout: Duration) -> Result<GeneratorSpec, String> {
        let spec = match self {
            GeneratorFlag::IndependentMarginals => GeneratorSpec::IndependentMarginals,
            GeneratorFlag::Identity => GeneratorSpec::Identity,
            GeneratorFlag::Leaky { p } => {
                let pool = pool.ok_or("the leaky model needs a control pool")?;
                GeneratorSpec::leaky(*p, pool.clone()).map_err(|e| e.to_string())?
            }
            GeneratorFlag::Anonymizer { alpha } => GeneratorSpec::anonymizer(*alpha).map_err(|e| e.to_string())?,
            GeneratorFlag::Exec { template } => {
                GeneratorSpec::external(ExternalAdapter::new(template.clone()).with_timeout(timeout))
                    .map_err(|e| e.to_string())?
            }
        };
        Ok(spec)
    }
}

impl Family {
    /// Accepts `risk:leaky` / `risk:anonymizer`, with or without a parameter.
    pub fn parse(flag: &str) -> Result<Self, String> {
        if flag == "risk:leaky" || flag.starts_with("risk:leaky:") {
            Ok(Family::Leaky)
        } else if flag == "risk:anonymizer" || flag.starts_with("risk:anonymizer:") {
            Ok(Family::Anonymizer)
        } else {
            Err(format!("sweeps need a risk-model family (risk:leaky or risk:anonymizer), got '{flag}'"))
        }
    }

    pub fn at(self, value: f64) -> String {
        match self {
            Family::Leaky => format!("risk:leaky:p={value}"),
            Family::Anonymizer => format!("risk:anonymizer:alpha={value}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_form() {
        assert_eq!(GeneratorFlag::parse("builtin:identity").unwrap(), GeneratorFlag::Identity);
        assert_eq!(GeneratorFlag::parse("risk:leaky:p=0.25").unwrap(), GeneratorFlag::Leaky { p: 0.25 });
        assert_eq!(
            GeneratorFlag::parse("risk:anonymizer:alpha=1").unwrap(),
            GeneratorFlag::Anonymizer { alpha: 1.0 }
        );
        assert_eq!(
            GeneratorFlag::parse("exec:gen --out {out}").unwrap(),
            GeneratorFlag::Exec { template: "gen --out {out}".into() }
        );
    }

    #[test]
    fn rejects_malformed_flags() {
        for bad in ["builtin:gan", "risk:leaky:p=1.5", "risk:leaky:q=0.5", "risk:anonymizer:alpha=x", "exec:gen", "leaky"] {
            assert!(GeneratorFlag::parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn families_round_trip() {
        assert_eq!(Family::parse("risk:leaky").unwrap(), Family::Leaky);
        assert_eq!(Family::parse("risk:anonymizer:alpha=0.3").unwrap(), Family::Anonymizer);
        assert!(Family::parse("builtin:identity").is_err());
        let f = GeneratorFlag::parse(&Family::Leaky.at(0.75)).unwrap();
        assert_eq!(f, GeneratorFlag::Leaky { p: 0.75 });
    }
}

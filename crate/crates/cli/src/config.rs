use std::path::{Path, PathBuf};

use nonstat::bridging::{Policy, TargetSpec};
use nonstat::exact::parse_rat;
use nonstat::{Map, MapDoc, Rational};
use serde::Deserialize;

use crate::CliError;

pub const M_MAX_LIMIT: u32 = 100_000;
pub const SEED_LIMIT: u64 = 10_000;
pub const STEP_LIMIT: u64 = 100_000_000;
pub const BUDGET_LIMIT: usize = 10_000_000;

/// A builder name (`example`, `thaler:D:KAPPA`) or an inline map document.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum MapSource {
    Name(String),
    Doc(MapDoc),
}

/// Experiment settings read from `--config`; command-line flags take precedence.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub map: Option<MapSource>,
    pub m_max: Option<u32>,
    /// `"a,b,c"` for a point, vertices joined by `;` for a polyline.
    pub target: Option<String>,
    pub epsilon: Option<String>,
    pub eps0: Option<String>,
    pub levels: Option<usize>,
    pub depths: Option<Vec<usize>>,
    pub budget: Option<usize>,
    pub seeds: Option<u64>,
    pub seed: Option<u64>,
    pub steps: Option<u64>,
    pub k_cap: Option<u64>,
    pub policy: Option<String>,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
    }

    /// Fills every unset field from `o`.
    pub fn or(self, o: ExperimentConfig) -> Self {
        ExperimentConfig {
            map: self.map.or(o.map),
            m_max: self.m_max.or(o.m_max),
            target: self.target.or(o.target),
            epsilon: self.epsilon.or(o.epsilon),
            eps0: self.eps0.or(o.eps0),
            levels: self.levels.or(o.levels),
            depths: self.depths.or(o.depths),
            budget: self.budget.or(o.budget),
            seeds: self.seeds.or(o.seeds),
            seed: self.seed.or(o.seed),
            steps: self.steps.or(o.steps),
            k_cap: self.k_cap.or(o.k_cap),
            policy: self.policy.or(o.policy),
            out: self.out.or(o.out),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Input(m));
        if let Some(m) = self.m_max {
            if m == 0 || m > M_MAX_LIMIT {
                return bad(format!("m_max = {m} outside 1..={M_MAX_LIMIT}"));
            }
        }
        if let Some(l) = self.levels {
            if !(2..=8).contains(&l) {
                return bad(format!("levels = {l} outside 2..=8"));
            }
        }
        if let Some(ds) = &self.depths {
            if ds.is_empty() || ds.iter().any(|&n| n == 0 || n > 8) {
                return bad(format!("depths {ds:?} must be nonempty and within 1..=8"));
            }
        }
        if let Some(b) = self.budget {
            if b == 0 || b > BUDGET_LIMIT {
                return bad(format!("budget = {b} outside 1..={BUDGET_LIMIT}"));
            }
        }
        if let Some(s) = self.seeds {
            if s == 0 || s > SEED_LIMIT {
                return bad(format!("seeds = {s} outside 1..={SEED_LIMIT}"));
            }
        }
        if let Some(n) = self.steps {
            if n == 0 || n > STEP_LIMIT {
                return bad(format!("steps = {n} outside 1..={STEP_LIMIT}"));
            }
        }
        if self.k_cap == Some(0) {
            return bad("k_cap must be positive".into());
        }
        for (name, v) in [("epsilon", &self.epsilon), ("eps0", &self.eps0)] {
            if let Some(s) = v {
                let r = parse_rat(s)?;
                if r <= Rational::from_integer(0.into()) || r > Rational::from_integer(1.into()) {
                    return bad(format!("{name} = {s} outside (0, 1]"));
                }
            }
        }
        if let Some(p) = &self.policy {
            p.parse::<Policy>()?;
        }
        Ok(())
    }

    pub fn map(&self) -> Result<Map, CliError> {
        match &self.map {
            None => Ok(Map::example()),
            Some(MapSource::Doc(doc)) => Ok(Map::from_doc(doc)?),
            Some(MapSource::Name(name)) => parse_map(name),
        }
    }

    pub fn m_max(&self, default: u32) -> u32 {
        self.m_max.unwrap_or(default)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn target(&self) -> Result<TargetSpec, CliError> {
        let s = self
            .target
            .as_deref()
            .ok_or_else(|| CliError::Input("a target is required".into()))?;
        Ok(parse_target(s)?)
    }

    pub fn epsilon(&self, default: &str) -> Result<Rational, CliError> {
        Ok(parse_rat(self.epsilon.as_deref().unwrap_or(default))?)
    }

    pub fn policy(&self) -> Result<Policy, CliError> {
        Ok(self.policy.as_deref().unwrap_or("lex-least").parse()?)
    }

    pub fn out(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }
}

pub fn parse_target(s: &str) -> nonstat::Result<TargetSpec> {
    if s.contains(';') {
        TargetSpec::parse_polyline(s)
    } else {
        TargetSpec::parse_point(s)
    }
}

/// `example`, `thaler:D:KAPPA`, or a path to a map document.
pub fn parse_map(s: &str) -> Result<Map, CliError> {
    if s == "example" {
        return Ok(Map::example());
    }
    if let Some(rest) = s.strip_prefix("thaler:") {
        let (d, kappa) = rest
            .split_once(':')
            .ok_or_else(|| CliError::Input(format!("expected thaler:D:KAPPA, got {s:?}")))?;
        let d: usize = d.parse().map_err(|_| CliError::Input(format!("bad d in {s:?}")))?;
        let kappa: f64 = kappa
            .parse()
            .map_err(|_| CliError::Input(format!("bad kappa in {s:?}")))?;
        return Ok(Map::thaler(d, kappa)?);
    }
    let text = std::fs::read_to_string(s).map_err(|e| CliError::Input(format!("map {s:?}: {e}")))?;
    let doc: MapDoc = serde_json::from_str(&text).map_err(|e| CliError::Input(format!("map {s:?}: {e}")))?;
    Ok(Map::from_doc(&doc)?)
}

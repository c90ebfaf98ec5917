//! JSON sweep configuration: parsing, default resolution, and digests.
//!
//! A config document is either one sweep object or an array of them. Keys
//! match the CSV coordinate columns; every axis key accepts a scalar or a
//! list. Omitted keys take the defaults of the sweep kind.
//!
//! ```json
//! {"kind": "granularity", "K": [1, 2, 5], "agents": ["small", "large"], "seed": 7}
//! ```

use std::collections::BTreeSet;
use std::fmt::Display;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::GuidancePolicy;
use crate::error::{Error, Result};
use crate::sweeps::{NamedPool, SweepKind, SweepSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    fn into_vec(self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v],
            OneOrMany::Many(v) => v,
        }
    }

    fn from_vec(mut v: Vec<T>, swept: bool) -> Self {
        if !swept && v.len() == 1 {
            OneOrMany::One(v.remove(0))
        } else {
            OneOrMany::Many(v)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AgentRef {
    Builtin(String),
    Inline(NamedPool),
}

/// One sweep as written in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub kind: SweepKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub episodes: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agents: Option<OneOrMany<AgentRef>>,
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    pub stages: Option<OneOrMany<i64>>,
    #[serde(rename = "epsilon", default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<OneOrMany<i64>>,
    #[serde(rename = "R", default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<OneOrMany<u32>>,
    #[serde(rename = "N", default, skip_serializing_if = "Option::is_none")]
    pub pool_size: Option<OneOrMany<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<OneOrMany<GuidancePolicy>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chunk: Option<OneOrMany<i64>>,
    #[serde(rename = "r", default, skip_serializing_if = "Option::is_none")]
    pub scaffolds: Option<OneOrMany<i64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub removed: Option<OneOrMany<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_episode: Option<bool>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Document {
    Many(Vec<serde_json::Value>),
    One(serde_json::Value),
}

fn config_err(path: impl Into<String>, message: impl Display) -> Error {
    Error::Config {
        path: path.into(),
        message: message.to_string(),
    }
}

fn join(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

fn check_axis<T: Copy + Ord + Display>(prefix: &str, key: &str, values: &[T], min: T) -> Result<()> {
    if values.is_empty() {
        return Err(config_err(join(prefix, key), "must not be empty"));
    }
    let mut seen = BTreeSet::new();
    for (i, v) in values.iter().enumerate() {
        let path = format!("{}[{i}]", join(prefix, key));
        if *v < min {
            return Err(config_err(path, format!("must be >= {min}, got {v}")));
        }
        if !seen.insert(*v) {
            return Err(config_err(path, format!("duplicate value {v}")));
        }
    }
    Ok(())
}

impl SweepConfig {
    /// Fills defaults and validates value domains; `prefix` qualifies error paths.
    pub fn resolve(self, prefix: &str) -> Result<SweepSpec> {
        let mut spec = SweepSpec::defaults(self.kind);
        if let Some(name) = self.name {
            spec.name = name;
        }
        if let Some(total) = self.total {
            if total < 1 {
                return Err(config_err(join(prefix, "total"), format!("must be >= 1, got {total}")));
            }
            spec.total = total;
        }
        if let Some(episodes) = self.episodes {
            if episodes < 1 {
                return Err(config_err(join(prefix, "episodes"), "must be >= 1"));
            }
            spec.episodes = episodes;
        }
        if let Some(seed) = self.seed {
            spec.master_seed = seed;
        }
        if let Some(alpha) = self.alpha {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(config_err(join(prefix, "alpha"), format!("must lie in (0, 1), got {alpha}")));
            }
            spec.alpha = alpha;
        }
        if let Some(p) = self.per_episode {
            spec.per_episode = p;
        }
        if let Some(agents) = self.agents {
            let list = agents.into_vec();
            if list.is_empty() {
                return Err(config_err(join(prefix, "agents"), "must not be empty"));
            }
            let mut resolved = Vec::with_capacity(list.len());
            let mut names = BTreeSet::new();
            for (i, a) in list.into_iter().enumerate() {
                let path = format!("{}[{i}]", join(prefix, "agents"));
                let named = match a {
                    AgentRef::Builtin(name) => NamedPool::builtin(&name).ok_or_else(|| {
                        config_err(&path, format!("unknown agent '{name}' (small, medium, large, pruning, linear)"))
                    })?,
                    AgentRef::Inline(p) => p,
                };
                if named.name.is_empty() || named.name.contains([',', '"', '\n', '/', '\\']) {
                    return Err(config_err(&path, "agent name must be non-empty without commas, quotes, slashes, or newlines"));
                }
                if !names.insert(named.name.clone()) {
                    return Err(config_err(&path, format!("duplicate agent name '{}'", named.name)));
                }
                resolved.push(named);
            }
            spec.agents = resolved;
        }
        if let Some(v) = self.stages {
            spec.stages = v.into_vec();
        }
        if let Some(v) = self.tolerance {
            spec.tolerances = v.into_vec();
        }
        if let Some(v) = self.budget {
            spec.budgets = v.into_vec();
        }
        if let Some(v) = self.pool_size {
            spec.pool_sizes = v.into_vec();
        }
        if let Some(v) = self.policy {
            spec.policies = v.into_vec();
        }
        if let Some(v) = self.chunk {
            spec.chunks = v.into_vec();
        }
        if let Some(v) = self.scaffolds {
            spec.scaffolds = v.into_vec();
        }
        if let Some(v) = self.removed {
            spec.removals = v.into_vec();
        }
        check_axis(prefix, "K", &spec.stages, 1)?;
        check_axis(prefix, "epsilon", &spec.tolerances, 0)?;
        check_axis(prefix, "R", &spec.budgets, 1)?;
        check_axis(prefix, "N", &spec.pool_sizes, 1)?;
        check_axis(prefix, "policy", &spec.policies, GuidancePolicy::Aligned)?;
        check_axis(prefix, "chunk", &spec.chunks, 1)?;
        check_axis(prefix, "r", &spec.scaffolds, 0)?;
        check_axis(prefix, "removed", &spec.removals, 0)?;
        spec.validate().map_err(|e| config_err(if prefix.is_empty() { "$" } else { prefix }, e))?;
        Ok(spec)
    }

    /// Fully explicit config that resolves back to `spec`.
    pub fn from_spec(spec: &SweepSpec) -> Self {
        use crate::sweeps::Axis;
        let swept = |a: Axis| spec.kind.axes().contains(&a);
        SweepConfig {
            kind: spec.kind,
            name: Some(spec.name.clone()),
            total: Some(spec.total),
            episodes: Some(spec.episodes),
            seed: Some(spec.master_seed),
            agents: Some(OneOrMany::Many(spec.agents.iter().cloned().map(AgentRef::Inline).collect())),
            stages: Some(OneOrMany::from_vec(spec.stages.clone(), swept(Axis::Stages))),
            tolerance: Some(OneOrMany::from_vec(spec.tolerances.clone(), swept(Axis::Tolerance))),
            budget: Some(OneOrMany::from_vec(spec.budgets.clone(), swept(Axis::Budget))),
            pool_size: Some(OneOrMany::from_vec(spec.pool_sizes.clone(), swept(Axis::PoolSize))),
            policy: Some(OneOrMany::from_vec(spec.policies.clone(), swept(Axis::Policy))),
            chunk: Some(OneOrMany::from_vec(spec.chunks.clone(), swept(Axis::Chunk))),
            scaffolds: Some(OneOrMany::from_vec(spec.scaffolds.clone(), swept(Axis::Scaffolds))),
            removed: Some(OneOrMany::from_vec(spec.removals.clone(), swept(Axis::Removed))),
            alpha: Some(spec.alpha),
            per_episode: Some(spec.per_episode),
        }
    }
}

fn parse_entry(value: serde_json::Value, prefix: &str) -> Result<SweepSpec> {
    let raw: SweepConfig = serde_path_to_error::deserialize(value).map_err(|e| {
        let inner = e.path().to_string();
        let path = match (prefix.is_empty(), inner.as_str()) {
            (true, ".") => "$".to_string(),
            (true, _) => inner,
            (false, ".") => prefix.to_string(),
            (false, _) => format!("{prefix}.{inner}"),
        };
        config_err(path, e.into_inner())
    })?;
    raw.resolve(prefix)
}

/// Parses and resolves a config document.
pub fn parse_config(text: &str) -> Result<Vec<SweepSpec>> {
    let doc: Document = serde_json::from_str(text).map_err(|e| config_err("$", e))?;
    let specs = match doc {
        Document::One(v) => vec![parse_entry(v, "")?],
        Document::Many(vs) => {
            if vs.is_empty() {
                return Err(config_err("$", "config lists no sweeps"));
            }
            vs.into_iter()
                .enumerate()
                .map(|(i, v)| parse_entry(v, &format!("[{i}]")))
                .collect::<Result<Vec<_>>>()?
        }
    };
    let mut names = BTreeSet::new();
    for (i, s) in specs.iter().enumerate() {
        if !names.insert(s.name.as_str()) {
            return Err(config_err(format!("[{i}].name"), format!("duplicate sweep name '{}'", s.name)));
        }
    }
    Ok(specs)
}

pub fn load_config(path: &Path) -> Result<Vec<SweepSpec>> {
    let text = std::fs::read_to_string(path).map_err(|e| config_err(path.display().to_string(), e))?;
    parse_config(&text)
}

/// Canonical JSON of the resolved config; object keys are sorted.
pub fn resolved_json(specs: &[SweepSpec]) -> serde_json::Value {
    let list: Vec<SweepConfig> = specs.iter().map(SweepConfig::from_spec).collect();
    serde_json::to_value(list).expect("config serializes")
}

/// SHA-256 of the canonical resolved config, hex encoded.
pub fn config_digest(specs: &[SweepSpec]) -> String {
    let canonical = serde_json::to_string(&resolved_json(specs)).expect("config serializes");
    Sha256::digest(canonical.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sweeps::GRANULARITY_STAGES;

    #[test]
    fn minimal_granularity_resolves_defaults() {
        let specs = parse_config(r#"{"kind":"granularity"}"#).unwrap();
        let s = &specs[0];
        assert_eq!(s.total, 100);
        assert_eq!(s.tolerances, [2]);
        assert_eq!(s.budgets, [4]);
        assert_eq!(s.stages, GRANULARITY_STAGES);
        let names: Vec<_> = s.agents.iter().map(|a| a.name.as_str()).collect();
        assert_eq!(names, ["small", "medium", "large"]);
    }

    #[test]
    fn zero_stage_count_names_path() {
        let err = parse_config(r#"{"kind":"granularity","K":0}"#).unwrap_err();
        assert!(matches!(&err, Error::Config { path, .. } if path == "K[0]"), "{err}");
        let err = parse_config(r#"[{"kind":"tolerance"},{"kind":"granularity","K":[3,0]}]"#).unwrap_err();
        assert!(matches!(&err, Error::Config { path, .. } if path == "[1].K[1]"), "{err}");
    }

    #[test]
    fn unknown_keys_rejected_with_path() {
        let err = parse_config(r#"{"kind":"granularity","stages":[1]}"#).unwrap_err();
        assert!(err.to_string().contains("stages"), "{err}");
        let err = parse_config(r#"{"kind":"granularity","agents":[{"name":"x","pool":[{"mu":1,"sigma":1,"lower":1,"upper":2,"extra":0}]}]}"#)
            .unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
    }

    #[test]
    fn unknown_agent_and_bad_kind() {
        let err = parse_config(r#"{"kind":"granularity","agents":["huge"]}"#).unwrap_err();
        assert!(matches!(&err, Error::Config { path, .. } if path == "agents[0]"), "{err}");
        assert!(parse_config(r#"{"kind":"nope"}"#).is_err());
        assert!(parse_config("[]").is_err());
        assert!(parse_config("{not json").is_err());
    }

    #[test]
    fn non_swept_axis_must_be_scalar() {
        assert!(parse_config(r#"{"kind":"granularity","R":[3,4]}"#).is_err());
        assert!(parse_config(r#"{"kind":"retry_budget","R":[3,4]}"#).is_ok());
    }

    #[test]
    fn digest_ignores_key_order() {
        let a = parse_config(r#"{"kind":"tolerance","epsilon":[0,1,2],"R":3,"seed":5}"#).unwrap();
        let b = parse_config(r#"{"seed":5,"R":3,"epsilon":[0,1,2],"kind":"tolerance"}"#).unwrap();
        assert_eq!(config_digest(&a), config_digest(&b));
        let c = parse_config(r#"{"seed":6,"R":3,"epsilon":[0,1,2],"kind":"tolerance"}"#).unwrap();
        assert_ne!(config_digest(&a), config_digest(&c));
    }

    #[test]
    fn resolved_config_round_trips() {
        for kind in SweepKind::ALL {
            let spec = SweepSpec::defaults(kind);
            let text = serde_json::to_string(&resolved_json(std::slice::from_ref(&spec))).unwrap();
            assert_eq!(parse_config(&text).unwrap(), vec![spec]);
        }
    }

    #[test]
    fn inline_agents() {
        let specs = parse_config(
            r#"{"kind":"granularity","agents":[{"name":"tiny","pool":[{"mu":3,"sigma":1,"lower":1,"upper":5}]},"small"]}"#,
        )
        .unwrap();
        assert_eq!(specs[0].agents[0].name, "tiny");
        assert_eq!(specs[0].agents[1].name, "small");
    }
}

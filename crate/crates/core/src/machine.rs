//! Static machine descriptions and the machine fixture file.
//!
//! A fixture is a TOML file holding one `[[machine]]` table per machine:
//!
//! ```toml
//! [[machine]]
//! id = "desktop"
//! name = "Desktop"
//! cores_per_node = 16
//! node_count = 1
//! tdp_watts = 65.0
//! idle_watts = 6.51
//! peak_perf_per_core = 2.9
//! year_deployed = 2022
//! embodied_carbon_g = 445300.0
//! region_id = "desktop-grid"
//! pue = 1.0
//! ```

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MachineError {
    #[error("machine `{id}`: {reason}")]
    Invalid { id: String, reason: String },
    #[error("duplicate machine id `{0}`")]
    Duplicate(String),
    #[error("machine fixture is empty")]
    Empty,
    #[error("reading machine fixture {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing machine fixture {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: toml::de::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MachineId(pub String);

impl MachineId {
    pub fn new(id: impl Into<String>) -> Self {
        MachineId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for MachineId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for MachineId {
    fn from(s: &str) -> Self {
        MachineId(s.to_string())
    }
}

fn default_pue() -> f64 {
    1.0
}

fn default_nodes() -> u32 {
    1
}

/// A compute resource. `tdp_watts` and `idle_watts` describe one whole node
/// (all sockets); `embodied_carbon_g` covers the whole machine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Machine {
    pub id: MachineId,
    pub name: String,
    pub cores_per_node: u32,
    #[serde(default = "default_nodes")]
    pub node_count: u32,
    pub tdp_watts: f64,
    pub idle_watts: f64,
    pub peak_perf_per_core: f64,
    pub year_deployed: i32,
    pub embodied_carbon_g: f64,
    pub region_id: String,
    #[serde(default = "default_pue")]
    pub pue: f64,
}

impl Machine {
    pub fn total_cores(&self) -> u64 {
        u64::from(self.cores_per_node) * u64::from(self.node_count)
    }

    pub fn fits(&self, cores: u32) -> bool {
        cores >= 1 && u64::from(cores) <= self.total_cores()
    }

    pub fn validate(&self) -> Result<(), MachineError> {
        let bad = |reason: &str| {
            Err(MachineError::Invalid {
                id: self.id.0.clone(),
                reason: reason.to_string(),
            })
        };
        if self.id.0.is_empty() {
            return bad("empty id");
        }
        if !(self.tdp_watts.is_finite() && self.tdp_watts > 0.0) {
            return bad("tdp_watts must be > 0");
        }
        if !(self.idle_watts.is_finite() && self.idle_watts >= 0.0) {
            return bad("idle_watts must be >= 0");
        }
        if self.cores_per_node < 1 {
            return bad("cores_per_node must be >= 1");
        }
        if self.node_count < 1 {
            return bad("node_count must be >= 1");
        }
        if !(self.pue.is_finite() && self.pue >= 1.0) {
            return bad("pue must be >= 1.0");
        }
        if !(self.embodied_carbon_g.is_finite() && self.embodied_carbon_g >= 0.0) {
            return bad("embodied_carbon_g must be >= 0");
        }
        if !(self.peak_perf_per_core.is_finite() && self.peak_perf_per_core >= 0.0) {
            return bad("peak_perf_per_core must be >= 0");
        }
        Ok(())
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MachineFile {
    #[serde(default)]
    machine: Vec<Machine>,
}

/// Parses and validates a machine fixture. Machine order is preserved.
pub fn parse_machines(text: &str, origin: &str) -> Result<Vec<Machine>, MachineError> {
    let file: MachineFile = toml::from_str(text).map_err(|source| MachineError::Parse {
        path: origin.to_string(),
        source,
    })?;
    validate_machines(&file.machine)?;
    Ok(file.machine)
}

pub fn load_machines(path: impl AsRef<Path>) -> Result<Vec<Machine>, MachineError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| MachineError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_machines(&text, &path.display().to_string())
}

pub fn validate_machines(machines: &[Machine]) -> Result<(), MachineError> {
    if machines.is_empty() {
        return Err(MachineError::Empty);
    }
    let mut seen = HashSet::new();
    for m in machines {
        m.validate()?;
        if !seen.insert(m.id.clone()) {
            return Err(MachineError::Duplicate(m.id.0.clone()));
        }
    }
    Ok(())
}

pub fn find<'a>(machines: &'a [Machine], id: &MachineId) -> Option<&'a Machine> {
    machines.iter().find(|m| &m.id == id)
}

#[cfg(test)]
pub(crate) fn test_machine(id: &str, cores: u32, tdp: f64) -> Machine {
    Machine {
        id: MachineId::new(id),
        name: id.to_string(),
        cores_per_node: cores,
        node_count: 1,
        tdp_watts: tdp,
        idle_watts: 0.0,
        peak_perf_per_core: 1.0,
        year_deployed: 2023,
        embodied_carbon_g: 0.0,
        region_id: "r".to_string(),
        pue: 1.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE: &str = r#"
[[machine]]
id = "a"
name = "A"
cores_per_node = 8
tdp_watts = 100.0
idle_watts = 10.0
peak_perf_per_core = 2.0
year_deployed = 2020
embodied_carbon_g = 1000.0
region_id = "r1"
"#;

    #[test]
    fn parses_with_defaults() {
        let ms = parse_machines(ONE, "inline").unwrap();
        assert_eq!(ms.len(), 1);
        assert_eq!(ms[0].pue, 1.0);
        assert_eq!(ms[0].node_count, 1);
        assert_eq!(ms[0].total_cores(), 8);
    }

    #[test]
    fn rejects_bad_values() {
        let bad = ONE.replace("tdp_watts = 100.0", "tdp_watts = 0.0");
        assert!(matches!(
            parse_machines(&bad, "x"),
            Err(MachineError::Invalid { .. })
        ));
        let bad = format!("{ONE}pue = 0.9\n");
        assert!(parse_machines(&bad, "x").is_err());
        let dup = format!("{ONE}{ONE}");
        assert!(matches!(
            parse_machines(&dup, "x"),
            Err(MachineError::Duplicate(_))
        ));
        assert!(matches!(parse_machines("", "x"), Err(MachineError::Empty)));
    }

    #[test]
    fn unknown_field_is_an_error() {
        let bad = format!("{ONE}gpu = true\n");
        assert!(matches!(
            parse_machines(&bad, "x"),
            Err(MachineError::Parse { .. })
        ));
    }
}

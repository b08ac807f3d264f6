//! Run configuration files.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::base::BaseSystemSpec;
use crate::error::{Error, Result};
use crate::estimation::{check_ladder, Bundle, CloudSpec, Settings};
use crate::fiber::{FiberSpaceSpec, DEFAULT_CLOUD_CAP};
use crate::measure::{FSettings, MeasureRep, PotentialFamily, SampleSettings};
use crate::optimize::SearchSettings;
use crate::rds::{Potential, PotentialSpec, RandomMapSpec, System};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Pressure curve only.
    Pressure,
    /// Fiber entropy (the potential is ignored).
    Entropy,
    /// Metric mean dimension with potential.
    Mdim,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedMeasure {
    pub name: String,
    pub measure: MeasureRep,
}

/// Settings of an `mmdim` run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MmdimConfig {
    pub measures: Vec<NamedMeasure>,
    pub family: PotentialFamily,
    pub m_samples: usize,
    #[serde(default)]
    pub sample_seed: u64,
    pub search: SearchSettings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default = "default_task")]
    pub task: Task,
    pub base: BaseSystemSpec,
    pub fiber: FiberSpaceSpec,
    pub map: RandomMapSpec,
    pub cloud: CloudSpec,
    #[serde(default)]
    pub window_margin: Option<usize>,
    #[serde(default = "default_cap")]
    pub cloud_cap: f64,
    #[serde(default = "zero_potential")]
    pub potential: PotentialSpec,
    pub epsilon_ladder: Vec<f64>,
    pub n_schedule: Vec<usize>,
    pub m_omega: usize,
    #[serde(default)]
    pub stream_offset: u64,
    /// Master seed; replaces `base.seed` when present.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Worker count; not part of the config hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mmdim: Option<MmdimConfig>,
}

fn default_name() -> String {
    "run".into()
}

fn default_task() -> Task {
    Task::Mdim
}

fn default_cap() -> f64 {
    DEFAULT_CLOUD_CAP
}

fn zero_potential() -> PotentialSpec {
    PotentialSpec::Zero
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: RunConfig = serde_json::from_str(text).map_err(|e| Error::validation("config", e.to_string()))?;
        Ok(c.normalized())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::validation("config", format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Folds `seed` into the base spec so the hash sees one master seed.
    pub fn normalized(mut self) -> Self {
        if let Some(s) = self.seed {
            self.base.seed = s;
        }
        self.seed = Some(self.base.seed);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self.normalized()
    }

    pub fn master_seed(&self) -> u64 {
        self.base.seed
    }

    pub fn bundle(&self) -> Bundle {
        Bundle {
            system: System {
                base: self.base.clone(),
                fiber: self.fiber,
                map: self.map.clone(),
            },
            cloud: self.cloud.clone(),
            window_margin: self.window_margin,
            cloud_cap: self.cloud_cap,
        }
    }

    pub fn settings(&self) -> Settings {
        Settings {
            eps_ladder: self.epsilon_ladder.clone(),
            n_schedule: self.n_schedule.clone(),
            m_omega: self.m_omega,
            stream_offset: self.stream_offset,
        }
    }

    pub fn potential(&self) -> Potential {
        match self.task {
            Task::Entropy => Potential::zero(),
            _ => Potential::Spec(self.potential.clone()),
        }
    }

    pub fn f_settings(&self) -> Option<FSettings> {
        self.mmdim.as_ref().map(|m| FSettings {
            estimation: self.settings(),
            samples: SampleSettings {
                m_samples: m.m_samples,
                seed: m.sample_seed,
            },
            search: m.search.clone(),
        })
    }

    /// Field-level validation of everything an `estimate` run needs.
    pub fn validate(&self) -> Result<()> {
        self.fiber.validate()?;
        self.base.validate()?;
        self.map.validate(&self.fiber)?;
        if self.epsilon_ladder.len() < 2 {
            return Err(Error::validation("epsilon_ladder", "needs at least 2 rungs"));
        }
        if self.task == Task::Mdim || self.mmdim.is_some() {
            check_ladder(&self.epsilon_ladder)?;
        }
        self.settings().validate()?;
        self.potential.validate(&self.fiber)?;
        if self.threads == Some(0) {
            return Err(Error::validation("threads", "must be positive"));
        }
        if let Some(m) = &self.mmdim {
            if m.measures.is_empty() {
                return Err(Error::validation("mmdim.measures", "need at least one measure"));
            }
            for nm in &m.measures {
                nm.measure.validate(&self.fiber)?;
            }
            m.family.validate(&self.fiber)?;
            if m.m_samples < 2 {
                return Err(Error::validation("mmdim.m_samples", "need at least 2 samples"));
            }
            if m.search.budget < 10 {
                return Err(Error::validation("mmdim.search.budget", "need at least 10 evaluations"));
            }
        }
        Ok(())
    }

    /// Canonical JSON: sorted keys, no whitespace, `threads` dropped.
    pub fn canonical_json(&self) -> String {
        let mut c = self.clone().normalized();
        c.threads = None;
        let v = serde_json::to_value(&c).expect("config serializes");
        serde_json::to_string(&v).expect("value serializes")
    }

    /// SHA-256 of the canonical JSON, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::registry::reference_config;

    #[test]
    fn hash_ignores_threads_and_key_order() {
        let mut a = reference_config("identity").unwrap();
        let h = a.hash();
        a.threads = Some(8);
        assert_eq!(a.hash(), h);
        let text = serde_json::to_string_pretty(&a).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let b = RunConfig::from_json(&v.to_string()).unwrap();
        assert_eq!(b.hash(), h);
        assert_ne!(a.clone().with_seed(99).hash(), h);
    }

    #[test]
    fn single_rung_ladder_is_rejected() {
        let mut c = reference_config("identity").unwrap();
        c.epsilon_ladder = vec![0.1];
        let e = c.validate().unwrap_err();
        assert!(e.to_string().contains("epsilon_ladder"), "{e}");
    }
}

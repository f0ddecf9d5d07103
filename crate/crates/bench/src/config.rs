//! Experiment configuration, loaded from TOML. Every section has defaults,
//! so an empty file is a valid desk-scale experiment.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use satmarl_core::dqn::AgentConfig;
use satmarl_core::graphstate::EncoderConfig;
use satmarl_core::llm::LlmEndpointConfig;
use satmarl_core::netsim::ScenarioConfig;
use satmarl_core::reward::RewardConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::BenchError;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    LlmMarl,
    RecurrentMarl,
    AcyclicMarl,
    Greedy,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::LlmMarl, Variant::RecurrentMarl, Variant::AcyclicMarl, Variant::Greedy];

    pub fn name(self) -> &'static str {
        match self {
            Variant::LlmMarl => "llm_marl",
            Variant::RecurrentMarl => "recurrent_marl",
            Variant::AcyclicMarl => "acyclic_marl",
            Variant::Greedy => "greedy",
        }
    }

    pub fn learns(self) -> bool {
        self != Variant::Greedy
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == norm || format!("{v:?}").to_ascii_lowercase() == norm)
            .ok_or_else(|| BenchError::ConfigInvalid(format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentSection {
    pub dqn: AgentConfig,
    pub reward: RewardConfig,
    pub encoder: EncoderConfig,
}

impl Default for AgentSection {
    fn default() -> Self {
        Self {
            dqn: AgentConfig { epsilon_decay_steps: 12_000, ..AgentConfig::default() },
            reward: RewardConfig::default(),
            encoder: EncoderConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSettings {
    pub slots_per_episode: u64,
    /// Agents act on slots that are multiples of this.
    pub decision_interval: u64,
    /// Learner updates after each decision slot.
    pub updates_per_decision: usize,
    /// Episodes between LLM feedback rounds (LLM variant only).
    pub feedback_every: u64,
    pub feedback_window: usize,
    /// Trailing episodes averaged into the reported final reward.
    pub final_window: usize,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            slots_per_episode: 200,
            decision_interval: 10,
            updates_per_decision: 1,
            feedback_every: 50,
            feedback_window: 20,
            final_window: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSection {
    /// Chat-completion endpoint; absent selects the offline stub.
    pub endpoint: Option<LlmEndpointConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub variant: Variant,
    pub episodes: u64,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub scenario: ScenarioConfig,
    pub agent: AgentSection,
    pub run: RunSettings,
    pub llm: LlmSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            variant: Variant::LlmMarl,
            episodes: 300,
            seed: 1,
            output_dir: PathBuf::from("runs"),
            scenario: ScenarioConfig::default(),
            agent: AgentSection::default(),
            run: RunSettings::default(),
            llm: LlmSection::default(),
        }
    }
}

fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, BenchError> {
        let config: Self = toml::from_str(text).map_err(|e| BenchError::ConfigInvalid(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BenchError::ConfigInvalid(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::ConfigInvalid(m));
        if self.version != CONFIG_VERSION {
            return bad(format!("config version {} is not supported (expected {CONFIG_VERSION})", self.version));
        }
        self.scenario.validate().map_err(|e| BenchError::ConfigInvalid(e.to_string()))?;
        self.agent.dqn.validate().map_err(|e| BenchError::ConfigInvalid(e.to_string()))?;
        self.agent.reward.validate().map_err(BenchError::ConfigInvalid)?;
        if self.agent.dqn.action_count != satmarl_core::dqn::DEFAULT_ACTIONS {
            return bad("action_count must be 21 (7 migration choices x 3 routing modes)".into());
        }
        if self.agent.encoder.hidden == 0 || self.agent.encoder.rounds == 0 {
            return bad("encoder hidden and rounds must be positive".into());
        }
        let r = &self.run;
        if r.slots_per_episode == 0 || r.decision_interval == 0 || r.final_window == 0 {
            return bad("slots_per_episode, decision_interval and final_window must be positive".into());
        }
        if r.feedback_every == 0 || r.feedback_window == 0 {
            return bad("feedback_every and feedback_window must be positive".into());
        }
        if let Some(ep) = &self.llm.endpoint {
            ep.validate().map_err(|e| BenchError::ConfigInvalid(e.to_string()))?;
        }
        Ok(())
    }

    /// Canonical JSON form without the output location; field order is
    /// fixed by the struct definitions.
    pub fn canonical(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        value.as_object_mut().expect("struct").remove("output_dir");
        value.to_string()
    }

    pub fn config_hash(&self) -> String {
        sha256_hex(&self.canonical())
    }

    /// Hash of everything that shapes the environment, excluding variant,
    /// seed, episode count and output location. Runs are comparable when
    /// their scenario hashes agree.
    pub fn scenario_hash(&self) -> String {
        let shared = serde_json::json!({
            "scenario": self.scenario,
            "reward": self.agent.reward,
            "slots_per_episode": self.run.slots_per_episode,
            "decision_interval": self.run.decision_interval,
            "final_window": self.run.final_window,
        });
        sha256_hex(&shared.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn toml_round_trip_preserves_hash() {
        let mut c = ExperimentConfig::default();
        c.variant = Variant::AcyclicMarl;
        c.llm.endpoint = Some(LlmEndpointConfig::default());
        let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.config_hash(), c.config_hash());
    }

    #[test]
    fn partial_sections_fill_defaults() {
        let c = ExperimentConfig::from_toml(
            "variant = \"greedy\"\nepisodes = 3\n[scenario.traffic]\np_req = 0.2\n[agent.dqn]\ngamma = 0.9\n",
        )
        .unwrap();
        assert_eq!(c.variant, Variant::Greedy);
        assert_eq!(c.scenario.traffic.p_req, 0.2);
        assert_eq!(c.scenario.traffic.deadline_slots, 50);
        assert_eq!(c.agent.dqn.gamma, 0.9);
        assert_eq!(c.agent.dqn.batch_size, 64);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ExperimentConfig::from_toml("bogus = 1").is_err());
        assert!(ExperimentConfig::from_toml("version = 7").is_err());
        assert!(ExperimentConfig::from_toml("[agent.dqn]\ngamma = 1.5").is_err());
        assert!(ExperimentConfig::from_toml("[agent.dqn]\naction_count = 5").is_err());
        assert!(ExperimentConfig::from_toml("[run]\ndecision_interval = 0").is_err());
        assert!(ExperimentConfig::from_toml("[scenario.traffic]\np_req = 2.0").is_err());
    }

    #[test]
    fn scenario_hash_ignores_variant_and_seed() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig { variant: Variant::Greedy, seed: 9, episodes: 3, ..a.clone() };
        assert_eq!(a.scenario_hash(), b.scenario_hash());
        assert_ne!(a.config_hash(), b.config_hash());
        let moved = ExperimentConfig { output_dir: "elsewhere".into(), ..a.clone() };
        assert_eq!(moved.config_hash(), a.config_hash());
        let mut c = a.clone();
        c.scenario.traffic.p_req = 0.3;
        assert_ne!(a.scenario_hash(), c.scenario_hash());
    }

    #[test]
    fn variant_names_parse() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert_eq!("LlmMarl".parse::<Variant>().unwrap(), Variant::LlmMarl);
        assert_eq!("recurrent-marl".parse::<Variant>().unwrap(), Variant::RecurrentMarl);
        assert!("dqn".parse::<Variant>().is_err());
    }
}

//! Seeded episode loop wiring the simulator, encoder, agents and LLM bridge
//! for one variant.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use satmarl_core::dqn::{DqnAgent, Transition};
use satmarl_core::graphstate::{
    feature_schema, init_encoder, FEATURE_DIM, message_pass, ObservationBundle, ObservationContext, MessageState, FeatureSchema,
};
use satmarl_core::llm::spec::{CompiledSpec, MAX_SPEC_FEATURES};
use satmarl_core::llm::{
    decode_action, encode_topology_update, feedback_iteration, guide_actions, render_prompt, request_representation,
    FeedbackReport, LiveClient, LlmClient, PromptTemplate, RepresentationSpec, StubClient,
};
use satmarl_core::neural::{save_checkpoint, Params};
use satmarl_core::netsim::{ActionSet, SatelliteAction, SimState, SlotMetrics};
use satmarl_core::reward::{combine, compute_reward, intrinsic_reward, RewardTerms};
use satmarl_core::rng::{derive_seed, labels, stream};
use satmarl_core::topology::{local_view, orbital_period, NodeId};

use crate::config::{ExperimentConfig, Variant};
use crate::greedy::greedy_policy;
use crate::manifest::{RunManifest, RunSummary, SpecEvent};
use crate::metrics::{MetricsRecord, MetricsWriter};
use crate::BenchError;

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.smck";

/// Directory of one (variant, seed) run under the configured output root.
pub fn run_dir(config: &ExperimentConfig) -> PathBuf {
    config.output_dir.join(format!("{}-seed{}", config.variant, config.seed))
}

/// Scenario seed and constellation phase of episode `e`. Depends only on the
/// master seed, so every variant sees the same episodes.
pub fn episode_start(config: &ExperimentConfig, episode: u64) -> (u64, u64) {
    let orbit = &config.scenario.orbit;
    let period_slots = ((orbital_period(orbit) / orbit.slot_seconds).floor() as u64).max(1);
    let offset = stream(config.seed, labels::EPISODE_START, episode).gen_range(0..period_slots);
    (derive_seed(config.seed, labels::EPISODE_START, episode), offset)
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Satellite-only neighbor summary of `sat`, in the codec's text form.
pub fn guide_summary(state: &SimState, sat: NodeId) -> String {
    let mut view = local_view(state.graph(), sat);
    view.neighbors.retain(|n| n.id.is_satellite());
    encode_topology_update(&view)
}

struct Pending {
    obs: Vec<f64>,
    action: usize,
    reward_sum: f64,
    slots: u64,
}

struct Learner {
    agent: DqnAgent,
    encoder: Params,
    explore: ChaCha8Rng,
    spec: RepresentationSpec,
    compiled: CompiledSpec,
    schema: FeatureSchema,
    guided: bool,
    intrinsic: bool,
}

struct Decision {
    obs: Vec<f64>,
    intrinsic: f64,
    mask: Option<Vec<bool>>,
}

impl Learner {
    fn input_dim(config: &ExperimentConfig) -> usize {
        MAX_SPEC_FEATURES + config.agent.encoder.hidden
    }

    fn set_spec(&mut self, spec: RepresentationSpec) -> Result<(), BenchError> {
        self.compiled = spec.compile_with(&self.schema).map_err(|e| BenchError::Llm(e.to_string()))?;
        self.spec = spec;
        Ok(())
    }

    /// Spec features zero-padded to the fixed width, then the encoder output.
    fn decide_input(
        &self,
        state: &SimState,
        ctx: &ObservationContext<'_>,
        aggregated: &BTreeMap<NodeId, Vec<f64>>,
        hidden: &BTreeMap<NodeId, Vec<f64>>,
        sat: NodeId,
    ) -> Result<Decision, BenchError> {
        let bundle = ObservationBundle {
            local: ctx.observe(sat).map_err(|e| BenchError::Sim(e.to_string()))?,
            aggregated: aggregated.get(&sat).cloned().unwrap_or_default(),
            hidden: hidden.get(&sat).cloned().unwrap_or_default(),
        };
        let (mut obs, _) = self.compiled.evaluate(&bundle).map_err(|e| BenchError::Llm(e.to_string()))?;
        obs.resize(MAX_SPEC_FEATURES, 0.0);
        obs.extend_from_slice(&bundle.hidden);
        let intrinsic = if self.intrinsic { intrinsic_reward(&self.compiled.intrinsic, &bundle) } else { 0.0 };
        let mask = if self.guided {
            let q = vec![0.0; self.agent.config.action_count];
            Some(guide_actions(&q, &guide_summary(state, sat)))
        } else {
            None
        };
        Ok(Decision { obs, intrinsic, mask })
    }
}

#[derive(Default)]
struct EpisodeTotals {
    slots: u64,
    reward: f64,
    throughput: f64,
    latency: f64,
    penalty: f64,
    metrics: SlotMetrics,
    intrinsic_sum: f64,
    intrinsic_n: u64,
}

/// Runs with the stub, or with a live endpoint when one is configured.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunManifest, BenchError> {
    match &config.llm.endpoint {
        Some(ep) if config.variant == Variant::LlmMarl => {
            let client = LiveClient::new(ep.clone()).map_err(|e| BenchError::ConfigInvalid(e.to_string()))?;
            run_experiment_with(config, &client)
        }
        _ => run_experiment_with(config, &StubClient),
    }
}

pub fn run_experiment_with(config: &ExperimentConfig, client: &dyn LlmClient) -> Result<RunManifest, BenchError> {
    config.validate()?;
    let started_at = now();
    let dir = run_dir(config);
    std::fs::create_dir_all(&dir).map_err(|e| BenchError::OutputUnwritable(format!("{}: {e}", dir.display())))?;
    let metrics_path = dir.join(METRICS_FILE);
    let mut writer = MetricsWriter::create(&metrics_path)?;
    let variant = config.variant;
    let deadline = config.scenario.traffic.deadline_slots;
    let reward_cfg = &config.agent.reward;
    let template = PromptTemplate::default();

    let mut enc_cfg = config.agent.encoder;
    enc_cfg.recurrent = variant != Variant::AcyclicMarl;
    let mut learner = if variant.learns() {
        let schema = feature_schema();
        let spec = if variant == Variant::LlmMarl {
            let prompt = render_prompt(&template, &schema, None).map_err(|e| BenchError::Llm(e.to_string()))?;
            request_representation(client, &prompt).spec
        } else {
            RepresentationSpec::identity()
        };
        let compiled = spec.compile_with(&schema).map_err(|e| BenchError::Llm(e.to_string()))?;
        let encoder = init_encoder(&mut stream(config.seed, labels::INIT, 0), &enc_cfg, FEATURE_DIM);
        let agent = DqnAgent::new(config.agent.dqn.clone(), Learner::input_dim(config), derive_seed(config.seed, labels::AGENT, 1))
            .map_err(|e| BenchError::ConfigInvalid(e.to_string()))?;
        Some(Learner {
            agent,
            encoder,
            explore: stream(config.seed, labels::AGENT, 0),
            spec,
            compiled,
            schema,
            guided: variant == Variant::LlmMarl,
            intrinsic: variant == Variant::LlmMarl,
        })
    } else {
        None
    };

    let mut spec_history = Vec::new();
    if let Some(l) = &learner {
        spec_history.push(SpecEvent {
            episode: 0,
            version: l.spec.version,
            action: "initial".into(),
            provenance: format!("{:?}", l.spec.provenance).to_lowercase(),
        });
    }
    let mut feedback_log: Vec<(RepresentationSpec, FeedbackReport)> = Vec::new();
    let mut episode_rewards: Vec<f64> = Vec::new();
    let mut episode_violations: Vec<u64> = Vec::new();
    let mut summary_acc = EpisodeTotals::default();
    let mut total_violations = 0;
    let mut total_drops = 0;
    let mut total_migrations = 0;

    for episode in 0..config.episodes {
        let (ep_seed, offset) = episode_start(config, episode);
        let mut sim = SimState::new(&config.scenario, ep_seed, offset).map_err(|e| BenchError::Sim(e.to_string()))?;
        let spec_version = learner.as_ref().map_or(0, |l| l.spec.version);
        let mut msgs = MessageState::zeros(sim.graph().nodes.iter().copied(), enc_cfg.hidden);
        let mut pending: BTreeMap<NodeId, Pending> = BTreeMap::new();
        let mut ep = EpisodeTotals::default();

        for slot in 0..config.run.slots_per_episode {
            sim.sync_topology().map_err(|e| BenchError::Sim(e.to_string()))?;
            let deciding = slot % config.run.decision_interval == 0;
            let mut actions = ActionSet::hold();
            match learner.as_mut() {
                Some(l) if deciding || enc_cfg.recurrent => {
                    let ctx = ObservationContext::new(&sim);
                    let observations = ctx.observe_all();
                    let (out, next) = message_pass(&l.encoder, &enc_cfg, sim.graph(), &observations, &msgs)
                        .map_err(|e| BenchError::Sim(e.to_string()))?;
                    msgs = next;
                    if deciding {
                        let mut hosts: Vec<NodeId> = sim.services().iter().map(|s| s.host).collect();
                        hosts.sort_unstable();
                        hosts.dedup();
                        let mut involved: Vec<NodeId> = pending.keys().copied().chain(hosts.iter().copied()).collect();
                        involved.sort_unstable();
                        involved.dedup();
                        let mut decisions = BTreeMap::new();
                        for sat in involved {
                            decisions.insert(sat, l.decide_input(&sim, &ctx, &out.aggregated, &out.hidden, sat)?);
                        }
                        for (sat, p) in std::mem::take(&mut pending) {
                            let d = &decisions[&sat];
                            let extrinsic = p.reward_sum / p.slots.max(1) as f64;
                            ep.intrinsic_sum += d.intrinsic;
                            ep.intrinsic_n += 1;
                            l.agent.remember(Transition {
                                obs: p.obs,
                                action: p.action,
                                reward: combine(extrinsic, d.intrinsic, reward_cfg),
                                next_obs: d.obs.clone(),
                                done: false,
                                next_mask: d.mask.clone(),
                            });
                        }
                        for sat in &hosts {
                            let d = &decisions[sat];
                            let a = l
                                .agent
                                .act(&d.obs, d.mask.as_deref(), &mut l.explore)
                                .map_err(|e| BenchError::Sim(e.to_string()))?;
                            let (migration, routing) = decode_action(a).expect("action index in range");
                            actions.set(*sat, SatelliteAction { migration, routing });
                            pending.insert(*sat, Pending { obs: d.obs.clone(), action: a, reward_sum: 0.0, slots: 0 });
                        }
                        for _ in 0..config.run.updates_per_decision * hosts.len() {
                            l.agent.learn().map_err(|e| BenchError::Sim(e.to_string()))?;
                        }
                    }
                }
                None if deciding => actions = greedy_policy(&sim),
                _ => {}
            }

            let m = sim.step(&actions).map_err(|e| BenchError::Sim(e.to_string()))?;
            let terms = RewardTerms::from_metrics(&m, reward_cfg, deadline);
            let reward = compute_reward(&terms, reward_cfg);
            for p in pending.values_mut() {
                p.reward_sum += reward;
                p.slots += 1;
            }
            ep.slots += 1;
            ep.reward += reward;
            ep.throughput += terms.throughput;
            ep.latency += terms.latency;
            ep.penalty += terms.penalty;
            ep.metrics.generated += m.generated;
            ep.metrics.delivered += m.delivered;
            ep.metrics.dropped += m.dropped;
            ep.metrics.violations += m.violations;
            ep.metrics.migrations_completed += m.migrations_completed;
            writer.write(&MetricsRecord {
                episode,
                slot: Some(slot),
                reward,
                throughput: terms.throughput,
                latency: terms.latency,
                penalty: terms.penalty,
                violations: m.violations,
                drops: m.dropped,
                migrations: m.migrations_completed,
                spec_version,
                variant,
                seed: config.seed,
                intrinsic: None,
            })?;
        }

        if let Some(l) = learner.as_mut() {
            if !pending.is_empty() {
                sim.sync_topology().map_err(|e| BenchError::Sim(e.to_string()))?;
                let ctx = ObservationContext::new(&sim);
                let observations = ctx.observe_all();
                let (out, _) = message_pass(&l.encoder, &enc_cfg, sim.graph(), &observations, &msgs)
                    .map_err(|e| BenchError::Sim(e.to_string()))?;
                for (sat, p) in std::mem::take(&mut pending) {
                    let d = l.decide_input(&sim, &ctx, &out.aggregated, &out.hidden, sat)?;
                    ep.intrinsic_sum += d.intrinsic;
                    ep.intrinsic_n += 1;
                    l.agent.remember(Transition {
                        obs: p.obs,
                        action: p.action,
                        reward: combine(p.reward_sum / p.slots.max(1) as f64, d.intrinsic, reward_cfg),
                        next_obs: d.obs,
                        done: false,
                        next_mask: d.mask,
                    });
                }
            }
        }

        let n = ep.slots.max(1) as f64;
        let mean_reward = ep.reward / n;
        writer.write(&MetricsRecord {
            episode,
            slot: None,
            reward: mean_reward,
            throughput: ep.throughput / n,
            latency: ep.latency / n,
            penalty: ep.penalty / n,
            violations: ep.metrics.violations,
            drops: ep.metrics.dropped,
            migrations: ep.metrics.migrations_completed,
            spec_version,
            variant,
            seed: config.seed,
            intrinsic: learner
                .as_ref()
                .filter(|l| l.intrinsic)
                .map(|_| if ep.intrinsic_n == 0 { 0.0 } else { ep.intrinsic_sum / ep.intrinsic_n as f64 }),
        })?;
        log::debug!("{variant} seed {} episode {episode}: reward {mean_reward:.4}", config.seed);
        episode_rewards.push(mean_reward);
        episode_violations.push(ep.metrics.violations);
        summary_acc.throughput += ep.throughput / n;
        summary_acc.latency += ep.latency / n;
        total_violations += ep.metrics.violations;
        total_drops += ep.metrics.dropped;
        total_migrations += ep.metrics.migrations_completed;

        let done = episode + 1;
        if let Some(l) = learner.as_mut().filter(|_| variant == Variant::LlmMarl) {
            if done % config.run.feedback_every == 0 && done < config.episodes {
                let w = config.run.feedback_window.min(episode_rewards.len());
                let window = &episode_rewards[episode_rewards.len() - w..];
                let violations: u64 = episode_violations[episode_violations.len() - w..].iter().sum();
                let iteration = feedback_log.len() as u32 + 1;
                let report = FeedbackReport::from_window(
                    iteration,
                    l.spec.version,
                    window,
                    violations,
                    w as u64 * config.run.slots_per_episode,
                );
                feedback_log.push((l.spec.clone(), report));
                let outcome = feedback_iteration(&feedback_log, client, &template, &l.schema)
                    .map_err(|e| BenchError::Llm(e.to_string()))?;
                spec_history.push(SpecEvent {
                    episode: done,
                    version: outcome.spec.version,
                    action: format!("{:?}", outcome.action).to_lowercase(),
                    provenance: format!("{:?}", outcome.spec.provenance).to_lowercase(),
                });
                l.set_spec(outcome.spec)?;
            }
        }
    }
    writer.finish()?;

    let mut checkpoint_paths = Vec::new();
    if let Some(l) = &learner {
        let path = dir.join(CHECKPOINT_FILE);
        save_checkpoint(
            &path,
            &config.config_hash(),
            &[("online", l.agent.online()), ("target", l.agent.target()), ("encoder", &l.encoder)],
        )
        .map_err(|e| BenchError::OutputUnwritable(e.to_string()))?;
        checkpoint_paths.push(path);
    }

    let summary = (!episode_rewards.is_empty()).then(|| {
        let n = episode_rewards.len();
        let w = config.run.final_window.min(n);
        RunSummary {
            episodes: n as u64,
            final_window_reward: episode_rewards[n - w..].iter().sum::<f64>() / w as f64,
            final_window: w,
            mean_reward: episode_rewards.iter().sum::<f64>() / n as f64,
            mean_throughput: summary_acc.throughput / n as f64,
            mean_latency: summary_acc.latency / n as f64,
            total_violations,
            total_drops,
            total_migrations,
            final_spec_version: learner.as_ref().map_or(0, |l| l.spec.version),
        }
    });
    let manifest = RunManifest {
        variant,
        seed: config.seed,
        config_hash: config.config_hash(),
        scenario_hash: config.scenario_hash(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        started_at,
        finished_at: now(),
        metrics_path,
        checkpoint_paths,
        summary,
        spec_history,
    };
    manifest.write_atomic(&dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Reads the manifest written by a previous run.
pub fn load_manifest(dir: &Path) -> Result<RunManifest, BenchError> {
    RunManifest::load(&dir.join(MANIFEST_FILE))
}

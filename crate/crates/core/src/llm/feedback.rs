use super::client::{request_representation, LlmClient};
use super::prompt::{render_prompt, FeedbackReport, PromptTemplate};
use super::spec::{Provenance, RepresentationSpec};
use super::LlmError;
use crate::graphstate::FeatureSchema;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeedbackAction {
    /// The latest spec underperformed the best one seen; the best is restored.
    Reverted,
    /// The model supplied a refinement.
    Refined,
    /// The refinement request failed; the best spec so far stays.
    KeptBest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackOutcome {
    pub spec: RepresentationSpec,
    pub action: FeedbackAction,
    /// Highest mean episode reward in the history.
    pub best_mean_reward: f64,
}

/// Index of the entry with the highest mean episode reward (earliest on ties).
pub fn best_index(history: &[(RepresentationSpec, FeedbackReport)]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, (_, r)) in history.iter().enumerate() {
        if best.is_none_or(|b| r.mean_episode_reward > history[b].1.mean_episode_reward) {
            best = Some(i);
        }
    }
    best
}

/// One feedback round with best-of selection. If the latest spec scored below
/// the best so far it is replaced by the best. Otherwise the latest report is
/// rendered into a feedback prompt and a refinement is requested; any failure
/// keeps the best spec.
pub fn feedback_iteration(
    history: &[(RepresentationSpec, FeedbackReport)],
    client: &dyn LlmClient,
    template: &PromptTemplate,
    schema: &FeatureSchema,
) -> Result<FeedbackOutcome, LlmError> {
    let best = best_index(history).ok_or(LlmError::EmptyHistory)?;
    let (latest_spec, latest) = history.last().expect("non-empty");
    let best_mean_reward = history[best].1.mean_episode_reward;
    let keep = |action| FeedbackOutcome { spec: history[best].0.clone(), action, best_mean_reward };
    if latest.mean_episode_reward < best_mean_reward {
        return Ok(keep(FeedbackAction::Reverted));
    }
    let prompt = match render_prompt(template, schema, Some(latest)) {
        Ok(p) => p,
        Err(e) => {
            log::warn!("feedback prompt not rendered: {e}");
            return Ok(keep(FeedbackAction::KeptBest));
        }
    };
    let response = request_representation(client, &prompt);
    if response.spec.provenance == Provenance::Identity {
        return Ok(keep(FeedbackAction::KeptBest));
    }
    let mut spec = response.spec;
    // Versions must keep increasing even if the model repeats one.
    spec.version = spec.version.max(latest_spec.version + 1);
    Ok(FeedbackOutcome { spec, action: FeedbackAction::Refined, best_mean_reward })
}

use serde::{Deserialize, Serialize};

use super::LlmError;
use crate::graphstate::{FeatureKind, FeatureSchema};

const TEMPLATE: &str = include_str!("prompt_template.txt");

/// Heading that opens the feedback section of a rendered prompt.
pub const FEEDBACK_MARKER: &str = "## Feedback";

pub const DEFAULT_TASK: &str = "A constellation of low-earth-orbit satellites serves requests from UAVs. Each satellite is an agent that decides, once per topology epoch, whether to migrate one hosted service to a neighboring satellite and which routing rule (lowest latency, highest bandwidth, or load-aware) applies to requests for its services. The network reward is (alpha1 * throughput - alpha2 * latency) * penalty, where violations such as deadline misses and failed migrations shrink the penalty factor.";

pub const DEFAULT_ROLE: &str = "Act as the feature extractor and reward designer. Propose a compact state representation built from the features above that helps a deep Q-network choose migrations and routing rules, and an intrinsic reward expression that encourages delivering packets quickly without congesting links.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub task_description: String,
    pub role_instruction: String,
    /// Estimated-token ceiling for the rendered prompt (characters / 4).
    pub token_budget: usize,
    #[serde(skip, default = "default_text")]
    pub text: String,
}

fn default_text() -> String {
    TEMPLATE.to_string()
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            task_description: DEFAULT_TASK.into(),
            role_instruction: DEFAULT_ROLE.into(),
            token_budget: 2048,
            text: default_text(),
        }
    }
}

/// Training statistics handed back to the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackReport {
    pub iteration: u32,
    pub mean_episode_reward: f64,
    pub reward_slope: f64,
    pub violation_rate: f64,
    pub spec_in_use: u32,
}

impl FeedbackReport {
    /// Statistics over a window of per-episode rewards. `violations` and
    /// `slots` are totals for the same window.
    pub fn from_window(iteration: u32, spec_in_use: u32, rewards: &[f64], violations: u64, slots: u64) -> Self {
        let n = rewards.len() as f64;
        let mean = if rewards.is_empty() { 0.0 } else { rewards.iter().sum::<f64>() / n };
        Self {
            iteration,
            mean_episode_reward: mean,
            reward_slope: least_squares_slope(rewards),
            violation_rate: if slots == 0 { 0.0 } else { violations as f64 / slots as f64 },
            spec_in_use,
        }
    }
}

/// Slope of the least-squares line through `(i, y_i)`; 0 for fewer than two points.
pub fn least_squares_slope(ys: &[f64]) -> f64 {
    if ys.len() < 2 {
        return 0.0;
    }
    let n = ys.len() as f64;
    let x_mean = (n - 1.0) / 2.0;
    let y_mean = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in ys.iter().enumerate() {
        let dx = i as f64 - x_mean;
        sxy += dx * (y - y_mean);
        sxx += dx * dx;
    }
    sxy / sxx
}

pub fn render_state_details(schema: &FeatureSchema) -> String {
    schema
        .features
        .iter()
        .map(|f| {
            let kind = match f.kind {
                FeatureKind::Scalar => "scalar",
                FeatureKind::Vector => "vector",
            };
            format!("- `{}` ({kind} in [{}, {}]): {}", f.name, f.lower, f.upper, f.description)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn render_feedback(report: &FeedbackReport) -> String {
    format!(
        "\n{FEEDBACK_MARKER}\nIteration {} used spec version {}. Over the last evaluation window the mean episode reward was {:.6}, the least-squares reward slope per episode was {:.6}, and the violation rate per slot was {:.6}. Revise the representation and intrinsic reward to raise the reward.\n",
        report.iteration, report.spec_in_use, report.mean_episode_reward, report.reward_slope, report.violation_rate
    )
}

pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

pub fn render_prompt(
    template: &PromptTemplate,
    schema: &FeatureSchema,
    feedback: Option<&FeedbackReport>,
) -> Result<String, LlmError> {
    let out = template
        .text
        .replace("{{task_description}}", &template.task_description)
        .replace("{{state_details}}", &render_state_details(schema))
        .replace("{{role_instruction}}", &template.role_instruction)
        .replace("{{feedback_section}}", &feedback.map(render_feedback).unwrap_or_default());
    if let Some(start) = out.find("{{") {
        let end = out[start..].find("}}").map_or(out.len(), |e| start + e + 2);
        return Err(LlmError::UnfilledPlaceholder(out[start..end].to_string()));
    }
    let tokens = estimate_tokens(&out);
    if tokens > template.token_budget {
        return Err(LlmError::TokenBudgetExceeded { tokens, budget: template.token_budget });
    }
    Ok(out)
}

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::thread;

use proptest::prelude::*;

use super::dsl::{parse, CompiledExpr, DslError, Value};
use super::prompt::{least_squares_slope, render_state_details};
use super::*;
use crate::graphstate::feature_schema;
use crate::netsim::{MigrationChoice, RoutingMode};
use crate::topology::{LinkStatus, NeighborEntry, TopologyUpdate};

fn env() -> BTreeMap<String, Value> {
    BTreeMap::from([
        ("degree".to_string(), Value::Scalar(0.5)),
        ("queue_occupancy".to_string(), Value::Scalar(0.25)),
        ("neighbor_bandwidth".to_string(), Value::Vector(vec![0.2, 0.6, 0.4])),
        ("neighbor_queue".to_string(), Value::Vector(vec![0.0, 0.5, 1.0])),
        ("neighbor_latency".to_string(), Value::Vector(vec![])),
        ("aggregate".to_string(), Value::Vector(vec![1.0, 2.0])),
    ])
}

fn eval(src: &str) -> f64 {
    CompiledExpr::compile(src, &feature_schema()).unwrap().eval(&env()).unwrap()
}

#[test]
fn dsl_arithmetic_and_precedence() {
    assert_eq!(eval("1 + 2 * 3"), 7.0);
    assert_eq!(eval("(1 + 2) * 3"), 9.0);
    assert_eq!(eval("8 / 2 / 2"), 2.0);
    assert_eq!(eval("8 - 2 - 1"), 5.0);
    assert_eq!(eval("-degree * 4"), -2.0);
    assert_eq!(eval("--1"), 1.0);
    assert_eq!(eval("2 × 3 ÷ 4"), 1.5);
    assert_eq!(eval("1e-1 * 10"), 1.0);
}

#[test]
fn dsl_reductions_and_broadcasting() {
    assert!((eval("mean(neighbor_bandwidth)") - 0.4).abs() < 1e-15);
    assert_eq!(eval("max(neighbor_bandwidth)"), 0.6);
    assert_eq!(eval("min(neighbor_bandwidth)"), 0.2);
    assert_eq!(eval("max(neighbor_bandwidth * (1 - neighbor_queue))"), 0.3);
    assert_eq!(eval("mean(max(neighbor_bandwidth, 0.5))"), (0.5 + 0.6 + 0.5) / 3.0);
    assert_eq!(eval("min(degree, queue_occupancy)"), 0.25);
    assert_eq!(eval("mean(degree)"), 0.5);
    assert_eq!(eval("mean(neighbor_latency)"), 0.0);
    assert_eq!(eval("max(neighbor_latency)"), 0.0);
    assert!(eval("mean(neighbor_bandwidth + aggregate)").is_nan());
}

#[test]
fn dsl_rejects_bad_programs() {
    let s = feature_schema();
    let c = |src: &str| CompiledExpr::compile(src, &s).unwrap_err();
    assert_eq!(c("speed"), DslError::UnknownFeature("speed".into()));
    assert_eq!(c("neighbor_bandwidth"), DslError::NotScalar);
    assert_eq!(c("degree + neighbor_queue"), DslError::NotScalar);
    assert_eq!(c("sqrt(degree)"), DslError::UnknownFunction("sqrt".into()));
    assert!(matches!(c("mean(degree, degree)"), DslError::Arity { .. }));
    assert!(matches!(c("max(degree, degree, degree)"), DslError::Arity { .. }));
    assert!(matches!(c("degree +"), DslError::Parse { .. }));
    assert!(matches!(c("(degree"), DslError::Parse { .. }));
    assert!(matches!(c("degree degree"), DslError::Parse { .. }));
    assert!(matches!(c("degree ^ 2"), DslError::Lex { .. }));
    assert!(matches!(c(""), DslError::Parse { .. }));
}

#[test]
fn dsl_depth_limit() {
    let nest = |n: usize| format!("{}degree{}", "mean(".repeat(n), ")".repeat(n));
    assert!(CompiledExpr::compile(&nest(7), &feature_schema()).is_ok());
    assert_eq!(CompiledExpr::compile(&nest(8), &feature_schema()).unwrap_err(), DslError::TooDeep(9));
    let long_sum = vec!["degree"; 30].join(" + ");
    assert_eq!(parse(&long_sum).unwrap().depth(), 2);
}

#[test]
fn dsl_display_reparses_to_same_value() {
    for src in ["1 - 2 - 3", "max(neighbor_bandwidth * 2, degree) / 3", "-(degree + 1) * 2", "mean(aggregate) ÷ 4"] {
        let e = parse(src).unwrap();
        let again = parse(&e.to_string()).unwrap();
        assert_eq!(e.eval(&env()).unwrap(), again.eval(&env()).unwrap(), "{src}");
    }
}

#[test]
fn stub_specs_validate() {
    for spec in [spec::stub_initial_spec(), spec::stub_refined_spec(), RepresentationSpec::identity()] {
        spec.validate().unwrap();
        assert!(spec.features.len() <= spec::MAX_SPEC_FEATURES);
    }
    assert!(spec::stub_refined_spec().features.len() > spec::stub_initial_spec().features.len());
}

#[test]
fn spec_feature_count_bounds() {
    let mut s = RepresentationSpec::identity();
    s.features.clear();
    assert_eq!(s.validate(), Err(SpecError::FeatureCount(0)));
    s.features = vec!["degree".into(); 33];
    assert_eq!(s.validate(), Err(SpecError::FeatureCount(33)));
    s.features.truncate(32);
    assert!(s.validate().is_ok());
}

#[test]
fn spec_parses_from_chatty_response() {
    let body = spec::stub_initial_spec().to_json();
    let text = format!("Sure! Here is {{the}} spec:\n```json\n{body}\n```\nLet me know.");
    let spec = RepresentationSpec::parse_response(&text, Provenance::Live).unwrap();
    assert_eq!(spec.provenance, Provenance::Live);
    assert_eq!(spec.features, spec::stub_initial_spec().features);
    assert_eq!(RepresentationSpec::parse_response("no json", Provenance::Live), Err(SpecError::NoDocument));
}

struct Scripted {
    replies: RefCell<Vec<Result<String, LlmError>>>,
    calls: RefCell<u32>,
    retries: u32,
}

impl Scripted {
    fn new(replies: Vec<Result<String, LlmError>>, retries: u32) -> Self {
        Self { replies: RefCell::new(replies), calls: RefCell::new(0), retries }
    }
}

impl LlmClient for Scripted {
    fn complete(&self, _prompt: &str) -> Result<String, LlmError> {
        *self.calls.borrow_mut() += 1;
        let mut r = self.replies.borrow_mut();
        if r.is_empty() {
            Err(LlmError::Endpoint("exhausted".into()))
        } else {
            r.remove(0)
        }
    }

    fn provenance(&self) -> Provenance {
        Provenance::Live
    }

    fn max_retries(&self) -> u32 {
        self.retries
    }
}

fn prompt() -> String {
    render_prompt(&PromptTemplate::default(), &feature_schema(), None).unwrap()
}

#[test]
fn stub_client_returns_documented_spec() {
    let r = request_representation(&StubClient, &prompt());
    assert_eq!(r.spec, spec::stub_initial_spec());
    assert_eq!(r.spec.provenance, Provenance::Stub);
    assert_eq!(r.attempts, 1);
}

#[test]
fn unknown_feature_from_live_falls_back_to_identity() {
    let bad = r#"{"version": 1, "features": ["warp_speed"], "intrinsic": "0"}"#.to_string();
    let client = Scripted::new(vec![Ok(bad.clone()), Ok(bad.clone()), Ok(bad)], 2);
    let r = request_representation(&client, &prompt());
    assert_eq!(r.spec, RepresentationSpec::identity());
    assert!(r.fell_back());
    assert_eq!(*client.calls.borrow(), 3);
    assert_eq!(r.errors.len(), 3);
}

#[test]
fn live_retry_recovers_after_failure() {
    let good = spec::stub_refined_spec().to_json();
    let client = Scripted::new(vec![Err(LlmError::Endpoint("timeout".into())), Ok(good)], 2);
    let r = request_representation(&client, &prompt());
    assert_eq!(r.spec.provenance, Provenance::Live);
    assert_eq!(r.attempts, 2);
    r.spec.validate().unwrap();
}

#[test]
fn prompt_without_feedback_has_no_feedback_section() {
    let p = prompt();
    assert!(!p.contains(FEEDBACK_MARKER));
    assert_eq!(p, prompt());
    assert!(!p.contains("{{"));
    assert!(p.contains("## Output Format"));
}

#[test]
fn prompt_lists_each_feature_once_in_state_details() {
    let p = prompt();
    let start = p.find("## State Details").unwrap();
    let end = p.find("## Role Instruction").unwrap();
    let section = &p[start..end];
    for f in feature_schema().features {
        assert_eq!(section.matches(f.name.as_str()).count(), 1, "{}", f.name);
    }
}

#[test]
fn prompt_with_feedback_reports_statistics() {
    let report = FeedbackReport::from_window(3, 2, &[0.1, 0.2, 0.3], 4, 200);
    let p = render_prompt(&PromptTemplate::default(), &feature_schema(), Some(&report)).unwrap();
    assert!(p.contains(FEEDBACK_MARKER));
    assert!(p.contains("spec version 2"));
    assert!(p.contains("0.020000"));
}

#[test]
fn prompt_budget_is_enforced() {
    let t = PromptTemplate { token_budget: 50, ..PromptTemplate::default() };
    assert!(matches!(
        render_prompt(&t, &feature_schema(), None),
        Err(LlmError::TokenBudgetExceeded { budget: 50, .. })
    ));
    let schema_text = render_state_details(&feature_schema());
    assert!(schema_text.lines().count() == feature_schema().features.len());
}

#[test]
fn slope_of_line_and_constant() {
    assert!((least_squares_slope(&[1.0, 3.0, 5.0, 7.0]) - 2.0).abs() < 1e-15);
    assert_eq!(least_squares_slope(&[4.0; 6]), 0.0);
    assert_eq!(least_squares_slope(&[4.0]), 0.0);
}

fn report(mean: f64, version: u32) -> FeedbackReport {
    FeedbackReport { iteration: 0, mean_episode_reward: mean, reward_slope: 0.0, violation_rate: 0.0, spec_in_use: version }
}

#[test]
fn feedback_single_entry_gets_stub_refinement() {
    let history = vec![(spec::stub_initial_spec(), report(0.4, 1))];
    let out = feedback_iteration(&history, &StubClient, &PromptTemplate::default(), &feature_schema()).unwrap();
    assert_eq!(out.action, FeedbackAction::Refined);
    assert_eq!(out.spec, spec::stub_refined_spec());
}

#[test]
fn feedback_reverts_when_latest_is_worse() {
    let history = vec![(spec::stub_initial_spec(), report(0.4, 1)), (spec::stub_refined_spec(), report(0.399_999, 2))];
    let out = feedback_iteration(&history, &StubClient, &PromptTemplate::default(), &feature_schema()).unwrap();
    assert_eq!(out.action, FeedbackAction::Reverted);
    assert_eq!(out.spec, spec::stub_initial_spec());
    assert_eq!(out.best_mean_reward, 0.4);
}

#[test]
fn feedback_keeps_best_when_endpoint_fails() {
    let history = vec![(spec::stub_initial_spec(), report(0.4, 1))];
    let client = Scripted::new(vec![], 1);
    let out = feedback_iteration(&history, &client, &PromptTemplate::default(), &feature_schema()).unwrap();
    assert_eq!(out.action, FeedbackAction::KeptBest);
    assert_eq!(out.spec, spec::stub_initial_spec());
    assert!(feedback_iteration(&[], &StubClient, &PromptTemplate::default(), &feature_schema()).is_err());
}

#[test]
fn feedback_best_reward_never_decreases() {
    let rewards = [0.3, 0.5, 0.2, 0.45, 0.6, 0.1, 0.6, 0.7, 0.0];
    let mut history: Vec<(RepresentationSpec, FeedbackReport)> = Vec::new();
    let mut spec = spec::stub_initial_spec();
    let mut last_best = f64::NEG_INFINITY;
    for (i, r) in rewards.iter().enumerate() {
        history.push((spec.clone(), report(*r, spec.version)));
        let out = feedback_iteration(&history, &StubClient, &PromptTemplate::default(), &feature_schema()).unwrap();
        assert!(out.best_mean_reward >= last_best, "iteration {i}");
        if out.action == FeedbackAction::Reverted {
            let best = feedback::best_index(&history).unwrap();
            assert_eq!(out.spec, history[best].0);
        }
        last_best = out.best_mean_reward;
        spec = out.spec;
    }
}

fn worked_example() -> TopologyUpdate<String> {
    TopologyUpdate {
        node_id: "A".into(),
        neighbors: vec![
            NeighborEntry { id: "B".into(), status: LinkStatus::Active, bandwidth_mbps: 80.0, latency_ms: Some(5.0) },
            NeighborEntry { id: "C".into(), status: LinkStatus::Inactive, bandwidth_mbps: 0.0, latency_ms: None },
        ],
    }
}

#[test]
fn codec_worked_example() {
    let text = "A: Links B(80Mbps/5ms), C disconnected.";
    assert_eq!(encode_topology_update(&worked_example()), text);
    assert_eq!(decode_topology_summary::<String>(text, None).unwrap(), worked_example());
}

#[test]
fn codec_empty_neighbor_list() {
    let u: TopologyUpdate<String> = TopologyUpdate { node_id: "A".into(), neighbors: vec![] };
    assert_eq!(encode_topology_update(&u), "A: Links .");
    assert_eq!(parse_topology_summary::<String>("A: Links .").unwrap(), u);
}

#[test]
fn codec_rejects_garbage() {
    for bad in ["", "hello", "A: Links B(80Mbps/5ms)", "A: Links B(fastMbps/5ms).", "A Links .", "A: Links B disconnected, B disconnected."] {
        assert!(matches!(parse_topology_summary::<String>(bad), Err(LlmError::ParseFailed(_))), "{bad}");
    }
}

#[test]
fn codec_summary_is_smaller_than_structured_form() {
    let summary = encode_topology_update(&worked_example());
    let structured = serde_json::to_string(&worked_example()).unwrap();
    assert_eq!(summary.len(), 39);
    assert!(summary.len() < structured.len());
}

struct Reformatter;

impl LlmClient for Reformatter {
    fn complete(&self, _prompt: &str) -> Result<String, LlmError> {
        Ok("\nA: Links B(80Mbps/5ms), C disconnected.\n".into())
    }

    fn provenance(&self) -> Provenance {
        Provenance::Live
    }
}

#[test]
fn free_text_uses_one_reformatting_call() {
    let prose = "Node A keeps an 80 Mbps, 5 ms link to B and lost C.";
    assert!(decode_topology_summary::<String>(prose, None).is_err());
    assert_eq!(decode_topology_summary::<String>(prose, Some(&Reformatter)).unwrap(), worked_example());
    assert!(decode_topology_summary::<String>(prose, Some(&StubClient)).is_err());
}

fn arb_id() -> impl Strategy<Value = String> {
    "[A-Za-z][A-Za-z0-9_]{0,5}"
}

fn arb_update() -> impl Strategy<Value = TopologyUpdate<String>> {
    (arb_id(), prop::collection::btree_map(arb_id(), (any::<bool>(), 0.0f64..1e4, 0.0f64..1e3), 0..8)).prop_map(
        |(node, nbrs)| TopologyUpdate {
            neighbors: nbrs
                .into_iter()
                .filter(|(id, _)| *id != node)
                .map(|(id, (active, bw, lat))| {
                    if active {
                        NeighborEntry { id, status: LinkStatus::Active, bandwidth_mbps: bw, latency_ms: Some(lat) }
                    } else {
                        NeighborEntry { id, status: LinkStatus::Inactive, bandwidth_mbps: 0.0, latency_ms: None }
                    }
                })
                .collect(),
            node_id: node,
        },
    )
}

proptest! {
    #[test]
    fn codec_round_trip(u in arb_update()) {
        prop_assert!(u.is_valid());
        let text = encode_topology_update(&u);
        prop_assert_eq!(parse_topology_summary::<String>(&text).unwrap(), u);
    }
}

#[test]
fn guide_masks_disconnected_neighbors() {
    let q = vec![0.0; 21];
    let all = guide_actions(&q, "S0: Links S1(40Mbps/5ms), S2(30Mbps/6ms), S3(20Mbps/4ms), S4(10Mbps/5ms), S5(1Mbps/9ms), S6(2Mbps/9ms).");
    assert!(all.iter().all(|m| *m));

    let summary = "S0: Links S1(40Mbps/5ms), S3(20Mbps/4ms), S2 disconnected.";
    let mask = guide_actions(&q, summary);
    let targets = migration_targets::<String>(summary).unwrap();
    assert_eq!(targets, vec!["S1".to_string(), "S3".to_string()]);
    for (a, allowed) in mask.iter().enumerate() {
        let (m, _) = decode_action(a).unwrap();
        let goes_to_s2 = !m.is_stay() && targets.get(m.0 as usize - 1).is_none_or(|t| t == "S2");
        assert_eq!(*allowed, !goes_to_s2, "action {a}");
    }
}

#[test]
fn guide_always_permits_stay() {
    let q = vec![1.0; 21];
    for summary in ["S0: Links .", "S0: Links S1 disconnected, S2 disconnected.", "unreadable"] {
        let mask = guide_actions(&q, summary);
        for r in RoutingMode::ALL {
            assert!(mask[action_index(MigrationChoice::STAY, r)]);
        }
    }
}

#[test]
fn action_encoding_round_trips() {
    for a in 0..21 {
        let (m, r) = decode_action(a).unwrap();
        assert_eq!(action_index(m, r), a);
    }
    assert!(decode_action(21).is_none());
}

/// Serves one HTTP exchange and returns the request body it saw.
fn one_shot_server(response_body: String) -> (String, thread::JoinHandle<String>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let handle = thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut len = 0;
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            if line == "\r\n" || line.is_empty() {
                break;
            }
            if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                len = v.trim().parse().unwrap();
            }
        }
        let mut body = vec![0; len];
        reader.read_exact(&mut body).unwrap();
        let mut stream = stream;
        write!(
            stream,
            "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
            response_body.len(),
            response_body
        )
        .unwrap();
        String::from_utf8(body).unwrap()
    });
    (format!("http://{addr}/v1"), handle)
}

#[test]
fn live_client_speaks_chat_completions() {
    let content = spec::stub_initial_spec().to_json();
    let reply = serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string();
    let (url, server) = one_shot_server(reply);
    let client = LiveClient::new(LlmEndpointConfig { base_url: url, model: "m1".into(), ..Default::default() }).unwrap();
    let r = request_representation(&client, &prompt());
    let sent: serde_json::Value = serde_json::from_str(&server.join().unwrap()).unwrap();
    assert_eq!(sent["model"], "m1");
    assert_eq!(sent["temperature"], 0.0);
    assert_eq!(sent["messages"][0]["role"], "user");
    assert_eq!(r.spec.provenance, Provenance::Live);
    assert_eq!(r.spec.features, spec::stub_initial_spec().features);
}

#[test]
fn unreachable_endpoint_falls_back() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let cfg = LlmEndpointConfig { base_url: format!("http://127.0.0.1:{port}"), timeout_ms: 500, max_retries: 1, ..Default::default() };
    let r = request_representation(&LiveClient::new(cfg).unwrap(), &prompt());
    assert!(r.fell_back());
    assert_eq!(r.attempts, 2);
    assert!(LiveClient::new(LlmEndpointConfig { timeout_ms: 0, ..Default::default() }).is_err());
}

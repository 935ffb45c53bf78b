mod common;

use std::time::{Duration, Instant};

use biasprobe::scorer::{gender_mass, RemoteScorer, RetryPolicy, ScoreError, Scorer};
use biasprobe::templates::{builtin_lexicon, ProbeText};
use common::fake_endpoint;

const BODY: &str = r#"[
    {"token_str": "he", "score": 0.30, "token": 1},
    {"token_str": " she", "score": 0.45},
    {"token_str": "it", "score": 0.05},
    {"token_str": "they", "score": 0.15},
    {"token_str": "her", "score": 0.05}
]"#;

fn probe() -> ProbeText {
    ProbeText {
        text: "[MASK] was a child in 1801.".into(),
        w_index: 0,
        w_value: "1801".into(),
        verb: Some("was".into()),
        life_stage: Some("a child".into()),
        template_id: 0,
    }
}

fn fast_retry() -> RetryPolicy {
    RetryPolicy { max_attempts: 3, base_delay: Duration::from_millis(20) }
}

fn client(url: &str, token: Option<&str>, mask: Option<&str>) -> RemoteScorer {
    RemoteScorer::with_options(
        url,
        mask.map(String::from),
        token.map(String::from),
        Duration::from_secs(5),
        fast_retry(),
        2,
    )
    .unwrap()
}

#[test]
fn unsorted_response_is_sorted_and_scored() {
    let ep = fake_endpoint::start();
    ep.set_fallback(200, BODY);
    let pred = client(&ep.url, None, None).predict(&probe(), 5).unwrap();
    let tokens: Vec<_> = pred.entries().iter().map(|t| t.token.as_str()).collect();
    assert_eq!(tokens, ["she", "he", "they", "it", "her"]);
    let m = gender_mass(&pred, &builtin_lexicon(), 5);
    assert!((m.female - 0.50).abs() < 1e-12);
    assert!((m.male - 0.30).abs() < 1e-12);
    let req = &ep.requests()[0];
    assert_eq!(req.body["inputs"], "[MASK] was a child in 1801.");
    assert_eq!(req.authorization, None);
}

#[test]
fn mask_token_and_bearer_are_sent() {
    let ep = fake_endpoint::start();
    ep.set_fallback(200, BODY);
    client(&ep.url, Some("sekrit"), Some("<mask>")).predict(&probe(), 5).unwrap();
    let req = &ep.requests()[0];
    assert_eq!(req.body["inputs"], "<mask> was a child in 1801.");
    assert_eq!(req.authorization.as_deref(), Some("Bearer sekrit"));
}

#[test]
fn transient_failures_are_retried_with_backoff() {
    let ep = fake_endpoint::start();
    ep.push(503, "loading");
    ep.push(429, "slow down");
    ep.push(200, BODY);
    let start = Instant::now();
    let pred = client(&ep.url, None, None).predict(&probe(), 5).unwrap();
    assert_eq!(pred.entries().len(), 5);
    assert_eq!(ep.requests().len(), 3);
    // 20 ms then 40 ms.
    assert!(start.elapsed() >= Duration::from_millis(60));
}

#[test]
fn retries_are_bounded() {
    let ep = fake_endpoint::start();
    ep.set_fallback(502, "bad gateway");
    let err = client(&ep.url, None, None).predict(&probe(), 5).unwrap_err();
    assert!(matches!(err, ScoreError::Http { status: 502, .. }), "{err}");
    assert!(err.is_retriable());
    assert_eq!(ep.requests().len(), 3);
}

#[test]
fn client_errors_are_fatal() {
    let ep = fake_endpoint::start();
    ep.set_fallback(401, "no token");
    let err = client(&ep.url, None, None).predict(&probe(), 5).unwrap_err();
    assert!(matches!(err, ScoreError::Http { status: 401, .. }), "{err}");
    assert!(!err.is_retriable());
    assert_eq!(ep.requests().len(), 1);
}

#[test]
fn malformed_bodies_are_protocol_errors() {
    let ep = fake_endpoint::start();
    ep.set_fallback(200, r#"{"error": "model loading"}"#);
    let err = client(&ep.url, None, None).predict(&probe(), 5).unwrap_err();
    assert!(matches!(err, ScoreError::Protocol(_)), "{err}");
    assert_eq!(ep.requests().len(), 1);
}

#[test]
fn timeouts_are_retriable() {
    let ep = fake_endpoint::start();
    ep.push_delayed(200, BODY, Duration::from_millis(800));
    ep.set_fallback(200, BODY);
    let scorer = RemoteScorer::with_options(
        &ep.url,
        None,
        None,
        Duration::from_millis(200),
        fast_retry(),
        1,
    )
    .unwrap();
    scorer.predict(&probe(), 5).unwrap();
    assert_eq!(ep.requests().len(), 2);
}

#[test]
fn top_k_is_applied_client_side() {
    let ep = fake_endpoint::start();
    ep.set_fallback(200, BODY);
    let pred = client(&ep.url, None, None).predict(&probe(), 2).unwrap();
    assert_eq!(pred.entries().len(), 2);
    let m = gender_mass(&pred, &builtin_lexicon(), 2);
    assert!((m.female - 0.45).abs() < 1e-12);
}

#[test]
fn unreachable_endpoint_is_a_transport_error() {
    let err = client("http://127.0.0.1:9/", None, None).predict(&probe(), 5).unwrap_err();
    assert!(matches!(err, ScoreError::Transport(_) | ScoreError::Timeout), "{err}");
}

use std::time::{Duration, Instant};

use citeguard_core::embedding::{make_embedder, mock_embed, ProviderConfig};
use citeguard_core::generation::{make_generator, GenConfig};
use citeguard_core::http::ProviderError;
use citeguard_core::stub::{StubOptions, StubServer};

fn texts(n: usize) -> Vec<String> {
    (0..n)
        .map(|i| format!("passage number {i} about wages"))
        .collect()
}

#[test]
fn remote_embeddings_match_mock_and_batch() {
    let stub = StubServer::start(StubOptions::default()).unwrap();
    let cfg = ProviderConfig {
        max_batch: 4,
        api_key: Some("secret-token".into()),
        ..ProviderConfig::remote(stub.url())
    };
    let input = texts(10);
    let got = make_embedder(&cfg).unwrap().embed(&input).unwrap();
    for (t, v) in input.iter().zip(&got) {
        let want = mock_embed(t, 64).unwrap();
        for (a, b) in v.values().iter().zip(want.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
    let reqs = stub.requests();
    assert_eq!(reqs.len(), 3, "10 texts in batches of 4");
    for r in &reqs {
        assert_eq!(r.path, "/embed");
        assert_eq!(r.authorization.as_deref(), Some("Bearer secret-token"));
        let body: serde_json::Value = serde_json::from_str(&r.body).unwrap();
        assert_eq!(body["model"], "BAAI/bge-large-en-v1.5");
    }
    let sizes: Vec<usize> = reqs
        .iter()
        .map(|r| {
            serde_json::from_str::<serde_json::Value>(&r.body).unwrap()["texts"]
                .as_array()
                .unwrap()
                .len()
        })
        .collect();
    let mut sorted = sizes.clone();
    sorted.sort();
    assert_eq!(sorted, [2, 4, 4]);
}

#[test]
fn transient_failures_are_retried() {
    let stub = StubServer::start(StubOptions {
        fail_first: 2,
        ..StubOptions::default()
    })
    .unwrap();
    let v = make_embedder(&ProviderConfig::remote(stub.url()))
        .unwrap()
        .embed(&texts(1))
        .unwrap();
    assert_eq!(v.len(), 1);
    assert_eq!(stub.request_count(), 3);

    let stub = StubServer::start(StubOptions {
        fail_first: 3,
        ..StubOptions::default()
    })
    .unwrap();
    let err = make_embedder(&ProviderConfig::remote(stub.url()))
        .unwrap()
        .embed(&texts(1))
        .unwrap_err();
    assert!(matches!(err, ProviderError::Unreachable { .. }), "{err}");
    assert_eq!(stub.request_count(), 3);
}

#[test]
fn slow_provider_times_out() {
    let stub = StubServer::start(StubOptions {
        delay: Duration::from_millis(1500),
        ..StubOptions::default()
    })
    .unwrap();
    let cfg = ProviderConfig {
        timeout_ms: 200,
        ..ProviderConfig::remote(stub.url())
    };
    let started = Instant::now();
    let err = make_embedder(&cfg).unwrap().embed(&texts(1)).unwrap_err();
    assert!(
        matches!(
            err,
            ProviderError::Timeout {
                timeout_ms: 200,
                ..
            }
        ),
        "{err}"
    );
    assert!(started.elapsed() < Duration::from_secs(5));
}

#[test]
fn ragged_vectors_are_rejected() {
    let stub = StubServer::start(StubOptions {
        ragged: true,
        ..StubOptions::default()
    })
    .unwrap();
    let err = make_embedder(&ProviderConfig::remote(stub.url()))
        .unwrap()
        .embed(&texts(3))
        .unwrap_err();
    assert!(
        matches!(
            err,
            ProviderError::DimensionMismatch {
                expected: 64,
                got: 63
            }
        ),
        "{err}"
    );
}

#[test]
fn unreachable_provider_is_reported() {
    let cfg = ProviderConfig {
        timeout_ms: 500,
        ..ProviderConfig::remote("http://127.0.0.1:9")
    };
    let err = make_embedder(&cfg).unwrap().embed(&texts(1)).unwrap_err();
    assert!(matches!(err, ProviderError::Unreachable { .. }), "{err}");
}

#[test]
fn remote_generator_sends_prompt_and_settings() {
    let stub = StubServer::start(StubOptions {
        generate_script: vec!["scripted answer".into()],
        ..StubOptions::default()
    })
    .unwrap();
    let cfg = ProviderConfig {
        model_id: "some-instruct-model".into(),
        ..ProviderConfig::remote(stub.url())
    };
    let gen = make_generator(&cfg).unwrap();
    let text = gen.generate("the prompt", &GenConfig::default()).unwrap();
    assert_eq!(text, "scripted answer");
    let body: serde_json::Value = serde_json::from_str(&stub.requests()[0].body).unwrap();
    assert_eq!(
        body,
        serde_json::json!({
            "model": "some-instruct-model",
            "prompt": "the prompt",
            "max_tokens": 512,
            "temperature": 0.0,
        })
    );
}

#[test]
fn client_errors_are_not_retried() {
    let stub = StubServer::start(StubOptions {
        require_key: Some("k".into()),
        ..StubOptions::default()
    })
    .unwrap();
    let cfg = ProviderConfig {
        api_key: Some("wrong".into()),
        ..ProviderConfig::remote(stub.url())
    };
    let err = make_embedder(&cfg).unwrap().embed(&texts(1)).unwrap_err();
    assert!(matches!(err, ProviderError::BadResponse { .. }), "{err}");
    assert_eq!(stub.request_count(), 1);
}

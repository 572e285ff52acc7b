use std::sync::Arc;
use std::time::Duration;

use focus::decoder::Decoder;
use focus::provider::stub::{StubBehavior, StubServer};
use focus::provider::wire::ImageEncoding;
use focus::provider::{LogitProvider, ProviderRequest, RemoteConfig, RemoteProvider, SyntheticModel, SyntheticModelConfig};
use focus::types::{DecodingConfig, ImageContext, ImageTensor, LogitVector};
use focus::Error;

fn image(seed: u32) -> Arc<ImageTensor> {
    let data = (0..8 * 8 * 3)
        .map(|i| (((i as u32).wrapping_mul(2654435761) ^ seed) % 1000) as f32 / 999.0)
        .collect();
    Arc::new(ImageTensor::new(8, 8, 3, data).unwrap())
}

fn request(prompt: &str) -> ProviderRequest {
    let ctx = ImageContext::clean(&[image(1), image(2)]).unwrap();
    ProviderRequest::new(ctx, prompt, vec![3, 4]).unwrap()
}

fn fast(endpoint: String) -> RemoteConfig {
    let mut config = RemoteConfig::new(endpoint);
    config.backoff_base = Duration::from_millis(5);
    config.timeout = Duration::from_secs(5);
    config
}

#[test]
fn fixed_logits_round_trip_exactly() {
    let logits = LogitVector::new(vec![0.1, -2.5e-300, 1.0 / 3.0, 7.0e10], "stub/v4").unwrap();
    let stub = StubServer::start(StubBehavior::Fixed(logits.clone())).unwrap();
    let client = RemoteProvider::new(fast(stub.endpoint()));
    let got = client.next_token_logits(&request("image 1")).unwrap();
    assert_eq!(got, logits);
    assert_eq!(stub.request_count(), 1);
}

#[test]
fn served_synthetic_model_matches_local() {
    let model = Arc::new(SyntheticModel::new(SyntheticModelConfig::default()).unwrap());
    let stub = StubServer::start(StubBehavior::Serve(model.clone())).unwrap();
    let client = RemoteProvider::new(fast(stub.endpoint()));
    let req = request("Which caption describes image 2? Options: A: c1; B: c2 c3; Answer with a letter.");
    assert_eq!(client.next_token_logits(&req).unwrap(), model.next_token_logits(&req).unwrap());
}

#[test]
fn remote_focus_decoding_is_bit_identical_to_local() {
    // Noise is applied client side and shipped as raw f32, so the server
    // sees exactly the tensors the local provider sees.
    let model = Arc::new(SyntheticModel::new(SyntheticModelConfig::default()).unwrap());
    let stub = StubServer::start(StubBehavior::Serve(model.clone())).unwrap();
    let client = RemoteProvider::new(fast(stub.endpoint()));
    let images = [image(5), image(6), image(7)];
    let config = DecodingConfig {
        max_tokens: 4,
        ..DecodingConfig::focus()
    };
    let decoder = Decoder::with_jobs(4).unwrap().keep_components(true);
    let remote = decoder.generate(&client, &images, "Describe image 2.", &config).unwrap();
    let local = decoder.generate(model.as_ref(), &images, "Describe image 2.", &config).unwrap();
    assert_eq!(remote, local);
    assert_eq!(stub.request_count(), remote.forward_pass_count);
}

#[test]
fn png_encoding_is_lossy_but_valid() {
    let model = Arc::new(SyntheticModel::new(SyntheticModelConfig::default()).unwrap());
    let stub = StubServer::start(StubBehavior::Serve(model)).unwrap();
    let mut config = fast(stub.endpoint());
    config.encoding = ImageEncoding::PngBase64;
    let client = RemoteProvider::new(config);
    let got = client.next_token_logits(&request("image 1")).unwrap();
    assert_eq!(got.len(), 32);
}

#[test]
fn length_mismatch_is_a_protocol_error() {
    let body = r#"{"protocol_version":1,"vocab_size":3,"vocab_id":"x","logits":[1.0,2.0]}"#;
    let stub = StubServer::start(StubBehavior::Raw {
        status: 200,
        body: body.into(),
    })
    .unwrap();
    let client = RemoteProvider::new(fast(stub.endpoint()));
    let err = client.next_token_logits(&request("image 1")).unwrap_err();
    assert!(matches!(err, Error::Protocol(_)), "{err:?}");
    assert_eq!(stub.request_count(), 1);
}

#[test]
fn missing_fields_are_a_protocol_error() {
    let stub = StubServer::start(StubBehavior::Raw {
        status: 200,
        body: r#"{"protocol_version":1,"logits":[1.0]}"#.into(),
    })
    .unwrap();
    let client = RemoteProvider::new(fast(stub.endpoint()));
    assert!(matches!(
        client.next_token_logits(&request("image 1")),
        Err(Error::Protocol(_))
    ));
}

#[test]
fn error_object_is_not_retried() {
    let stub = StubServer::start(StubBehavior::ErrorObject {
        code: "oom".into(),
        message: "out of memory".into(),
    })
    .unwrap();
    let client = RemoteProvider::new(fast(stub.endpoint()));
    let err = client.next_token_logits(&request("image 1")).unwrap_err();
    match err {
        Error::Server { code, message } => {
            assert_eq!(code, "oom");
            assert_eq!(message, "out of memory");
        }
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(stub.request_count(), 1);
}

#[test]
fn transient_failures_are_retried() {
    let logits = LogitVector::new(vec![1.0, 2.0], "stub").unwrap();
    let stub = StubServer::start(StubBehavior::FailFirst {
        count: 2,
        then: Box::new(StubBehavior::Fixed(logits.clone())),
    })
    .unwrap();
    let client = RemoteProvider::new(fast(stub.endpoint()));
    assert_eq!(client.next_token_logits(&request("image 1")).unwrap(), logits);
    assert_eq!(stub.request_count(), 3);
}

#[test]
fn retry_budget_is_bounded() {
    let logits = LogitVector::new(vec![1.0], "stub").unwrap();
    let stub = StubServer::start(StubBehavior::FailFirst {
        count: 10,
        then: Box::new(StubBehavior::Fixed(logits)),
    })
    .unwrap();
    let mut config = fast(stub.endpoint());
    config.retries = 2;
    let client = RemoteProvider::new(config);
    let err = client.next_token_logits(&request("image 1")).unwrap_err();
    assert!(matches!(err, Error::Transport { attempts: 3, .. }), "{err:?}");
    assert_eq!(stub.request_count(), 3);
}

#[test]
fn slow_server_times_out() {
    let logits = LogitVector::new(vec![1.0], "stub").unwrap();
    let stub = StubServer::start(StubBehavior::Delay {
        delay: Duration::from_millis(600),
        then: Box::new(StubBehavior::Fixed(logits)),
    })
    .unwrap();
    let mut config = fast(stub.endpoint());
    config.timeout = Duration::from_millis(100);
    config.retries = 1;
    let client = RemoteProvider::new(config);
    let err = client.next_token_logits(&request("image 1")).unwrap_err();
    assert!(matches!(err, Error::Timeout { attempts: 2 }), "{err:?}");
}

#[test]
fn unreachable_endpoint_is_a_transport_error() {
    // Bind then drop, so the port is very likely closed.
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut config = fast(format!("http://127.0.0.1:{port}"));
    config.retries = 1;
    let client = RemoteProvider::new(config);
    let err = client.next_token_logits(&request("image 1")).unwrap_err();
    assert!(matches!(err, Error::Transport { attempts: 2, .. }), "{err:?}");
}

#[test]
fn vocabulary_is_pinned() {
    let stub = StubServer::start(StubBehavior::Sequence(vec![
        StubBehavior::Fixed(LogitVector::new(vec![1.0], "vocab-a").unwrap()),
        StubBehavior::Fixed(LogitVector::new(vec![1.0], "vocab-a").unwrap()),
        StubBehavior::Fixed(LogitVector::new(vec![1.0], "vocab-b").unwrap()),
    ]))
    .unwrap();
    let client = RemoteProvider::new(fast(stub.endpoint()));
    client.next_token_logits(&request("image 1")).unwrap();
    client.next_token_logits(&request("image 1")).unwrap();
    let err = client.next_token_logits(&request("image 1")).unwrap_err();
    match err {
        Error::VocabMismatch { expected, found } => {
            assert_eq!((expected.as_str(), found.as_str()), ("vocab-a", "vocab-b"));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn health_reports_metadata() {
    let model = Arc::new(SyntheticModel::new(SyntheticModelConfig::default()).unwrap());
    let stub = StubServer::start(StubBehavior::Serve(model)).unwrap();
    let client = RemoteProvider::new(fast(stub.endpoint()));
    let health = client.health().unwrap();
    assert_eq!(health["version"], 1);
    assert_eq!(health["vocab_size"], 32);
}

#[test]
fn malformed_request_gets_an_error_object_and_the_server_survives() {
    let model = Arc::new(SyntheticModel::new(SyntheticModelConfig::default()).unwrap());
    let stub = StubServer::start(StubBehavior::Serve(model)).unwrap();
    let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
    let mut response = agent
        .post(&format!("{}/logits", stub.endpoint()))
        .header("content-type", "application/json")
        .send("{\"protocol_version\": 1, \"images\": 5}")
        .unwrap();
    assert_eq!(response.status().as_u16(), 400);
    let body: serde_json::Value = serde_json::from_str(&response.body_mut().read_to_string().unwrap()).unwrap();
    assert_eq!(body["error"]["code"], "bad_request");
    let client = RemoteProvider::new(fast(stub.endpoint()));
    assert!(client.next_token_logits(&request("image 1")).is_ok());
}

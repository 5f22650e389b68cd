use std::sync::Arc;

use sandi_service::client::{Client, HttpTransport};
use sandi_service::config::ClockMode;
use sandi_service::harness::{self, embedded_seed, embedded_service, RunSpec};
use sandi_service::{http, Service};

fn scenario(name: &str) -> RunSpec {
    let path = format!("{}/scenarios/{name}.toml", env!("CARGO_MANIFEST_DIR"));
    RunSpec::from_toml(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Serves `service` on an ephemeral port from a background runtime.
fn spawn_http(service: Arc<Service>) -> String {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let runtime = tokio::runtime::Runtime::new().unwrap();
        runtime.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            http::serve(service, listener).await.unwrap();
        });
    });
    format!("http://{}", rx.recv().unwrap())
}

#[test]
fn http_and_in_process_runs_agree() {
    let spec = scenario("e2e");
    let seed = 11;
    let (local, local_service) = harness::run_embedded(&spec, seed).unwrap();

    let remote_service = Arc::new(
        Service::new(
            spec.config.to_as_config().unwrap(),
            ClockMode::Manual,
            Some(embedded_seed(seed)),
        )
        .unwrap(),
    );
    let base = spawn_http(remote_service.clone());
    let remote = harness::run(&spec, seed, &Client::new(HttpTransport::new(base))).unwrap();

    assert_eq!(local.senders, remote.senders);
    assert_eq!(local.mismatches, remote.mismatches);
    assert_eq!(local.transcript(), remote.transcript());
    assert_eq!(
        local_service.server().stored_token_count(),
        remote_service.server().stored_token_count()
    );
}

#[test]
fn e2e_scenario_meets_its_expectations() {
    let spec = scenario("e2e");
    let service = embedded_service(&spec, 3).unwrap();
    let mut stored = 0;
    let mut reports = Vec::new();
    let result = harness::run_observed(&spec, 3, &Client::new(&service), &mut |event| {
        if event["op"] == "roll" {
            return;
        }
        let now = service.server().stored_token_count();
        if matches!(event["op"].as_str(), Some("report" | "replay")) {
            reports.push((
                event["op"].as_str().unwrap().to_owned(),
                event["result"].clone(),
                now - stored,
            ));
        }
        stored = now;
    })
    .unwrap();
    assert!(result.mismatches.is_empty(), "{:?}", result.mismatches);
    assert!(result.all_accepted());
    let added = |op: &str, result: &str| -> Vec<usize> {
        reports
            .iter()
            .filter(|r| r.0 == op && r.1 == result)
            .map(|r| r.2)
            .collect()
    };
    assert_eq!(added("report", "ok"), vec![1; 5]);
    // The duplicate and the late submission add nothing.
    assert_eq!(added("replay", "ok"), vec![0]);
    assert_eq!(added("replay", "expired"), vec![0]);
    for sender in &result.senders {
        assert_eq!(sender.verdicts.len(), sender.noisy_counts.len());
        assert!(!sender.verdicts.is_empty());
    }
}

#[test]
fn replayed_seed_reproduces_the_transcript() {
    let spec = scenario("e2e");
    let a = harness::run_embedded(&spec, 21).unwrap().0;
    let b = harness::run_embedded(&spec, 21).unwrap().0;
    assert_eq!(a, b);
}

#[test]
fn dummy_reports_are_shown_and_verified() {
    let spec = scenario("dummies");
    let (result, _) = harness::run_embedded(&spec, 4).unwrap();
    assert!(result.success(), "{:?}", result.mismatches);
    let dan = &result.senders[0];
    // Roll 2 counts the one real report plus however many dummies survived.
    assert!(
        (1..=6).contains(&dan.noisy_counts[2]),
        "{:?}",
        dan.noisy_counts
    );
}

#[test]
fn http_status_codes_follow_the_outcome() {
    let service = Arc::new(Service::new(Default::default(), ClockMode::Manual, Some(1)).unwrap());
    let base = spawn_http(service);
    let client = reqwest::blocking::Client::new();
    let ok = client.get(format!("{base}/v1/params")).send().unwrap();
    assert_eq!(ok.status(), 200);
    let bad = client
        .post(format!("{base}/v1/report"))
        .body(vec![1, 2, 3])
        .send()
        .unwrap();
    assert_eq!(bad.status(), 400);
    let missing = client.post(format!("{base}/v1/nowhere")).send().unwrap();
    assert_eq!(missing.status(), 404);
}

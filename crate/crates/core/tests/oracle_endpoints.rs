use std::sync::Arc;

use recall_audit::batch::{query_items, BatchItem};
use recall_audit::domains::DomainRegistry;
use recall_audit::oracle::{
    load_cassette, network_request_count, CassetteRecorder, EndpointConfig, MixedRoutingPolicy, OracleHandle,
    ScriptedEndpoint,
};

const N: usize = 2000;

fn subjects() -> Vec<(String, f64)> {
    (0..N).map(|i| (format!("test isotope {i:04}"), 1.0 + i as f64)).collect()
}

fn endpoint(identity: &str, rows: &[(String, f64)], noise: f64, seed: u64) -> ScriptedEndpoint {
    ScriptedEndpoint::from_subjects(
        identity,
        &DomainRegistry::builtin(),
        rows.iter().map(|(s, v)| ("chromosome-count", s.as_str(), *v, false)),
        noise,
        seed,
    )
    .unwrap()
}

fn mismatch_rate(h: &OracleHandle, rows: &[(String, f64)]) -> f64 {
    let registry = DomainRegistry::builtin();
    let spec = registry.get("chromosome-count").unwrap();
    let prompts: Vec<String> = rows.iter().map(|(s, _)| spec.render(s).unwrap()).collect();
    let items: Vec<BatchItem> = prompts.iter().map(|p| BatchItem { prompt: p, spec }).collect();
    let outcomes = query_items(h, &items, &EndpointConfig::audit(), 10).unwrap();
    let wrong = outcomes.iter().zip(rows).filter(|(o, (_, v))| !o.matches(spec, *v)).count();
    wrong as f64 / rows.len() as f64
}

#[test]
fn scripted_noise_concentrates_at_its_rate() {
    let rows = subjects();
    for noise in [0.0, 0.05, 0.2] {
        let h = OracleHandle::scripted(endpoint("s", &rows, noise, 3)).build();
        let rate = mismatch_rate(&h, &rows);
        let sd = (noise * (1.0 - noise) / N as f64).sqrt();
        assert!((rate - noise).abs() <= 4.0 * sd + 1e-12, "noise {noise}: observed {rate}");
    }
}

#[test]
fn mixed_routing_serves_the_substitute_at_rate_pi() {
    let rows = subjects();
    let pi = 0.3;
    let policy = MixedRoutingPolicy {
        pi,
        reference: OracleHandle::scripted(endpoint("ref", &rows, 0.0, 1)).build(),
        substitute: OracleHandle::scripted(endpoint("sub", &rows, 1.0, 2)).build(),
        seed: 9,
    };
    let h = OracleHandle::mixed(policy).unwrap().build();
    // Batch size 1 routes every probe independently.
    let registry = DomainRegistry::builtin();
    let spec = registry.get("chromosome-count").unwrap();
    let prompts: Vec<String> = rows.iter().map(|(s, _)| spec.render(s).unwrap()).collect();
    let items: Vec<BatchItem> = prompts.iter().map(|p| BatchItem { prompt: p, spec }).collect();
    let outcomes = query_items(&h, &items, &EndpointConfig::audit(), 1).unwrap();
    let wrong = outcomes.iter().zip(&rows).filter(|(o, (_, v))| !o.matches(spec, *v)).count() as f64;
    let served = h.substitute_served().unwrap() as f64;
    assert_eq!(served, wrong);
    let sd = (pi * (1.0 - pi) / N as f64).sqrt();
    assert!((served / N as f64 - pi).abs() <= 4.0 * sd, "served {served}");
}

#[test]
fn recorded_cassette_replays_identically() {
    let rows: Vec<(String, f64)> = subjects().into_iter().take(60).collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.jsonl");
    let before = network_request_count();
    let recorder = Arc::new(CassetteRecorder::create(&path).unwrap());
    let live = OracleHandle::scripted(endpoint("s", &rows, 0.3, 5)).record_to(recorder).build();
    let a = mismatch_rate(&live, &rows);
    drop(live);
    let transcripts = load_cassette(&path).unwrap();
    assert_eq!(transcripts.len(), 6);
    let replay = OracleHandle::replay("s", &transcripts).build();
    assert_eq!(mismatch_rate(&replay, &rows), a);
    assert_eq!(network_request_count(), before);
}

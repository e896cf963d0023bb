//! Shared helpers for integration tests: a scripted HTTP stub service
//! and deterministic synthetic corpus/query fixtures.

#![allow(dead_code)]

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::thread::JoinHandle;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct StubService {
    pub url: String,
    handle: Option<JoinHandle<Vec<serde_json::Value>>>,
}

impl StubService {
    /// Wait for all scripted exchanges and return the request bodies the
    /// service received, in order.
    pub fn finish(mut self) -> Vec<serde_json::Value> {
        self.handle.take().unwrap().join().unwrap()
    }
}

/// Serve the scripted `(status, body)` responses to sequential POSTs on a
/// fresh local port.
pub fn spawn_stub(responses: Vec<(u16, String)>) -> StubService {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let handle = std::thread::spawn(move || {
        let mut received = Vec::new();
        for (status, body) in responses {
            let (mut stream, _) = listener.accept().unwrap();
            received.push(read_request_body(&mut stream));
            let reason = match status {
                200 => "OK",
                400 => "Bad Request",
                500 => "Internal Server Error",
                503 => "Service Unavailable",
                _ => "Status",
            };
            let response = format!(
                "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(response.as_bytes()).unwrap();
        }
        received
    });
    StubService {
        url: format!("http://{addr}"),
        handle: Some(handle),
    }
}

fn read_request_body(stream: &mut TcpStream) -> serde_json::Value {
    let mut buf = Vec::new();
    let mut chunk = [0u8; 4096];
    let header_end = loop {
        let n = stream.read(&mut chunk).unwrap();
        assert!(n > 0, "connection closed before headers completed");
        buf.extend_from_slice(&chunk[..n]);
        if let Some(pos) = buf.windows(4).position(|w| w == b"\r\n\r\n") {
            break pos + 4;
        }
    };
    let headers = String::from_utf8_lossy(&buf[..header_end]).to_lowercase();
    let content_length: usize = headers
        .lines()
        .find_map(|l| l.strip_prefix("content-length:"))
        .map(|v| v.trim().parse().unwrap())
        .unwrap_or(0);
    while buf.len() < header_end + content_length {
        let n = stream.read(&mut chunk).unwrap();
        assert!(n > 0, "connection closed before body completed");
        buf.extend_from_slice(&chunk[..n]);
    }
    serde_json::from_slice(&buf[header_end..header_end + content_length]).unwrap()
}

/// Deterministic synthetic KB + query fixture. Each article gets a
/// topical slice of the vocabulary plus some shared filler words;
/// questions and rewrites sample words from their source article, so
/// retrieval has real signal without being trivial.
pub struct Fixture {
    pub corpus_path: PathBuf,
    pub query_path: PathBuf,
}

pub fn write_fixture(
    dir: &Path,
    seed: u64,
    n_articles: usize,
    n_queries: usize,
) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab: Vec<String> = (0..400).map(|i| format!("term{i:03}")).collect();
    let filler: Vec<String> = (0..40).map(|i| format!("common{i:02}")).collect();

    let mut articles = Vec::new();
    let mut corpus_lines = String::new();
    for a in 0..n_articles {
        let slice_start = (a * 7) % (vocab.len() - 30);
        let topical = &vocab[slice_start..slice_start + 30];
        let len = rng.gen_range(60..140);
        let words: Vec<&str> = (0..len)
            .map(|_| {
                if rng.gen_bool(0.7) {
                    topical[rng.gen_range(0..topical.len())].as_str()
                } else {
                    filler[rng.gen_range(0..filler.len())].as_str()
                }
            })
            .collect();
        let kb_id = format!("KB{a:03}");
        let product = format!("prod{}", a % 3);
        let text = words.join(" ");
        corpus_lines.push_str(
            &serde_json::json!({
                "kb_id": kb_id,
                "text": text,
                "metadata": { "product": product },
            })
            .to_string(),
        );
        corpus_lines.push('\n');
        articles.push((kb_id, words.iter().map(|w| w.to_string()).collect::<Vec<_>>(), product));
    }

    let mut query_lines = String::new();
    for q in 0..n_queries {
        let (kb_id, words, product) = &articles[q % articles.len()];
        let sample = |rng: &mut ChaCha8Rng, n: usize| -> String {
            let mut picked: Vec<&String> = words.as_slice().choose_multiple(rng, n).collect();
            picked.shuffle(rng);
            picked
                .iter()
                .map(|w| w.as_str())
                .collect::<Vec<_>>()
                .join(" ")
        };
        let question = format!("how to {}", sample(&mut rng, 5));
        let q2: serde_json::Value = serde_json::json!({
            "p1": format!("steps for {}", sample(&mut rng, 4)),
            "p2": format!("troubleshoot {}", sample(&mut rng, 4)),
            "p3": format!("resolve {}", sample(&mut rng, 4)),
        });
        query_lines.push_str(
            &serde_json::json!({
                "question": question,
                "ground_truth": [kb_id],
                "metadata": { "product": product },
                "q2": q2,
            })
            .to_string(),
        );
        query_lines.push('\n');
    }

    let corpus_path = dir.join("corpus.jsonl");
    let query_path = dir.join("queries.jsonl");
    std::fs::write(&corpus_path, corpus_lines).unwrap();
    std::fs::write(&query_path, query_lines).unwrap();
    Fixture {
        corpus_path,
        query_path,
    }
}

/// A minimal run config over a fixture, using the offline embedder and
/// lexical reranker.
pub fn fixture_config(fixture: &Fixture, out_dir: &Path) -> fusebench_core::harness::RunConfig {
    let toml = format!(
        "corpus_path = {corpus:?}\nquery_path = {queries:?}\nout_dir = {out:?}\nchunk_size = 32\nreplay = true\n",
        corpus = fixture.corpus_path.display().to_string(),
        queries = fixture.query_path.display().to_string(),
        out = out_dir.display().to_string(),
    );
    let name = out_dir.file_name().unwrap().to_string_lossy();
    let path = out_dir.parent().unwrap().join(format!("cfg-{name}.toml"));
    std::fs::write(&path, toml).unwrap();
    fusebench_core::harness::RunConfig::load(&path).unwrap()
}

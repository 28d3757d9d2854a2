#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::thread;

use chrono::{TimeZone, Utc};
use seedvote::ingest::{FilterSpec, Fixture};
use seedvote::{Label, ReviewSample};

#[derive(Debug, Clone)]
pub struct Recorded {
    pub path: String,
    pub headers: Vec<(String, String)>,
    pub body: serde_json::Value,
}

impl Recorded {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v.as_str())
    }
}

/// Minimal HTTP/1.1 server answering each connection with the next
/// scripted `(status, body)` pair (the last one repeats).
pub struct StubServer {
    pub url: String,
    pub requests: Arc<Mutex<Vec<Recorded>>>,
}

impl StubServer {
    pub fn start(responses: Vec<(u16, String)>) -> StubServer {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let log = Arc::clone(&requests);
        thread::spawn(move || {
            for (i, stream) in listener.incoming().enumerate() {
                let Ok(mut stream) = stream else { break };
                let (status, body) = responses[i.min(responses.len() - 1)].clone();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut request_line = String::new();
                if reader.read_line(&mut request_line).is_err() {
                    continue;
                }
                let path = request_line.split_whitespace().nth(1).unwrap_or("").to_string();
                let mut headers = Vec::new();
                let mut content_length = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    let line = line.trim_end();
                    if line.is_empty() {
                        break;
                    }
                    if let Some((k, v)) = line.split_once(':') {
                        if k.eq_ignore_ascii_case("content-length") {
                            content_length = v.trim().parse().unwrap();
                        }
                        headers.push((k.trim().to_string(), v.trim().to_string()));
                    }
                }
                let mut buf = vec![0; content_length];
                reader.read_exact(&mut buf).unwrap();
                let request_body = serde_json::from_slice(&buf).unwrap_or(serde_json::Value::Null);
                log.lock().unwrap().push(Recorded { path, headers, body: request_body });
                let response = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                let _ = stream.write_all(response.as_bytes());
            }
        });
        StubServer { url, requests }
    }

    pub fn requests(&self) -> Vec<Recorded> {
        self.requests.lock().unwrap().clone()
    }
}

pub fn sample(id: &str, user: &str, text: &str, stars: i64) -> ReviewSample {
    ReviewSample {
        sample_id: id.into(),
        user_id: user.into(),
        business_id: "biz".into(),
        text: text.into(),
        stars: Label::new(stars).unwrap(),
        posted_at: Utc.with_ymd_and_hms(2021, 6, 1, 12, 0, 0).unwrap(),
    }
}

/// Fixture of `n` samples with truth cycling through 1..=5.
pub fn synthetic_fixture(n: usize) -> Fixture {
    let mut test_set: Vec<ReviewSample> = (0..n)
        .map(|i| {
            sample(&format!("rev-{i:05}"), &format!("user-{i:05}"), &format!("Review number {i}."), (i % 5 + 1) as i64)
        })
        .collect();
    test_set.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    Fixture {
        test_set,
        oneshot_example: sample("example", "user-example", "Wonderful dinner, attentive staff.", 5),
        sampling_seed: 42,
        filter_spec: FilterSpec::default(),
    }
}

pub fn write_fixture(dir: &Path, n: usize) -> std::path::PathBuf {
    let path = dir.join(format!("fixture-{n}.jsonl"));
    synthetic_fixture(n).save(&path).unwrap();
    path
}

//! Local HTTP stand-in for a remote reasoner.
#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

use serde_json::{json, Value};

#[derive(Clone, Copy, Debug)]
pub enum Behavior {
    /// Answer every box: keep when it has at least 5 points.
    Verdicts,
    /// HTTP 500 for the first `n` requests, then `Verdicts`.
    FailFirst(usize),
    /// 200 with a body that is not a verdict document.
    Malformed,
    /// 401 on every request.
    Unauthorized,
    /// Like `Verdicts` but every even box id gets an out-of-range score.
    BadScores,
}

pub struct MockServer {
    pub url: String,
    pub hits: Arc<AtomicUsize>,
}

pub fn spawn(behavior: Behavior) -> MockServer {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind");
    let url = format!("http://{}/v1/reason", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    thread::spawn(move || {
        for stream in listener.incoming().flatten() {
            let n = counter.fetch_add(1, Ordering::SeqCst);
            thread::spawn(move || handle(stream, behavior, n));
        }
    });
    MockServer { url, hits }
}

fn handle(stream: TcpStream, behavior: Behavior, n: usize) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                length = v.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0u8; length];
    reader.read_exact(&mut body).unwrap();
    let request: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
    let (status, text) = match behavior {
        Behavior::Unauthorized => (401, "{}".to_string()),
        Behavior::FailFirst(k) if n < k => (500, "busy".to_string()),
        Behavior::Malformed => (200, "{\"answer\": \"looks fine\"}".to_string()),
        Behavior::BadScores => (200, verdicts(&request, true)),
        _ => (200, verdicts(&request, false)),
    };
    let mut stream = stream;
    let _ = write!(
        stream,
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
        text.len()
    );
}

fn verdicts(request: &Value, bad_even: bool) -> String {
    let items = request["cue_payload"].as_array().cloned().unwrap_or_default();
    let out: Vec<Value> = items
        .iter()
        .map(|c| {
            let id = c["box_id"].as_u64().unwrap_or(0);
            let keep = c["point_count"].as_u64().unwrap_or(0) >= 5;
            let class = match c["class"].as_str() {
                Some("unknown") | None => "vehicle",
                Some(s) => s,
            };
            let score = if bad_even && id % 2 == 0 { 1.5 } else if keep { 0.8 } else { 0.2 };
            json!({ "box_id": id, "keep": keep, "score": score, "dl": 0.0, "dw": 0.0, "dh": 0.0, "class": class })
        })
        .collect();
    json!({ "verdicts": out }).to_string()
}

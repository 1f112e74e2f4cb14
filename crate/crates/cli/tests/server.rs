use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use serde_json::{json, Value};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpStream;

use lattice_eit_cli::server::{router, AppState};
use lattice_eit_core::service::{RuleTable, SessionConfig, TickMessage};

async fn start() -> SocketAddr {
    let config = SessionConfig {
        tick_hz: 50.0,
        ..SessionConfig::default()
    };
    let state = Arc::new(AppState::new(config, None, None, RuleTable::bundled()));
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, router(state)).await.unwrap() });
    addr
}

async fn request(addr: SocketAddr, method: &str, path: &str, body: Option<Value>) -> (u16, Value) {
    let mut s = TcpStream::connect(addr).await.unwrap();
    let body = body.map(|b| b.to_string()).unwrap_or_default();
    let content_type = if body.is_empty() { "" } else { "Content-Type: application/json\r\n" };
    let req = format!(
        "{method} {path} HTTP/1.1\r\nHost: test\r\nConnection: close\r\n{content_type}Content-Length: {}\r\n\r\n{body}",
        body.len()
    );
    s.write_all(req.as_bytes()).await.unwrap();
    let mut raw = String::new();
    s.read_to_string(&mut raw).await.unwrap();
    let (head, body) = raw.split_once("\r\n\r\n").unwrap();
    let status = head.split(' ').nth(1).unwrap().parse().unwrap();
    (status, serde_json::from_str(body).unwrap_or(Value::Null))
}

/// Opens an event stream and returns the first `n` messages.
async fn read_stream(addr: SocketAddr, id: u64, n: usize) -> Vec<TickMessage> {
    let mut s = TcpStream::connect(addr).await.unwrap();
    let req = format!("GET /sessions/{id}/stream HTTP/1.1\r\nHost: test\r\nAccept: text/event-stream\r\n\r\n");
    s.write_all(req.as_bytes()).await.unwrap();
    let mut buf = String::new();
    let mut out = Vec::new();
    let mut chunk = [0u8; 65536];
    while out.len() < n {
        let k = s.read(&mut chunk).await.unwrap();
        assert!(k > 0, "stream closed early");
        buf.push_str(std::str::from_utf8(&chunk[..k]).unwrap());
        while let Some(i) = buf.find('\n') {
            let line: String = buf.drain(..=i).collect();
            if let Some(data) = line.trim_end().strip_prefix("data: ") {
                out.push(serde_json::from_str(data).unwrap());
            }
        }
    }
    out.truncate(n);
    out
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn session_lifecycle_and_errors() {
    let addr = start().await;
    let (status, created) = request(addr, "POST", "/sessions", None).await;
    assert_eq!(status, 201);
    let id = created["id"].as_u64().unwrap();

    let down = json!({"id": 1, "kind": "down", "x": 20.0, "y": 50.0, "depth": 2.0});
    let (status, acks) = request(addr, "POST", &format!("/sessions/{id}/events"), Some(down)).await;
    assert_eq!(status, 200);
    assert_eq!(acks[0]["active_touches"], 1);

    let bad = [
        json!({"id": 7, "kind": "move", "x": 20.0, "y": 50.0}),
        json!({"id": 2, "kind": "down", "x": 150.0, "y": 50.0}),
    ];
    for b in bad {
        let (status, err) = request(addr, "POST", &format!("/sessions/{id}/events"), Some(b)).await;
        assert_eq!(status, 422, "{err}");
    }

    tokio::time::sleep(Duration::from_millis(200)).await;
    let (status, latest) = request(addr, "GET", &format!("/sessions/{id}/latest"), None).await;
    assert_eq!(status, 200);
    assert!(latest["seq"].as_u64().unwrap() >= 1);
    assert_eq!(latest["dv"].as_array().unwrap().len(), 104);

    let (_, stats) = request(addr, "GET", &format!("/sessions/{id}/stats"), None).await;
    assert!(stats["ticks"].as_u64().unwrap() >= 1);

    assert_eq!(request(addr, "DELETE", &format!("/sessions/{id}"), None).await.0, 204);
    assert_eq!(request(addr, "GET", &format!("/sessions/{id}/latest"), None).await.0, 404);

    let (status, _) = request(addr, "POST", "/sessions", Some(json!({"method": "linear"}))).await;
    assert_eq!(status, 400);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn stream_clients_agree_and_stay_ordered() {
    let addr = start().await;
    let (_, created) = request(addr, "POST", "/sessions", Some(json!({"seed": 9}))).await;
    let id = created["id"].as_u64().unwrap();
    request(
        addr,
        "POST",
        &format!("/sessions/{id}/events"),
        Some(json!([{"id": 1, "kind": "down", "x": 80.0, "y": 30.0, "depth": 1.5}])),
    )
    .await;

    let (a, b) = tokio::join!(read_stream(addr, id, 20), read_stream(addr, id, 20));
    for s in [&a, &b] {
        assert!(s.windows(2).all(|w| w[1].seq > w[0].seq));
    }
    let mut common = 0;
    for m in &a {
        if let Some(o) = b.iter().find(|o| o.seq == m.seq) {
            assert_eq!(m, o);
            common += 1;
        }
    }
    assert!(common >= 15);

    let late = read_stream(addr, id, 1).await;
    assert!(late[0].seq >= a[0].seq);
    assert_eq!(late[0].dv.len(), 104);
    assert_eq!(late[0].img.len(), 3072);
}

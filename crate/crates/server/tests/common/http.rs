//! Minimal HTTP client helpers and an in-process server.

use std::sync::Arc;

use serde_json::Value;
use xaistore::platform::Platform;

pub struct TestServer {
    pub base: String,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl TestServer {
    pub fn start(platform: Arc<Platform>) -> Self {
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        listener.set_nonblocking(true).unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            let rt = tokio::runtime::Runtime::new().unwrap();
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener).unwrap();
                axum::serve(listener, xaistore_server::api::router(platform))
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await
                    .unwrap();
            })
        });
        Self { base, shutdown: Some(tx), thread: Some(thread) }
    }
}

impl Drop for TestServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn agent() -> ureq::Agent {
    ureq::Agent::config_builder().http_status_as_error(false).build().into()
}

fn finish(resp: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> (u16, Value) {
    let mut resp = resp.expect("transport");
    let status = resp.status().as_u16();
    let text = resp.body_mut().read_to_string().unwrap_or_default();
    let body = serde_json::from_str(&text).unwrap_or(Value::String(text));
    (status, body)
}

pub fn get(base: &str, path: &str, user: Option<&str>) -> (u16, Value) {
    let mut req = agent().get(format!("{base}{path}"));
    if let Some(u) = user {
        req = req.header("X-User-Id", u);
    }
    finish(req.call())
}

pub fn post(base: &str, path: &str, user: Option<&str>, body: &Value) -> (u16, Value) {
    let mut req = agent().post(format!("{base}{path}"));
    if let Some(u) = user {
        req = req.header("X-User-Id", u);
    }
    finish(req.send_json(body))
}

pub fn post_raw(base: &str, path: &str, content_type: &str, body: &[u8]) -> (u16, Value) {
    finish(agent().post(format!("{base}{path}")).header("Content-Type", content_type).send(body))
}

pub fn upload_csv(base: &str, user: Option<&str>, csv: &[u8]) -> (u16, Value) {
    let boundary = "xaistore-test-boundary";
    let mut body = Vec::new();
    body.extend_from_slice(
        format!(
            "--{boundary}\r\nContent-Disposition: form-data; name=\"file\"; filename=\"data.csv\"\r\nContent-Type: text/csv\r\n\r\n"
        )
        .as_bytes(),
    );
    body.extend_from_slice(csv);
    body.extend_from_slice(format!("\r\n--{boundary}--\r\n").as_bytes());
    let mut req = agent()
        .post(format!("{base}/datasets"))
        .header("Content-Type", format!("multipart/form-data; boundary={boundary}"));
    if let Some(u) = user {
        req = req.header("X-User-Id", u);
    }
    finish(req.send(&body[..]))
}

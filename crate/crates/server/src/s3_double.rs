//! In-process S3-compatible server for tests and offline demos.
//!
//! Supports PutObject, GetObject and ListObjectsV2 with path-style
//! addressing. Every request must carry a valid SigV4 signature for the
//! configured credentials. Buckets are created on first write.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{OriginalUri, Path, Query, State};
use axum::http::{HeaderMap, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use quick_xml::escape::escape;
use tokio::sync::oneshot;
use xaistore::store::sigv4::{self, Credentials, SignableRequest};
use xaistore::store::S3Config;

const DEFAULT_MAX_KEYS: usize = 1000;

type Buckets = BTreeMap<String, BTreeMap<String, Vec<u8>>>;

struct Inner {
    creds: Credentials,
    buckets: Mutex<Buckets>,
    page_size: usize,
    requests: AtomicUsize,
    rejected: AtomicUsize,
    unavailable: AtomicBool,
}

pub struct S3Double {
    addr: SocketAddr,
    inner: Arc<Inner>,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl S3Double {
    pub const ACCESS_KEY: &'static str = "test-access-key";
    pub const SECRET_KEY: &'static str = "test-secret-key";
    pub const REGION: &'static str = "us-east-1";

    pub fn start() -> std::io::Result<Self> {
        Self::start_with_page_size(DEFAULT_MAX_KEYS)
    }

    /// Listing responses hold at most `page_size` keys per page.
    pub fn start_with_page_size(page_size: usize) -> std::io::Result<Self> {
        let inner = Arc::new(Inner {
            creds: Credentials {
                access_key: Self::ACCESS_KEY.into(),
                secret_key: Self::SECRET_KEY.into(),
                region: Self::REGION.into(),
                service: "s3".into(),
            },
            buckets: Mutex::new(BTreeMap::new()),
            page_size: page_size.max(1),
            requests: AtomicUsize::new(0),
            rejected: AtomicUsize::new(0),
            unavailable: AtomicBool::new(false),
        });
        let std_listener = std::net::TcpListener::bind("127.0.0.1:0")?;
        std_listener.set_nonblocking(true)?;
        let addr = std_listener.local_addr()?;
        let (tx, rx) = oneshot::channel::<()>();
        let app = Router::new()
            .route("/{bucket}", get(list_objects))
            .route("/{bucket}/{*key}", get(get_object).put(put_object))
            .with_state(inner.clone());
        let runtime = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
        let thread = std::thread::spawn(move || {
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(std_listener).expect("listener");
                let _ = axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await;
            })
        });
        Ok(Self { addr, inner, shutdown: Some(tx), thread: Some(thread) })
    }

    pub fn endpoint(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn config(&self, bucket_prefix: &str) -> S3Config {
        S3Config {
            endpoint: self.endpoint(),
            region: Self::REGION.into(),
            access_key: Self::ACCESS_KEY.into(),
            secret_key: Self::SECRET_KEY.into(),
            bucket_prefix: bucket_prefix.into(),
        }
    }

    pub fn request_count(&self) -> usize {
        self.inner.requests.load(Ordering::SeqCst)
    }

    /// Requests refused for a bad or missing signature.
    pub fn rejected_count(&self) -> usize {
        self.inner.rejected.load(Ordering::SeqCst)
    }

    /// While set, every request is answered with 503.
    pub fn set_unavailable(&self, unavailable: bool) {
        self.inner.unavailable.store(unavailable, Ordering::SeqCst);
    }

    pub fn object(&self, bucket: &str, key: &str) -> Option<Vec<u8>> {
        self.inner.buckets.lock().unwrap().get(bucket).and_then(|b| b.get(key).cloned())
    }

    pub fn keys(&self, bucket: &str) -> Vec<String> {
        self.inner
            .buckets
            .lock()
            .unwrap()
            .get(bucket)
            .map(|b| b.keys().cloned().collect())
            .unwrap_or_default()
    }
}

impl Drop for S3Double {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn s3_error(status: StatusCode, code: &str, message: &str) -> Response {
    let body = format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<Error><Code>{code}</Code><Message>{}</Message></Error>",
        escape(message)
    );
    (status, [("content-type", "application/xml")], body).into_response()
}

/// Checks availability and the request signature.
#[allow(clippy::result_large_err)]
fn admit(inner: &Inner, method: &Method, uri: &OriginalUri, query: &[(String, String)], headers: &HeaderMap, body: &[u8]) -> Result<(), Response> {
    inner.requests.fetch_add(1, Ordering::SeqCst);
    if inner.unavailable.load(Ordering::SeqCst) {
        return Err(s3_error(StatusCode::SERVICE_UNAVAILABLE, "ServiceUnavailable", "service unavailable"));
    }
    let deny = |msg: &str| {
        inner.rejected.fetch_add(1, Ordering::SeqCst);
        s3_error(StatusCode::FORBIDDEN, "SignatureDoesNotMatch", msg)
    };
    let header = |name: &str| headers.get(name).and_then(|v| v.to_str().ok());
    let auth = header("authorization")
        .and_then(sigv4::parse_authorization)
        .ok_or_else(|| deny("missing or malformed authorization"))?;
    if auth.access_key != inner.creds.access_key || auth.region != inner.creds.region || auth.service != "s3" {
        return Err(deny("unknown credential scope"));
    }
    let payload_sha = header("x-amz-content-sha256").ok_or_else(|| deny("missing x-amz-content-sha256"))?;
    if payload_sha != sigv4::sha256_hex(body) {
        return Err(deny("payload hash mismatch"));
    }
    let mut signed = Vec::new();
    for name in &auth.signed_headers {
        let value = header(name).ok_or_else(|| deny("signed header missing"))?;
        signed.push((name.clone(), value.to_string()));
    }
    let expected = sigv4::signature(
        &inner.creds,
        &SignableRequest {
            method: method.as_str(),
            path: uri.path(),
            query,
            headers: &signed,
            payload_sha256: payload_sha,
        },
    );
    if expected != auth.signature {
        return Err(deny("signature mismatch"));
    }
    Ok(())
}

async fn put_object(
    State(inner): State<Arc<Inner>>,
    method: Method,
    uri: OriginalUri,
    Path((bucket, key)): Path<(String, String)>,
    Query(query): Query<Vec<(String, String)>>,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    if let Err(r) = admit(&inner, &method, &uri, &query, &headers, &body) {
        return r;
    }
    inner.buckets.lock().unwrap().entry(bucket).or_default().insert(key, body.to_vec());
    StatusCode::OK.into_response()
}

async fn get_object(
    State(inner): State<Arc<Inner>>,
    method: Method,
    uri: OriginalUri,
    Path((bucket, key)): Path<(String, String)>,
    Query(query): Query<Vec<(String, String)>>,
    headers: HeaderMap,
) -> Response {
    if let Err(r) = admit(&inner, &method, &uri, &query, &headers, &[]) {
        return r;
    }
    let buckets = inner.buckets.lock().unwrap();
    match buckets.get(&bucket) {
        None => s3_error(StatusCode::NOT_FOUND, "NoSuchBucket", &bucket),
        Some(b) => match b.get(&key) {
            None => s3_error(StatusCode::NOT_FOUND, "NoSuchKey", &key),
            Some(data) => (StatusCode::OK, data.clone()).into_response(),
        },
    }
}

async fn list_objects(
    State(inner): State<Arc<Inner>>,
    method: Method,
    uri: OriginalUri,
    Path(bucket): Path<String>,
    Query(query): Query<Vec<(String, String)>>,
    headers: HeaderMap,
) -> Response {
    if let Err(r) = admit(&inner, &method, &uri, &query, &headers, &[]) {
        return r;
    }
    let params: HashMap<&str, &str> = query.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
    if params.get("list-type") != Some(&"2") {
        return s3_error(StatusCode::BAD_REQUEST, "InvalidArgument", "only ListObjectsV2 is supported");
    }
    let prefix = params.get("prefix").copied().unwrap_or("");
    let max_keys = params
        .get("max-keys")
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or(DEFAULT_MAX_KEYS)
        .min(inner.page_size);
    let after = match params.get("continuation-token") {
        Some(t) => match hex_decode(t) {
            Some(k) => Some(k),
            None => return s3_error(StatusCode::BAD_REQUEST, "InvalidArgument", "bad continuation token"),
        },
        None => None,
    };
    let buckets = inner.buckets.lock().unwrap();
    let Some(objects) = buckets.get(&bucket) else {
        return s3_error(StatusCode::NOT_FOUND, "NoSuchBucket", &bucket);
    };
    let mut matching = objects
        .range::<String, _>((
            after.map_or(std::ops::Bound::Unbounded, std::ops::Bound::Excluded),
            std::ops::Bound::Unbounded,
        ))
        .filter(|(k, _)| k.starts_with(prefix));
    let page: Vec<(&String, &Vec<u8>)> = matching.by_ref().take(max_keys).collect();
    let truncated = matching.next().is_some();

    let mut xml = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    xml.push_str("<ListBucketResult xmlns=\"http://s3.amazonaws.com/doc/2006-03-01/\">");
    xml.push_str(&format!(
        "<Name>{}</Name><Prefix>{}</Prefix><KeyCount>{}</KeyCount><MaxKeys>{max_keys}</MaxKeys><IsTruncated>{truncated}</IsTruncated>",
        escape(bucket.as_str()),
        escape(prefix),
        page.len()
    ));
    for (key, data) in &page {
        xml.push_str(&format!("<Contents><Key>{}</Key><Size>{}</Size></Contents>", escape(key.as_str()), data.len()));
    }
    if truncated {
        if let Some((last, _)) = page.last() {
            xml.push_str(&format!("<NextContinuationToken>{}</NextContinuationToken>", hex::encode(last)));
        }
    }
    xml.push_str("</ListBucketResult>");
    (StatusCode::OK, [("content-type", "application/xml")], xml).into_response()
}

fn hex_decode(s: &str) -> Option<String> {
    String::from_utf8(hex::decode(s).ok()?).ok()
}

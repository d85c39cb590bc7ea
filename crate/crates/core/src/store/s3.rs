use std::time::Duration;

use chrono::Utc;
use serde::Deserialize;

use super::sigv4::{self, Credentials, SignableRequest};
use super::{validate_key, Bucket, StorageBackend, StoreError};

const MAX_OBJECT_BYTES: u64 = 1 << 30;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct S3Config {
    /// Base URL, e.g. `http://127.0.0.1:9000`. Path-style addressing is used.
    pub endpoint: String,
    pub region: String,
    pub access_key: String,
    pub secret_key: String,
    /// Prepended to each logical bucket name, e.g. `xai-` gives `xai-metadata`.
    pub bucket_prefix: String,
}

/// S3-compatible backend using PutObject, GetObject and ListObjectsV2.
///
/// Buckets are expected to exist; listing a missing bucket yields no keys.
pub struct S3Backend {
    config: S3Config,
    creds: Credentials,
    host: String,
    base: String,
    agent: ureq::Agent,
}

#[derive(Debug, Deserialize)]
struct ListBucketResult {
    #[serde(rename = "Contents", default)]
    contents: Vec<ListEntry>,
    #[serde(rename = "IsTruncated", default)]
    is_truncated: bool,
    #[serde(rename = "NextContinuationToken", default)]
    next_continuation_token: Option<String>,
}

#[derive(Debug, Deserialize)]
struct ListEntry {
    #[serde(rename = "Key")]
    key: String,
}

impl S3Backend {
    pub fn new(config: S3Config) -> Result<Self, StoreError> {
        let base = config.endpoint.trim_end_matches('/').to_string();
        let host = base
            .split_once("://")
            .map(|(_, rest)| rest)
            .unwrap_or(&base)
            .split('/')
            .next()
            .unwrap_or_default()
            .to_string();
        if host.is_empty() {
            return Err(StoreError::BackendUnavailable(format!("invalid endpoint {:?}", config.endpoint)));
        }
        let creds = Credentials {
            access_key: config.access_key.clone(),
            secret_key: config.secret_key.clone(),
            region: config.region.clone(),
            service: "s3".into(),
        };
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(30)))
            .build()
            .into();
        Ok(Self { config, creds, host, base, agent })
    }

    fn bucket_name(&self, bucket: Bucket) -> String {
        format!("{}{}", self.config.bucket_prefix, bucket.as_str())
    }

    /// Signed headers for one request.
    fn sign(&self, method: &str, path: &str, query: &[(String, String)], payload_sha: &str) -> Vec<(String, String)> {
        let amz_date = Utc::now().format("%Y%m%dT%H%M%SZ").to_string();
        let mut headers = vec![
            ("host".to_string(), self.host.clone()),
            ("x-amz-content-sha256".to_string(), payload_sha.to_string()),
            ("x-amz-date".to_string(), amz_date),
        ];
        let auth = sigv4::authorization(
            &self.creds,
            &SignableRequest { method, path, query, headers: &headers, payload_sha256: payload_sha },
        );
        headers.retain(|(k, _)| k != "host");
        headers.push(("authorization".to_string(), auth));
        headers
    }

    fn object_path(&self, bucket: Bucket, key: &str) -> String {
        format!("/{}/{}", self.bucket_name(bucket), sigv4::uri_encode(key, true))
    }
}

fn transport_err(e: ureq::Error) -> StoreError {
    StoreError::BackendUnavailable(e.to_string())
}

impl StorageBackend for S3Backend {
    fn name(&self) -> &str {
        "s3"
    }

    fn put(&self, bucket: Bucket, key: &str, data: &[u8]) -> Result<(), StoreError> {
        validate_key(key)?;
        let path = self.object_path(bucket, key);
        let sha = sigv4::sha256_hex(data);
        let mut req = self.agent.put(format!("{}{path}", self.base));
        for (k, v) in self.sign("PUT", &path, &[], &sha) {
            req = req.header(k, v);
        }
        req.send(data).map_err(transport_err)?;
        Ok(())
    }

    fn get(&self, bucket: Bucket, key: &str) -> Result<Vec<u8>, StoreError> {
        validate_key(key)?;
        let path = self.object_path(bucket, key);
        let mut req = self.agent.get(format!("{}{path}", self.base));
        for (k, v) in self.sign("GET", &path, &[], sigv4::EMPTY_PAYLOAD_SHA256) {
            req = req.header(k, v);
        }
        match req.call() {
            Ok(mut resp) => resp
                .body_mut()
                .with_config()
                .limit(MAX_OBJECT_BYTES)
                .read_to_vec()
                .map_err(transport_err),
            Err(ureq::Error::StatusCode(404)) => Err(StoreError::NotFound(format!("{bucket}/{key}"))),
            Err(e) => Err(transport_err(e)),
        }
    }

    fn list(&self, bucket: Bucket, prefix: &str) -> Result<Vec<String>, StoreError> {
        let path = format!("/{}", self.bucket_name(bucket));
        let mut keys = Vec::new();
        let mut token: Option<String> = None;
        loop {
            let mut query = vec![
                ("list-type".to_string(), "2".to_string()),
                ("prefix".to_string(), prefix.to_string()),
            ];
            if let Some(t) = &token {
                query.push(("continuation-token".to_string(), t.clone()));
            }
            let url = format!("{}{path}?{}", self.base, sigv4::canonical_query(&query));
            let mut req = self.agent.get(url);
            for (k, v) in self.sign("GET", &path, &query, sigv4::EMPTY_PAYLOAD_SHA256) {
                req = req.header(k, v);
            }
            let body = match req.call() {
                Ok(mut resp) => resp
                    .body_mut()
                    .with_config()
                    .limit(MAX_OBJECT_BYTES)
                    .read_to_string()
                    .map_err(transport_err)?,
                Err(ureq::Error::StatusCode(404)) => return Ok(keys),
                Err(e) => return Err(transport_err(e)),
            };
            let page: ListBucketResult = quick_xml::de::from_str(&body).map_err(|e| StoreError::Corrupt {
                key: format!("{path}?list-type=2"),
                reason: e.to_string(),
            })?;
            keys.extend(page.contents.into_iter().map(|c| c.key));
            match (page.is_truncated, page.next_continuation_token) {
                (true, Some(t)) => token = Some(t),
                _ => break,
            }
        }
        keys.sort();
        Ok(keys)
    }

    fn check(&self) -> Result<(), StoreError> {
        let path = format!("/{}", self.bucket_name(Bucket::Metadata));
        let query = vec![
            ("list-type".to_string(), "2".to_string()),
            ("max-keys".to_string(), "1".to_string()),
        ];
        let url = format!("{}{path}?{}", self.base, sigv4::canonical_query(&query));
        let mut req = self.agent.get(url);
        for (k, v) in self.sign("GET", &path, &query, sigv4::EMPTY_PAYLOAD_SHA256) {
            req = req.header(k, v);
        }
        match req.call() {
            Ok(_) | Err(ureq::Error::StatusCode(404)) => Ok(()),
            Err(e) => Err(transport_err(e)),
        }
    }
}

mod common;

use std::sync::Arc;

use common::contract::run_contract;
use xaistore::store::{FsBackend, MemoryBackend, S3Backend};
use xaistore_server::s3_double::S3Double;

#[test]
fn filesystem_backend() {
    let dir = tempfile::tempdir().unwrap();
    run_contract(Arc::new(FsBackend::new(dir.path()).unwrap()));
}

#[test]
fn memory_backend() {
    run_contract(Arc::new(MemoryBackend::default()));
}

#[test]
fn s3_backend_against_double() {
    let double = S3Double::start().unwrap();
    run_contract(Arc::new(S3Backend::new(double.config("contract-")).unwrap()));
    assert_eq!(double.rejected_count(), 0);
    assert!(double.keys("contract-metadata").contains(&"dora/01D.json".to_string()));
}

#[test]
fn s3_backend_with_paged_listing() {
    let double = S3Double::start_with_page_size(1).unwrap();
    run_contract(Arc::new(S3Backend::new(double.config("paged-")).unwrap()));
}

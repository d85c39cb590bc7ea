use std::collections::BTreeMap;

use parking_lot::RwLock;

use super::{validate_key, Bucket, StorageBackend, StoreError};

/// Process-local backend, mainly for tests.
#[derive(Debug, Default)]
pub struct MemoryBackend {
    objects: RwLock<BTreeMap<(Bucket, String), Vec<u8>>>,
}

impl StorageBackend for MemoryBackend {
    fn name(&self) -> &str {
        "memory"
    }

    fn put(&self, bucket: Bucket, key: &str, data: &[u8]) -> Result<(), StoreError> {
        validate_key(key)?;
        self.objects.write().insert((bucket, key.to_string()), data.to_vec());
        Ok(())
    }

    fn get(&self, bucket: Bucket, key: &str) -> Result<Vec<u8>, StoreError> {
        self.objects
            .read()
            .get(&(bucket, key.to_string()))
            .cloned()
            .ok_or_else(|| StoreError::NotFound(format!("{bucket}/{key}")))
    }

    fn list(&self, bucket: Bucket, prefix: &str) -> Result<Vec<String>, StoreError> {
        Ok(self
            .objects
            .read()
            .range((bucket, prefix.to_string())..)
            .take_while(|((b, k), _)| *b == bucket && k.starts_with(prefix))
            .map(|((_, k), _)| k.clone())
            .collect())
    }

    fn check(&self) -> Result<(), StoreError> {
        Ok(())
    }
}

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use super::{validate_key, Bucket, StorageBackend, StoreError};

/// Stores objects as files under `{root}/{bucket}/{key}`.
///
/// Writes go to a hidden temporary file in the target directory and are
/// renamed into place, so readers and listings never see partial objects.
#[derive(Debug, Clone)]
pub struct FsBackend {
    root: PathBuf,
}

impl FsBackend {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| io_err(&root, e))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path(&self, bucket: Bucket, key: &str) -> PathBuf {
        let mut p = self.root.join(bucket.as_str());
        p.extend(key.split('/'));
        p
    }
}

fn io_err(path: &Path, e: io::Error) -> StoreError {
    StoreError::BackendUnavailable(format!("{}: {e}", path.display()))
}

fn collect_files(dir: &Path, rel: &str, out: &mut Vec<String>) -> io::Result<()> {
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(e),
    };
    for entry in entries {
        let entry = entry?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        if name.starts_with('.') {
            continue;
        }
        let key = if rel.is_empty() {
            name.to_string()
        } else {
            format!("{rel}/{name}")
        };
        let ft = entry.file_type()?;
        if ft.is_dir() {
            collect_files(&entry.path(), &key, out)?;
        } else if ft.is_file() {
            out.push(key);
        }
    }
    Ok(())
}

impl StorageBackend for FsBackend {
    fn name(&self) -> &str {
        "filesystem"
    }

    fn put(&self, bucket: Bucket, key: &str, data: &[u8]) -> Result<(), StoreError> {
        validate_key(key)?;
        let path = self.path(bucket, key);
        let dir = path.parent().expect("object paths have a parent");
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let file_name = path.file_name().and_then(|n| n.to_str()).unwrap_or("object");
        let tmp = dir.join(format!(".{file_name}.{}.tmp", ulid::Ulid::new()));
        let write = || -> io::Result<()> {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(data)?;
            f.sync_data()?;
            fs::rename(&tmp, &path)
        };
        write().map_err(|e| {
            let _ = fs::remove_file(&tmp);
            io_err(&path, e)
        })
    }

    fn get(&self, bucket: Bucket, key: &str) -> Result<Vec<u8>, StoreError> {
        validate_key(key)?;
        let path = self.path(bucket, key);
        match fs::read(&path) {
            Ok(b) => Ok(b),
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                Err(StoreError::NotFound(format!("{bucket}/{key}")))
            }
            // a directory at the key path means the object itself was never written
            Err(_) if path.is_dir() => Err(StoreError::NotFound(format!("{bucket}/{key}"))),
            Err(e) => Err(io_err(&path, e)),
        }
    }

    fn list(&self, bucket: Bucket, prefix: &str) -> Result<Vec<String>, StoreError> {
        // Walk only the deepest directory fully contained in the prefix.
        let dir_part = match prefix.rfind('/') {
            Some(i) => &prefix[..i],
            None => "",
        };
        let mut start = self.root.join(bucket.as_str());
        if !dir_part.is_empty() {
            if validate_key(dir_part).is_err() {
                return Ok(Vec::new());
            }
            start.extend(dir_part.split('/'));
        }
        let mut keys = Vec::new();
        collect_files(&start, dir_part, &mut keys).map_err(|e| io_err(&start, e))?;
        keys.retain(|k| k.starts_with(prefix));
        keys.sort();
        Ok(keys)
    }

    fn check(&self) -> Result<(), StoreError> {
        fs::metadata(&self.root)
            .map_err(|e| io_err(&self.root, e))
            .and_then(|m| {
                if m.is_dir() {
                    Ok(())
                } else {
                    Err(StoreError::BackendUnavailable(format!("{} is not a directory", self.root.display())))
                }
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn put_get_list() {
        let dir = tempfile::tempdir().unwrap();
        let b = FsBackend::new(dir.path()).unwrap();
        b.put(Bucket::Datasets, "u/a/raw.csv", b"text\nx\n").unwrap();
        b.put(Bucket::Datasets, "u/b.json", b"{}").unwrap();
        b.put(Bucket::Datasets, "v/c.json", b"{}").unwrap();
        assert_eq!(b.get(Bucket::Datasets, "u/a/raw.csv").unwrap(), b"text\nx\n");
        assert_eq!(b.list(Bucket::Datasets, "u/").unwrap(), vec!["u/a/raw.csv", "u/b.json"]);
        assert_eq!(b.list(Bucket::Datasets, "").unwrap().len(), 3);
        assert_eq!(b.list(Bucket::Datasets, "u/a").unwrap(), vec!["u/a/raw.csv"]);
        assert!(b.list(Bucket::Plots, "u/").unwrap().is_empty());
        assert!(matches!(b.get(Bucket::Datasets, "u/a"), Err(StoreError::NotFound(_))));
        assert!(matches!(b.get(Bucket::Datasets, "u/zz"), Err(StoreError::NotFound(_))));
    }

    #[test]
    fn temp_files_are_invisible() {
        let dir = tempfile::tempdir().unwrap();
        let b = FsBackend::new(dir.path()).unwrap();
        let d = dir.path().join("metadata").join("u");
        fs::create_dir_all(&d).unwrap();
        fs::write(d.join(".x.json.tmp"), b"partial").unwrap();
        assert!(b.list(Bucket::Metadata, "u/").unwrap().is_empty());
    }

    #[test]
    fn survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        FsBackend::new(dir.path()).unwrap().put(Bucket::Plots, "u/p.png", &[0, 1, 2]).unwrap();
        let reopened = FsBackend::new(dir.path()).unwrap();
        assert_eq!(reopened.get(Bucket::Plots, "u/p.png").unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn missing_root_is_unavailable() {
        let dir = tempfile::tempdir().unwrap();
        let b = FsBackend::new(dir.path().join("store")).unwrap();
        fs::remove_dir_all(dir.path().join("store")).unwrap();
        assert!(matches!(b.check(), Err(StoreError::BackendUnavailable(_))));
    }
}

//! Attachment bytes live here; records keep only the storage reference.

use std::collections::HashMap;
use std::sync::RwLock;

use crate::ids::IdGen;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Blob {
    pub content_type: String,
    pub bytes: Vec<u8>,
}

pub trait BlobStore: Send + Sync {
    /// Stores `bytes` and returns their storage reference.
    fn put(&self, content_type: &str, bytes: Vec<u8>) -> crate::Result<String>;
    fn get(&self, storage_ref: &str) -> Option<Blob>;
}

#[derive(Default)]
pub struct MemoryBlobStore {
    blobs: RwLock<HashMap<String, Blob>>,
    ids: IdGen,
}

impl MemoryBlobStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl BlobStore for MemoryBlobStore {
    fn put(&self, content_type: &str, bytes: Vec<u8>) -> crate::Result<String> {
        let id = self.ids.next("blob");
        self.blobs.write().unwrap().insert(
            id.clone(),
            Blob {
                content_type: content_type.to_owned(),
                bytes,
            },
        );
        Ok(id)
    }

    fn get(&self, storage_ref: &str) -> Option<Blob> {
        self.blobs.read().unwrap().get(storage_ref).cloned()
    }
}

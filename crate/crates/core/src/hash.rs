//! Exact content digests for image deduplication.

use sha2::{Digest, Sha256};

use crate::error::{GeoError, Result};

/// Lower-case hex SHA-256 of `bytes`. Empty input is rejected.
pub fn content_hash(bytes: &[u8]) -> Result<String> {
    if bytes.is_empty() {
        return Err(GeoError::validation("cannot hash an empty image"));
    }
    Ok(hex::encode(Sha256::digest(bytes)))
}

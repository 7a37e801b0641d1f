//! Checkpoints: versioned JSON dumps of the vocabulary, feature spec and
//! weights, identified by the SHA-256 of their bytes.

use std::path::Path;

use msgrpo::policy::PolicyParams;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("{path}: sha256 {found} does not match the logged {expected}")]
    Hash {
        path: String,
        expected: String,
        found: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub schema_version: u32,
    /// Completed training iterations.
    pub iteration: usize,
    pub feature_spec_id: String,
    pub params: PolicyParams,
}

impl Checkpoint {
    pub fn new(iteration: usize, params: PolicyParams) -> Self {
        Checkpoint {
            schema_version: CHECKPOINT_VERSION,
            iteration,
            feature_spec_id: params.spec.id(),
            params,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = serde_json::to_vec(self).expect("checkpoint serializes");
        b.push(b'\n');
        b
    }

    /// Writes the checkpoint and returns its hash.
    pub fn save(&self, path: &Path) -> std::io::Result<String> {
        let bytes = self.to_bytes();
        // Write then rename, so a killed run never leaves half a checkpoint.
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, &bytes)?;
        std::fs::rename(&tmp, path)?;
        Ok(sha256_hex(&bytes))
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Checkpoint, CheckpointError> {
        let invalid = |message: String| CheckpointError::Invalid {
            path: path.display().to_string(),
            message,
        };
        let ck: Checkpoint = serde_json::from_slice(bytes).map_err(|e| invalid(e.to_string()))?;
        if ck.schema_version != CHECKPOINT_VERSION {
            return Err(invalid(format!(
                "schema version {}, expected {CHECKPOINT_VERSION}",
                ck.schema_version
            )));
        }
        if ck.feature_spec_id != ck.params.spec.id() {
            return Err(invalid(format!(
                "feature spec id {} does not match the stored spec {}",
                ck.feature_spec_id,
                ck.params.spec.id()
            )));
        }
        // Re-validate shape and finiteness.
        let p = &ck.params;
        PolicyParams::from_weights(p.vocab.clone(), p.spec.clone(), p.weights().to_vec())
            .map_err(|e| invalid(e.to_string()))?;
        Ok(ck)
    }

    /// Loads a checkpoint; returns it with the hash of its bytes.
    pub fn load(path: &Path) -> Result<(Checkpoint, String), CheckpointError> {
        let bytes = std::fs::read(path).map_err(|source| CheckpointError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Ok((Checkpoint::from_bytes(&bytes, path)?, sha256_hex(&bytes)))
    }

    /// Loads and checks the hash against `expected`.
    pub fn load_verified(path: &Path, expected: &str) -> Result<Checkpoint, CheckpointError> {
        let (ck, found) = Checkpoint::load(path)?;
        if found != expected {
            return Err(CheckpointError::Hash {
                path: path.display().to_string(),
                expected: expected.to_string(),
                found,
            });
        }
        Ok(ck)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use msgrpo::policy::{token_logprobs, FeatureSpec, Vocabulary};
    use msgrpo::rng::Rng;
    use rand::SeedableRng;

    #[test]
    fn round_trip_preserves_logprobs() {
        let mut rng = Rng::seed_from_u64(3);
        let params =
            PolicyParams::random(Vocabulary::agent(), FeatureSpec::default(), 0.7, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ckpt");
        let hash = Checkpoint::new(4, params.clone()).save(&path).unwrap();
        let back = Checkpoint::load_verified(&path, &hash).unwrap();
        assert_eq!(back.iteration, 4);
        for probe in ["agent: (0,0)", "", "row 3\nSFFG", "<think>"] {
            let prefix = [3, 7, 1];
            assert_eq!(
                token_logprobs(&params, probe, &prefix),
                token_logprobs(&back.params, probe, &prefix)
            );
        }

        std::fs::write(&path, b"{}").unwrap();
        assert!(matches!(
            Checkpoint::load_verified(&path, &hash),
            Err(CheckpointError::Invalid { .. })
        ));
        assert!(matches!(
            Checkpoint::load(&dir.path().join("missing")),
            Err(CheckpointError::Read { .. })
        ));
    }

    #[test]
    fn tampering_is_detected() {
        let params = PolicyParams::format_prior(FeatureSpec::default(), 8.0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ckpt");
        let hash = Checkpoint::new(0, params).save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let i = bytes.iter().rposition(|&b| b == b'0').unwrap();
        bytes[i] = b'1';
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            Checkpoint::load_verified(&path, &hash),
            Err(CheckpointError::Hash { .. })
        ));
    }
}

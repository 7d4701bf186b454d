//! Model file container.
//!
//! ```text
//! ACSURROGATE-MODEL
//! version: 1
//! digest: sha256:<hex of payload>
//! length: <payload bytes>
//! <JSON payload>
//! ```

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Provenance, SurrogateBenchmark, SurrogateError};
use crate::config_space::parse_space;
use crate::qrf::QuantileForest;
use crate::run_data::{InstanceSet, Objective};

pub const MAGIC: &str = "ACSURROGATE-MODEL";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize)]
struct PayloadRef<'a> {
    space: String,
    instances: &'a InstanceSet,
    cutoff: f64,
    objective: &'a Objective,
    deterministic_target: bool,
    provenance: &'a Provenance,
    forest: &'a QuantileForest<f64>,
}

#[derive(Deserialize)]
struct Payload {
    space: String,
    instances: InstanceSet,
    cutoff: f64,
    objective: Objective,
    deterministic_target: bool,
    provenance: Provenance,
    forest: QuantileForest<f64>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl SurrogateBenchmark {
    pub fn to_bytes(&self) -> Vec<u8> {
        let payload = serde_json::to_vec(&PayloadRef {
            space: self.space.render(),
            instances: &self.instances,
            cutoff: self.cutoff,
            objective: &self.objective,
            deterministic_target: self.deterministic_target,
            provenance: &self.provenance,
            forest: &self.forest,
        })
        .expect("model payload serializes");
        let mut out = format!(
            "{MAGIC}\nversion: {FORMAT_VERSION}\ndigest: sha256:{}\nlength: {}\n",
            sha256_hex(&payload),
            payload.len()
        )
        .into_bytes();
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SurrogateError> {
        let mut rest = bytes;
        let mut header = Vec::with_capacity(4);
        for _ in 0..4 {
            let nl = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| SurrogateError::Truncated("incomplete header".into()))?;
            let line = std::str::from_utf8(&rest[..nl])
                .map_err(|_| SurrogateError::Format("header is not UTF-8".into()))?;
            header.push(line.trim_end_matches('\r').to_string());
            rest = &rest[nl + 1..];
        }
        if header[0] != MAGIC {
            return Err(SurrogateError::Format(format!("not a model file (starts with `{}`)", header[0])));
        }
        let field = |line: &str, key: &str| -> Result<String, SurrogateError> {
            line.strip_prefix(key)
                .and_then(|v| v.strip_prefix(':'))
                .map(|v| v.trim().to_string())
                .ok_or_else(|| SurrogateError::Format(format!("expected `{key}:` header, found `{line}`")))
        };
        let version: u32 = field(&header[1], "version")?
            .parse()
            .map_err(|_| SurrogateError::Format(format!("bad version line `{}`", header[1])))?;
        if version != FORMAT_VERSION {
            return Err(SurrogateError::VersionMismatch { found: version, supported: FORMAT_VERSION });
        }
        let digest = field(&header[2], "digest")?;
        let expected = digest
            .strip_prefix("sha256:")
            .ok_or_else(|| SurrogateError::Format(format!("unsupported digest `{digest}`")))?
            .to_string();
        let length: usize = field(&header[3], "length")?
            .parse()
            .map_err(|_| SurrogateError::Format(format!("bad length line `{}`", header[3])))?;
        if rest.len() < length {
            return Err(SurrogateError::Truncated(format!("payload has {} of {length} bytes", rest.len())));
        }
        if rest.len() > length {
            return Err(SurrogateError::Format(format!("{} trailing bytes after payload", rest.len() - length)));
        }
        let actual = sha256_hex(rest);
        if actual != expected {
            return Err(SurrogateError::DigestMismatch { expected, actual });
        }
        let p: Payload =
            serde_json::from_slice(rest).map_err(|e| SurrogateError::Format(format!("payload: {e}")))?;
        let space = parse_space(&p.space)?;
        SurrogateBenchmark::from_parts(
            p.forest,
            Arc::new(space),
            Arc::new(p.instances),
            p.cutoff,
            p.objective,
            p.deterministic_target,
            p.provenance,
        )
    }

    pub fn save(&self, path: &Path) -> Result<(), SurrogateError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        f.sync_all()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SurrogateError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::toy_model;
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng as _;

    #[test]
    fn round_trip_predictions_bit_exact() {
        let sb = toy_model(11);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.model");
        sb.save(&path).unwrap();
        let back = SurrogateBenchmark::load(&path).unwrap();
        assert_eq!(back, sb);
        let mut rng = rng_from_seed(1);
        for _ in 0..100 {
            let c = sb.space().sample_uniform(&mut rng);
            let inst = format!("i{}", rng.gen_range(0..6));
            let seed = rng.gen::<u64>();
            let a = sb.predict_run(&c, &inst, seed).unwrap();
            let b = back.predict_run(&c, &inst, seed).unwrap();
            assert_eq!(a.cost.to_bits(), b.cost.to_bits());
            assert_eq!(a, b);
        }
        assert_eq!(back.to_bytes(), sb.to_bytes());
    }

    #[test]
    fn future_version_rejected() {
        let bytes = toy_model(1).to_bytes();
        let text = String::from_utf8(bytes).unwrap().replacen("version: 1", "version: 2", 1);
        assert!(matches!(
            SurrogateBenchmark::from_bytes(text.as_bytes()),
            Err(SurrogateError::VersionMismatch { found: 2, supported: 1 })
        ));
    }

    #[test]
    fn corrupted_payload_rejected() {
        let mut bytes = toy_model(1).to_bytes();
        let n = bytes.len();
        bytes[n - 10] ^= 0x01;
        assert!(matches!(SurrogateBenchmark::from_bytes(&bytes), Err(SurrogateError::DigestMismatch { .. })));
    }

    #[test]
    fn truncated_file_rejected() {
        let bytes = toy_model(1).to_bytes();
        assert!(matches!(
            SurrogateBenchmark::from_bytes(&bytes[..bytes.len() - 100]),
            Err(SurrogateError::Truncated(_))
        ));
        assert!(matches!(SurrogateBenchmark::from_bytes(&bytes[..30]), Err(SurrogateError::Truncated(_))));
        assert!(matches!(SurrogateBenchmark::from_bytes(b"hello\n\n\n\n"), Err(SurrogateError::Format(_))));
    }
}

//! Model checkpoint: `magic (8) | version u32 LE | architecture digest (32) |
//! param count u64 LE | params f64 LE`.

use std::path::Path;

use super::Network;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DPSGDCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

const HEADER_LEN: usize = 8 + 4 + 32 + 8;

fn digest_bytes(net: &Network) -> [u8; 32] {
    let hex = net.architecture_digest();
    let mut out = [0u8; 32];
    for (i, b) in out.iter_mut().enumerate() {
        *b = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16).expect("digest is hex");
    }
    out
}

pub fn encode_checkpoint(net: &Network) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * net.param_count());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&digest_bytes(net));
    out.extend_from_slice(&(net.param_count() as u64).to_le_bytes());
    for p in net.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

/// Loads parameters into `net`, which must have the same architecture.
pub fn decode_checkpoint(net: &mut Network, bytes: &[u8]) -> Result<()> {
    if bytes.len() < HEADER_LEN || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    if bytes[12..44] != digest_bytes(net) {
        return Err(Error::Format("checkpoint architecture does not match network".into()));
    }
    let count = u64::from_le_bytes(bytes[44..52].try_into().expect("8 bytes")) as usize;
    let payload = &bytes[HEADER_LEN..];
    if count != net.param_count() || payload.len() != 8 * count {
        return Err(Error::Format(format!(
            "checkpoint holds {} bytes for {count} parameters, network has {}",
            payload.len(),
            net.param_count()
        )));
    }
    let params = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    net.set_params(params)
}

pub fn save_checkpoint(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(&path, encode_checkpoint(net)).map_err(|e| Error::io(&path, e))
}

pub fn load_checkpoint(net: &mut Network, path: impl AsRef<Path>) -> Result<()> {
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    decode_checkpoint(net, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ArchConfig;

    #[test]
    fn round_trip_and_header() {
        let net = Network::mnist(&ArchConfig::default(), 3).unwrap();
        let bytes = encode_checkpoint(&net);
        assert_eq!(&bytes[..8], b"DPSGDCKP");
        assert_eq!(bytes.len(), HEADER_LEN + 8 * 11978);
        let mut other = Network::mnist(&ArchConfig::default(), 4).unwrap();
        decode_checkpoint(&mut other, &bytes).unwrap();
        assert_eq!(other.params(), net.params());
    }

    #[test]
    fn rejects_other_architecture_and_truncation() {
        let net = Network::mnist(&ArchConfig::default(), 3).unwrap();
        let bytes = encode_checkpoint(&net);
        let mut wider = Network::mnist(
            &ArchConfig {
                hidden: 64,
                ..ArchConfig::default()
            },
            3,
        )
        .unwrap();
        assert!(matches!(decode_checkpoint(&mut wider, &bytes), Err(Error::Format(_))));
        let mut same = net.clone();
        assert!(decode_checkpoint(&mut same, &bytes[..bytes.len() - 1]).is_err());
        assert!(decode_checkpoint(&mut same, b"garbage").is_err());
    }
}

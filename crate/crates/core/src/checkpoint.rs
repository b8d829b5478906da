//! Binary container for parameter sets and Fisher diagonals.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes   b"FUSELAB\0"
//! version    u32       FORMAT_VERSION
//! header_len u32       length of the JSON header in bytes
//! header     JSON      ContainerHeader (architecture tag, segment manifest, ...)
//! payload    f64 LE    every segment's values, in manifest order
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParameterSet, Segment};

pub const MAGIC: &[u8; 8] = b"FUSELAB\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContainerKind {
    Parameters,
    Fisher,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentManifest {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContainerHeader {
    pub format_version: u32,
    pub kind: ContainerKind,
    pub arch: String,
    pub segments: Vec<SegmentManifest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalized: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_examples: Option<usize>,
}

impl ContainerHeader {
    pub fn parameters(arch: impl Into<String>, params: &ParameterSet) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            kind: ContainerKind::Parameters,
            arch: arch.into(),
            segments: params
                .segments()
                .iter()
                .map(|s| SegmentManifest {
                    name: s.name.clone(),
                    shape: s.shape.clone(),
                })
                .collect(),
            normalized: None,
            probe_id: None,
            n_examples: None,
        }
    }
}

pub fn write_container<W: Write>(
    mut w: W,
    header: &ContainerHeader,
    params: &ParameterSet,
) -> Result<()> {
    let manifest_matches = header.segments.len() == params.segments().len()
        && header
            .segments
            .iter()
            .zip(params.segments())
            .all(|(m, s)| m.name == s.name && m.shape == s.shape);
    if !manifest_matches {
        return Err(Error::Container(
            "header manifest does not describe the parameter set".into(),
        ));
    }
    let json = serde_json::to_vec(header)?;
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for v in params.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_container<R: Read>(mut r: R) -> Result<(ContainerHeader, ParameterSet)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Container("bad magic".into()));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != FORMAT_VERSION {
        return Err(Error::Container(format!(
            "unsupported format version {version}"
        )));
    }
    r.read_exact(&mut word)?;
    let header_len = u32::from_le_bytes(word) as usize;
    let mut json = vec![0u8; header_len];
    r.read_exact(&mut json)?;
    let header: ContainerHeader = serde_json::from_slice(&json)?;

    let mut segments = Vec::with_capacity(header.segments.len());
    let mut buf = [0u8; 8];
    for m in &header.segments {
        let len: usize = m.shape.iter().product();
        let mut values = Vec::with_capacity(len);
        for _ in 0..len {
            r.read_exact(&mut buf)
                .map_err(|_| Error::Container(format!("payload truncated in `{}`", m.name)))?;
            values.push(f64::from_le_bytes(buf));
        }
        segments.push(Segment {
            name: m.name.clone(),
            shape: m.shape.clone(),
            values,
        });
    }
    if r.read(&mut buf)? != 0 {
        return Err(Error::Container("trailing bytes after payload".into()));
    }
    Ok((header, ParameterSet::new(segments)?))
}

pub fn save(path: impl AsRef<Path>, header: &ContainerHeader, params: &ParameterSet) -> Result<()> {
    write_container(BufWriter::new(File::create(path)?), header, params)
}

pub fn load(path: impl AsRef<Path>) -> Result<(ContainerHeader, ParameterSet)> {
    read_container(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParameterSet {
        ParameterSet::new(vec![
            Segment {
                name: "embed".into(),
                shape: vec![2, 2],
                values: vec![1.0, -2.5, 0.125, f64::MIN_POSITIVE],
            },
            Segment {
                name: "bias".into(),
                shape: vec![3],
                values: vec![-0.0, 3.0, 1e300],
            },
        ])
        .unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let p = sample();
        let h = ContainerHeader::parameters("classifier", &p);
        let mut bytes = Vec::new();
        write_container(&mut bytes, &h, &p).unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        let (h2, p2) = read_container(bytes.as_slice()).unwrap();
        assert_eq!(h, h2);
        let a: Vec<u64> = p.values().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = p2.values().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn payload_is_little_endian_in_manifest_order() {
        let p = sample();
        let h = ContainerHeader::parameters("classifier", &p);
        let mut bytes = Vec::new();
        write_container(&mut bytes, &h, &p).unwrap();
        let header_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let payload = &bytes[16 + header_len..];
        assert_eq!(payload.len(), 7 * 8);
        assert_eq!(&payload[..8], &1.0f64.to_le_bytes());
        assert_eq!(&payload[48..], &1e300f64.to_le_bytes());
    }

    #[test]
    fn truncated_payload_rejected() {
        let p = sample();
        let h = ContainerHeader::parameters("classifier", &p);
        let mut bytes = Vec::new();
        write_container(&mut bytes, &h, &p).unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(read_container(bytes.as_slice()).is_err());
    }

    #[test]
    fn manifest_mismatch_rejected() {
        let p = sample();
        let mut h = ContainerHeader::parameters("classifier", &p);
        h.segments.pop();
        assert!(write_container(Vec::new(), &h, &p).is_err());
    }
}

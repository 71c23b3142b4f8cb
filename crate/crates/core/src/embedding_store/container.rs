//! PHEM: a single-pass binary container for pooled phoneme embeddings.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        4 bytes  "PHEM"
//! version      u16
//! dim          u32      vector length D
//! layer_count  u32
//! meta_len     u32      followed by meta_len bytes of JSON (object)
//! n_records    u64
//! record*      speaker  str16
//!              phoneme  str16
//!              layer    u32
//!              index    u32
//!              n_groups u16, then n_groups × (key str16, value str16)
//!              vector   D × f32
//! ```
//!
//! `str16` is a u16 byte length followed by UTF-8 bytes.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde_json::{Map, Value};

use super::PhonemeSample;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PHEM";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ContainerHeader {
    pub dim: usize,
    pub layer_count: u32,
    /// Free-form run metadata (generator config, probe models, provenance).
    pub metadata: Map<String, Value>,
}

impl ContainerHeader {
    pub fn new(dim: usize, layer_count: u32) -> Self {
        ContainerHeader { dim, layer_count, metadata: Map::new() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingContainer {
    pub header: ContainerHeader,
    pub records: Vec<PhonemeSample>,
}

impl EmbeddingContainer {
    pub fn new(header: ContainerHeader, records: Vec<PhonemeSample>) -> Result<Self> {
        for r in &records {
            check_record(&header, r)?;
        }
        Ok(EmbeddingContainer { header, records })
    }

    pub fn write_to<W: Write>(&self, out: W) -> Result<()> {
        let mut w = ContainerWriter::new(out, &self.header, self.records.len() as u64)?;
        for r in &self.records {
            w.write_record(r)?;
        }
        w.finish()?;
        Ok(())
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self> {
        let mut reader = ContainerReader::new(input)?;
        let header = reader.header().clone();
        let records = reader.by_ref().collect::<Result<Vec<_>>>()?;
        reader.expect_end()?;
        Ok(EmbeddingContainer { header, records })
    }
}

fn check_record(header: &ContainerHeader, r: &PhonemeSample) -> Result<()> {
    if r.vector.len() != header.dim {
        return Err(Error::DimMismatch { expected: header.dim, found: r.vector.len() });
    }
    if r.layer >= header.layer_count {
        return Err(Error::InvalidInput(format!(
            "record layer {} outside header layer count {}",
            r.layer, header.layer_count
        )));
    }
    if r.vector.iter().any(|v| !v.is_finite()) {
        return Err(Error::DataQuality(format!("non-finite vector for {}/{}/{}", r.speaker_id, r.phoneme, r.layer)));
    }
    Ok(())
}

pub fn write_container(path: impl AsRef<Path>, container: &EmbeddingContainer) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    container.write_to(BufWriter::new(file))
}

pub fn read_container(path: impl AsRef<Path>) -> Result<EmbeddingContainer> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    EmbeddingContainer::read_from(BufReader::new(file))
}

/// Streaming writer; the record count is fixed up front.
pub struct ContainerWriter<W: Write> {
    out: W,
    header: ContainerHeader,
    remaining: u64,
}

impl<W: Write> ContainerWriter<W> {
    pub fn new(mut out: W, header: &ContainerHeader, n_records: u64) -> Result<Self> {
        let wrap = |e| Error::io("<container>", e);
        let dim = u32::try_from(header.dim)
            .map_err(|_| Error::InvalidInput(format!("dimension {} too large", header.dim)))?;
        let meta = serde_json::to_vec(&header.metadata).map_err(|e| Error::InvalidInput(format!("metadata: {e}")))?;
        let meta_len = u32::try_from(meta.len()).map_err(|_| Error::InvalidInput("metadata blob too large".into()))?;
        out.write_all(MAGIC).map_err(wrap)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(wrap)?;
        out.write_all(&dim.to_le_bytes()).map_err(wrap)?;
        out.write_all(&header.layer_count.to_le_bytes()).map_err(wrap)?;
        out.write_all(&meta_len.to_le_bytes()).map_err(wrap)?;
        out.write_all(&meta).map_err(wrap)?;
        out.write_all(&n_records.to_le_bytes()).map_err(wrap)?;
        Ok(ContainerWriter { out, header: header.clone(), remaining: n_records })
    }

    pub fn write_record(&mut self, r: &PhonemeSample) -> Result<()> {
        if self.remaining == 0 {
            return Err(Error::InvalidInput("more records than declared".into()));
        }
        check_record(&self.header, r)?;
        let mut buf = Vec::with_capacity(64 + 4 * r.vector.len());
        put_str(&mut buf, &r.speaker_id)?;
        put_str(&mut buf, &r.phoneme)?;
        buf.extend_from_slice(&r.layer.to_le_bytes());
        buf.extend_from_slice(&r.sample_index.to_le_bytes());
        let n_groups =
            u16::try_from(r.groups.len()).map_err(|_| Error::InvalidInput("too many group labels".into()))?;
        buf.extend_from_slice(&n_groups.to_le_bytes());
        for (k, v) in &r.groups {
            put_str(&mut buf, k)?;
            put_str(&mut buf, v)?;
        }
        for v in &r.vector {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        self.out.write_all(&buf).map_err(|e| Error::io("<container>", e))?;
        self.remaining -= 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        if self.remaining != 0 {
            return Err(Error::InvalidInput(format!("{} declared records never written", self.remaining)));
        }
        self.out.flush().map_err(|e| Error::io("<container>", e))?;
        Ok(self.out)
    }
}

fn put_str(buf: &mut Vec<u8>, s: &str) -> Result<()> {
    let len = u16::try_from(s.len())
        .map_err(|_| Error::InvalidInput(format!("string too long for container: {} bytes", s.len())))?;
    buf.extend_from_slice(&len.to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
    Ok(())
}

/// Streaming reader; yields records in file order.
pub struct ContainerReader<R: Read> {
    input: R,
    header: ContainerHeader,
    remaining: u64,
    read: u64,
}

impl<R: Read> ContainerReader<R> {
    pub fn new(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        fill(&mut input, &mut magic, "magic").map_err(|e| match e {
            Error::Truncated(_) => Error::NotPhem,
            other => other,
        })?;
        if &magic != MAGIC {
            return Err(Error::NotPhem);
        }
        let version = u16::from_le_bytes(take(&mut input, "version")?);
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion { found: version, expected: FORMAT_VERSION });
        }
        let dim = u32::from_le_bytes(take(&mut input, "dim")?) as usize;
        let layer_count = u32::from_le_bytes(take(&mut input, "layer count")?);
        let meta_len = u32::from_le_bytes(take(&mut input, "metadata length")?) as usize;
        let mut meta = vec![0u8; meta_len];
        fill(&mut input, &mut meta, "metadata")?;
        let metadata: Map<String, Value> = serde_json::from_slice(&meta)
            .map_err(|e| Error::DataQuality(format!("container metadata is not a JSON object: {e}")))?;
        let remaining = u64::from_le_bytes(take(&mut input, "record count")?);
        Ok(ContainerReader { input, header: ContainerHeader { dim, layer_count, metadata }, remaining, read: 0 })
    }

    pub fn header(&self) -> &ContainerHeader {
        &self.header
    }

    pub fn records_remaining(&self) -> u64 {
        self.remaining
    }

    /// Fails if bytes follow the declared records.
    pub fn expect_end(&mut self) -> Result<()> {
        let mut probe = [0u8; 1];
        match self.input.read(&mut probe) {
            Ok(0) => Ok(()),
            Ok(_) => Err(Error::DataQuality("trailing bytes after last record".into())),
            Err(e) => Err(Error::io("<container>", e)),
        }
    }

    fn read_record(&mut self) -> Result<PhonemeSample> {
        let ctx = format!("record {}", self.read);
        let speaker_id = get_str(&mut self.input, &ctx)?;
        let phoneme = get_str(&mut self.input, &ctx)?;
        let layer = u32::from_le_bytes(take(&mut self.input, &ctx)?);
        let sample_index = u32::from_le_bytes(take(&mut self.input, &ctx)?);
        let n_groups = u16::from_le_bytes(take(&mut self.input, &ctx)?);
        let mut groups = BTreeMap::new();
        for _ in 0..n_groups {
            let k = get_str(&mut self.input, &ctx)?;
            let v = get_str(&mut self.input, &ctx)?;
            groups.insert(k, v);
        }
        let mut raw = vec![0u8; 4 * self.header.dim];
        fill(&mut self.input, &mut raw, &ctx)?;
        let vector = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let record = PhonemeSample { speaker_id, phoneme, layer, sample_index, groups, vector };
        check_record(&self.header, &record)?;
        Ok(record)
    }
}

impl<R: Read> Iterator for ContainerReader<R> {
    type Item = Result<PhonemeSample>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 {
            return None;
        }
        let r = self.read_record();
        if r.is_err() {
            // stop after the first failure
            self.remaining = 0;
        } else {
            self.remaining -= 1;
            self.read += 1;
        }
        Some(r)
    }
}

fn fill<R: Read>(input: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    input.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::Truncated(format!("file ended inside {what}")),
        _ => Error::io("<container>", e),
    })
}

fn take<const N: usize, R: Read>(input: &mut R, what: &str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    fill(input, &mut buf, what)?;
    Ok(buf)
}

fn get_str<R: Read>(input: &mut R, what: &str) -> Result<String> {
    let len = u16::from_le_bytes(take(input, what)?) as usize;
    let mut buf = vec![0u8; len];
    fill(input, &mut buf, what)?;
    String::from_utf8(buf).map_err(|_| Error::DataQuality(format!("invalid UTF-8 in {what}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_records(n: usize, dim: usize, seed: u64) -> Vec<PhonemeSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| PhonemeSample {
                speaker_id: format!("spk{}", i % 7),
                phoneme: ["AA", "IY", "S", "ɹ"][i % 4].to_string(),
                layer: (i % 3) as u32,
                sample_index: i as u32,
                groups: [("gender".to_string(), "female".to_string()), ("age".into(), "adult".into())]
                    .into_iter()
                    .take(i % 3)
                    .collect(),
                vector: (0..dim).map(|_| f32::from_bits(rng.random::<u32>() & 0x3fff_ffff)).collect(),
            })
            .collect()
    }

    fn to_bytes(c: &EmbeddingContainer) -> Vec<u8> {
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        buf
    }

    #[test]
    fn empty_container_round_trips() {
        let c = EmbeddingContainer::new(ContainerHeader::new(4, 1), vec![]).unwrap();
        let back = EmbeddingContainer::read_from(&to_bytes(&c)[..]).unwrap();
        assert_eq!(back, c);
        assert!(back.records.is_empty());
    }

    #[test]
    fn thousand_records_bitwise() {
        let mut header = ContainerHeader::new(12, 3);
        header.metadata.insert("source".into(), Value::String("test".into()));
        let c = EmbeddingContainer::new(header, random_records(1000, 12, 9)).unwrap();
        let bytes = to_bytes(&c);
        let back = EmbeddingContainer::read_from(&bytes[..]).unwrap();
        assert_eq!(back.header, c.header);
        for (a, b) in c.records.iter().zip(&back.records) {
            let bits_a: Vec<u32> = a.vector.iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u32> = b.vector.iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
            assert_eq!(a.groups, b.groups);
        }
        // byte oracle: re-encoding the decoded container reproduces the file
        assert_eq!(to_bytes(&back), bytes);
    }

    #[test]
    fn metadata_floats_survive_exactly() {
        let mut header = ContainerHeader::new(1, 1);
        let awkward = [-70.71067811865476, 0.1 + 0.2, 1e-300, 2.0f64.sqrt() / 3.0];
        header.metadata.insert("values".into(), serde_json::json!(awkward));
        let c = EmbeddingContainer::new(header, vec![]).unwrap();
        let back = EmbeddingContainer::read_from(&to_bytes(&c)[..]).unwrap();
        let got: Vec<f64> = serde_json::from_value(back.header.metadata["values"].clone()).unwrap();
        assert!(got.iter().zip(awkward).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn corrupted_magic() {
        let c = EmbeddingContainer::new(ContainerHeader::new(2, 3), random_records(3, 2, 1)).unwrap();
        let mut bytes = to_bytes(&c);
        bytes[0] = b'X';
        let err = EmbeddingContainer::read_from(&bytes[..]).unwrap_err();
        assert!(matches!(err, Error::NotPhem));
        assert_eq!(err.to_string(), "not a PHEM container");
    }

    #[test]
    fn version_mismatch() {
        let c = EmbeddingContainer::new(ContainerHeader::new(2, 1), vec![]).unwrap();
        let mut bytes = to_bytes(&c);
        bytes[4] = 9;
        assert!(matches!(EmbeddingContainer::read_from(&bytes[..]), Err(Error::UnsupportedVersion { found: 9, .. })));
    }

    #[test]
    fn truncated_file() {
        let c = EmbeddingContainer::new(ContainerHeader::new(5, 3), random_records(10, 5, 2)).unwrap();
        let bytes = to_bytes(&c);
        for cut in [bytes.len() - 1, bytes.len() - 25, 30] {
            assert!(matches!(EmbeddingContainer::read_from(&bytes[..cut]), Err(Error::Truncated(_))), "cut at {cut}");
        }
        assert!(matches!(EmbeddingContainer::read_from(&bytes[..2]), Err(Error::NotPhem)));
    }

    #[test]
    fn dim_mismatch_on_write() {
        let mut recs = random_records(2, 3, 3);
        recs[1].vector.pop();
        assert!(matches!(
            EmbeddingContainer::new(ContainerHeader::new(3, 3), recs),
            Err(Error::DimMismatch { expected: 3, found: 2 })
        ));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let c = EmbeddingContainer::new(ContainerHeader::new(2, 1), vec![]).unwrap();
        let mut bytes = to_bytes(&c);
        bytes.push(0);
        assert!(matches!(EmbeddingContainer::read_from(&bytes[..]), Err(Error::DataQuality(_))));
    }
}

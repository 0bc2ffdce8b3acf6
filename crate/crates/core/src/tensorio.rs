//! Bit-exact persistence for tensors, dataset manifests and checkpoints.
//!
//! A `VTENSOR1` file is:
//!
//! ```text
//! magic  : 8 bytes  "VTENSOR1"
//! rank   : u32 LE
//! dims   : rank x u32 LE
//! payload: prod(dims) x f32 LE, row-major
//! ```
//!
//! Every write goes to a sibling temporary file which is renamed into place
//! once complete, so readers never observe a partial tensor.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, RfdmError};
use crate::tensor::Tensor;

pub const VTENSOR_MAGIC: &[u8; 8] = b"VTENSOR1";
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RFDMCKP1";

/// Upper bound on a single tensor's element count; guards against corrupt
/// headers requesting absurd allocations.
const MAX_ELEMENTS: u64 = 1 << 34;

pub fn encode_tensor(tensor: &Tensor, out: &mut Vec<u8>) -> Result<()> {
    if tensor.dims.is_empty() {
        return Err(RfdmError::Shape("tensor rank must be at least 1".into()));
    }
    let n: usize = tensor.dims.iter().product();
    if n != tensor.data.len() {
        return Err(RfdmError::Shape(format!(
            "dims {:?} disagree with {} values",
            tensor.dims,
            tensor.data.len()
        )));
    }
    if let Some(i) = tensor.data.iter().position(|v| !v.is_finite()) {
        return Err(RfdmError::Numeric(format!("non-finite value at flat index {i}")));
    }
    out.extend_from_slice(VTENSOR_MAGIC);
    out.extend_from_slice(&(tensor.dims.len() as u32).to_le_bytes());
    for &d in &tensor.dims {
        let d = u32::try_from(d)
            .map_err(|_| RfdmError::Shape(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.reserve(n * 4);
    for v in &tensor.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

/// Cursor over a byte buffer that reports absolute offsets in errors.
struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    base: u64,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], base: u64) -> Self {
        Self { buf, pos: 0, base }
    }

    fn offset(&self) -> u64 {
        self.base + self.pos as u64
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(RfdmError::format(
                self.offset(),
                format!(
                    "truncated {what}: need {n} bytes, {} remain",
                    self.buf.len() - self.pos
                ),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

fn decode_tensor_from(r: &mut Reader<'_>) -> Result<Tensor> {
    let start = r.offset();
    let magic = r.take(8, "magic")?;
    if magic != VTENSOR_MAGIC {
        return Err(RfdmError::format(
            start,
            format!("bad magic {:?}", String::from_utf8_lossy(magic)),
        ));
    }
    let rank_off = r.offset();
    let rank = r.u32("rank")? as usize;
    if rank == 0 || rank > 16 {
        return Err(RfdmError::format(rank_off, format!("unsupported rank {rank}")));
    }
    let mut dims = Vec::with_capacity(rank);
    let mut n: u64 = 1;
    for _ in 0..rank {
        let off = r.offset();
        let d = r.u32("dims")?;
        n = n
            .checked_mul(u64::from(d))
            .filter(|&n| n <= MAX_ELEMENTS)
            .ok_or_else(|| RfdmError::format(off, "dims product overflows"))?;
        dims.push(d as usize);
    }
    let payload = r.take(n as usize * 4, "payload")?;
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok(Tensor { dims, data })
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    let mut r = Reader::new(bytes, 0);
    let t = decode_tensor_from(&mut r)?;
    if r.pos != bytes.len() {
        return Err(RfdmError::format(
            r.offset(),
            format!("{} trailing bytes after payload", bytes.len() - r.pos),
        ));
    }
    Ok(t)
}

/// Writes `bytes` to `path` through a temporary sibling and an atomic rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| RfdmError::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).map_err(|e| RfdmError::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| RfdmError::io(&tmp, e))?;
        f.sync_all().map_err(|e| RfdmError::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| RfdmError::io(path, e))
}

pub fn write_tensor(path: impl AsRef<Path>, tensor: &Tensor) -> Result<()> {
    let mut bytes = Vec::new();
    encode_tensor(tensor, &mut bytes)?;
    write_atomic(path.as_ref(), &bytes)
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| RfdmError::io(path, e))?;
    decode_tensor(&bytes)
}

/// One line of a dataset manifest. Paths are relative to the manifest file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    pub input_path: String,
    pub target_path: String,
    pub flow_path: String,
    /// `[op_id, arg0, arg1]`; `arg1` is null for single-argument edits.
    pub prompt: (u32, u32, Option<u32>),
    pub meta: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    /// Directory that record paths are resolved against.
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn to_jsonl(&self) -> Result<String> {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r)?);
            s.push('\n');
        }
        Ok(s)
    }

    pub fn parse_jsonl(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: ManifestRecord = serde_json::from_str(line).map_err(|e| {
                RfdmError::Config {
                    key: format!("manifest line {}", i + 1),
                    msg: e.to_string(),
                }
            })?;
            records.push(rec);
        }
        Ok(Self {
            root: root.into(),
            records,
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = fs::File::open(path).map_err(|e| RfdmError::io(path, e))?;
        let mut text = String::new();
        for line in BufReader::new(f).lines() {
            text.push_str(&line.map_err(|e| RfdmError::io(path, e))?);
            text.push('\n');
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse_jsonl(&text, root)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_jsonl()?.as_bytes())
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Records whose `meta.split` equals `split`.
    pub fn split(&self, split: &str) -> Vec<&ManifestRecord> {
        self.records
            .iter()
            .filter(|r| r.meta.get("split").and_then(|v| v.as_str()) == Some(split))
            .collect()
    }

    /// Checks that every referenced tensor exists and parses, and that every
    /// prompt lies inside the instruction vocabulary.
    pub fn validate(&self, vocab_ok: impl Fn((u32, u32, Option<u32>)) -> bool) -> Result<()> {
        for r in &self.records {
            for p in [&r.input_path, &r.target_path, &r.flow_path] {
                read_tensor(self.resolve(p))?;
            }
            if !vocab_ok(r.prompt) {
                return Err(RfdmError::InvalidPrompt(format!(
                    "record {} has out-of-vocabulary prompt {:?}",
                    r.id, r.prompt
                )));
            }
        }
        Ok(())
    }
}

/// Serializable position of a ChaCha stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &rand_chacha::ChaCha8Rng) -> Self {
        Self {
            seed: hex::encode(rng.get_seed()),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<rand_chacha::ChaCha8Rng> {
        use rand::SeedableRng;
        let bad = |m: &str| RfdmError::format(0, format!("rng state: {m}"));
        let bytes = hex::decode(&self.seed).map_err(|_| bad("seed is not hex"))?;
        let seed: [u8; 32] = bytes.try_into().map_err(|_| bad("seed must be 32 bytes"))?;
        let word_pos: u128 = self.word_pos.parse().map_err(|_| bad("word_pos"))?;
        let mut rng = rand_chacha::ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(word_pos);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub step: u64,
    pub config_hash: String,
    pub rng: RngState,
    /// Model/training settings needed to rebuild the network.
    pub meta: serde_json::Value,
}

/// Named tensors plus the bookkeeping needed to resume training.
///
/// Layout: magic, u32 header length, JSON header, u32 tensor count, then for
/// every tensor a u32 name length, the UTF-8 name and a `VTENSOR1` block.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        let header = serde_json::to_vec(&self.header)?;
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            encode_tensor(t, &mut out)?;
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, 0);
        let magic = r.take(8, "checkpoint magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(RfdmError::format(0, "not a checkpoint (bad magic)"));
        }
        let hlen = r.u32("header length")? as usize;
        let hoff = r.offset();
        let header: CheckpointHeader = serde_json::from_slice(r.take(hlen, "header")?)
            .map_err(|e| RfdmError::format(hoff, format!("header: {e}")))?;
        let count = r.u32("tensor count")? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let nlen = r.u32("name length")? as usize;
            let noff = r.offset();
            let name = std::str::from_utf8(r.take(nlen, "name")?)
                .map_err(|_| RfdmError::format(noff, "tensor name is not UTF-8"))?
                .to_owned();
            let t = decode_tensor_from(&mut r)?;
            tensors.push((name, t));
        }
        if r.pos != bytes.len() {
            return Err(RfdmError::format(r.offset(), "trailing bytes after last tensor"));
        }
        Ok(Self { header, tensors })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_bytes()?)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| RfdmError::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_matches_fixture() {
        let t = Tensor::zeros(vec![3, 64, 64, 3]);
        let mut bytes = Vec::new();
        encode_tensor(&t, &mut bytes).unwrap();
        let expected = "5654454e534f5231\
                        04000000\
                        03000000\
                        40000000\
                        40000000\
                        03000000";
        assert_eq!(hex::encode(&bytes[..28]), expected);
        assert_eq!(bytes.len(), 28 + 3 * 64 * 64 * 3 * 4);
    }

    #[test]
    fn zeros_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.vt");
        let t = Tensor::zeros(vec![2, 2]);
        write_tensor(&p, &t).unwrap();
        assert_eq!(read_tensor(&p).unwrap(), t);
    }

    #[test]
    fn bad_magic_is_a_format_error() {
        let mut bytes = Vec::new();
        encode_tensor(&Tensor::zeros(vec![1]), &mut bytes).unwrap();
        bytes[7] = b'0';
        match decode_tensor(&bytes) {
            Err(RfdmError::Format { offset: 0, .. }) => {}
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn truncation_reports_offset() {
        let mut bytes = Vec::new();
        encode_tensor(&Tensor::zeros(vec![4]), &mut bytes).unwrap();
        bytes.truncate(bytes.len() - 1);
        match decode_tensor(&bytes) {
            Err(RfdmError::Format { offset, .. }) => assert_eq!(offset, 16),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn dims_overflow_rejected() {
        let mut bytes = VTENSOR_MAGIC.to_vec();
        bytes.extend_from_slice(&3u32.to_le_bytes());
        for _ in 0..3 {
            bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        }
        assert!(matches!(
            decode_tensor(&bytes),
            Err(RfdmError::Format { .. })
        ));
    }

    #[test]
    fn rank_zero_and_non_finite_rejected() {
        let mut out = Vec::new();
        assert!(encode_tensor(&Tensor { dims: vec![], data: vec![] }, &mut out).is_err());
        let t = Tensor::new(vec![2], vec![1.0, f32::NAN]).unwrap();
        assert!(encode_tensor(&t, &mut out).is_err());
    }

    #[test]
    fn checkpoint_bytes_are_stable() {
        use rand::SeedableRng;
        let rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let ck = Checkpoint {
            header: CheckpointHeader {
                step: 3,
                config_hash: "abc".into(),
                rng: RngState::capture(&rng),
                meta: serde_json::json!({"k": 1}),
            },
            tensors: vec![
                ("a".into(), Tensor::new(vec![2], vec![1.5, -2.0]).unwrap()),
                ("b".into(), Tensor::zeros(vec![1, 3])),
            ],
        };
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn rng_state_restores_stream_position() {
        use rand::{RngCore, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..17 {
            rng.next_u32();
        }
        let state = RngState::capture(&rng);
        let mut restored = state.restore().unwrap();
        for _ in 0..10 {
            assert_eq!(rng.next_u64(), restored.next_u64());
        }
    }
}

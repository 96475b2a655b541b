//! On-disk artifact formats.
//!
//! Every file carries a format version. Binary files end in a CRC-32 of all
//! preceding bytes; CSV files open with a `#` metadata line before the header
//! row. Writes never replace a file whose bytes differ from the new contents.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use visracer_core::obs::{EnvObservation, Standardizer, ENV_DIM};
use visracer_core::{CameraSpec, Frame, Pose, TrackSpec, Vec2};
use visracer_learn::phase1::{RegressionSample, ReprNetwork};
use visracer_learn::sac::PolicyNet;
use visracer_nn::io as nn_io;

use crate::error::{HarnessError, PersistError};

pub const FORMAT_VERSION: u32 = 1;
pub const DATASET_MAGIC: &[u8; 8] = b"VRDATA\0\0";
pub const REPR_MAGIC: &[u8; 8] = b"VRREPR\0\0";
pub const POLICY_MAGIC: &[u8; 8] = b"VRPOLICY";

type Result<T, E = PersistError> = std::result::Result<T, E>;

fn io_err(path: &Path, source: std::io::Error) -> PersistError {
    if source.kind() == std::io::ErrorKind::NotFound {
        PersistError::Missing { path: path.to_path_buf() }
    } else {
        PersistError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

fn corrupt(path: &Path, reason: impl Into<String>) -> PersistError {
    PersistError::CorruptFile {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| io_err(path, e))
}

/// Writes `bytes` to a new file. Rewriting identical bytes is a no-op;
/// anything else already at `path` is an error.
pub fn write_new(path: &Path, bytes: &[u8]) -> Result<()> {
    match fs::read(path) {
        Ok(existing) if existing == bytes => return Ok(()),
        Ok(_) => return Err(PersistError::WouldOverwrite { path: path.to_path_buf() }),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
        Err(e) => return Err(io_err(path, e)),
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    replace(path, bytes)
}

/// Atomically writes `bytes` to `path`, replacing any previous contents.
/// Only for summaries derived from write-once artifacts, which grow as
/// more runs finish.
pub fn replace(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes).map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

fn check_version(path: &Path, found: u32) -> Result<()> {
    if found != FORMAT_VERSION {
        return Err(PersistError::VersionMismatch {
            path: path.to_path_buf(),
            found,
            expected: FORMAT_VERSION,
        });
    }
    Ok(())
}

// ---- JSON documents -------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub format_version: u32,
    pub kind: String,
    pub config_hash: String,
    pub payload: T,
}

pub fn json_bytes<T: Serialize>(kind: &str, config_hash: &str, payload: &T) -> Vec<u8> {
    let env = Envelope {
        format_version: FORMAT_VERSION,
        kind: kind.to_string(),
        config_hash: config_hash.to_string(),
        payload,
    };
    let mut out = serde_json::to_vec_pretty(&env).expect("artifact serializes");
    out.push(b'\n');
    out
}

pub fn write_json<T: Serialize>(path: &Path, kind: &str, config_hash: &str, payload: &T) -> Result<()> {
    write_new(path, &json_bytes(kind, config_hash, payload))
}

pub fn read_json<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<Envelope<T>> {
    let bytes = read_bytes(path)?;
    let v: serde_json::Value = serde_json::from_slice(&bytes).map_err(|e| corrupt(path, e.to_string()))?;
    let found = v.get("format_version").and_then(|x| x.as_u64()).ok_or_else(|| corrupt(path, "no format_version"))?;
    check_version(path, found as u32)?;
    let env: Envelope<T> = serde_json::from_value(v).map_err(|e| corrupt(path, e.to_string()))?;
    if env.kind != kind {
        return Err(corrupt(path, format!("kind {:?}, expected {kind:?}", env.kind)));
    }
    Ok(env)
}

// ---- track spec files -----------------------------------------------------

#[derive(Serialize, Deserialize)]
struct TrackFile {
    format_version: u32,
    #[serde(flatten)]
    spec: TrackSpec,
}

pub fn track_spec_bytes(spec: &TrackSpec) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(&TrackFile {
        format_version: FORMAT_VERSION,
        spec: spec.clone(),
    })
    .expect("track serializes");
    out.push(b'\n');
    out
}

pub fn load_track_spec(path: &Path) -> crate::error::Result<TrackSpec> {
    let bytes = read_bytes(path)?;
    let v: serde_json::Value = serde_json::from_slice(&bytes)
        .map_err(|e| HarnessError::ConfigInvalid(format!("{}: {e}", path.display())))?;
    let found = v.get("format_version").and_then(|x| x.as_u64()).unwrap_or(0) as u32;
    check_version(path, found)?;
    let file: TrackFile =
        serde_json::from_value(v).map_err(|e| HarnessError::ConfigInvalid(format!("{}: {e}", path.display())))?;
    Ok(file.spec)
}

// ---- CSV ------------------------------------------------------------------

/// Comma-separated table with a metadata line and a fixed header.
pub struct Csv {
    pub kind: String,
    pub header: String,
    pub rows: Vec<String>,
}

impl Csv {
    pub fn new(kind: &str, header: &str) -> Self {
        Self {
            kind: kind.to_string(),
            header: header.to_string(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: String) {
        debug_assert_eq!(row.split(',').count(), self.header.split(',').count());
        self.rows.push(row);
    }

    pub fn to_bytes(&self, config_hash: &str) -> Vec<u8> {
        let mut s = format!(
            "# format_version={FORMAT_VERSION} kind={} config_hash={config_hash}\n{}\n",
            self.kind, self.header
        );
        for r in &self.rows {
            s.push_str(r);
            s.push('\n');
        }
        s.into_bytes()
    }

    pub fn write(&self, path: &Path, config_hash: &str) -> Result<()> {
        write_new(path, &self.to_bytes(config_hash))
    }

    /// Like [`Csv::write`] but replaces existing contents.
    pub fn replace(&self, path: &Path, config_hash: &str) -> Result<()> {
        replace(path, &self.to_bytes(config_hash))
    }

    /// Parses a file written by [`Csv::write`], checking the version and kind.
    pub fn read(path: &Path, kind: &str) -> Result<Self> {
        let bytes = read_bytes(path)?;
        let text = String::from_utf8(bytes).map_err(|_| corrupt(path, "not UTF-8"))?;
        let mut lines = text.lines();
        let meta = lines.next().ok_or_else(|| corrupt(path, "empty"))?;
        let field = |name: &str| {
            meta.split_whitespace()
                .find_map(|kv| kv.strip_prefix(name).and_then(|r| r.strip_prefix('=')))
                .map(str::to_string)
        };
        let version: u32 = field("format_version")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| corrupt(path, "no format_version"))?;
        check_version(path, version)?;
        if field("kind").as_deref() != Some(kind) {
            return Err(corrupt(path, format!("expected kind {kind}")));
        }
        let header = lines.next().ok_or_else(|| corrupt(path, "no header"))?.to_string();
        Ok(Self {
            kind: kind.to_string(),
            header,
            rows: lines.map(str::to_string).collect(),
        })
    }
}

// ---- binary containers ----------------------------------------------------

/// `magic, version u32, header_len u32, header JSON, blob_count u32,
/// (len u64, bytes)*, crc32`.
pub fn container_bytes<H: Serialize>(magic: &[u8; 8], header: &H, blobs: &[Vec<u8>]) -> Vec<u8> {
    let h = serde_json::to_vec(header).expect("header serializes");
    let mut out = Vec::with_capacity(32 + h.len() + blobs.iter().map(|b| b.len() + 8).sum::<usize>());
    out.extend_from_slice(magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(h.len() as u32).to_le_bytes());
    out.extend_from_slice(&h);
    out.extend_from_slice(&(blobs.len() as u32).to_le_bytes());
    for b in blobs {
        out.extend_from_slice(&(b.len() as u64).to_le_bytes());
        out.extend_from_slice(b);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    path: &'a Path,
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return Err(corrupt(self.path, "truncated"));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Checks magic, trailing checksum and version; returns a reader positioned
/// after the version field over the checksummed body.
fn open_checked<'a>(path: &'a Path, data: &'a [u8], magic: &[u8; 8]) -> Result<Reader<'a>> {
    if data.len() < 16 || &data[..8] != magic {
        return Err(corrupt(path, "bad magic"));
    }
    let (body, tail) = data.split_at(data.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().unwrap()) {
        return Err(corrupt(path, "checksum mismatch"));
    }
    let mut r = Reader { path, data: body, pos: 8 };
    check_version(path, r.u32()?)?;
    Ok(r)
}

pub fn read_container<H: DeserializeOwned>(path: &Path, magic: &[u8; 8]) -> Result<(H, Vec<Vec<u8>>)> {
    let data = read_bytes(path)?;
    let mut r = open_checked(path, &data, magic)?;
    let hl = r.u32()? as usize;
    let header = serde_json::from_slice(r.take(hl)?).map_err(|e| corrupt(path, e.to_string()))?;
    let n = r.u32()? as usize;
    let mut blobs = Vec::with_capacity(n);
    for _ in 0..n {
        let len = r.u64()? as usize;
        blobs.push(r.take(len)?.to_vec());
    }
    if r.pos != r.data.len() {
        return Err(corrupt(path, "trailing bytes"));
    }
    Ok((header, blobs))
}

fn decode_network(path: &Path, bytes: &[u8]) -> Result<visracer_nn::Network> {
    let (net, used) = nn_io::decode(bytes).map_err(|e| corrupt(path, e.to_string()))?;
    if used != bytes.len() {
        return Err(corrupt(path, "trailing bytes in network"));
    }
    Ok(net)
}

// ---- regression datasets ----------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub config_hash: String,
    pub split: String,
    pub track_hash: String,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub count: usize,
}

/// Bytes of one record: tick u64, x, y, yaw, 27 targets (f64), frame bytes.
fn sample_record(s: &RegressionSample) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 * (4 + ENV_DIM) + s.frame.data.len());
    out.extend_from_slice(&s.tick.to_le_bytes());
    for v in [s.pose.position.x, s.pose.position.y, s.pose.yaw].into_iter().chain(s.target.0) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&s.frame.data);
    out
}

/// CRC-32 of a sample's record, as stored after it in the dataset file.
pub fn sample_checksum(s: &RegressionSample) -> u32 {
    crc32fast::hash(&sample_record(s))
}

/// `magic, version, header_len, header JSON, (record, crc32)*, file crc32`.
pub fn dataset_bytes(header: &DatasetHeader, samples: &[RegressionSample]) -> Vec<u8> {
    let h = serde_json::to_vec(header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(h.len() as u32).to_le_bytes());
    out.extend_from_slice(&h);
    for s in samples {
        let rec = sample_record(s);
        out.extend_from_slice(&rec);
        out.extend_from_slice(&crc32fast::hash(&rec).to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn save_dataset(path: &Path, header: &DatasetHeader, samples: &[RegressionSample]) -> Result<()> {
    assert_eq!(header.count, samples.len());
    write_new(path, &dataset_bytes(header, samples))
}

/// Loads a dataset and the stored per-sample checksums, verifying each.
pub fn load_dataset(path: &Path) -> Result<(DatasetHeader, Vec<RegressionSample>, Vec<u32>)> {
    let data = read_bytes(path)?;
    let mut r = open_checked(path, &data, DATASET_MAGIC)?;
    let hl = r.u32()? as usize;
    let header: DatasetHeader = serde_json::from_slice(r.take(hl)?).map_err(|e| corrupt(path, e.to_string()))?;
    let frame_len = header.width * header.height * header.channels;
    let mut samples = Vec::with_capacity(header.count);
    let mut crcs = Vec::with_capacity(header.count);
    for i in 0..header.count {
        let start = r.pos;
        let tick = r.u64()?;
        let (x, y, yaw) = (r.f64()?, r.f64()?, r.f64()?);
        let mut target = [0.0; ENV_DIM];
        for t in &mut target {
            *t = r.f64()?;
        }
        let frame = r.take(frame_len)?.to_vec();
        let crc = crc32fast::hash(&r.data[start..r.pos]);
        if r.u32()? != crc {
            return Err(corrupt(path, format!("sample {i} checksum mismatch")));
        }
        crcs.push(crc);
        samples.push(RegressionSample {
            frame: Frame {
                width: header.width,
                height: header.height,
                channels: header.channels,
                data: frame,
                timestamp: tick,
            },
            target: EnvObservation(target),
            tick,
            pose: Pose::new(Vec2::new(x, y), yaw),
        });
    }
    if r.pos != r.data.len() {
        return Err(corrupt(path, "trailing bytes"));
    }
    Ok((header, samples, crcs))
}

// ---- Phase-1 artifact ------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReprHeader {
    pub config_hash: String,
    pub init_seed: u64,
    pub camera: CameraSpec,
    pub channels: [usize; 3],
    pub standardizer: Standardizer,
    pub best_epoch: usize,
}

pub fn repr_bytes(header: &ReprHeader, net: &ReprNetwork) -> Vec<u8> {
    container_bytes(REPR_MAGIC, header, &[nn_io::encode(&net.phi_rep), nn_io::encode(&net.phi_reg)])
}

pub fn load_repr(path: &Path) -> Result<(ReprHeader, ReprNetwork)> {
    let (header, blobs): (ReprHeader, _) = read_container(path, REPR_MAGIC)?;
    if blobs.len() != 2 {
        return Err(corrupt(path, "expected two networks"));
    }
    let net = ReprNetwork {
        phi_rep: decode_network(path, &blobs[0])?,
        phi_reg: decode_network(path, &blobs[1])?,
        standardizer: header.standardizer.clone(),
    };
    Ok((header, net))
}

// ---- policy checkpoints ----------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyHeader {
    pub config_hash: String,
    /// `privileged` or `vision`.
    pub agent: String,
    pub seed: u64,
    /// Representation the vision agent was trained on.
    pub repr_init_seed: Option<u64>,
    pub obs_dim: usize,
    pub epoch: usize,
    /// Standardizer of the privileged agent's ground-truth input.
    pub standardizer: Option<Standardizer>,
}

pub fn policy_bytes(header: &PolicyHeader, policy: &PolicyNet) -> Vec<u8> {
    container_bytes(POLICY_MAGIC, header, &[nn_io::encode(&policy.net)])
}

pub fn load_policy(path: &Path) -> Result<(PolicyHeader, PolicyNet)> {
    let (header, blobs): (PolicyHeader, _) = read_container(path, POLICY_MAGIC)?;
    if blobs.len() != 1 {
        return Err(corrupt(path, "expected one network"));
    }
    let net = decode_network(path, &blobs[0])?;
    Ok((header, PolicyNet { net }))
}

/// PGM (grayscale) or PPM (color) dump of a frame.
pub fn frame_image_path(dir: &Path, name: &str, frame: &Frame) -> PathBuf {
    dir.join(format!("{name}.{}", if frame.channels == 1 { "pgm" } else { "ppm" }))
}

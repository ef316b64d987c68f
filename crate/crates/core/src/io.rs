//! Bout files, batch schedules, checkpoints and embedding export.
//!
//! Bout files are JSON lines, one bout per line:
//! `{"bout_id": str, "fps": number, "frames": [[[x, y], ...], ...]}`.
//!
//! A checkpoint is a single file:
//!
//! ```text
//! "MSAECKPT" | u32 LE manifest length | manifest JSON | f32 LE blob | u32 LE CRC32(blob)
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{MsaeError, Result};
use crate::rng;
use crate::skeleton::SkeletonSequence;
use crate::training::RunConfig;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MSAECKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct BoutRecord {
    bout_id: String,
    fps: f64,
    frames: Vec<Vec<Vec<f64>>>,
}

fn parse_bout(line: &str, lineno: usize) -> Result<SkeletonSequence> {
    let rec: BoutRecord = serde_json::from_str(line).map_err(|e| MsaeError::Parse {
        line: lineno,
        message: e.to_string(),
    })?;
    let shape_err = |message: String| MsaeError::Shape { line: lineno, message };
    let joints = rec.frames.first().map_or(0, Vec::len);
    let mut coords = Vec::with_capacity(rec.frames.len() * joints);
    for (f, frame) in rec.frames.iter().enumerate() {
        if frame.len() != joints {
            return Err(shape_err(format!(
                "bout {}: frame {f} has {} joints, frame 0 has {joints}",
                rec.bout_id,
                frame.len()
            )));
        }
        for (j, pt) in frame.iter().enumerate() {
            match pt.as_slice() {
                &[x, y] => coords.push([x, y]),
                _ => {
                    return Err(shape_err(format!(
                        "bout {}: frame {f} joint {j} has {} coordinates, expected 2",
                        rec.bout_id,
                        pt.len()
                    )))
                }
            }
        }
    }
    SkeletonSequence::new(rec.bout_id, rec.fps, rec.frames.len(), joints, coords).map_err(|e| {
        shape_err(e.to_string())
    })
}

/// Reads a bout JSONL file. Blank lines are skipped; line numbers in errors
/// are 1-based.
pub fn read_bouts(path: impl AsRef<Path>) -> Result<Vec<SkeletonSequence>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_bout(&line, i + 1)?);
    }
    Ok(out)
}

/// One problem found by [`validate_bouts`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LineIssue {
    pub line: usize,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub bouts: usize,
    pub frames: usize,
    pub issues: Vec<LineIssue>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }
}

/// Checks every line of a bout file (shape, finiteness and, if given, the
/// joint count) and lists all offending lines instead of stopping at the
/// first.
pub fn validate_bouts(path: impl AsRef<Path>, expect_joints: Option<usize>) -> Result<ValidationReport> {
    let reader = BufReader::new(File::open(path)?);
    let mut report = ValidationReport::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_bout(&line, i + 1) {
            Ok(seq) => {
                report.bouts += 1;
                report.frames += seq.frames();
                if let Some(j) = expect_joints.filter(|&j| j != seq.joints()) {
                    report.issues.push(LineIssue {
                        line: i + 1,
                        message: format!("bout {} has {} joints, expected {j}", seq.bout_id, seq.joints()),
                    });
                }
            }
            Err(e) => report.issues.push(LineIssue { line: i + 1, message: e.to_string() }),
        }
    }
    Ok(report)
}

pub fn bout_to_json(seq: &SkeletonSequence) -> String {
    #[derive(Serialize)]
    struct Out<'a> {
        bout_id: &'a str,
        fps: f64,
        frames: Vec<&'a [[f64; 2]]>,
    }
    let out = Out {
        bout_id: &seq.bout_id,
        fps: seq.fps,
        frames: (0..seq.frames()).map(|f| seq.frame(f)).collect(),
    };
    // Finite floats always serialize; shortest round-trip formatting keeps
    // every bit.
    serde_json::to_string(&out).expect("bout serialization")
}

pub fn write_bouts(path: impl AsRef<Path>, bouts: &[SkeletonSequence]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for seq in bouts {
        w.write_all(bout_to_json(seq).as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Shuffles `0..n_bouts` with a stream fixed by `(seed, epoch)` and chunks it.
pub fn make_batches(n_bouts: usize, batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n_bouts).collect();
    order.shuffle(&mut rng::stream(seed, &[rng::hash_str("batches"), epoch]));
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset_bytes: u64,
}

impl TensorEntry {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn byte_len(&self) -> u64 {
        self.numel() as u64 * 4
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub config: RunConfig,
    pub seed: u64,
    pub step: u64,
    /// Model parameters in registry order.
    pub tensors: Vec<TensorEntry>,
    /// Optimizer moments, stored after the parameters.
    #[serde(default)]
    pub optimizer_tensors: Vec<TensorEntry>,
    #[serde(default)]
    pub blob_bytes: u64,
    #[serde(default)]
    pub blob_crc32: u32,
}

impl CheckpointManifest {
    /// Lays `(name, shape)` pairs out back to back from offset 0.
    pub fn new(
        config: RunConfig,
        seed: u64,
        step: u64,
        tensors: impl IntoIterator<Item = (String, Vec<usize>)>,
        optimizer_tensors: impl IntoIterator<Item = (String, Vec<usize>)>,
    ) -> Self {
        let mut offset = 0u64;
        let mut place = |(name, shape): (String, Vec<usize>)| {
            let e = TensorEntry {
                name,
                shape,
                dtype: "f32".into(),
                offset_bytes: offset,
            };
            offset += e.byte_len();
            e
        };
        let tensors: Vec<_> = tensors.into_iter().map(&mut place).collect();
        let optimizer_tensors: Vec<_> = optimizer_tensors.into_iter().map(&mut place).collect();
        Self {
            format_version: CHECKPOINT_VERSION,
            config,
            seed,
            step,
            tensors,
            optimizer_tensors,
            blob_bytes: offset,
            blob_crc32: 0,
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = &TensorEntry> {
        self.tensors.iter().chain(&self.optimizer_tensors)
    }

    /// Total blob size implied by the tensor directory.
    pub fn expected_bytes(&self) -> u64 {
        self.entries().map(TensorEntry::byte_len).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let mut next = 0u64;
        for e in self.entries() {
            if e.dtype != "f32" {
                return Err(MsaeError::Checkpoint(format!("tensor {} has dtype {}", e.name, e.dtype)));
            }
            if e.offset_bytes < next {
                return Err(MsaeError::Checkpoint(format!(
                    "tensor {} at offset {} overlaps the previous tensor",
                    e.name, e.offset_bytes
                )));
            }
            next = e.offset_bytes + e.byte_len();
        }
        if next != self.expected_bytes() {
            return Err(MsaeError::Checkpoint("tensor directory has gaps".into()));
        }
        Ok(())
    }

    /// Slice of `data` (f32 elements) holding tensor `entry`.
    pub fn view<'a>(&self, entry: &TensorEntry, data: &'a [f32]) -> &'a [f32] {
        let start = (entry.offset_bytes / 4) as usize;
        &data[start..start + entry.numel()]
    }
}

/// Writes a checkpoint; `data` holds every tensor of the manifest in order.
pub fn save_checkpoint(path: impl AsRef<Path>, manifest: &CheckpointManifest, data: &[f32]) -> Result<()> {
    manifest.validate()?;
    let expected = manifest.expected_bytes();
    if data.len() as u64 * 4 != expected {
        return Err(MsaeError::Checkpoint(format!(
            "manifest describes {expected} bytes, got {} floats",
            data.len()
        )));
    }
    let blob: Vec<u8> = data.iter().flat_map(|x| x.to_le_bytes()).collect();
    let crc = crc32fast::hash(&blob);
    let mut manifest = manifest.clone();
    manifest.blob_bytes = expected;
    manifest.blob_crc32 = crc;
    let header = serde_json::to_vec(&manifest).map_err(|e| MsaeError::Checkpoint(e.to_string()))?;

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(&header)?;
    w.write_all(&blob)?;
    w.write_all(&crc.to_le_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(CheckpointManifest, Vec<f32>)> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(MsaeError::Checkpoint("missing MSAECKPT magic".into()));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let header_end = 12 + header_len;
    if bytes.len() < header_end {
        return Err(MsaeError::ChecksumMismatch("file ends inside the manifest".into()));
    }
    let raw: serde_json::Value = serde_json::from_slice(&bytes[12..header_end])
        .map_err(|e| MsaeError::Checkpoint(format!("manifest: {e}")))?;
    let found = raw.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != CHECKPOINT_VERSION {
        return Err(MsaeError::VersionMismatch {
            found,
            expected: CHECKPOINT_VERSION,
        });
    }
    let manifest: CheckpointManifest =
        serde_json::from_value(raw).map_err(|e| MsaeError::Checkpoint(format!("manifest: {e}")))?;
    manifest.validate()?;

    let blob_len = manifest.expected_bytes() as usize;
    let expected_len = header_end + blob_len + 4;
    if bytes.len() != expected_len || manifest.blob_bytes as usize != blob_len {
        return Err(MsaeError::ChecksumMismatch(format!(
            "file is {} bytes, manifest implies {expected_len}",
            bytes.len()
        )));
    }
    let blob = &bytes[header_end..header_end + blob_len];
    let trailer = u32::from_le_bytes(bytes[expected_len - 4..].try_into().unwrap());
    let crc = crc32fast::hash(blob);
    if crc != trailer || crc != manifest.blob_crc32 {
        return Err(MsaeError::ChecksumMismatch(format!(
            "blob CRC32 {crc:08x}, trailer {trailer:08x}, manifest {:08x}",
            manifest.blob_crc32
        )));
    }
    let data = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((manifest, data))
}

/// Writes `bout_id,e0,...,e{d-1}` with 9 significant digits per value.
pub fn write_embeddings(path: impl AsRef<Path>, rows: &[(String, Vec<f64>)]) -> Result<()> {
    let dim = rows.first().map_or(0, |r| r.1.len());
    let mut w = BufWriter::new(File::create(path)?);
    let header: Vec<String> = std::iter::once("bout_id".to_string())
        .chain((0..dim).map(|i| format!("e{i}")))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    for (id, values) in rows {
        let id = if id.contains([',', '"', '\n']) {
            format!("\"{}\"", id.replace('"', "\"\""))
        } else {
            id.clone()
        };
        write!(w, "{id}")?;
        for v in values {
            write!(w, ",{v:.8e}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

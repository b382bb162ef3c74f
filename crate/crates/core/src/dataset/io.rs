//! On-disk dataset layout.
//!
//! ```text
//! manifest.json          image list, roles, cue columns, file paths
//! descriptors/NNNNNN.bdsc  "BDSC" | u32 version | u32 count | u32 bits | payloads
//! cues/NNNNNN.csv        one row per descriptor, no header
//! ground_truth.csv       header `query_id,relevant_id`
//! ```
//!
//! All integers are little-endian. Each payload is `ceil(bits / 8)` bytes
//! with bit `i` at byte `i / 8`, position `i % 8`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CueColumn, Dataset, GroundTruth, ImageRecord, Role};
use crate::bitvec::BinaryDescriptor;
use crate::encoders::{CueKind, CueValue};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"BDSC";
const DESCRIPTOR_FILE_VERSION: u32 = 1;
const MANIFEST_FORMAT: &str = "cuebits-dataset";
const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    descriptor_bits: usize,
    cues: Vec<CueColumn>,
    ground_truth: String,
    images: Vec<ManifestImage>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestImage {
    id: String,
    role: Role,
    descriptors: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    descriptors_sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cues: Option<String>,
    cue_arity: usize,
}

pub fn write_descriptor_file(descriptors: &[BinaryDescriptor], bits: usize) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + descriptors.len() * bits.div_ceil(8));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&DESCRIPTOR_FILE_VERSION.to_le_bytes());
    out.extend_from_slice(&u32_field(descriptors.len(), "descriptor count")?.to_le_bytes());
    out.extend_from_slice(&u32_field(bits, "descriptor bits")?.to_le_bytes());
    for d in descriptors {
        if d.len() != bits {
            return Err(Error::LengthMismatch {
                expected: bits,
                found: d.len(),
            });
        }
        out.extend(d.payload_bytes());
    }
    Ok(out)
}

pub fn read_descriptor_file(bytes: &[u8]) -> Result<Vec<BinaryDescriptor>> {
    let bad = |msg: &str| Error::format("descriptor file", msg.to_string());
    if bytes.len() < 16 {
        return Err(bad("shorter than the 16 byte header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(bad("missing BDSC magic"));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
    let version = word(4);
    if version != DESCRIPTOR_FILE_VERSION {
        return Err(Error::format(
            "descriptor file",
            format!("unsupported version {version}"),
        ));
    }
    let count = word(8) as usize;
    let bits = word(12) as usize;
    if bits == 0 {
        return Err(bad("zero bits per descriptor"));
    }
    let stride = bits.div_ceil(8);
    let body = &bytes[16..];
    if body.len() != count * stride {
        return Err(Error::format(
            "descriptor file",
            format!(
                "{count} descriptors of {bits} bits need {} payload bytes, found {}",
                count * stride,
                body.len()
            ),
        ));
    }
    body.chunks(stride)
        .map(|chunk| BinaryDescriptor::from_payload(chunk, bits))
        .collect()
}

fn u32_field(value: usize, what: &str) -> Result<u32> {
    u32::try_from(value).map_err(|_| Error::format("descriptor file", format!("{what} overflows u32")))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

fn format_cue(value: &CueValue) -> String {
    match value {
        CueValue::Continuous(c) => format!("{c}"),
        CueValue::Selector(i) => i.to_string(),
    }
}

/// Writes `dataset` under `dir` and returns the manifest path.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<PathBuf> {
    let mut images = Vec::with_capacity(dataset.images.len());
    for (n, image) in dataset.images.iter().enumerate() {
        let desc_rel = format!("descriptors/{n:06}.bdsc");
        let payload = write_descriptor_file(&image.descriptors, dataset.descriptor_bits)?;
        write_file(&dir.join(&desc_rel), &payload)?;

        let cues_rel = if dataset.cue_columns.is_empty() {
            None
        } else {
            let rel = format!("cues/{n:06}.csv");
            let mut csv = String::new();
            for row in &image.cue_values {
                let cells: Vec<String> = row.iter().map(format_cue).collect();
                csv.push_str(&cells.join(","));
                csv.push('\n');
            }
            write_file(&dir.join(&rel), csv.as_bytes())?;
            Some(rel)
        };
        images.push(ManifestImage {
            id: image.image_id.clone(),
            role: image.role,
            descriptors: desc_rel,
            descriptors_sha256: Some(hex::encode(Sha256::digest(&payload))),
            cues: cues_rel,
            cue_arity: dataset.cue_columns.len(),
        });
    }

    let mut gt = String::from("query_id,relevant_id\n");
    for (q, r) in dataset.ground_truth.pairs() {
        gt.push_str(&format!("{q},{r}\n"));
    }
    write_file(&dir.join("ground_truth.csv"), gt.as_bytes())?;

    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        descriptor_bits: dataset.descriptor_bits,
        cues: dataset.cue_columns.clone(),
        ground_truth: "ground_truth.csv".into(),
        images,
    };
    let path = dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    write_file(&path, text.as_bytes())?;
    Ok(path)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn parse_cue_rows(
    text: &[u8],
    columns: &[CueColumn],
    path: &Path,
) -> Result<Vec<Vec<CueValue>>> {
    let what = || format!("cue file {}", path.display());
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text);
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != columns.len() {
            return Err(Error::format(
                what(),
                format!(
                    "row {} has {} values, expected {}",
                    line + 1,
                    record.len(),
                    columns.len()
                ),
            ));
        }
        let row = record
            .iter()
            .zip(columns)
            .map(|(cell, col)| {
                let cell = cell.trim();
                let parsed = match col.kind {
                    CueKind::Continuous => cell
                        .parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .map(CueValue::Continuous),
                    CueKind::Selector => cell.parse::<u32>().ok().map(CueValue::Selector),
                };
                parsed.ok_or_else(|| {
                    Error::format(
                        what(),
                        format!(
                            "row {}: '{cell}' is not a valid {} value for '{}'",
                            line + 1,
                            col.kind.as_str(),
                            col.name
                        ),
                    )
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

/// Loads a dataset from its manifest. Nothing is returned unless every
/// referenced file parses and validates.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let manifest: Manifest = serde_json::from_slice(&read(manifest_path)?)
        .map_err(|e| Error::format("manifest", e.to_string()))?;
    if manifest.format != MANIFEST_FORMAT || manifest.version != MANIFEST_VERSION {
        return Err(Error::format(
            "manifest",
            format!(
                "unsupported format '{}' version {}",
                manifest.format, manifest.version
            ),
        ));
    }

    let mut images = Vec::with_capacity(manifest.images.len());
    for entry in &manifest.images {
        if entry.cue_arity != manifest.cues.len() {
            return Err(Error::CueArity {
                expected: manifest.cues.len(),
                found: entry.cue_arity,
            });
        }
        let desc_path = base.join(&entry.descriptors);
        let payload = read(&desc_path)?;
        if let Some(expected) = &entry.descriptors_sha256 {
            if hex::encode(Sha256::digest(&payload)) != expected.to_ascii_lowercase() {
                return Err(Error::Checksum(desc_path));
            }
        }
        let descriptors = read_descriptor_file(&payload).map_err(|e| match e {
            Error::Format { message, .. } => Error::format(desc_path.display().to_string(), message),
            other => other,
        })?;
        if let Some(d) = descriptors.iter().find(|d| d.len() != manifest.descriptor_bits) {
            return Err(Error::LengthMismatch {
                expected: manifest.descriptor_bits,
                found: d.len(),
            });
        }
        let cue_values = match &entry.cues {
            Some(rel) => {
                let path = base.join(rel);
                parse_cue_rows(&read(&path)?, &manifest.cues, &path)?
            }
            None if manifest.cues.is_empty() => vec![Vec::new(); descriptors.len()],
            None => {
                return Err(Error::format(
                    "manifest",
                    format!("image '{}' has no cue file", entry.id),
                ))
            }
        };
        images.push(ImageRecord::new(
            entry.id.clone(),
            entry.role,
            descriptors,
            cue_values,
        )?);
    }

    let mut ground_truth = GroundTruth::new();
    for image in images.iter().filter(|i| i.role == Role::Query) {
        ground_truth.add_query(image.image_id.clone());
    }
    let gt_path = base.join(&manifest.ground_truth);
    let gt_bytes = read(&gt_path)?;
    let mut reader = csv::ReaderBuilder::new().from_reader(gt_bytes.as_slice());
    let headers = reader.headers()?.clone();
    if headers.len() != 2 || &headers[0] != "query_id" || &headers[1] != "relevant_id" {
        return Err(Error::format(
            gt_path.display().to_string(),
            "expected header 'query_id,relevant_id'",
        ));
    }
    for record in reader.records() {
        let record = record?;
        if record.len() != 2 {
            return Err(Error::format(
                gt_path.display().to_string(),
                "rows need exactly two columns",
            ));
        }
        ground_truth.add_pair(record[0].trim(), record[1].trim());
    }

    Dataset::new(manifest.descriptor_bits, manifest.cues, images, ground_truth)
}

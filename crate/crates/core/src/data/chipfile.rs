//! Chip dataset files.
//!
//! Binary format (little-endian throughout):
//!
//! ```text
//! magic  "RLSC"
//! u32    version (1)
//! u32    chip count
//! u32    height (64), u32 width (64)
//! per chip:
//!   u32  class id
//!   u32  instance id
//!   f64  azimuth in degrees
//!   f64  x H*W row-major pixels
//! ```
//!
//! The manifest travels next to the binary as human-readable `key = value`
//! text.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::network::CHIP_SIZE;

use super::{AzimuthInterval, Chip, Dataset, DatasetManifest, DatasetRole};

const MAGIC: &[u8; 4] = b"RLSC";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ChipFileError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic: not a chip dataset file")]
    BadMagic,
    #[error("unsupported chip file version {0}")]
    VersionMismatch(u32),
    #[error("truncated payload")]
    Truncated,
    #[error("chip dimensions {h}x{w} are not {CHIP_SIZE}x{CHIP_SIZE}")]
    BadDims { h: u32, w: u32 },
    #[error("manifest line {line}: {detail}")]
    BadManifest { line: usize, detail: String },
}

fn eof_as_truncated(e: io::Error) -> ChipFileError {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        ChipFileError::Truncated
    } else {
        ChipFileError::Io(e)
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, ChipFileError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(eof_as_truncated)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64, ChipFileError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf).map_err(eof_as_truncated)?;
    Ok(f64::from_le_bytes(buf))
}

pub fn write_chips(path: &Path, dataset: &Dataset) -> Result<(), ChipFileError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(dataset.chips.len() as u32).to_le_bytes())?;
    w.write_all(&(CHIP_SIZE as u32).to_le_bytes())?;
    w.write_all(&(CHIP_SIZE as u32).to_le_bytes())?;
    for chip in &dataset.chips {
        w.write_all(&chip.class_id.to_le_bytes())?;
        w.write_all(&chip.instance_id.to_le_bytes())?;
        w.write_all(&chip.azimuth_deg.to_le_bytes())?;
        for &p in &chip.pixels {
            w.write_all(&p.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_chips(path: &Path) -> Result<Dataset, ChipFileError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(eof_as_truncated)?;
    if &magic != MAGIC {
        return Err(ChipFileError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(ChipFileError::VersionMismatch(version));
    }
    let count = read_u32(&mut r)? as usize;
    let h = read_u32(&mut r)?;
    let w = read_u32(&mut r)?;
    if h != CHIP_SIZE as u32 || w != CHIP_SIZE as u32 {
        return Err(ChipFileError::BadDims { h, w });
    }
    let mut chips = Vec::with_capacity(count);
    for _ in 0..count {
        let class_id = read_u32(&mut r)?;
        let instance_id = read_u32(&mut r)?;
        let azimuth_deg = read_f64(&mut r)?;
        let mut pixels = vec![0.0f64; CHIP_SIZE * CHIP_SIZE];
        let mut buf = vec![0u8; CHIP_SIZE * CHIP_SIZE * 8];
        r.read_exact(&mut buf).map_err(eof_as_truncated)?;
        for (p, chunk) in pixels.iter_mut().zip(buf.chunks_exact(8)) {
            *p = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        }
        chips.push(Chip {
            pixels,
            class_id,
            instance_id,
            azimuth_deg,
        });
    }
    Ok(Dataset { chips })
}

pub fn write_manifest(path: &Path, m: &DatasetManifest) -> Result<(), ChipFileError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "role = {}", m.role.as_str())?;
    writeln!(w, "seed = {}", m.seed)?;
    writeln!(w, "azimuth_start_deg = {}", m.interval.start_deg)?;
    writeln!(w, "azimuth_width_deg = {}", m.interval.width_deg)?;
    writeln!(w, "instances_per_class = {}", m.instances_per_class)?;
    let counts: Vec<String> = m
        .class_counts
        .iter()
        .map(|(class, count)| format!("{class}:{count}"))
        .collect();
    writeln!(w, "class_counts = {}", counts.join(","))?;
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest, ChipFileError> {
    let text = std::fs::read_to_string(path)?;
    let mut fields: BTreeMap<String, String> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| ChipFileError::BadManifest {
            line: i + 1,
            detail: "expected `key = value`".to_string(),
        })?;
        fields.insert(key.trim().to_string(), value.trim().to_string());
    }
    let get = |key: &str| {
        fields.get(key).cloned().ok_or_else(|| ChipFileError::BadManifest {
            line: 0,
            detail: format!("missing key {key:?}"),
        })
    };
    let bad = |detail: String| ChipFileError::BadManifest { line: 0, detail };

    let role = DatasetRole::parse(&get("role")?)
        .ok_or_else(|| bad("unknown role".to_string()))?;
    let seed = get("seed")?
        .parse::<u64>()
        .map_err(|e| bad(format!("seed: {e}")))?;
    let start = get("azimuth_start_deg")?
        .parse::<f64>()
        .map_err(|e| bad(format!("azimuth_start_deg: {e}")))?;
    let width = get("azimuth_width_deg")?
        .parse::<f64>()
        .map_err(|e| bad(format!("azimuth_width_deg: {e}")))?;
    let instances_per_class = get("instances_per_class")?
        .parse::<usize>()
        .map_err(|e| bad(format!("instances_per_class: {e}")))?;
    let mut class_counts = BTreeMap::new();
    let counts_text = get("class_counts")?;
    if !counts_text.is_empty() {
        for pair in counts_text.split(',') {
            let (class, count) = pair
                .split_once(':')
                .ok_or_else(|| bad(format!("class_counts entry {pair:?}")))?;
            class_counts.insert(
                class.trim().parse::<u32>().map_err(|e| bad(format!("class id: {e}")))?,
                count.trim().parse::<usize>().map_err(|e| bad(format!("count: {e}")))?,
            );
        }
    }
    Ok(DatasetManifest {
        role,
        seed,
        interval: AzimuthInterval {
            start_deg: start,
            width_deg: width,
        },
        instances_per_class,
        class_counts,
    })
}

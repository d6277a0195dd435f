//! Weight checkpoint files.
//!
//! Format (little-endian throughout):
//!
//! ```text
//! magic  "RLSW"
//! u32    format version (1)
//! u32    K, N, c1, c2, c3, decoder_hidden, classifier_hidden, classes
//! u32    section count
//! per section:
//!   u32      name length, then UTF-8 name (e.g. "encoder.conv1.kernel")
//!   u32      rank, then one u32 extent per axis
//!   f64 x n  row-major values
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::autodiff::Tensor;
use crate::scalar::{as_f64, real, Scalar};

use super::{
    AffineLayer, BaselineCnnWeights, ClassifierWeights, ConvLayer, DecoderWeights, EncoderWeights,
    NetworkSpec, KERNEL,
};

const MAGIC: &[u8; 4] = b"RLSW";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic: not a weight checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated checkpoint payload")]
    Truncated,
    #[error("checkpoint section name is not valid UTF-8")]
    BadSectionName,
    #[error("checkpoint is missing section {0:?}")]
    MissingSection(String),
    #[error("section {name:?} has shape {got:?}, expected {expected:?}")]
    SectionShape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
}

fn eof_as_truncated(e: io::Error) -> CheckpointError {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        CheckpointError::Truncated
    } else {
        CheckpointError::Io(e)
    }
}

fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<(), CheckpointError> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, CheckpointError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(eof_as_truncated)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64, CheckpointError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf).map_err(eof_as_truncated)?;
    Ok(f64::from_le_bytes(buf))
}

fn write_file<F: Scalar>(
    path: &Path,
    spec: &NetworkSpec,
    sections: &[(&str, &Tensor<F>)],
) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    write_u32(&mut w, VERSION)?;
    for v in [
        spec.subvectors,
        spec.bins,
        spec.c1,
        spec.c2,
        spec.c3,
        spec.decoder_hidden,
        spec.classifier_hidden,
        spec.classes,
    ] {
        write_u32(&mut w, v as u32)?;
    }
    write_u32(&mut w, sections.len() as u32)?;
    for (name, t) in sections {
        write_u32(&mut w, name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        write_u32(&mut w, t.shape().len() as u32)?;
        for &e in t.shape() {
            write_u32(&mut w, e as u32)?;
        }
        for &v in t.data() {
            w.write_all(&as_f64(v).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_file<F: Scalar>(
    path: &Path,
) -> Result<(NetworkSpec, BTreeMap<String, Tensor<F>>), CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(eof_as_truncated)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let mut header = [0usize; 8];
    for h in header.iter_mut() {
        *h = read_u32(&mut r)? as usize;
    }
    let spec = NetworkSpec {
        subvectors: header[0],
        bins: header[1],
        c1: header[2],
        c2: header[3],
        c3: header[4],
        decoder_hidden: header[5],
        classifier_hidden: header[6],
        classes: header[7],
    };
    let n_sections = read_u32(&mut r)?;
    let mut sections = BTreeMap::new();
    for _ in 0..n_sections {
        let name_len = read_u32(&mut r)? as usize;
        let mut name_buf = vec![0u8; name_len];
        r.read_exact(&mut name_buf).map_err(eof_as_truncated)?;
        let name = String::from_utf8(name_buf).map_err(|_| CheckpointError::BadSectionName)?;
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut r)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(real::<F>(read_f64(&mut r)?));
        }
        let t = Tensor::from_vec(shape, data).map_err(|_| CheckpointError::Truncated)?;
        sections.insert(name, t);
    }
    Ok((spec, sections))
}

/// Reads only the geometry header of a checkpoint.
pub fn read_header(path: &Path) -> Result<NetworkSpec, CheckpointError> {
    let (spec, _) = read_file::<f64>(path)?;
    Ok(spec)
}

fn take<F: Scalar>(
    map: &mut BTreeMap<String, Tensor<F>>,
    name: &str,
    expected: &[usize],
) -> Result<Tensor<F>, CheckpointError> {
    let t = map
        .remove(name)
        .ok_or_else(|| CheckpointError::MissingSection(name.to_string()))?;
    if t.shape() != expected {
        return Err(CheckpointError::SectionShape {
            name: name.to_string(),
            expected: expected.to_vec(),
            got: t.shape().to_vec(),
        });
    }
    Ok(t)
}

fn take_conv<F: Scalar>(
    map: &mut BTreeMap<String, Tensor<F>>,
    prefix: &str,
    c_out: usize,
    c_in: usize,
) -> Result<ConvLayer<F>, CheckpointError> {
    Ok(ConvLayer {
        kernel: take(map, &format!("{prefix}.kernel"), &[c_out, c_in, KERNEL, KERNEL])?,
        bias: take(map, &format!("{prefix}.bias"), &[c_out])?,
    })
}

fn take_affine<F: Scalar>(
    map: &mut BTreeMap<String, Tensor<F>>,
    prefix: &str,
    d_in: usize,
    d_out: usize,
) -> Result<AffineLayer<F>, CheckpointError> {
    Ok(AffineLayer {
        weight: take(map, &format!("{prefix}.weight"), &[d_in, d_out])?,
        bias: take(map, &format!("{prefix}.bias"), &[d_out])?,
    })
}

fn conv_sections<'a, F: Scalar>(
    out: &mut Vec<(String, &'a Tensor<F>)>,
    prefix: &str,
    layer: &'a ConvLayer<F>,
) {
    out.push((format!("{prefix}.kernel"), &layer.kernel));
    out.push((format!("{prefix}.bias"), &layer.bias));
}

fn affine_sections<'a, F: Scalar>(
    out: &mut Vec<(String, &'a Tensor<F>)>,
    prefix: &str,
    layer: &'a AffineLayer<F>,
) {
    out.push((format!("{prefix}.weight"), &layer.weight));
    out.push((format!("{prefix}.bias"), &layer.bias));
}

fn write_named<F: Scalar>(
    path: &Path,
    spec: &NetworkSpec,
    named: Vec<(String, &Tensor<F>)>,
) -> Result<(), CheckpointError> {
    let sections: Vec<(&str, &Tensor<F>)> =
        named.iter().map(|(n, t)| (n.as_str(), *t)).collect();
    write_file(path, spec, &sections)
}

/// Writes the phase-1 model (encoder + decoder) to one checkpoint.
pub fn save_rls_model<F: Scalar>(
    path: &Path,
    enc: &EncoderWeights<F>,
    dec: &DecoderWeights<F>,
) -> Result<(), CheckpointError> {
    let mut named = Vec::new();
    conv_sections(&mut named, "encoder.conv1", &enc.conv1);
    conv_sections(&mut named, "encoder.conv2", &enc.conv2);
    conv_sections(&mut named, "encoder.conv3", &enc.conv3);
    affine_sections(&mut named, "encoder.fc_mean", &enc.fc_mean);
    affine_sections(&mut named, "encoder.fc_logvar", &enc.fc_logvar);
    affine_sections(&mut named, "decoder.fc1", &dec.fc1);
    affine_sections(&mut named, "decoder.fc2", &dec.fc2);
    conv_sections(&mut named, "decoder.conv1", &dec.conv1);
    conv_sections(&mut named, "decoder.conv2", &dec.conv2);
    conv_sections(&mut named, "decoder.conv3", &dec.conv3);
    write_named(path, &enc.spec, named)
}

pub fn load_rls_model<F: Scalar>(
    path: &Path,
) -> Result<(EncoderWeights<F>, DecoderWeights<F>), CheckpointError> {
    let (spec, mut map) = read_file(path)?;
    let latent = spec.latent_dim();
    let trunk = spec.trunk_dim();
    let enc = EncoderWeights {
        spec,
        conv1: take_conv(&mut map, "encoder.conv1", spec.c1, 1)?,
        conv2: take_conv(&mut map, "encoder.conv2", spec.c2, spec.c1)?,
        conv3: take_conv(&mut map, "encoder.conv3", spec.c3, spec.c2)?,
        fc_mean: take_affine(&mut map, "encoder.fc_mean", trunk, latent)?,
        fc_logvar: take_affine(&mut map, "encoder.fc_logvar", trunk, latent)?,
    };
    let dec = DecoderWeights {
        spec,
        fc1: take_affine(&mut map, "decoder.fc1", latent, spec.decoder_hidden)?,
        fc2: take_affine(&mut map, "decoder.fc2", spec.decoder_hidden, trunk)?,
        conv1: take_conv(&mut map, "decoder.conv1", spec.c2, spec.c3)?,
        conv2: take_conv(&mut map, "decoder.conv2", spec.c1, spec.c2)?,
        conv3: take_conv(&mut map, "decoder.conv3", 1, spec.c1)?,
    };
    Ok((enc, dec))
}

pub fn save_classifier<F: Scalar>(
    path: &Path,
    cls: &ClassifierWeights<F>,
) -> Result<(), CheckpointError> {
    let mut named = Vec::new();
    affine_sections(&mut named, "classifier.fc1", &cls.fc1);
    affine_sections(&mut named, "classifier.fc2", &cls.fc2);
    write_named(path, &cls.spec, named)
}

pub fn load_classifier<F: Scalar>(path: &Path) -> Result<ClassifierWeights<F>, CheckpointError> {
    let (spec, mut map) = read_file(path)?;
    Ok(ClassifierWeights {
        spec,
        fc1: take_affine(
            &mut map,
            "classifier.fc1",
            spec.latent_dim(),
            spec.classifier_hidden,
        )?,
        fc2: take_affine(
            &mut map,
            "classifier.fc2",
            spec.classifier_hidden,
            spec.classes,
        )?,
    })
}

pub fn save_baseline<F: Scalar>(
    path: &Path,
    net: &BaselineCnnWeights<F>,
) -> Result<(), CheckpointError> {
    let mut named = Vec::new();
    conv_sections(&mut named, "baseline.conv1", &net.conv1);
    conv_sections(&mut named, "baseline.conv2", &net.conv2);
    conv_sections(&mut named, "baseline.conv3", &net.conv3);
    affine_sections(&mut named, "baseline.fc1", &net.fc1);
    affine_sections(&mut named, "baseline.fc2", &net.fc2);
    write_named(path, &net.spec, named)
}

pub fn load_baseline<F: Scalar>(path: &Path) -> Result<BaselineCnnWeights<F>, CheckpointError> {
    let (spec, mut map) = read_file(path)?;
    Ok(BaselineCnnWeights {
        spec,
        conv1: take_conv(&mut map, "baseline.conv1", spec.c1, 1)?,
        conv2: take_conv(&mut map, "baseline.conv2", spec.c2, spec.c1)?,
        conv3: take_conv(&mut map, "baseline.conv3", spec.c3, spec.c2)?,
        fc1: take_affine(&mut map, "baseline.fc1", spec.trunk_dim(), spec.classifier_hidden)?,
        fc2: take_affine(&mut map, "baseline.fc2", spec.classifier_hidden, spec.classes)?,
    })
}

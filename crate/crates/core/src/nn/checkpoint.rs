//! Binary checkpoint format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  "SNET"
//! version u16      format version (currently 1)
//! arch    u8       1 = cnn1, 2 = cnn2, 3 = cnn3
//! seed    u64      rng seed recorded at initialization
//! records repeated per parameter tensor, in layer order,
//!         weights before bias:
//!   layer  u16     layer index within the spec
//!   shape  4 x u32 tensor shape (n, c, h, w)
//!   data   f32 x n raw little-endian values
//! ```
//!
//! The shape table is validated against the architecture's canonical spec on
//! load, so a file whose records do not match its declared arch is rejected.
//! Round trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{ArchId, Model, ModelSpec, ParamPair};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"SNET";
pub const FORMAT_VERSION: u16 = 1;

/// Write `model` to `path`. Only canonical architectures are serializable:
/// the file format does not carry an input shape, so toy variants with
/// non-standard inputs are rejected here rather than failing on load.
pub fn save_model(model: &Model<f32>, path: impl AsRef<Path>) -> Result<()> {
    let spec = model.spec();
    if *spec != ModelSpec::standard(spec.arch) {
        return Err(Error::InvalidSpec(format!(
            "only standard {} models can be checkpointed",
            spec.arch
        )));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&[spec.arch.code()])?;
    w.write_all(&model.seed().to_le_bytes())?;
    for (i, params) in model.params().iter().enumerate() {
        if let Some(p) = params {
            write_record(&mut w, i as u16, &p.weights)?;
            write_record(&mut w, i as u16, &p.bias)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_record(w: &mut impl Write, layer: u16, tensor: &Tensor<f32>) -> Result<()> {
    w.write_all(&layer.to_le_bytes())?;
    for dim in tensor.shape() {
        w.write_all(&(dim as u32).to_le_bytes())?;
    }
    for &v in tensor.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Read a checkpoint back into a model. The declared architecture fixes the
/// expected record sequence; any deviation is a validation error.
pub fn load_model(path: impl AsRef<Path>) -> Result<Model<f32>> {
    let mut r = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, "magic")?;
    if magic != MAGIC {
        return Err(Error::CheckpointFormat(format!(
            "bad magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let version = read_u16(&mut r, "version")?;
    if version != FORMAT_VERSION {
        return Err(Error::CheckpointFormat(format!(
            "unsupported format version {version}"
        )));
    }
    let mut arch_byte = [0u8; 1];
    read_exact(&mut r, &mut arch_byte, "arch id")?;
    let arch = ArchId::from_code(arch_byte[0])?;
    let seed = read_u64(&mut r, "seed")?;

    let spec = ModelSpec::standard(arch);
    // Expected record sequence: (layer index, shape) for weights then bias
    // of every parameterized layer, in layer order.
    let mut expected = Vec::new();
    for (i, shapes) in spec.param_shapes()?.iter().enumerate() {
        if let Some((w_shape, b_shape)) = shapes {
            expected.push((i as u16, *w_shape));
            expected.push((i as u16, *b_shape));
        }
    }

    let mut tensors = Vec::with_capacity(expected.len());
    for (record_no, (want_layer, want_shape)) in expected.iter().enumerate() {
        let layer = read_u16(&mut r, "record layer index")?;
        let mut shape = [0usize; 4];
        for d in &mut shape {
            *d = read_u32(&mut r, "record shape")? as usize;
        }
        if layer != *want_layer || shape != *want_shape {
            return Err(Error::InconsistentShapeTable {
                arch: arch.as_str().to_string(),
                detail: format!(
                    "record {record_no}: got layer {layer} shape {shape:?}, \
                     expected layer {want_layer} shape {want_shape:?}"
                ),
            });
        }
        let len: usize = shape.iter().product();
        let mut buf = vec![0u8; len * 4];
        read_exact(&mut r, &mut buf, "record data")?;
        let data = buf
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        tensors.push(Tensor::from_vec(shape, data)?);
    }

    // Trailing bytes mean the shape table disagrees with the arch.
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::InconsistentShapeTable {
            arch: arch.as_str().to_string(),
            detail: "unexpected trailing records".to_string(),
        });
    }

    let mut tensors = tensors.into_iter();
    let params = spec
        .param_shapes()?
        .iter()
        .map(|shapes| {
            shapes.map(|_| ParamPair {
                weights: tensors.next().expect("counted above"),
                bias: tensors.next().expect("counted above"),
            })
        })
        .collect();
    Model::from_params(spec, params, seed)
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::CheckpointFormat(format!("truncated file while reading {what}"))
        } else {
            Error::Io(e)
        }
    })
}

fn read_u16(r: &mut impl Read, what: &str) -> Result<u16> {
    let mut b = [0u8; 2];
    read_exact(r, &mut b, what)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

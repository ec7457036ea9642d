//! Binary file formats.
//!
//! TNSR (one tensor):
//!
//! ```text
//! "TNSR" | version u32 = 1 | rank u32 | rank × extent u32 | data f32 ...
//! ```
//!
//! NWAD (one model):
//!
//! ```text
//! "NWAD" | version u32 = 1 | header_len u32 | JSON header | TNSR records
//! ```
//!
//! All integers and floats are little-endian with no padding. NWAD parameter
//! records follow layer order, weight then bias for every conv/dense layer.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, FormatError, Result};
use crate::layers::{LayerSpec, Mode, Network, Param};
use crate::tensor::{Tensor, MAX_RANK};

pub const TENSOR_MAGIC: [u8; 4] = *b"TNSR";
pub const MODEL_MAGIC: [u8; 4] = *b"NWAD";
pub const FORMAT_VERSION: u32 = 1;

/// Upper bound on the NWAD JSON header.
const MAX_HEADER_LEN: usize = 64 << 20;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let remaining = self.bytes.len() - self.pos;
        if n > remaining {
            return Err(FormatError::Truncated { needed: n - remaining });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn magic(&mut self, expected: [u8; 4]) -> Result<(), FormatError> {
        let found: [u8; 4] = self.take(4)?.try_into().unwrap();
        if found != expected {
            return Err(FormatError::BadMagic { expected, found });
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(FormatError::UnsupportedVersion(version));
        }
        Ok(())
    }

    fn tensor(&mut self) -> Result<Tensor, FormatError> {
        self.magic(TENSOR_MAGIC)?;
        let rank = self.u32()? as usize;
        if rank == 0 || rank > MAX_RANK {
            return Err(FormatError::BadLength(format!("tensor rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let extent = self.u32()? as usize;
            if extent == 0 {
                return Err(FormatError::BadLength("zero extent".into()));
            }
            shape.push(extent);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .and_then(|n| n.checked_mul(4).map(|_| n))
            .ok_or_else(|| FormatError::BadLength(format!("extents {shape:?} overflow")))?;
        let raw = self.take(count * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Tensor::from_vec(&shape, data).expect("validated shape"))
    }

    fn finish(&self) -> Result<(), FormatError> {
        match self.bytes.len() - self.pos {
            0 => Ok(()),
            n => Err(FormatError::TrailingBytes(n)),
        }
    }
}

pub fn encode_tensor(t: &Tensor, out: &mut Vec<u8>) {
    out.extend_from_slice(&TENSOR_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &e in t.shape() {
        out.extend_from_slice(&(e as u32).to_le_bytes());
    }
    out.reserve(t.len() * 4);
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor, FormatError> {
    let mut r = Reader::new(bytes);
    let t = r.tensor()?;
    r.finish()?;
    Ok(t)
}

pub fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    let mut buf = Vec::new();
    encode_tensor(t, &mut buf);
    fs::write(path, buf).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode_tensor(&bytes).map_err(|source| Error::Format {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamShapes {
    layer: String,
    weight: Vec<usize>,
    bias: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelHeader {
    specs: Vec<LayerSpec>,
    input_shape: Vec<usize>,
    param_shapes: Vec<ParamShapes>,
    mode: Mode,
    metadata: Value,
}

/// A model together with its free-form training metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelFile {
    pub network: Network,
    pub metadata: Value,
}

pub fn encode_network(net: &Network, metadata: &Value) -> Vec<u8> {
    let header = ModelHeader {
        specs: net.specs().to_vec(),
        input_shape: net.input_shape().to_vec(),
        param_shapes: net
            .param_layers()
            .into_iter()
            .map(|i| {
                let p = net.param(i).unwrap();
                ParamShapes {
                    layer: net.specs()[i].name.clone(),
                    weight: p.weight.shape().to_vec(),
                    bias: p.bias.shape().to_vec(),
                }
            })
            .collect(),
        mode: net.mode(),
        metadata: metadata.clone(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(12 + json.len() + net.param_count() * 4);
    out.extend_from_slice(&MODEL_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for p in net.params().iter().flatten() {
        encode_tensor(&p.weight, &mut out);
        encode_tensor(&p.bias, &mut out);
    }
    out
}

pub fn decode_network(bytes: &[u8]) -> Result<ModelFile, FormatError> {
    let mut r = Reader::new(bytes);
    r.magic(MODEL_MAGIC)?;
    let len = r.u32()? as usize;
    if len > MAX_HEADER_LEN {
        return Err(FormatError::BadLength(format!("header length {len}")));
    }
    let header: ModelHeader =
        serde_json::from_slice(r.take(len)?).map_err(|e| FormatError::BadHeader(e.to_string()))?;
    let param_layers: Vec<usize> = (0..header.specs.len())
        .filter(|&i| header.specs[i].is_parameterized())
        .collect();
    if param_layers.len() != header.param_shapes.len() {
        return Err(FormatError::BadHeader(format!(
            "{} parameterized layers but {} parameter entries",
            param_layers.len(),
            header.param_shapes.len()
        )));
    }
    let mut params: Vec<Option<Param>> = vec![None; header.specs.len()];
    for (&i, declared) in param_layers.iter().zip(&header.param_shapes) {
        let spec = &header.specs[i];
        let expected = spec.weight_shape().unwrap();
        if declared.layer != spec.name || declared.weight != expected || declared.bias != [expected[0]] {
            return Err(FormatError::BadHeader(format!(
                "parameter entry for {} disagrees with its layer spec",
                spec.name
            )));
        }
        let weight = r.tensor()?;
        let bias = r.tensor()?;
        if weight.shape() != declared.weight.as_slice() || bias.shape() != declared.bias.as_slice() {
            return Err(FormatError::BadLength(format!(
                "record shapes {:?}/{:?} for layer {} do not match header",
                weight.shape(),
                bias.shape(),
                spec.name
            )));
        }
        params[i] = Some(Param { weight, bias });
    }
    r.finish()?;
    let mut network = Network::from_params(header.specs, &header.input_shape, params)
        .map_err(|e| FormatError::BadHeader(e.to_string()))?;
    network.set_mode(header.mode);
    Ok(ModelFile {
        network,
        metadata: header.metadata,
    })
}

pub fn save_network(path: &Path, net: &Network, metadata: &Value) -> Result<()> {
    fs::write(path, encode_network(net, metadata)).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn load_network(path: &Path) -> Result<ModelFile> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode_network(&bytes).map_err(|source| Error::Format {
        path: PathBuf::from(path),
        source,
    })
}

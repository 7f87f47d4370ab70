//! `FTNSR1` tensor interchange files.
//!
//! Layout: the 7 magic bytes `FTNSR1\n`, one UTF-8 JSON header line such as
//! `{"dtype":"f32","shape":[C,H,W],"layout":"row-major"}` terminated by
//! `\n`, then `prod(shape)` little-endian IEEE-754 `f32` values.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CamError, Result};

pub const MAGIC: &[u8; 7] = b"FTNSR1\n";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    dtype: String,
    shape: Vec<usize>,
    layout: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if shape.is_empty() || n != data.len() {
            return Err(CamError::Container(format!(
                "shape {shape:?} does not match {} values",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }
}

pub fn write_tensor<W: Write>(mut out: W, tensor: &Tensor) -> Result<()> {
    let header = Header {
        dtype: "f32".into(),
        shape: tensor.shape.clone(),
        layout: "row-major".into(),
    };
    out.write_all(MAGIC)?;
    serde_json::to_writer(&mut out, &header).map_err(|e| CamError::Container(e.to_string()))?;
    out.write_all(b"\n")?;
    let mut bytes = Vec::with_capacity(tensor.data.len() * 4);
    for v in &tensor.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&bytes)?;
    Ok(())
}

pub fn read_tensor<R: BufRead>(mut input: R) -> Result<Tensor> {
    let mut magic = [0u8; 7];
    input
        .read_exact(&mut magic)
        .map_err(|_| CamError::Container("file shorter than the magic bytes".into()))?;
    if &magic != MAGIC {
        return Err(CamError::Container("bad magic bytes".into()));
    }
    let mut line = Vec::new();
    input.read_until(b'\n', &mut line)?;
    if line.last() != Some(&b'\n') {
        return Err(CamError::Container("header line is not terminated".into()));
    }
    let header: Header =
        serde_json::from_slice(&line).map_err(|e| CamError::Container(format!("bad header: {e}")))?;
    if header.dtype != "f32" {
        return Err(CamError::Container(format!("unsupported dtype {}", header.dtype)));
    }
    if header.layout != "row-major" {
        return Err(CamError::Container(format!("unsupported layout {}", header.layout)));
    }
    let n: usize = header.shape.iter().product();
    let mut raw = Vec::new();
    input.read_to_end(&mut raw)?;
    if raw.len() != n * 4 {
        return Err(CamError::Container(format!(
            "payload has {} bytes, shape {:?} needs {}",
            raw.len(),
            header.shape,
            n * 4
        )));
    }
    let data = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::new(header.shape, data)
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    let file = std::fs::File::open(path)?;
    read_tensor(std::io::BufReader::new(file))
}

pub fn save_tensor(path: &Path, tensor: &Tensor) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_tensor(&mut file, tensor)?;
    file.flush()?;
    Ok(())
}

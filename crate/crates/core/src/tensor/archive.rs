//! Tensor archive format: one JSON header line followed by the raw
//! little-endian element buffer.
//!
//! ```text
//! {"shape":[2,3],"dtype":"f32","order":"row-major"}\n<24 bytes>
//! ```

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Element, Tensor};
use crate::error::{Error, Result};

const ROW_MAJOR: &str = "row-major";

#[derive(Serialize, Deserialize)]
struct Header {
    shape: Vec<usize>,
    dtype: String,
    order: String,
}

pub fn write_archive<T: Element, W: Write>(tensor: &Tensor<T>, mut out: W) -> std::io::Result<()> {
    let header = Header {
        shape: tensor.shape().to_vec(),
        dtype: T::DTYPE.to_string(),
        order: ROW_MAJOR.to_string(),
    };
    let mut bytes = serde_json::to_vec(&header).expect("header serializes");
    bytes.push(b'\n');
    bytes.reserve(tensor.numel() * T::BYTES);
    for &v in tensor.data() {
        v.write_le(&mut bytes);
    }
    out.write_all(&bytes)
}

pub fn read_archive<T: Element, R: Read>(input: R) -> Result<Tensor<T>> {
    let mut reader = BufReader::new(input);
    let mut line = Vec::new();
    reader
        .read_until(b'\n', &mut line)
        .map_err(|e| Error::Archive(e.to_string()))?;
    if line.last() != Some(&b'\n') {
        return Err(Error::Archive("missing header line".into()));
    }
    let header: Header = serde_json::from_slice(&line[..line.len() - 1])
        .map_err(|e| Error::Archive(format!("header: {e}")))?;
    if header.dtype != T::DTYPE {
        return Err(Error::Archive(format!(
            "dtype {} does not match requested {}",
            header.dtype,
            T::DTYPE
        )));
    }
    if header.order != ROW_MAJOR {
        return Err(Error::Archive(format!(
            "unsupported order {}",
            header.order
        )));
    }
    let mut raw = Vec::new();
    reader
        .read_to_end(&mut raw)
        .map_err(|e| Error::Archive(e.to_string()))?;
    let n: usize = header.shape.iter().product();
    if raw.len() != n * T::BYTES {
        return Err(Error::Archive(format!(
            "shape {:?} needs {} bytes, found {}",
            header.shape,
            n * T::BYTES,
            raw.len()
        )));
    }
    let data = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
    Tensor::new(header.shape, data)
}

pub fn write_archive_file<T: Element>(tensor: &Tensor<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_archive(tensor, std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn read_archive_file<T: Element>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_archive(file)
}

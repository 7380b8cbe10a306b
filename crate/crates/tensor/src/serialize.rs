//! Little-endian tensor binary format.
//!
//! Layout: magic `DGRT`, version `u32 = 1`, dtype code `u8` (1 = f32, 2 = f64),
//! rank `u8`, `rank` dims as `u64`, then the raw row-major values.

use std::io::Write;

use crate::element::{DType, Element};
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"DGRT";
pub const FORMAT_VERSION: u32 = 1;

/// Parsed header of an encoded tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorHeader {
    pub dtype: DType,
    pub dims: Vec<usize>,
    /// Byte length of the header itself.
    pub header_len: usize,
}

impl TensorHeader {
    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn encoded_len(&self) -> usize {
        self.header_len + self.numel() * self.dtype.size()
    }
}

fn format_err(offset: usize, message: impl Into<String>) -> TensorError {
    TensorError::Format { offset, message: message.into() }
}

pub fn encode<T: Element>(tensor: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(10 + 8 * tensor.rank() + tensor.numel() * T::DTYPE.size());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(T::DTYPE.code());
    out.push(tensor.rank() as u8);
    for &d in tensor.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    T::write_le_slice(tensor.data(), &mut out);
    out
}

pub fn write_tensor<T: Element>(w: &mut impl Write, tensor: &Tensor<T>) -> Result<()> {
    w.write_all(&encode(tensor))?;
    Ok(())
}

/// Reads the header starting at `bytes[0]`; offsets in errors are relative to `base`.
pub fn read_header(bytes: &[u8], base: usize) -> Result<TensorHeader> {
    let need = |n: usize, what: &str| -> Result<()> {
        if bytes.len() < n {
            Err(format_err(base + bytes.len(), format!("truncated while reading {what}")))
        } else {
            Ok(())
        }
    };
    need(4, "magic")?;
    if &bytes[..4] != MAGIC {
        return Err(format_err(base, format!("bad magic {:?}", &bytes[..4])));
    }
    need(8, "version")?;
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(format_err(base + 4, format!("unsupported format version {version}")));
    }
    need(10, "dtype and rank")?;
    let dtype = DType::from_code(bytes[8]).ok_or_else(|| format_err(base + 8, format!("unknown dtype code {}", bytes[8])))?;
    let rank = bytes[9] as usize;
    if rank == 0 {
        return Err(format_err(base + 9, "rank must be at least 1"));
    }
    let header_len = 10 + 8 * rank;
    need(header_len, "dims")?;
    let mut dims = Vec::with_capacity(rank);
    for i in 0..rank {
        let off = 10 + 8 * i;
        let d = u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
        if d == 0 {
            return Err(format_err(base + off, format!("dimension {i} is zero")));
        }
        let d = usize::try_from(d).map_err(|_| format_err(base + off, "dimension too large"))?;
        dims.push(d);
    }
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|n| n.checked_mul(dtype.size()))
        .ok_or_else(|| format_err(base + 10, "tensor size overflows"))?;
    Ok(TensorHeader { dtype, dims, header_len })
}

/// Decodes one tensor from the front of `bytes`, returning it and the bytes consumed.
pub fn decode_prefix<T: Element>(bytes: &[u8], base: usize) -> Result<(Tensor<T>, usize)> {
    let header = read_header(bytes, base)?;
    if header.dtype != T::DTYPE {
        return Err(format_err(
            base + 8,
            format!("dtype {:?} does not match requested {:?}", header.dtype, T::DTYPE),
        ));
    }
    let total = header.encoded_len();
    if bytes.len() < total {
        return Err(format_err(
            base + bytes.len(),
            format!("truncated payload: expected {} bytes, found {}", total, bytes.len()),
        ));
    }
    let data = T::read_le_slice(&bytes[header.header_len..total]);
    Ok((Tensor::new(header.dims, data)?, total))
}

/// Decodes a buffer holding exactly one tensor.
pub fn decode<T: Element>(bytes: &[u8]) -> Result<Tensor<T>> {
    let (t, used) = decode_prefix(bytes, 0)?;
    if used != bytes.len() {
        return Err(format_err(used, format!("{} trailing bytes after tensor", bytes.len() - used)));
    }
    Ok(t)
}

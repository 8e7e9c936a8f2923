//! Network checkpoint files.
//!
//! Layout: one line of JSON (the [`CheckpointHeader`]) terminated by `\n`,
//! followed by the weights of `W_1 … W_{L+1}` in layer order, each matrix
//! row-major, every entry a little-endian IEEE-754 `f64`. The payload length
//! must equal `8 · Σ rows·cols` exactly.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{NetworkParams, NetworkShape};
use crate::error::{Error, Result};
use crate::numkit::Matrix;
use crate::scalar::Scalar;

pub const CHECKPOINT_FORMAT: &str = "reslab-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub shape: NetworkShape,
    pub seed: Option<u64>,
    pub layers: Vec<(usize, usize)>,
    pub payload_bytes: usize,
}

pub fn write_checkpoint<T: Scalar, W: Write>(params: &NetworkParams<T>, seed: Option<u64>, mut out: W) -> Result<()> {
    let layers: Vec<(usize, usize)> = params.weights().iter().map(Matrix::shape).collect();
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        shape: *params.shape(),
        seed,
        payload_bytes: 8 * layers.iter().map(|(r, c)| r * c).sum::<usize>(),
        layers,
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    let mut buf = Vec::with_capacity(header.payload_bytes);
    for w in params.weights() {
        for &x in w.as_slice() {
            buf.extend_from_slice(&x.as_f64().to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint<T: Scalar, R: Read>(mut input: R) -> Result<(NetworkParams<T>, CheckpointHeader)> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format("line 1", "missing header terminator"))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[..nl]).map_err(|e| Error::format(format!("line 1, column {}", e.column()), e.to_string()))?;
    if header.format != CHECKPOINT_FORMAT || header.version != CHECKPOINT_VERSION {
        return Err(Error::format(
            "line 1",
            format!("unsupported format {} v{}", header.format, header.version),
        ));
    }
    header.shape.validate()?;
    let expected: Vec<(usize, usize)> = (1..=header.shape.layers()).map(|l| header.shape.layer_dims(l)).collect();
    if header.layers != expected {
        return Err(Error::format("line 1", "layer shapes disagree with the network shape"));
    }
    let payload = &bytes[nl + 1..];
    let want = 8 * expected.iter().map(|(r, c)| r * c).sum::<usize>();
    if payload.len() != want || header.payload_bytes != want {
        return Err(Error::format(
            format!("byte offset {}", nl + 1),
            format!("payload has {} bytes, expected {want}", payload.len()),
        ));
    }
    let mut cursor = 0usize;
    let mut weights = Vec::with_capacity(expected.len());
    for &(r, c) in &expected {
        let mut data = Vec::with_capacity(r * c);
        for _ in 0..r * c {
            let chunk: [u8; 8] = payload[cursor..cursor + 8].try_into().expect("8-byte chunk");
            let x = f64::from_le_bytes(chunk);
            if !x.is_finite() {
                return Err(Error::format(format!("byte offset {}", nl + 1 + cursor), "non-finite weight"));
            }
            data.push(T::of(x));
            cursor += 8;
        }
        weights.push(Matrix::from_vec(r, c, data)?);
    }
    let params = NetworkParams::new(header.shape, weights)?;
    Ok((params, header))
}

pub fn save_checkpoint<T: Scalar>(params: &NetworkParams<T>, seed: Option<u64>, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(params, seed, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(NetworkParams<T>, CheckpointHeader)> {
    read_checkpoint(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::RngState;

    #[test]
    fn round_trip_is_bit_exact() {
        let p = NetworkParams::<f64>::init_gaussian(RngState::root(4), NetworkShape::residual(3, 3, 6, 4)).unwrap();
        let mut a = Vec::new();
        write_checkpoint(&p, Some(4), &mut a).unwrap();
        let (q, h) = read_checkpoint::<f64, _>(&a[..]).unwrap();
        assert_eq!(p, q);
        assert_eq!(h.seed, Some(4));
        let mut b = Vec::new();
        write_checkpoint(&q, Some(4), &mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let p = NetworkParams::<f64>::init_gaussian(RngState::root(4), NetworkShape::residual(3, 2, 4, 4)).unwrap();
        let mut a = Vec::new();
        write_checkpoint(&p, None, &mut a).unwrap();
        a.pop();
        assert!(matches!(read_checkpoint::<f64, _>(&a[..]), Err(Error::Format { .. })));
        assert!(matches!(read_checkpoint::<f64, _>(&b"{}"[..]), Err(Error::Format { .. })));
    }
}

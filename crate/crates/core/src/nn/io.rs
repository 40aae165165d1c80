//! Parameter file: magic `LLNP`, the spec fingerprint as little-endian `u64`,
//! then for every layer in declaration order its weights followed by its
//! biases as little-endian `f32`.

use std::fs;
use std::path::Path;

use super::{NetworkParams, NetworkSpec};
use crate::error::{Error, Result};
use crate::imageio::write_atomic;

pub const PARAMS_MAGIC: &[u8; 4] = b"LLNP";

pub fn save_params(params: &NetworkParams<f32>, spec: &NetworkSpec, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if !params.matches(spec) {
        return Err(Error::SpecMismatch);
    }
    let mut bytes = Vec::with_capacity(12 + 4 * params.num_params());
    bytes.extend_from_slice(PARAMS_MAGIC);
    bytes.extend_from_slice(&spec.fingerprint().to_le_bytes());
    for v in params.flat() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(path, &bytes)
}

pub fn load_params(spec: &NetworkSpec, path: impl AsRef<Path>) -> Result<NetworkParams<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[..4] != PARAMS_MAGIC {
        return Err(Error::format("parameter file", path, "missing LLNP header"));
    }
    let fingerprint = u64::from_le_bytes(bytes[4..12].try_into().unwrap());
    if fingerprint != spec.fingerprint() {
        return Err(Error::SpecMismatch);
    }
    let mut params = NetworkParams::<f32>::zeros(spec);
    let body = &bytes[12..];
    if body.len() != 4 * params.num_params() {
        return Err(Error::format(
            "parameter file",
            path,
            format!("expected {} values, found {} bytes", params.num_params(), body.len()),
        ));
    }
    let mut values = body.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()));
    for slice in params.slices_mut() {
        for (dst, src) in slice.iter_mut().zip(&mut values) {
            *dst = src;
        }
    }
    Ok(params)
}

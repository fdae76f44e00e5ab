//! Checkpoint file: a UTF-8 header followed by little-endian `f32` values.
//!
//! ```text
//! massl-checkpoint 1
//! levels 3
//! base_channels 8
//! ...
//! param encoder enc0.0.conv.weight 8x1x3x3
//! ...
//! values 61234
//! end
//! <values * 4 bytes>
//! ```
//!
//! Parameters appear in model declaration order and must match the layout
//! implied by the config keys exactly.

use std::fs;
use std::path::Path;

use thiserror::Error;

use super::{MasslModel, ModelError, NetworkConfig, ParamGroup, Parameter};
use crate::scalar::Scalar;

const MAGIC: &str = "massl-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("malformed checkpoint header: {0}")]
    Header(String),
    #[error("checkpoint payload truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("checkpoint has {0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn shape_str(shape: &[usize]) -> String {
    shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
}

pub fn encode_checkpoint<T: Scalar>(model: &MasslModel<T>) -> Vec<u8> {
    let c = model.config();
    let mut header = format!("{MAGIC} {VERSION}\n");
    for (key, value) in [
        ("levels", c.levels.to_string()),
        ("base_channels", c.base_channels.to_string()),
        ("max_channels", c.max_channels.to_string()),
        ("height", c.height.to_string()),
        ("width", c.width.to_string()),
        ("in_channels", c.in_channels.to_string()),
        ("recon_channels", c.recon_channels.to_string()),
        ("leaky_slope", c.leaky_slope.to_string()),
        ("norm_eps", c.norm_eps.to_string()),
    ] {
        header.push_str(&format!("{key} {value}\n"));
    }
    for p in model.params() {
        header.push_str(&format!("param {} {} {}\n", p.group(), p.name, shape_str(&p.shape)));
    }
    header.push_str(&format!("values {}\nend\n", model.parameter_count()));
    let mut bytes = header.into_bytes();
    bytes.reserve(model.parameter_count() * 4);
    for p in model.params() {
        for v in &p.values {
            bytes.extend_from_slice(&v.as_f32().to_le_bytes());
        }
    }
    bytes
}

fn parse_num<N: std::str::FromStr>(key: &str, raw: &str) -> Result<N, CheckpointError> {
    raw.parse()
        .map_err(|_| CheckpointError::Header(format!("bad value `{raw}` for `{key}`")))
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<MasslModel<T>, CheckpointError> {
    const TERMINATOR: &[u8] = b"\nend\n";
    let Some(first_nl) = bytes.iter().position(|&b| b == b'\n') else {
        return Err(
            if bytes.starts_with(MAGIC.as_bytes()) || MAGIC.as_bytes().starts_with(bytes) {
                CheckpointError::Header("missing header terminator".into())
            } else {
                CheckpointError::BadMagic
            },
        );
    };
    let first = std::str::from_utf8(&bytes[..first_nl]).map_err(|_| CheckpointError::BadMagic)?;
    let Some(version) = first.strip_prefix(MAGIC).and_then(|r| r.strip_prefix(' ')) else {
        return Err(CheckpointError::BadMagic);
    };
    let version: u32 = parse_num("version", version)?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let header_end = bytes
        .windows(TERMINATOR.len())
        .position(|w| w == TERMINATOR)
        .map(|p| p + TERMINATOR.len())
        .ok_or_else(|| CheckpointError::Header("missing `end` line".into()))?;
    let header = std::str::from_utf8(&bytes[first_nl + 1..header_end])
        .map_err(|_| CheckpointError::Header("header is not UTF-8".into()))?;

    let mut cfg = NetworkConfig::default();
    let mut seen = Vec::new();
    let mut decls = Vec::new();
    let mut declared_values = None;
    for line in header.lines() {
        let mut parts = line.split(' ');
        let key = parts.next().unwrap_or_default();
        let rest: Vec<&str> = parts.collect();
        match (key, rest.as_slice()) {
            ("end", []) => break,
            ("param", [group, name, shape]) => {
                let group: ParamGroup = group.parse().map_err(CheckpointError::Header)?;
                let shape = shape
                    .split('x')
                    .map(|d| parse_num::<usize>("shape", d))
                    .collect::<Result<Vec<_>, _>>()?;
                decls.push((group, name.to_string(), shape));
            }
            ("values", [n]) => declared_values = Some(parse_num::<usize>("values", n)?),
            (key, [value]) if decls.is_empty() => {
                if seen.contains(&key) {
                    return Err(CheckpointError::Header(format!("duplicate key `{key}`")));
                }
                match key {
                    "levels" => cfg.levels = parse_num(key, value)?,
                    "base_channels" => cfg.base_channels = parse_num(key, value)?,
                    "max_channels" => cfg.max_channels = parse_num(key, value)?,
                    "height" => cfg.height = parse_num(key, value)?,
                    "width" => cfg.width = parse_num(key, value)?,
                    "in_channels" => cfg.in_channels = parse_num(key, value)?,
                    "recon_channels" => cfg.recon_channels = parse_num(key, value)?,
                    "leaky_slope" => cfg.leaky_slope = parse_num(key, value)?,
                    "norm_eps" => cfg.norm_eps = parse_num(key, value)?,
                    _ => return Err(CheckpointError::Header(format!("unknown key `{key}`"))),
                }
                seen.push(key);
            }
            _ => return Err(CheckpointError::Header(format!("unexpected line `{line}`"))),
        }
    }
    if seen.len() != 9 {
        return Err(CheckpointError::Header("missing config keys".into()));
    }
    let declared_values = declared_values.ok_or_else(|| CheckpointError::Header("missing `values` line".into()))?;
    let counted: usize = decls.iter().map(|(_, _, s)| s.iter().product::<usize>()).sum();
    if counted != declared_values {
        return Err(CheckpointError::Header(format!(
            "parameter shapes hold {counted} values but header declares {declared_values}"
        )));
    }

    let payload = &bytes[header_end..];
    let expected = declared_values * 4;
    if payload.len() < expected {
        return Err(CheckpointError::Truncated {
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(CheckpointError::TrailingBytes(payload.len() - expected));
    }
    let mut floats = payload
        .chunks_exact(4)
        .map(|c| T::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64));
    let params = decls
        .into_iter()
        .map(|(group, name, shape)| {
            let n = shape.iter().product();
            Parameter {
                name,
                group,
                shape,
                values: floats.by_ref().take(n).collect(),
            }
        })
        .collect();
    MasslModel::from_parts(cfg, params).map_err(|e| CheckpointError::Header(e.to_string()))
}

pub fn write_checkpoint<T: Scalar>(path: &Path, model: &MasslModel<T>) -> Result<(), CheckpointError> {
    fs::write(path, encode_checkpoint(model)).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_checkpoint<T: Scalar>(path: &Path) -> Result<MasslModel<T>, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_checkpoint(&bytes)
}

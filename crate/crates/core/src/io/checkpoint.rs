//! Model checkpoints: the model config as `key = value` text, a blank line,
//! then `(u16 name length, name, tensor)` records in registry order.

use super::tensor_file::{encode_tensor, read_tensor, Reader};
use crate::error::{Error, Result};
use crate::network::{ModelConfig, ModelWeights};
use crate::params::Parameters;
use crate::Scalar;

pub fn checkpoint_to_bytes<T: Scalar>(w: &ModelWeights<T>) -> Result<Vec<u8>> {
    let mut out = w.config.to_kv().into_bytes();
    out.push(b'\n');
    for (name, t) in w.named_tensors() {
        let len = u16::try_from(name.len())
            .map_err(|_| Error::Invalid(format!("parameter name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        encode_tensor(t, &mut out)?;
    }
    Ok(out)
}

/// Parses the config block and returns it with the offset of the first
/// record.
pub fn parse_checkpoint_header(bytes: &[u8]) -> Result<(ModelConfig, usize)> {
    let end = bytes
        .windows(2)
        .position(|w| w == b"\n\n")
        .ok_or_else(|| Error::Parse {
            offset: bytes.len(),
            msg: "checkpoint header is not terminated by a blank line".into(),
        })?;
    let mut config = ModelConfig::default();
    let mut seen = Vec::new();
    let mut offset = 0;
    for line in bytes[..end].split(|&b| b == b'\n') {
        let at = offset;
        offset += line.len() + 1;
        let err = |msg: String| Error::Parse { offset: at, msg };
        let text = std::str::from_utf8(line).map_err(|_| err("header line is not UTF-8".into()))?;
        let (key, value) = text
            .split_once('=')
            .ok_or_else(|| err(format!("expected `key = value`, got `{text}`")))?;
        let key = key.trim();
        match config.set(key, value.trim()) {
            Ok(true) => {}
            Ok(false) => return Err(err(format!("unknown config key `{key}`"))),
            Err(e) => return Err(err(format!("{key}: {e}"))),
        }
        if seen.contains(&key.to_string()) {
            return Err(err(format!("duplicate config key `{key}`")));
        }
        seen.push(key.to_string());
    }
    if seen.len() != 5 {
        return Err(Error::Parse {
            offset: 0,
            msg: format!("checkpoint header must set all 5 model keys, found {seen:?}"),
        });
    }
    config.validate()?;
    Ok((config, end + 2))
}

/// Decodes a checkpoint. Records must list exactly the registry of the
/// stored config, in order.
pub fn checkpoint_from_bytes<T: Scalar>(bytes: &[u8]) -> Result<ModelWeights<T>> {
    let (config, start) = parse_checkpoint_header(bytes)?;
    let expected: Vec<String> = ModelWeights::<T>::zeros(&config)?
        .named_tensors()
        .into_iter()
        .map(|(n, _)| n)
        .collect();
    let mut r = Reader::new(bytes, start);
    let mut entries = Vec::with_capacity(expected.len());
    while r.pos < bytes.len() {
        let at = r.pos;
        let len = r.u16("record name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "record name")?)
            .map_err(|_| Error::Parse {
                offset: at + 2,
                msg: "record name is not UTF-8".into(),
            })?
            .to_string();
        match expected.get(entries.len()) {
            Some(want) if *want == name => {}
            Some(want) => {
                return Err(Error::Parse {
                    offset: at,
                    msg: format!("record `{name}` found where `{want}` was expected"),
                })
            }
            None => {
                return Err(Error::Parse {
                    offset: at,
                    msg: format!("unexpected extra record `{name}`"),
                })
            }
        }
        let t = read_tensor(&mut r)?.into_tensor::<T>();
        entries.push((name, t));
    }
    if let Some(missing) = expected.get(entries.len()) {
        return Err(Error::Parse {
            offset: bytes.len(),
            msg: format!("checkpoint ends before record `{missing}`"),
        });
    }
    ModelWeights::from_named(&config, entries)
}

/// Like [`checkpoint_from_bytes`], but also requires the stored config to
/// equal `expected`.
pub fn checkpoint_for_config<T: Scalar>(bytes: &[u8], expected: &ModelConfig) -> Result<ModelWeights<T>> {
    let (config, _) = parse_checkpoint_header(bytes)?;
    if &config != expected {
        return Err(Error::Invalid(format!(
            "checkpoint config does not match: checkpoint has\n{}expected\n{}",
            config.to_kv(),
            expected.to_kv()
        )));
    }
    checkpoint_from_bytes(bytes)
}

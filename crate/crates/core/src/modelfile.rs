//! Model file container.
//!
//! A UTF-8 header of `key value` lines terminated by a line `end`, followed
//! by every tensor as little-endian IEEE-754 f64 values in layout order:
//!
//! ```text
//! mmwrelay-model 1
//! planes 4
//! width 41
//! height 7
//! conv1 8
//! conv2 8
//! hidden 32
//! seed 2
//! tensor conv1.weight 8,4,3,3
//! ...
//! tensor value.out.bias 1
//! payload_bytes 637744
//! sha256 <hex digest of the payload>
//! end
//! <payload>
//! ```
//!
//! The tensor lines are informative; loading recomputes the layout from the
//! shape keys and rejects a header whose tensor list disagrees.

use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::a3c::{Checkpoint, RngState};
use crate::config::hex;
use crate::error::{Error, Result};
use crate::policy::{ModelParams, NetShape};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "mmwrelay-model";

fn header(shape: &NetShape, seed: u64, payload: &[u8]) -> String {
    let mut h = format!(
        "{MAGIC} {FORMAT_VERSION}\nplanes {}\nwidth {}\nheight {}\nconv1 {}\nconv2 {}\nhidden {}\nseed {seed}\n",
        shape.planes, shape.width, shape.height, shape.conv1, shape.conv2, shape.hidden
    );
    for spec in shape.layout() {
        let dims: Vec<String> = spec.dims.iter().map(usize::to_string).collect();
        h.push_str(&format!("tensor {} {}\n", spec.name, dims.join(",")));
    }
    h.push_str(&format!(
        "payload_bytes {}\nsha256 {}\nend\n",
        payload.len(),
        hex(&Sha256::digest(payload))
    ));
    h
}

pub fn to_bytes(model: &ModelParams) -> Vec<u8> {
    let payload: Vec<u8> = model.as_slice().iter().flat_map(|v| v.to_le_bytes()).collect();
    let mut out = header(model.shape(), model.seed(), &payload).into_bytes();
    out.extend_from_slice(&payload);
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelParams> {
    let mut lines = Vec::new();
    let mut at = 0;
    loop {
        let Some(nl) = bytes[at..].iter().position(|&b| b == b'\n') else {
            return Err(Error::Parse("model header is not terminated by an `end` line".into()));
        };
        let line = std::str::from_utf8(&bytes[at..at + nl])
            .map_err(|_| Error::Parse("model header is not UTF-8".into()))?;
        at += nl + 1;
        if line == "end" {
            break;
        }
        lines.push(line);
        if lines.len() == 1 {
            check_magic(line)?;
        }
    }
    let payload = &bytes[at..];

    let mut shape = NetShape::new(0, 0, 0);
    let mut seed = None;
    let mut payload_bytes = None;
    let mut digest = None;
    let mut tensors = Vec::new();
    for line in &lines[1..] {
        let (key, value) = line
            .split_once(' ')
            .ok_or_else(|| Error::Parse(format!("bad header line {line:?}")))?;
        let num = || -> Result<usize> {
            value
                .parse()
                .map_err(|_| Error::Parse(format!("bad value in header line {line:?}")))
        };
        match key {
            "planes" => shape.planes = num()?,
            "width" => shape.width = num()?,
            "height" => shape.height = num()?,
            "conv1" => shape.conv1 = num()?,
            "conv2" => shape.conv2 = num()?,
            "hidden" => shape.hidden = num()?,
            "seed" => {
                seed = Some(
                    value
                        .parse::<u64>()
                        .map_err(|_| Error::Parse(format!("bad seed {value:?}")))?,
                )
            }
            "payload_bytes" => payload_bytes = Some(num()?),
            "sha256" => digest = Some(value.to_string()),
            "tensor" => tensors.push(value.to_string()),
            other => return Err(Error::Parse(format!("unknown header key {other:?}"))),
        }
    }
    shape.validate()?;
    let seed = seed.ok_or_else(|| Error::Parse("header lacks a seed".into()))?;
    let digest = digest.ok_or_else(|| Error::Parse("header lacks a sha256 line".into()))?;

    let layout: Vec<String> = shape
        .layout()
        .iter()
        .map(|s| {
            let dims: Vec<String> = s.dims.iter().map(usize::to_string).collect();
            format!("{} {}", s.name, dims.join(","))
        })
        .collect();
    if tensors != layout {
        return Err(Error::Parse("tensor list does not match the header shape".into()));
    }

    let expected = shape.n_params() * 8;
    if payload_bytes != Some(expected) {
        return Err(Error::Parse(format!(
            "header declares {payload_bytes:?} payload bytes but the shape needs {expected}"
        )));
    }
    if payload.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(Error::Parse(format!(
            "{} bytes after the payload",
            payload.len() - expected
        )));
    }
    let found = hex(&Sha256::digest(payload));
    if found != digest {
        return Err(Error::Checksum {
            expected: digest,
            found,
        });
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    ModelParams::from_parts(shape, seed, data)
}

fn check_magic(line: &str) -> Result<()> {
    match line.split_once(' ') {
        Some((MAGIC, v)) if v == FORMAT_VERSION.to_string() => Ok(()),
        Some((MAGIC, v)) => Err(Error::Version {
            expected: FORMAT_VERSION,
            found: v.to_string(),
        }),
        _ => Err(Error::Parse("not a model file".into())),
    }
}

pub fn save(model: &ModelParams, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&to_bytes(model))?;
    f.sync_all()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ModelParams> {
    from_bytes(&std::fs::read(path)?)
}

/// Loads a model and checks its input planes against a state design.
pub fn load_for(path: &Path, expected: &NetShape) -> Result<ModelParams> {
    let m = load(path)?;
    let s = m.shape();
    if (s.planes, s.width, s.height) != (expected.planes, expected.width, expected.height) {
        return Err(Error::Shape {
            expected: format!("{}x{}x{} input", expected.planes, expected.width, expected.height),
            found: format!("{}x{}x{} input", s.planes, s.width, s.height),
        });
    }
    Ok(m)
}

/// Writes `<base>.bin`, `<base>.rmsprop.bin` and the text manifest `<base>.manifest`.
///
/// Manifest lines: `episode`, `updates`, `config_hash`, `model`, `rmsprop`,
/// and `world_rng` / `rollout_rng` as `<seed hex> <stream> <word position>`.
pub fn save_checkpoint(ck: &Checkpoint, base: &Path, config_hash: &str) -> Result<()> {
    let model_path = base.with_extension("bin");
    let stats_path = base.with_extension("rmsprop.bin");
    save(&ck.params, &model_path)?;
    let stats = ModelParams::from_parts(*ck.params.shape(), ck.params.seed(), ck.mean_square.clone())?;
    save(&stats, &stats_path)?;
    let name = |p: &Path| p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let rng = |r: &RngState| format!("{} {} {}", hex(&r.seed), r.stream, r.word_pos);
    let manifest = format!(
        "episode {}\nupdates {}\nconfig_hash {config_hash}\nmodel {}\nrmsprop {}\nworld_rng {}\nrollout_rng {}\n",
        ck.episode,
        ck.updates,
        name(&model_path),
        name(&stats_path),
        rng(&ck.world_rng),
        rng(&ck.rollout_rng),
    );
    std::fs::write(base.with_extension("manifest"), manifest)?;
    Ok(())
}

/// Reads a checkpoint written by [`save_checkpoint`]; returns it with the
/// recorded config hash.
pub fn load_checkpoint(manifest: &Path) -> Result<(Checkpoint, String)> {
    let text = std::fs::read_to_string(manifest)?;
    let dir = manifest.parent().unwrap_or(Path::new("."));
    let mut fields = std::collections::HashMap::new();
    for line in text.lines() {
        let (k, v) = line
            .split_once(' ')
            .ok_or_else(|| Error::Parse(format!("bad manifest line {line:?}")))?;
        fields.insert(k, v);
    }
    let get = |k: &str| {
        fields
            .get(k)
            .copied()
            .ok_or_else(|| Error::Parse(format!("manifest lacks {k}")))
    };
    let num = |k: &str| -> Result<u64> {
        get(k)?
            .parse()
            .map_err(|_| Error::Parse(format!("bad {k} in manifest")))
    };
    let rng = |k: &str| -> Result<RngState> {
        let bad = || Error::Parse(format!("bad {k} in manifest"));
        let parts: Vec<&str> = get(k)?.split(' ').collect();
        let [seed_hex, stream, pos] = parts[..] else {
            return Err(bad());
        };
        if seed_hex.len() != 64 {
            return Err(bad());
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&seed_hex[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
        }
        Ok(RngState {
            seed,
            stream: stream.parse().map_err(|_| bad())?,
            word_pos: pos.parse().map_err(|_| bad())?,
        })
    };
    let params = load(&dir.join(get("model")?))?;
    let stats = load(&dir.join(get("rmsprop")?))?;
    if stats.shape() != params.shape() {
        return Err(Error::Shape {
            expected: format!("{:?}", params.shape()),
            found: format!("{:?}", stats.shape()),
        });
    }
    let ck = Checkpoint {
        episode: num("episode")? as usize,
        updates: num("updates")?,
        mean_square: stats.as_slice().to_vec(),
        params,
        world_rng: rng("world_rng")?,
        rollout_rng: rng("rollout_rng")?,
    };
    Ok((ck, get("config_hash")?.to_string()))
}

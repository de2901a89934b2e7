//! Checkpoint format: the magic line `PCQAE1\n`, a little-endian `u32`
//! byte length, a UTF-8 JSON header, then every layer's weights followed
//! by its biases as little-endian `f32`, analysis layers first.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{AutoencoderParams, Layer, LayerSpec};
use super::train::TrainConfig;
use crate::error::{Error, Result};
use crate::voxel::Repr;

pub const MAGIC: &[u8; 7] = b"PCQAE1\n";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct LayerEntry {
    stage: String,
    #[serde(flatten)]
    spec: LayerSpec,
    weight_count: usize,
    bias_count: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    repr: Repr,
    seed: u64,
    layers: Vec<LayerEntry>,
    train_config: Option<TrainConfig>,
}

pub fn write_params<W: Write>(params: &AutoencoderParams, w: &mut W) -> std::io::Result<()> {
    let layers = params
        .layers()
        .enumerate()
        .map(|(i, l)| LayerEntry {
            stage: if i < 3 { "analysis" } else { "synthesis" }.to_string(),
            spec: l.spec,
            weight_count: l.weights.len(),
            bias_count: l.bias.len(),
        })
        .collect();
    let header = Header {
        format_version: FORMAT_VERSION,
        repr: params.repr,
        seed: params.seed,
        layers,
        train_config: params.train_config,
    };
    let json = serde_json::to_vec(&header).map_err(std::io::Error::other)?;
    w.write_all(MAGIC)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for l in params.layers() {
        for &v in l.weights.iter().chain(&l.bias) {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_params(params: &AutoencoderParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_params(params, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::parse(0, format!("checkpoint truncated in {what}"))
        } else {
            Error::parse(0, format!("reading {what}: {e}"))
        }
    })
}

fn read_f32s(r: &mut impl Read, n: usize, what: &str) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; n * 4];
    read_exact(r, &mut bytes, what)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

pub fn read_params<R: Read>(r: &mut R) -> Result<AutoencoderParams> {
    let mut magic = [0u8; 7];
    read_exact(r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::parse(0, "not an autoencoder checkpoint (bad magic)"));
    }
    let mut len = [0u8; 4];
    read_exact(r, &mut len, "header length")?;
    let len = u32::from_le_bytes(len) as usize;
    let mut json = vec![0u8; len];
    read_exact(r, &mut json, "header")?;
    let header: Header = serde_json::from_slice(&json)
        .map_err(|e| Error::parse(0, format!("checkpoint header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::UnsupportedFormat(format!(
            "checkpoint version {}",
            header.format_version
        )));
    }
    if header.layers.len() != 6 {
        return Err(Error::parse(
            0,
            format!("expected 6 layers, header lists {}", header.layers.len()),
        ));
    }
    let mut layers = Vec::with_capacity(6);
    for (i, entry) in header.layers.iter().enumerate() {
        if entry.weight_count != entry.spec.weight_len()
            || entry.bias_count != entry.spec.out_channels
        {
            return Err(Error::parse(
                0,
                format!("layer {i} counts disagree with its spec"),
            ));
        }
        let weights = read_f32s(r, entry.weight_count, "weights")?;
        let bias = read_f32s(r, entry.bias_count, "biases")?;
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::parse(
                0,
                format!("layer {i} holds non-finite values"),
            ));
        }
        layers.push(Layer {
            spec: entry.spec,
            weights,
            bias,
        });
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)
        .map_err(|e| Error::parse(0, e.to_string()))?
        != 0
    {
        return Err(Error::parse(0, "trailing bytes after checkpoint data"));
    }
    let synthesis = layers.split_off(3);
    let mut params = AutoencoderParams::from_layers(layers, synthesis, header.repr, header.seed)?;
    params.train_config = header.train_config;
    Ok(params)
}

pub fn load_params(path: impl AsRef<Path>) -> Result<AutoencoderParams> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_params(&mut BufReader::new(file))
}

/// [`load_params`] that also checks the representation the model was
/// trained on.
pub fn load_params_for(path: impl AsRef<Path>, expected: Repr) -> Result<AutoencoderParams> {
    let params = load_params(path)?;
    params.ensure_repr(expected)?;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoencoder::model::Architecture;

    fn params() -> AutoencoderParams {
        let mut p = AutoencoderParams::init(
            Architecture {
                channels: [2, 3, 4],
            },
            Repr::Binary,
            11,
        )
        .unwrap();
        p.train_config = Some(TrainConfig::for_repr(Repr::Binary));
        p
    }

    fn bytes(p: &AutoencoderParams) -> Vec<u8> {
        let mut buf = Vec::new();
        write_params(p, &mut buf).unwrap();
        buf
    }

    #[test]
    fn round_trip_is_exact() {
        let p = params();
        let back = read_params(&mut bytes(&p).as_slice()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn file_round_trip_and_repr_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pcqae");
        save_params(&params(), &path).unwrap();
        assert_eq!(load_params(&path).unwrap(), params());
        assert!(load_params_for(&path, Repr::Binary).is_ok());
        assert!(matches!(
            load_params_for(&path, Repr::Tdf),
            Err(Error::ReprMismatch {
                expected: Repr::Tdf,
                found: Repr::Binary
            })
        ));
    }

    #[test]
    fn bad_magic_and_truncation_are_parse_errors() {
        let mut b = bytes(&params());
        let full = b.clone();
        b[0] = b'X';
        assert!(matches!(
            read_params(&mut b.as_slice()),
            Err(Error::Parse { .. })
        ));
        for cut in [3, 9, 20, full.len() - 1] {
            assert!(
                matches!(read_params(&mut &full[..cut]), Err(Error::Parse { .. })),
                "cut {cut}"
            );
        }
        let mut extra = full.clone();
        extra.push(0);
        assert!(matches!(
            read_params(&mut extra.as_slice()),
            Err(Error::Parse { .. })
        ));
    }
}
